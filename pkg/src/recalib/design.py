"""Fixed-size sampling designs with exact inclusion probabilities.

Every design is bound to one population (it knows ``N`` and the stratum or
cluster membership of each unit). Units are addressed by 0-based row
position. Without-replacement designs expose exact first- and second-order
inclusion probabilities; the with-replacement cluster design uses the
per-draw expansion ``M/n`` instead.
"""

from __future__ import annotations

import itertools
import math
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Iterator, Mapping, Sequence

import numpy as np
import numpy.typing as npt

from ._grammar import parse_call
from .errors import ConfigurationError, EnumerationCapError, UnsupportedOperationError
from .population import Population

DEFAULT_ENUMERATION_CAP = 10**6
CAP_ENV_VAR = "RECALIB_ENUM_CAP"


def enumeration_cap() -> int:
    """The sample cap, overridable through ``RECALIB_ENUM_CAP``."""
    raw = os.environ.get(CAP_ENV_VAR)
    if raw is None:
        return DEFAULT_ENUMERATION_CAP
    try:
        return int(float(raw))
    except ValueError:
        raise ConfigurationError(f"{CAP_ENV_VAR}={raw!r} is not a number") from None


@dataclass(frozen=True, eq=False)
class Sample:
    """Sampled unit positions and their expansion weights.

    ``weights[k]`` is the expansion factor of entry ``indices[k]``: ``1/pi_i``
    for without-replacement designs, ``M/n`` per draw for the
    with-replacement cluster design (repeated draws repeat the entries).
    """

    indices: npt.NDArray[np.intp]
    weights: npt.NDArray[np.float64]
    design: "Design"
    draws: npt.NDArray[np.intp] | None = None

    def __len__(self) -> int:
        return int(self.indices.shape[0])


@dataclass(frozen=True, eq=False)
class NestedSample:
    """A y-sample ``s1`` nested in an x-sample ``s2``."""

    s2: Sample
    s1: Sample


@dataclass(frozen=True, eq=False)
class PairStructure:
    """Second-order inclusion probabilities among sampled units, in factored form.

    For sampled entries ``i != j``: ``pi_ij = same_pi[i]`` when
    ``group[i] == group[j]``, otherwise ``cross_scale * cross_r[i] * cross_r[j]``.
    The diagonal is ``pi``.
    """

    pi: npt.NDArray[np.float64]
    group: npt.NDArray[np.intp]
    same_pi: npt.NDArray[np.float64]
    cross_scale: float
    cross_r: npt.NDArray[np.float64]

    def dense(self) -> npt.NDArray[np.float64]:
        same = self.group[:, None] == self.group[None, :]
        out = np.where(
            same,
            self.same_pi[:, None] * np.ones_like(self.same_pi)[None, :],
            self.cross_scale * np.outer(self.cross_r, self.cross_r),
        )
        np.fill_diagonal(out, self.pi)
        return out


def _factorize(labels: npt.ArrayLike) -> tuple[npt.NDArray[Any], npt.NDArray[np.intp]]:
    uniq, codes = np.unique(np.asarray(labels), return_inverse=True)
    return uniq, codes.astype(np.intp).ravel()


def _members(codes: npt.NDArray[np.intp], n_groups: int) -> list[npt.NDArray[np.intp]]:
    order = np.argsort(codes, kind="stable")
    bounds = np.searchsorted(codes[order], np.arange(n_groups + 1))
    return [order[bounds[g] : bounds[g + 1]] for g in range(n_groups)]


class Design(ABC):
    """Base class for sampling designs bound to a population of size ``N``."""

    kind: str = "design"
    with_replacement: bool = False

    def __init__(self, N: int) -> None:
        if N < 1:
            raise ConfigurationError("population size must be >= 1")
        self.N = int(N)

    # -- probabilities -------------------------------------------------------
    def pi(self) -> npt.NDArray[np.float64]:
        """First-order inclusion probabilities of all ``N`` units (cached, read-only)."""
        cached = self.__dict__.get("_pi")
        if cached is None:
            cached = np.asarray(self._compute_pi(), dtype=float)
            cached.setflags(write=False)
            self._pi = cached
        return cached

    @abstractmethod
    def _compute_pi(self) -> npt.NDArray[np.float64]:
        ...

    @abstractmethod
    def pair_structure(self, idx: npt.NDArray[np.intp]) -> PairStructure:
        """Factored second-order probabilities among the units ``idx``."""

    def _check_unit(self, i: int) -> int:
        if not 0 <= int(i) < self.N:
            raise ConfigurationError(f"unit position {i} outside 0..{self.N - 1}")
        return int(i)

    def pi_first(self, i: int) -> float:
        return float(self.pi()[self._check_unit(i)])

    def pi_joint(self, i: int, j: int) -> float:
        self._require_without_replacement("pi_joint")
        idx = np.array([self._check_unit(i), self._check_unit(j)], dtype=np.intp)
        if idx[0] == idx[1]:
            return self.pi_first(i)
        return float(self.pair_structure(idx).dense()[0, 1])

    def pi_matrix(self, idx: npt.ArrayLike | None = None) -> npt.NDArray[np.float64]:
        """Dense ``pi_ij`` matrix among ``idx`` (all units by default)."""
        self._require_without_replacement("pi_matrix")
        idx = np.arange(self.N) if idx is None else np.asarray(idx, dtype=np.intp)
        return self.pair_structure(idx).dense()

    def _require_without_replacement(self, what: str) -> None:
        if self.with_replacement:
            raise UnsupportedOperationError(
                f"{what} is undefined for the with-replacement design {self.kind!r}"
            )

    @property
    def is_census(self) -> bool:
        return not self.with_replacement and bool(np.all(self.pi() == 1.0))

    # -- sampling --------------------------------------------------------------
    @abstractmethod
    def draw(self, rng: np.random.Generator) -> Sample:
        """Draw one sample using ``rng``."""

    @abstractmethod
    def sample_count(self) -> int:
        """Number of distinct samples with positive probability."""

    @abstractmethod
    def _enumerate(self) -> Iterator[tuple[Sample, float]]:
        ...

    def enumerate_samples(self, cap: int | None = None) -> Iterator[tuple[Sample, float]]:
        """Yield every possible sample once with its probability."""
        cap = enumeration_cap() if cap is None else cap
        count = self.sample_count()
        if count > cap:
            raise EnumerationCapError(count, cap)
        return self._enumerate()

    def make_sample(self, indices: npt.ArrayLike) -> Sample:
        """Wrap given unit positions (e.g. read from a file) as a sample."""
        self._require_without_replacement("make_sample")
        idx = np.asarray(indices, dtype=np.intp)
        if idx.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= self.N)):
            raise ConfigurationError("sample positions outside the population")
        if np.unique(idx).size != idx.size:
            raise ConfigurationError("duplicate units in a without-replacement sample")
        pi = self.pi()[idx]
        if np.any(pi <= 0):
            raise ConfigurationError("sample contains units with zero inclusion probability")
        return Sample(idx, 1.0 / pi, self)

    def _sample(self, idx: npt.NDArray[np.intp]) -> Sample:
        idx = np.asarray(idx, dtype=np.intp)
        return Sample(idx, 1.0 / self.pi()[idx], self)

    @abstractmethod
    def describe(self) -> str:
        """The design in config-grammar form."""

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.describe()}>"


class Census(Design):
    kind = "census"

    def _compute_pi(self):
        return np.ones(self.N)

    def pair_structure(self, idx):
        m = len(idx)
        return PairStructure(np.ones(m), np.zeros(m, np.intp), np.ones(m), 1.0, np.ones(m))

    def draw(self, rng):
        return self._sample(np.arange(self.N))

    def sample_count(self) -> int:
        return 1

    def _enumerate(self):
        yield self._sample(np.arange(self.N)), 1.0

    def describe(self) -> str:
        return "census()"


class SRSWOR(Design):
    """Simple random sampling without replacement of ``n`` out of ``N``."""

    kind = "srswor"

    def __init__(self, N: int, n: int) -> None:
        super().__init__(N)
        if not 1 <= n <= N:
            raise ConfigurationError(f"srswor needs 1 <= n <= N, got n={n}, N={N}")
        self.n = int(n)

    def _compute_pi(self):
        return np.full(self.N, self.n / self.N)

    def pair_structure(self, idx):
        m = len(idx)
        N, n = self.N, self.n
        joint = n * (n - 1) / (N * (N - 1)) if N > 1 else 1.0
        return PairStructure(
            np.full(m, n / N), np.zeros(m, np.intp), np.full(m, joint), 1.0, np.ones(m)
        )

    def draw(self, rng):
        return self._sample(np.sort(rng.choice(self.N, self.n, replace=False)))

    def sample_count(self) -> int:
        return math.comb(self.N, self.n)

    def _enumerate(self):
        prob = 1.0 / math.comb(self.N, self.n)
        for combo in itertools.combinations(range(self.N), self.n):
            yield self._sample(np.array(combo)), prob

    def describe(self) -> str:
        return f"srswor(n={self.n})"


class StratifiedSRSWOR(Design):
    """Independent SRSWOR of ``n_h`` units in each stratum."""

    kind = "stratified"

    def __init__(self, strata: npt.ArrayLike, n_h: Sequence[int] | Mapping[Any, int]) -> None:
        labels, codes = _factorize(strata)
        super().__init__(codes.size)
        self.labels = labels
        self.codes = codes
        self.members = _members(codes, labels.size)
        if isinstance(n_h, Mapping):
            try:
                sizes = [int(n_h[_key(lab, n_h)]) for lab in labels]
            except KeyError as exc:
                raise ConfigurationError(f"no sample size for stratum {exc.args[0]!r}") from None
        else:
            sizes = [int(v) for v in n_h]
        if len(sizes) != labels.size:
            raise ConfigurationError(
                f"stratified design needs {labels.size} stratum sizes, got {len(sizes)}"
            )
        for lab, size, mem in zip(labels, sizes, self.members):
            if not 1 <= size <= mem.size:
                raise ConfigurationError(
                    f"stratum {lab!r}: sample size {size} outside 1..{mem.size}"
                )
        self.n_h = np.array(sizes, dtype=np.intp)
        self.N_h = np.array([m.size for m in self.members], dtype=np.intp)

    @property
    def n(self) -> int:
        return int(self.n_h.sum())

    def _compute_pi(self):
        return (self.n_h / self.N_h)[self.codes]

    def pair_structure(self, idx):
        g = self.codes[idx]
        n_h, N_h = self.n_h.astype(float), self.N_h.astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            same = np.where(N_h > 1, n_h * (n_h - 1) / (N_h * (N_h - 1)), 1.0)
        pi = (n_h / N_h)[g]
        return PairStructure(pi, g, same[g], 1.0, pi)

    def draw(self, rng):
        parts = [rng.choice(mem, size, replace=False) for mem, size in zip(self.members, self.n_h)]
        return self._sample(np.sort(np.concatenate(parts)))

    def sample_count(self) -> int:
        return math.prod(math.comb(int(N), int(n)) for N, n in zip(self.N_h, self.n_h))

    def _enumerate(self):
        prob = 1.0 / self.sample_count()
        per_stratum = [itertools.combinations(mem.tolist(), int(n)) for mem, n in zip(self.members, self.n_h)]
        for combo in itertools.product(*per_stratum):
            yield self._sample(np.sort(np.concatenate([np.array(c, dtype=np.intp) for c in combo]))), prob

    def describe(self) -> str:
        return f"stratified(n={self.n_h.tolist()})"


def _key(label: Any, mapping: Mapping[Any, int]) -> Any:
    for cand in (label, _plain(label), str(label)):
        if cand in mapping:
            return cand
    raise KeyError(label)


def _plain(v: Any) -> Any:
    return v.item() if hasattr(v, "item") else v


class _Clustered(Design):
    def __init__(self, clusters: npt.ArrayLike, n: int) -> None:
        labels, codes = _factorize(clusters)
        super().__init__(codes.size)
        self.labels = labels
        self.codes = codes
        self.members = _members(codes, labels.size)
        self.M = int(labels.size)
        self.K_j = np.array([m.size for m in self.members], dtype=np.intp)
        self.n = int(n)


class ClusterSRSWOR(_Clustered):
    """SRSWOR of ``n`` clusters; all units (``m=None``) or an SRSWOR of ``m`` per cluster."""

    kind = "cluster"

    def __init__(self, clusters: npt.ArrayLike, n: int, m: int | None = None) -> None:
        super().__init__(clusters, n)
        if not 1 <= self.n <= self.M:
            raise ConfigurationError(f"cluster design needs 1 <= n <= M={self.M}, got n={n}")
        if m is not None and not 1 <= m <= int(self.K_j.min()):
            raise ConfigurationError(f"take-m needs 1 <= m <= smallest cluster size {int(self.K_j.min())}")
        self.m = None if m is None else int(m)
        self.m_j = self.K_j.copy() if m is None else np.full(self.M, self.m, dtype=np.intp)

    def _compute_pi(self):
        return (self.n / self.M) * (self.m_j / self.K_j)[self.codes]

    def pair_structure(self, idx):
        g = self.codes[idx]
        M, n = self.M, self.n
        m_j, K_j = self.m_j.astype(float), self.K_j.astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            within = np.where(K_j > 1, m_j * (m_j - 1) / (K_j * (K_j - 1)), 1.0)
        r = (m_j / K_j)[g]
        cross = n * (n - 1) / (M * (M - 1)) if M > 1 else 1.0
        return PairStructure((n / M) * r, g, (n / M) * within[g], cross, r)

    def draw(self, rng):
        chosen = np.sort(rng.choice(self.M, self.n, replace=False))
        if self.m is None:
            parts = [self.members[c] for c in chosen]
        else:
            parts = [np.sort(rng.choice(self.members[c], self.m, replace=False)) for c in chosen]
        return self._sample(np.concatenate(parts))

    def sample_count(self) -> int:
        if self.m is None:
            return math.comb(self.M, self.n)
        # elementary symmetric polynomial of degree n in the per-cluster counts
        e = [1] + [0] * self.n
        for K in self.K_j:
            ways = math.comb(int(K), self.m)
            for d in range(self.n, 0, -1):
                e[d] += e[d - 1] * ways
        return e[self.n]

    def _enumerate(self):
        for chosen in itertools.combinations(range(self.M), self.n):
            p_clusters = 1.0 / math.comb(self.M, self.n)
            if self.m is None:
                yield self._sample(np.concatenate([self.members[c] for c in chosen])), p_clusters
                continue
            inner = [itertools.combinations(self.members[c].tolist(), self.m) for c in chosen]
            p_inner = math.prod(1.0 / math.comb(int(self.K_j[c]), self.m) for c in chosen)
            for combo in itertools.product(*inner):
                idx = np.concatenate([np.array(c, dtype=np.intp) for c in combo])
                yield self._sample(idx), p_clusters * p_inner

    def describe(self) -> str:
        return f"cluster(n={self.n})" if self.m is None else f"cluster(n={self.n}, m={self.m})"


class ClusterWithReplacement(_Clustered):
    """``n`` independent uniform draws of whole clusters.

    Each drawn unit carries the expansion ``M/n`` per draw; ``pi_first``
    reports the per-draw convention ``n/M`` and second-order probabilities
    are unsupported.
    """

    kind = "cluster_wr"
    with_replacement = True

    def __init__(self, clusters: npt.ArrayLike, n: int) -> None:
        super().__init__(clusters, n)
        if self.n < 1:
            raise ConfigurationError("cluster_wr needs n >= 1")

    def _compute_pi(self):
        return np.full(self.N, self.n / self.M)

    def pair_structure(self, idx):
        raise UnsupportedOperationError(
            "second-order inclusion probabilities are undefined for the with-replacement design 'cluster_wr'"
        )

    def draw_clusters(self, rng: np.random.Generator) -> npt.NDArray[np.intp]:
        return rng.integers(0, self.M, size=self.n).astype(np.intp)

    def sample_from_draws(self, draws: npt.NDArray[np.intp]) -> Sample:
        idx = np.concatenate([self.members[c] for c in draws])
        return Sample(idx, np.full(idx.size, self.M / self.n), self, draws=np.asarray(draws, np.intp))

    def draw(self, rng):
        return self.sample_from_draws(self.draw_clusters(rng))

    def sample_count(self) -> int:
        return math.comb(self.M + self.n - 1, self.n)

    def _enumerate(self):
        log_total = self.n * math.log(self.M)
        for draws in itertools.combinations_with_replacement(range(self.M), self.n):
            counts = np.bincount(draws, minlength=self.M)
            log_ways = math.lgamma(self.n + 1) - sum(math.lgamma(c + 1) for c in counts if c)
            yield self.sample_from_draws(np.array(draws, dtype=np.intp)), math.exp(log_ways - log_total)

    def describe(self) -> str:
        return f"cluster_wr(n={self.n})"


class NestedSupersample:
    """An outer with-replacement cluster draw ``S2`` and a y-subsample ``S1``.

    ``S1`` keeps ``k_measured`` units of every drawn cluster: the first ones
    in population order (``inner="first"``) or a random subset
    (``inner="random"``). Each ``S1`` entry is expanded by
    ``(M/n) * K_j / k_measured``.
    """

    kind = "nested"
    with_replacement = True

    def __init__(self, outer: ClusterWithReplacement, k_measured: int = 1, inner: str = "first") -> None:
        if not isinstance(outer, ClusterWithReplacement):
            raise ConfigurationError("the nested scheme needs a cluster_wr outer design")
        if inner not in ("first", "random"):
            raise ConfigurationError(f"unknown inner rule {inner!r}")
        if not 1 <= k_measured <= int(outer.K_j.min()):
            raise ConfigurationError(
                f"k_measured={k_measured} outside 1..{int(outer.K_j.min())} (smallest cluster)"
            )
        self.outer = outer
        self.k_measured = int(k_measured)
        self.inner = inner
        self.N = outer.N

    def draw(self, rng: np.random.Generator) -> NestedSample:
        return self.from_draws(self.outer.draw_clusters(rng), rng)

    def from_draws(self, draws: npt.NDArray[np.intp], rng: np.random.Generator | None = None) -> NestedSample:
        s2 = self.outer.sample_from_draws(draws)
        outer = self.outer
        picks, weights = [], []
        for c in draws:
            mem = outer.members[c]
            if self.inner == "first":
                chosen = mem[: self.k_measured]
            else:
                if rng is None:
                    raise ConfigurationError("inner='random' needs an rng")
                chosen = np.sort(rng.choice(mem, self.k_measured, replace=False))
            picks.append(chosen)
            weights.append(np.full(chosen.size, (outer.M / outer.n) * mem.size / self.k_measured))
        s1 = Sample(np.concatenate(picks), np.concatenate(weights), outer, draws=s2.draws)
        return NestedSample(s2=s2, s1=s1)

    def describe(self) -> str:
        return f"cluster_wr(n={self.outer.n}, k_measured={self.k_measured})"

    def __repr__(self) -> str:
        return f"<NestedSupersample {self.describe()}>"


def draw_sample(design: Design, pop: Population, rng: np.random.Generator) -> Sample:
    """Draw from ``design`` after checking it is bound to a population of ``pop``'s size."""
    check_compatible(design, pop)
    return design.draw(rng)


def draw_nested(design: NestedSupersample, pop: Population, rng: np.random.Generator) -> NestedSample:
    check_compatible(design, pop)
    return design.draw(rng)


def enumerate_samples(design: Design, pop: Population, cap: int | None = None) -> Iterator[tuple[Sample, float]]:
    check_compatible(design, pop)
    return design.enumerate_samples(cap)


def pi_first(design: Design, i: int) -> float:
    return design.pi_first(i)


def pi_joint(design: Design, i: int, j: int) -> float:
    return design.pi_joint(i, j)


def check_compatible(design: Design | NestedSupersample, pop: Population) -> None:
    if design.N != pop.N:
        raise ConfigurationError(f"design is bound to N={design.N} but population has N={pop.N}")


def parse_design(text: str, pop: Population) -> Design | NestedSupersample:
    """Build a design from its config-grammar form, e.g. ``"stratified(n=[50, 50])"``."""
    name, kw = parse_call(text)

    def need_labels(labels, what):
        if labels is None:
            raise ConfigurationError(f"design {name!r} needs {what} labels in the population")
        return labels

    try:
        if name == "census":
            _no_extra(name, kw, set())
            return Census(pop.N)
        if name == "srswor":
            _no_extra(name, kw, {"n"})
            return SRSWOR(pop.N, kw["n"])
        if name == "stratified":
            _no_extra(name, kw, {"n"})
            return StratifiedSRSWOR(need_labels(pop.strata, "stratum"), kw["n"])
        if name == "cluster":
            _no_extra(name, kw, {"n", "m"})
            return ClusterSRSWOR(need_labels(pop.clusters, "cluster"), kw["n"], kw.get("m"))
        if name == "cluster_wr":
            _no_extra(name, kw, {"n", "k_measured", "inner"})
            outer = ClusterWithReplacement(need_labels(pop.clusters, "cluster"), kw["n"])
            if "k_measured" in kw:
                return NestedSupersample(outer, kw["k_measured"], kw.get("inner", "first"))
            return outer
    except KeyError as exc:
        raise ConfigurationError(f"design {name!r} is missing parameter {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ConfigurationError(f"design {name!r}: {exc}") from None
    raise ConfigurationError(
        f"unknown design {name!r} (expected census, srswor, stratified, cluster or cluster_wr)"
    )


def _no_extra(name: str, kw: Mapping[str, Any], allowed: set[str]) -> None:
    extra = sorted(set(kw) - allowed)
    if extra:
        raise ConfigurationError(f"design {name!r} got unknown parameter {extra[0]!r}")
