"""Parser for the ``name(key=value, ...)`` mini-language used in configs."""

from __future__ import annotations

import ast
from typing import Any

from .errors import ConfigurationError


def parse_call(text: str) -> tuple[str, dict[str, Any]]:
    """Split ``"srswor(n=50)"`` into ``("srswor", {"n": 50})``.

    A bare name without parentheses is accepted as a call with no arguments.
    Values must be Python literals.
    """
    src = text.strip()
    try:
        node = ast.parse(src, mode="eval").body
    except SyntaxError:
        raise ConfigurationError(f"cannot parse {src!r}: expected name(key=value, ...)") from None
    if isinstance(node, ast.Name):
        return node.id, {}
    if not isinstance(node, ast.Call) or not isinstance(node.func, ast.Name):
        raise ConfigurationError(f"cannot parse {src!r}: expected name(key=value, ...)")
    if node.args:
        raise ConfigurationError(f"{src!r}: arguments must be given as key=value")
    kwargs: dict[str, Any] = {}
    for kw in node.keywords:
        if kw.arg is None:
            raise ConfigurationError(f"{src!r}: '**' is not allowed")
        try:
            kwargs[kw.arg] = ast.literal_eval(kw.value)
        except ValueError:
            raise ConfigurationError(
                f"{src!r}: value of {kw.arg!r} is not a literal ({ast.unparse(kw.value)!r})"
            ) from None
    return node.func.id, kwargs
