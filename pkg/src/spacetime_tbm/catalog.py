"""Built-in spacetimes, expanded to explicit expressions."""
from __future__ import annotations

from . import exprparse as ep
from .errors import ConfigError, InvalidDimensionParam
from .geometry import WeightedSpacetime

NAMES = ("minkowski2", "minkowski3", "weighted_minkowski2", "weighted_minkowski3", "warped2")


def from_strings(n: int, g, psi: str = "0", N: float | None = None, chart_lo=None, chart_hi=None,
                 name: str = "custom", future=None) -> WeightedSpacetime:
    """Spacetime from string expressions; ``g`` is an ``n x n`` nested list."""
    rows = tuple(tuple(ep.parse(str(c), n) for c in row) for row in g)
    psi_e = ep.parse(str(psi), n)
    N = float(n if N is None else N)
    lo = tuple(float(v) for v in (chart_lo if chart_lo is not None else [-10.0] * n))
    hi = tuple(float(v) for v in (chart_hi if chart_hi is not None else [10.0] * n))
    fut = None if future is None else tuple(ep.parse(str(c), n) for c in future)
    sources = {"g": [[str(c) for c in row] for row in g], "psi": str(psi)}
    return WeightedSpacetime(n, rows, psi_e, N, lo, hi, name, 1.0, fut, sources)


def _flat(n: int) -> list[list[str]]:
    return [["1" if i == j == 0 else ("-1" if i == j else "0") for j in range(n)] for i in range(n)]


def spacetime(name: str, N: float | None = None, weight: str = "linear",
              weight_slope: float = 1.0, chart_lo=None, chart_hi=None) -> WeightedSpacetime:
    """Catalog entry by name.

    ``weighted_minkowski*`` take ``psi = s x0`` (``weight="linear"``) or
    ``psi = s x0^2`` (``"quadratic"``) with ``s = weight_slope``; their ``N``
    defaults to ``n + 1``.
    """
    if name not in NAMES:
        raise ConfigError("spacetime.catalog", f"unknown catalog entry {name!r}")
    n = int(name[-1])
    if name.startswith("minkowski"):
        return from_strings(n, _flat(n), "0", n if N is None else N, chart_lo, chart_hi, name)
    if name.startswith("weighted_minkowski"):
        coef = "" if weight_slope == 1 else f"{float(weight_slope)!r}*"
        if weight == "linear":
            psi = f"{coef}x0"
        elif weight == "quadratic":
            psi = f"{coef}x0^2"
        else:
            raise ConfigError("spacetime.weight", f"expected linear or quadratic, got {weight!r}")
        N = n + 1 if N is None else N
        if weight_slope != 0 and not N > n:
            raise InvalidDimensionParam(f"a non-constant weight needs N > n (got N={N}, n={n})")
        return from_strings(n, _flat(n), psi, N, chart_lo, chart_hi, name)
    g = [["1", "0"], ["0", "-exp(2*x0)"]]
    return from_strings(2, g, "0", 2 if N is None else N,
                        chart_lo if chart_lo is not None else (-2.0, -2.0),
                        chart_hi if chart_hi is not None else (2.0, 2.0), name)
