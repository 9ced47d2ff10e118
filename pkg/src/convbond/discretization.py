"""Space-time grids and the discrete pricing operator.

The spatial operator is

    A V = -1/2 sigma^2 (x^2 + eps) V_xx - (r - q) x V_x + r V

so that the pricing operator is L = -d/dt + A.  Rows are stored as
tridiagonal coefficients (sub, diag, sup).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams

MIN_NODES = 16
UNIFORM = "uniform"
GEOMETRIC = "geometric-refined-near-right-edge"
GEOMETRIC_LEFT = "geometric-refined-near-left-edge"
SPACINGS = (UNIFORM, GEOMETRIC, GEOMETRIC_LEFT)

# finest / coarsest cell for the geometric grid
GEOMETRIC_CELL_RATIO = 1.0 / 8.0


@dataclass(frozen=True, eq=False)
class Grid:
    x: np.ndarray
    t: np.ndarray
    spacing: str = UNIFORM

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if x.ndim != 1 or t.ndim != 1:
            raise ValueError("grid nodes must be one-dimensional")
        if x.size < MIN_NODES or t.size < MIN_NODES:
            raise ValueError(f"need at least {MIN_NODES} nodes in x and t")
        if np.any(np.diff(x) <= 0.0) or np.any(np.diff(t) <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")
        if x[0] != 0.0 or t[0] != 0.0:
            raise ValueError("grids start at x = 0 and t = 0")
        if self.spacing not in SPACINGS:
            raise ValueError(f"unknown spacing kind {self.spacing!r}")
        x.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", t)

    @property
    def nx(self) -> int:
        return self.x.size

    @property
    def nt(self) -> int:
        return self.t.size

    @property
    def h(self) -> np.ndarray:
        """Cell widths, length nx - 1."""
        return np.diff(self.x)

    @property
    def h_max(self) -> float:
        return float(self.h.max())

    @property
    def dt(self) -> float:
        return float(self.t[-1] / (self.nt - 1))

    def metadata(self) -> dict[str, object]:
        return {
            "nx": self.nx,
            "nt": self.nt,
            "spacing": self.spacing,
            "x_max": float(self.x[-1]),
            "T": float(self.t[-1]),
            "h_max": self.h_max,
            "h_min": float(self.h.min()),
            "dt": self.dt,
        }


def build_grid(params: ModelParams, nx: int, nt: int, spacing: str = UNIFORM) -> Grid:
    """Grid over [0, K/gamma] x [0, T] with nx spatial and nt temporal nodes.

    The geometric option shrinks cells toward x = K/gamma so the last cell is
    1/8 of the first.
    """
    if nx < MIN_NODES or nt < MIN_NODES:
        raise ValueError(f"nx and nt must be >= {MIN_NODES}, got nx={nx}, nt={nt}")
    L = params.x_max
    if spacing == UNIFORM:
        x = np.linspace(0.0, L, nx)
    elif spacing == GEOMETRIC:
        cells = nx - 1
        ratio = GEOMETRIC_CELL_RATIO ** (1.0 / (cells - 1))
        widths = ratio ** np.arange(cells)
        x = np.concatenate([[0.0], np.cumsum(widths)]) * (L / widths.sum())
    else:
        raise ValueError(f"build_grid supports {UNIFORM!r} and {GEOMETRIC!r}, got {spacing!r}")
    x[-1] = L
    t = np.linspace(0.0, params.T, nt)
    t[-1] = params.T
    return Grid(x=x, t=t, spacing=spacing)


@dataclass(frozen=True, eq=False)
class OperatorStencil:
    """Tridiagonal rows of A on every node.

    Row 0 is the degenerate node (pure reaction when epsilon == 0, reflected
    diffusion otherwise).  The last row is the Dirichlet node x = K/gamma and
    is stored as zeros.
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    r: float
    epsilon: float
    upwind: np.ndarray = field(repr=False)

    @property
    def degenerate_origin(self) -> bool:
        return self.epsilon == 0.0

    def apply(self, V: np.ndarray) -> np.ndarray:
        """A V along the last axis; the Dirichlet entry is returned as 0."""
        V = np.asarray(V, dtype=float)
        out = self.diag * V
        out[..., 1:] += self.sub[1:] * V[..., :-1]
        out[..., :-1] += self.sup[:-1] * V[..., 1:]
        out[..., -1] = 0.0
        return out


def central_weights(x: np.ndarray):
    """Three-point weights for first and second derivatives at interior nodes.

    Returns (d1, d2), each a tuple (minus, centre, plus) of arrays of length
    len(x) - 2.  Exact for quadratics on non-uniform grids.
    """
    hm = x[1:-1] - x[:-2]
    hp = x[2:] - x[1:-1]
    d1 = (-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp)))
    d2 = (2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp)))
    return d1, d2


def assemble_operator(params: ModelParams, grid: Grid, epsilon: float = 0.0) -> OperatorStencil:
    """Assemble A with central differences, upwinding convection where needed.

    A node switches to one-sided convection exactly when central weights would
    give a positive off-diagonal, so I + theta*dt*A is always an M-matrix.
    """
    if epsilon < 0.0:
        raise ValueError("epsilon must be >= 0")
    x = grid.x
    n = x.size
    sub = np.zeros(n)
    diag = np.zeros(n)
    sup = np.zeros(n)
    upwind = np.zeros(n, dtype=bool)

    xi = x[1:-1]
    hm = xi - x[:-2]
    hp = x[2:] - xi
    diff = 0.5 * params.sigma**2 * (xi**2 + epsilon)
    conv = (params.r - params.q) * xi
    (c_m, c_0, c_p), (s_m, s_0, s_p) = central_weights(x)

    lo = -diff * s_m - conv * c_m
    mid = -diff * s_0 - conv * c_0 + params.r
    hi = -diff * s_p - conv * c_p

    bad = (lo > 0.0) | (hi > 0.0)
    if np.any(bad):
        fwd = bad & (conv > 0.0)
        bwd = bad & (conv < 0.0)
        lo = np.where(fwd, -diff * s_m, lo)
        mid = np.where(fwd, -diff * s_0 + conv / hp + params.r, mid)
        hi = np.where(fwd, -diff * s_p - conv / hp, hi)
        lo = np.where(bwd, -diff * s_m + conv / hm, lo)
        mid = np.where(bwd, -diff * s_0 - conv / hm + params.r, mid)
        hi = np.where(bwd, -diff * s_p, hi)
        upwind[1:-1] = bad

    sub[1:-1], diag[1:-1], sup[1:-1] = lo, mid, hi

    if epsilon == 0.0:
        diag[0] = params.r
    else:
        # even reflection about x = 0: ghost node V_{-1} = V_1
        k = params.sigma**2 * epsilon / x[1] ** 2
        diag[0] = k + params.r
        sup[0] = -k

    return OperatorStencil(sub=sub, diag=diag, sup=sup, r=params.r, epsilon=float(epsilon), upwind=upwind)


def is_m_matrix(stencil: OperatorStencil, dt: float, theta: float) -> np.ndarray:
    """Row-wise M-matrix test for I + theta*dt*A (excluding the Dirichlet row)."""
    a = theta * dt
    sub = a * stencil.sub[:-1]
    sup = a * stencil.sup[:-1]
    diag = 1.0 + a * stencil.diag[:-1]
    return (sub <= 0.0) & (sup <= 0.0) & (diag >= np.abs(sub) + np.abs(sup))
