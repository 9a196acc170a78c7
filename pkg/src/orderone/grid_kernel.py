"""Matrix-valued L2 kernels sampled on a uniform time grid.

A kernel kappa on [0,T]^2 with values in the d x d real matrices is stored as
an (N, N, d, d) array of point evaluations kappa(t_i, t_j) at the left-endpoint
nodes t_i = i*T/N.  All integrals over [0,T] become sums weighted by the step
Delta = T/N, so the kernel algebra is plain (blocked) matrix arithmetic:

    adjoint        kappa*(t,s)      = kappa(s,t)^T
    composition    (a o b)(t,s)     = int a(t,u) b(u,s) du
    eta kernel     eta(kappa)(t,s)  = -{kappa(t,s) + kappa(s,t)^T
                                        + int kappa(u,t)^T kappa(u,s) du}
    s kernel       s(kappa)(t,s)    = -{kappa(t,s) + kappa(s,t)^T}
    c kernels      c(kappa; x)(t,s) = int (kappa(u,s)^T x) (kappa(u,t)^T x)^T du
                   c(kappa)(t,s)    = int kappa(u,t)^T kappa(u,s) du
    tail integral  kappa_phi(t,s)   = int_s^T phi(t,u) du

Symmetric kernels (eta(t,s)^T = eta(s,t)) carry a `symmetric` flag that is
validated at construction; the eta/s/c constructors always return flagged
kernels.

The rank-k constructors draw their orthonormal family from
e_n'(t) = sqrt(2/T) cos((n - 1/2) pi t / T), re-orthonormalized in the
Delta-weighted inner product of the grid (a weighted QR).  The correction is
O(Delta), so the sampled kernels stay within quadrature error of their
continuum counterparts, while rank-one spectral facts (eigenvalues, traces,
determinants) hold to machine precision on the grid.
"""

from __future__ import annotations

from dataclasses import dataclass
import re

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "TimeGrid",
    "MatrixKernel",
    "make_grid",
    "kernel_from_values",
    "kernel_l2_norm",
    "adjoint_kernel",
    "compose_kernels",
    "eta_of_kappa",
    "s_of_kappa",
    "c_kernels",
    "kappa_from_phi",
    "scale_kernel",
    "orthonormal_columns",
    "kernel_zoo",
    "remark_pair",
    "KERNEL_GRAMMAR",
]

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=True)
class TimeGrid:
    """Uniform left-endpoint discretization of [0, T] into N steps."""

    horizon: float
    n_steps: int

    @property
    def step(self) -> float:
        return self.horizon / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        """Left endpoints t_i = i * Delta, i = 0 .. N-1."""
        return np.arange(self.n_steps) * self.step


def make_grid(horizon: float, n_steps: int) -> TimeGrid:
    """Validated TimeGrid constructor."""
    if not np.isfinite(horizon) or horizon <= 0:
        raise InvalidArgumentError(f"horizon must be a positive real, got {horizon}")
    if int(n_steps) != n_steps or n_steps < 2:
        raise InvalidArgumentError(f"n_steps must be an integer >= 2, got {n_steps}")
    return TimeGrid(float(horizon), int(n_steps))


@dataclass(frozen=True)
class MatrixKernel:
    """Sampled d x d matrix kernel: values[i, j] ~ kappa(t_i, t_j)."""

    grid: TimeGrid
    dim: int
    values: np.ndarray  # (N, N, d, d), read-only
    symmetric: bool = False

    def __post_init__(self):
        v = self.values
        if v.shape != (self.grid.n_steps, self.grid.n_steps, self.dim, self.dim):
            raise InvalidArgumentError(
                f"kernel values shape {v.shape} does not match grid/dim "
                f"({self.grid.n_steps}, {self.grid.n_steps}, {self.dim}, {self.dim})"
            )
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("kernel values must be finite")
        if self.symmetric:
            asym = np.max(np.abs(v - np.transpose(v, (1, 0, 3, 2))))
            if asym > SYMMETRY_TOL * max(1.0, np.max(np.abs(v))):
                raise InvalidArgumentError(
                    f"kernel flagged symmetric but max asymmetry is {asym:.3e}"
                )
        v.setflags(write=False)


def kernel_from_values(grid: TimeGrid, values: np.ndarray, symmetric: bool = False) -> MatrixKernel:
    """Build a kernel from tabulated values; scalar (N, N) arrays become d = 1."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[:, :, None, None]
    if values.ndim != 4 or values.shape[2] != values.shape[3]:
        raise InvalidArgumentError(f"expected (N, N, d, d) values, got shape {values.shape}")
    return MatrixKernel(grid, values.shape[2], np.ascontiguousarray(values), symmetric)


# ---------------------------------------------------------------------------
# flattening between (N, N, d, d) blocks and (N*d, N*d) matrices
# ---------------------------------------------------------------------------

def flat(values: np.ndarray) -> np.ndarray:
    """Block layout (i, a), (j, b): row i*d+a, column j*d+b."""
    n, _, d, _ = values.shape
    return np.ascontiguousarray(values.transpose(0, 2, 1, 3).reshape(n * d, n * d))


def unflat(matrix: np.ndarray, n_steps: int, dim: int) -> np.ndarray:
    return np.ascontiguousarray(
        matrix.reshape(n_steps, dim, n_steps, dim).transpose(0, 2, 1, 3)
    )


def _check_compatible(a: MatrixKernel, b: MatrixKernel):
    if a.grid != b.grid or a.dim != b.dim:
        raise InvalidArgumentError(
            f"kernel mismatch: grids ({a.grid}, {b.grid}), dims ({a.dim}, {b.dim})"
        )


def _symmetrize(values: np.ndarray) -> np.ndarray:
    # kills last-bit asymmetry from BLAS so the symmetric flag is exactly true
    return 0.5 * (values + np.transpose(values, (1, 0, 3, 2)))


# ---------------------------------------------------------------------------
# kernel algebra
# ---------------------------------------------------------------------------

def kernel_l2_norm(kappa: MatrixKernel) -> float:
    """Quadrature value of the L2 norm: (sum |kappa(t_i,t_j)|_F^2 Delta^2)^(1/2)."""
    return float(np.sqrt(np.sum(kappa.values ** 2)) * kappa.grid.step)


def adjoint_kernel(kappa: MatrixKernel) -> MatrixKernel:
    """kappa*(t,s) = kappa(s,t)^T; an involution and an L2 isometry."""
    vals = np.ascontiguousarray(np.transpose(kappa.values, (1, 0, 3, 2)))
    return MatrixKernel(kappa.grid, kappa.dim, vals, kappa.symmetric)


def compose_kernels(a: MatrixKernel, b: MatrixKernel) -> MatrixKernel:
    """(a o b)(t_i, t_j) = sum_u a(t_i,t_u) b(t_u,t_j) Delta."""
    _check_compatible(a, b)
    n, d = a.grid.n_steps, a.dim
    prod = flat(a.values) @ flat(b.values) * a.grid.step
    return MatrixKernel(a.grid, d, unflat(prod, n, d))


def eta_of_kappa(kappa: MatrixKernel) -> MatrixKernel:
    """The symmetric kernel -(kappa + kappa* + kappa* o kappa).

    Its quadratic Wiener form is the exponent of the change-of-variables
    identity attached to the transformation induced by kappa.
    """
    adj = adjoint_kernel(kappa)
    quad = compose_kernels(adj, kappa)
    vals = _symmetrize(-(kappa.values + adj.values + quad.values))
    return MatrixKernel(kappa.grid, kappa.dim, vals, symmetric=True)


def s_of_kappa(kappa: MatrixKernel) -> MatrixKernel:
    """The symmetric kernel -(kappa + kappa*): eta without the quadratic term."""
    adj = adjoint_kernel(kappa)
    vals = _symmetrize(-(kappa.values + adj.values))
    return MatrixKernel(kappa.grid, kappa.dim, vals, symmetric=True)


def c_kernels(kappa: MatrixKernel, x: np.ndarray | None = None) -> MatrixKernel:
    """Covariance-type kernels of the harmonic-oscillator functionals.

    With a direction x in R^d:
        c(kappa; x)(t_i, t_j) = sum_u (kappa(t_u,t_j)^T x) outer (kappa(t_u,t_i)^T x) Delta,
    where (v outer w)[a, b] = w_a v_b.  Without x:
        c(kappa)(t_i, t_j)    = sum_u kappa(t_u,t_i)^T kappa(t_u,t_j) Delta.
    Both are symmetric and positive semi-definite as operators.
    """
    if x is None:
        out = compose_kernels(adjoint_kernel(kappa), kappa)
        return MatrixKernel(kappa.grid, kappa.dim, _symmetrize(out.values), symmetric=True)
    x = np.asarray(x, dtype=float)
    if x.shape != (kappa.dim,):
        raise InvalidArgumentError(f"direction x has shape {x.shape}, expected ({kappa.dim},)")
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("direction x must be finite")
    # proj[u, i, a] = (kappa(t_u, t_i)^T x)_a
    proj = np.einsum("uica,c->uia", kappa.values, x)
    vals = np.einsum("uia,ujb->ijab", proj, proj) * kappa.grid.step
    return MatrixKernel(kappa.grid, kappa.dim, _symmetrize(vals), symmetric=True)


def kappa_from_phi(phi: MatrixKernel) -> MatrixKernel:
    """Tail integral kappa_phi(t, s) = int_s^T phi(t, u) du.

    Discretized as the tail sum over left nodes u >= s, so a constant phi gives
    kappa_phi(t_i, t_j) = c (T - t_j) exactly at the nodes.
    """
    tail = np.cumsum(phi.values[:, ::-1], axis=1)[:, ::-1] * phi.grid.step
    return MatrixKernel(phi.grid, phi.dim, np.ascontiguousarray(tail))


def scale_kernel(kappa: MatrixKernel, factor: float) -> MatrixKernel:
    return MatrixKernel(kappa.grid, kappa.dim, kappa.values * float(factor), kappa.symmetric)


# ---------------------------------------------------------------------------
# orthonormal family and the constructor zoo
# ---------------------------------------------------------------------------

def orthonormal_columns(grid: TimeGrid, count: int, kind: str = "cosine") -> np.ndarray:
    """Columns orthonormal in the Delta-weighted inner product sum v_i w_i Delta.

    kind="cosine" samples e_n'(t) = sqrt(2/T) cos((n-1/2) pi t / T) and applies
    a weighted QR; the result deviates from the raw samples by O(Delta).
    kind="legendre" provides an unrelated family for basis-independence checks.
    """
    if count < 1 or count > grid.n_steps:
        raise InvalidArgumentError(f"count must be in 1..{grid.n_steps}, got {count}")
    t = grid.nodes
    if kind == "cosine":
        n = np.arange(1, count + 1)
        raw = np.sqrt(2.0 / grid.horizon) * np.cos(
            (n[None, :] - 0.5) * np.pi * t[:, None] / grid.horizon
        )
    elif kind == "legendre":
        raw = np.polynomial.legendre.legvander(2.0 * t / grid.horizon - 1.0, count - 1)
    else:
        raise InvalidArgumentError(f"unknown orthonormal family {kind!r}")
    sqrt_dt = np.sqrt(grid.step)
    q, r = np.linalg.qr(raw * sqrt_dt)
    q = q * np.sign(np.diag(r))[None, :]  # keep each column aligned with its seed
    return q / sqrt_dt


def _rank_combination(grid: TimeGrid, terms) -> np.ndarray:
    """sum_k coeff_k * v_row(t_i) v_col(t_j) as scalar (N, N, 1, 1) values.

    A term (coeff, row, col) contributes coeff * e_row(t_i) e_col(t_j); this is
    the d = 1 reading of the tensor convention (x tensor y)[a,b] = y_a x_b with
    x the second-argument factor and y the first-argument one.
    """
    nmax = max(max(r, c) for _, r, c in terms)
    basis = orthonormal_columns(grid, nmax)
    vals = np.zeros((grid.n_steps, grid.n_steps))
    for coeff, row, col in terms:
        vals += coeff * np.outer(basis[:, row - 1], basis[:, col - 1])
    return vals[:, :, None, None]


def remark_pair(grid: TimeGrid, b: float, c: float) -> tuple[MatrixKernel, MatrixKernel]:
    """The non-injectivity pair (d = 1): distinct kernels with equal eta kernels
    whenever 1 + c^2 = (1 + b)^2.

        kappa_1(t,s) = b {e_1(t)e_1(s) + e_2(t)e_2(s)}        (symmetric)
        kappa_2(t,s) = c {e_2(t)e_1(s) - e_1(t)e_2(s)}        (antisymmetric)
    """
    k1 = MatrixKernel(grid, 1, _rank_combination(grid, [(b, 1, 1), (b, 2, 2)]), symmetric=True)
    k2 = MatrixKernel(grid, 1, _rank_combination(grid, [(c, 2, 1), (-c, 1, 2)]))
    return k1, k2


KERNEL_GRAMMAR = """\
kernel-spec := name | name ':' param (',' param)*
param       := key '=' value        value := real | int | '[' real (',' real)* ']'

  zero                          zero kernel
  volterra                      indicator 1_{s < t} I_d
  rank1:b=<r>[,n=<int>]         b * e_n(t) e_n(s), d = 1 (default n = 1)
  rank2:b=<r>,c=<r>[,member=<1|2>]
                                member 1: b {e1 e1 + e2 e2}; member 2 (default 1):
                                c {e2(t)e1(s) - e1(t)e2(s)}, the non-injectivity pair
  remark_gencv:b1=<r>,b2=<r>    b1 e1(t)e1(s) + b2 e2(t)e2(s), d = 1
  expdiag:p=[<r>,...]           1_{s < t} diag(e^{(t-s) p_k}), d = len(p)
  const:c=<r>                   constant kernel c I_d (a drift kernel phi)
  const_phi:c=<r>               tail integral of the constant drift phi == c I_d
"""

_ALIASES = {"remark12": "rank2"}


def _split_params(body: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in body:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if cur:
        parts.append("".join(cur))
    return parts


def _parse_spec(spec: str) -> tuple[str, dict]:
    spec = spec.strip()
    name, _, body = spec.partition(":")
    name = _ALIASES.get(name.strip(), name.strip())
    params = {}
    if body:
        for part in _split_params(body):
            key, eq, value = part.partition("=")
            if not eq or not key.strip():
                raise InvalidArgumentError(
                    f"malformed kernel parameter {part!r} in {spec!r}\n{KERNEL_GRAMMAR}"
                )
            params[key.strip()] = value.strip()
    return name, params


def _real(params: dict, key: str, spec: str, default=None) -> float:
    if key not in params:
        if default is not None:
            return default
        raise InvalidArgumentError(f"kernel spec {spec!r} misses parameter {key!r}\n{KERNEL_GRAMMAR}")
    try:
        return float(params.pop(key))
    except ValueError:
        raise InvalidArgumentError(f"parameter {key!r} of {spec!r} is not a real number")


def _real_list(params: dict, key: str, spec: str) -> list[float]:
    if key not in params:
        raise InvalidArgumentError(f"kernel spec {spec!r} misses parameter {key!r}\n{KERNEL_GRAMMAR}")
    raw = params.pop(key)
    m = re.fullmatch(r"\[(.*)\]", raw)
    if not m:
        raise InvalidArgumentError(f"parameter {key!r} of {spec!r} must look like [a,b,...]")
    try:
        return [float(x) for x in m.group(1).split(",") if x.strip()]
    except ValueError:
        raise InvalidArgumentError(f"parameter {key!r} of {spec!r} has non-numeric entries")


def kernel_zoo(spec: str, grid: TimeGrid, dim: int = 1) -> MatrixKernel:
    """Construct a named kernel at the grid nodes.  See KERNEL_GRAMMAR."""
    name, params = _parse_spec(spec)
    n, dt = grid.n_steps, grid.step

    if name == "zero":
        kernel = MatrixKernel(grid, dim, np.zeros((n, n, dim, dim)), symmetric=True)
    elif name == "volterra":
        tri = np.tril(np.ones((n, n)), k=-1)
        kernel = MatrixKernel(grid, dim, tri[:, :, None, None] * np.eye(dim))
    elif name == "rank1":
        if dim != 1:
            raise InvalidArgumentError("rank1 kernels are scalar; pass dim=1")
        b = _real(params, "b", spec)
        mode = int(_real(params, "n", spec, default=1.0))
        kernel = MatrixKernel(grid, 1, _rank_combination(grid, [(b, mode, mode)]), symmetric=True)
    elif name == "rank2":
        if dim != 1:
            raise InvalidArgumentError("rank2 kernels are scalar; pass dim=1")
        b = _real(params, "b", spec)
        c = _real(params, "c", spec)
        member = int(_real(params, "member", spec, default=1.0))
        if member not in (1, 2):
            raise InvalidArgumentError(f"rank2 member must be 1 or 2, got {member}")
        kernel = remark_pair(grid, b, c)[member - 1]
    elif name == "remark_gencv":
        if dim != 1:
            raise InvalidArgumentError("remark_gencv kernels are scalar; pass dim=1")
        b1 = _real(params, "b1", spec)
        b2 = _real(params, "b2", spec)
        kernel = MatrixKernel(
            grid, 1, _rank_combination(grid, [(b1, 1, 1), (b2, 2, 2)]), symmetric=True
        )
    elif name == "expdiag":
        p = _real_list(params, "p", spec)
        if not p:
            raise InvalidArgumentError("expdiag needs at least one rate in p=[...]")
        d = len(p)
        t = grid.nodes
        diff = t[:, None] - t[None, :]
        tri = np.tril(np.ones((n, n)), k=-1)
        vals = np.zeros((n, n, d, d))
        for k, rate in enumerate(p):
            vals[:, :, k, k] = tri * np.exp(diff * rate)
        kernel = MatrixKernel(grid, d, vals)
    elif name == "const":
        c = _real(params, "c", spec)
        kernel = MatrixKernel(
            grid, dim, np.broadcast_to(c * np.eye(dim), (n, n, dim, dim)).copy(),
            symmetric=True,
        )
    elif name == "const_phi":
        c = _real(params, "c", spec)
        phi = MatrixKernel(
            grid, dim, np.broadcast_to(c * np.eye(dim), (n, n, dim, dim)).copy()
        )
        kernel = kappa_from_phi(phi)
    else:
        raise InvalidArgumentError(f"unknown kernel name {name!r}\n{KERNEL_GRAMMAR}")

    if params:
        raise InvalidArgumentError(
            f"unknown parameters {sorted(params)} for kernel {name!r}\n{KERNEL_GRAMMAR}"
        )
    return kernel
