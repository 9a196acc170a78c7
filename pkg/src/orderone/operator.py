"""Nystrom realization of the induced Hilbert-Schmidt operators and their
spectral calculus.

A kernel kappa acts on L2([0,T]; R^d) (identified with the Cameron-Martin
space via h <-> h') through (B_kappa h)'(t) = int kappa(t,s) h'(s) ds.  On the
grid this is the (N d) x (N d) matrix

    M[(i,a), (j,b)] = kappa(t_i, t_j)[a,b] * Delta,

whose Frobenius norm equals the kernel's L2 norm.  Everything downstream is
dense linear algebra:

    lambda_max   top eigenvalue of a symmetric M (the Rayleigh supremum)
    det2         regularized determinant det(I+M) e^{-tr M}, in log domain
    inverse      kappa_hat with (I+M)(I+M_hat) = I
    kappa_s      square root construction: M_s = sqrt(I - M_eta) - I for a
                 symmetric eta with lambda_max < 1

The d = 2 regularization matters because the operators are Hilbert-Schmidt but
generally not trace class; on the grid every matrix has a trace, and det2 of
the matrix converges to the operator det2 under grid refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import (
    InvalidArgumentError,
    NotContractiveError,
    PreconditionError,
    SingularOperatorError,
)
from .grid_kernel import (
    MatrixKernel,
    TimeGrid,
    eta_of_kappa,
    flat,
    kernel_l2_norm,
    unflat,
)

__all__ = [
    "HSMatrix",
    "Det2",
    "SpectralSummary",
    "assemble",
    "kernel_from_matrix",
    "lambda_max",
    "lambda_min",
    "det2",
    "det2_matrix",
    "det2_product_identity_check",
    "trace",
    "inverse_kernel",
    "kappa_s",
    "injectivity_witness",
    "spectral_summary",
    "GATE_MARGIN",
    "PIVOT_RTOL",
]

#: all "lambda < 1" gates actually require lambda < 1 - GATE_MARGIN
GATE_MARGIN = 1e-8
#: an LU pivot below PIVOT_RTOL * max pivot marks I + M as singular
PIVOT_RTOL = 1e-14

_SYM_RTOL = 1e-12


@dataclass(frozen=True)
class HSMatrix:
    """Dense matrix of the operator induced by a kernel (quadrature weight folded in)."""

    grid: TimeGrid
    dim: int
    matrix: np.ndarray  # (N d, N d), read-only
    source: MatrixKernel | None = None

    def __post_init__(self):
        nd = self.grid.n_steps * self.dim
        if self.matrix.shape != (nd, nd):
            raise InvalidArgumentError(
                f"matrix shape {self.matrix.shape} does not match (N d, N d) = ({nd}, {nd})"
            )
        self.matrix.setflags(write=False)

    @property
    def is_symmetric(self) -> bool:
        m = self.matrix
        scale = max(1.0, float(np.max(np.abs(m))) if m.size else 0.0)
        return float(np.max(np.abs(m - m.T))) <= _SYM_RTOL * scale

    def hs_norm(self) -> float:
        """Frobenius norm; equals the source kernel's L2 norm."""
        return float(np.linalg.norm(self.matrix))


def assemble(kappa: MatrixKernel) -> HSMatrix:
    """Nystrom matrix M[(i,a),(j,b)] = kappa(t_i,t_j)[a,b] Delta."""
    return HSMatrix(kappa.grid, kappa.dim, flat(kappa.values) * kappa.grid.step, source=kappa)


def kernel_from_matrix(
    matrix: np.ndarray, grid: TimeGrid, dim: int, symmetric: bool = False
) -> MatrixKernel:
    """Invert the assemble weighting: kernel values are matrix blocks / Delta."""
    vals = unflat(np.asarray(matrix, dtype=float) / grid.step, grid.n_steps, dim)
    return MatrixKernel(grid, dim, vals, symmetric)


def _require_symmetric(matrix: np.ndarray, what: str):
    scale = max(1.0, float(np.max(np.abs(matrix))) if matrix.size else 0.0)
    asym = float(np.max(np.abs(matrix - matrix.T)))
    if asym > _SYM_RTOL * scale:
        raise PreconditionError(f"{what} requires a symmetric operator (asymmetry {asym:.3e})")


def lambda_max(op: HSMatrix | np.ndarray) -> float:
    """Largest eigenvalue of a symmetric operator (sup of the Rayleigh quotient)."""
    m = op.matrix if isinstance(op, HSMatrix) else np.asarray(op, dtype=float)
    _require_symmetric(m, "lambda_max")
    return float(np.linalg.eigvalsh(m)[-1])


def lambda_min(op: HSMatrix | np.ndarray) -> float:
    m = op.matrix if isinstance(op, HSMatrix) else np.asarray(op, dtype=float)
    _require_symmetric(m, "lambda_min")
    return float(np.linalg.eigvalsh(m)[0])


@dataclass(frozen=True)
class Det2:
    """Regularized determinant det2(I + B) as sign * exp(log_modulus).

    A numerically rank-deficient I + B is reported as singular = True
    (sign 0, log_modulus -inf), never as a signed zero value.
    """

    sign: int
    log_modulus: float
    singular: bool = False

    @property
    def value(self) -> float:
        if self.singular:
            return 0.0
        return self.sign * float(np.exp(self.log_modulus))


def det2_matrix(b: np.ndarray) -> Det2:
    """det2(I + b) = det(I + b) e^{-tr b} via LU in log domain.

    Rank deficiency: a pivot below 1e-8 of the pivot scale is suspicious; it
    is confirmed singular when the smallest singular value of I + b falls
    below PIVOT_RTOL times the largest (partial-pivoting LU alone inflates a
    zero eigenvalue to roughly n * eps * growth and cannot decide at 1e-14).
    """
    b = np.asarray(b, dtype=float)
    a = np.eye(b.shape[0]) + b
    lu, piv = sla.lu_factor(a, check_finite=False)
    diag = np.diag(lu)
    scale = float(np.max(np.abs(diag))) if diag.size else 0.0
    if scale == 0.0:
        return Det2(sign=0, log_modulus=-np.inf, singular=True)
    if float(np.min(np.abs(diag))) <= 1e-8 * scale:
        sv = sla.svdvals(a, check_finite=False)
        if sv[0] == 0.0 or sv[-1] <= PIVOT_RTOL * sv[0]:
            return Det2(sign=0, log_modulus=-np.inf, singular=True)
    perm_sign = 1 if np.count_nonzero(piv != np.arange(len(piv))) % 2 == 0 else -1
    sign = perm_sign * (1 if np.count_nonzero(diag < 0) % 2 == 0 else -1)
    log_modulus = float(np.sum(np.log(np.abs(diag))) - np.trace(b))
    return Det2(sign=sign, log_modulus=log_modulus)


def det2(op: HSMatrix | np.ndarray) -> Det2:
    m = op.matrix if isinstance(op, HSMatrix) else np.asarray(op, dtype=float)
    return det2_matrix(m)


def trace(op: HSMatrix) -> float:
    """Matrix trace of M; equals sum_i tr kappa(t_i, t_i) Delta, the quadrature
    of the diagonal integral (meaningful when the source kernel is continuous
    and the operator trace class)."""
    return float(np.trace(op.matrix))


@dataclass(frozen=True)
class Det2ProductReport:
    """Both routes to det2((I + B*)(I + B)) and their agreement."""

    lhs_log: float
    rhs_log: float
    discrepancy: float
    eta_log: float | None
    eta_discrepancy: float | None
    singular: bool

    @property
    def ok(self) -> bool:
        return not self.singular and self.discrepancy <= 1e-10


def _log_gap(a_log: float, b_log: float) -> float:
    # |ratio - 1| of two positive values given in log form
    return float(abs(np.expm1(a_log - b_log)))


def det2_product_identity_check(op: HSMatrix) -> Det2ProductReport:
    """Check det2((I+B*)(I+B)) = det2(I+B) det2(I+B*) e^{-tr(B*B)}.

    When the operator was assembled from a kernel, additionally compare with
    det2(I - B_eta) for the eta kernel of the source, which equals the same
    product by the operator identity B_eta = -(B + B* + B*B).
    """
    m = op.matrix
    prod_b = m + m.T + m.T @ m  # (I+M^T)(I+M) - I, formed without cancellation
    lhs = det2_matrix(prod_b)
    d_m = det2_matrix(m)
    d_mt = det2_matrix(m.T)
    if lhs.singular or d_m.singular or d_mt.singular:
        return Det2ProductReport(lhs.log_modulus, -np.inf, np.inf, None, None, True)
    rhs_log = d_m.log_modulus + d_mt.log_modulus - float(np.sum(m * m))
    disc = _log_gap(lhs.log_modulus, rhs_log)

    eta_log = eta_disc = None
    if op.source is not None:
        m_eta = assemble(eta_of_kappa(op.source)).matrix
        d_eta = det2_matrix(-m_eta)
        if not d_eta.singular:
            eta_log = d_eta.log_modulus
            eta_disc = _log_gap(lhs.log_modulus, eta_log)
    return Det2ProductReport(lhs.log_modulus, rhs_log, disc, eta_log, eta_disc, False)


def inverse_kernel(kappa: MatrixKernel) -> MatrixKernel:
    """The kernel kappa_hat with B_kappa_hat = (I + B_kappa)^{-1} - I.

    Computed as -(I+M)^{-1} M, which keeps the result Hilbert-Schmidt-shaped
    instead of differencing two near-identity matrices.
    """
    m = assemble(kappa).matrix
    if det2_matrix(m).singular:
        raise SingularOperatorError("I + B_kappa is numerically singular; no inverse kernel")
    a = np.eye(m.shape[0]) + m
    m_hat = -np.linalg.solve(a, m)
    sym = kappa.symmetric and float(np.max(np.abs(m_hat - m_hat.T))) <= _SYM_RTOL * max(
        1.0, float(np.max(np.abs(m_hat)))
    )
    if sym:
        m_hat = 0.5 * (m_hat + m_hat.T)
    return kernel_from_matrix(m_hat, kappa.grid, kappa.dim, symmetric=sym)


def kappa_s(eta: MatrixKernel, enforce_gate: bool = True) -> MatrixKernel:
    """Square-root kernel: B = sqrt(I - B_eta) - I, the unique symmetric kernel
    with I + B >= 0 whose eta kernel reproduces eta.

    Requires lambda_max(B_eta) < 1 - GATE_MARGIN (the exponential
    integrability regime); pass enforce_gate=False to try anyway.
    """
    if not eta.symmetric:
        raise PreconditionError("kappa_s requires a symmetric kernel")
    m_eta = assemble(eta).matrix
    w, v = np.linalg.eigh(m_eta)
    lam = float(w[-1])
    if enforce_gate and lam >= 1.0 - GATE_MARGIN:
        raise NotContractiveError(
            f"lambda_max(B_eta) = {lam:.12g} >= 1 - {GATE_MARGIN}; no square-root regime"
        )
    c_eigs = 1.0 - w
    # analytically >= 1 - lambda > 0; any negative value is pure roundoff
    c_eigs = np.maximum(c_eigs, PIVOT_RTOL * float(np.max(np.abs(c_eigs))))
    m_s = (v * np.sqrt(c_eigs)) @ v.T - np.eye(len(w))
    m_s = 0.5 * (m_s + m_s.T)
    return kernel_from_matrix(m_s, eta.grid, eta.dim, symmetric=True)


@dataclass(frozen=True)
class WitnessReport:
    """Distances behind the injectivity statement on {symmetric, I + B >= 0}."""

    eta_distance: float
    kappa_distance: float
    member_1: bool
    member_2: bool
    min_eig_1: float
    min_eig_2: float
    tol: float
    implication_holds: bool


def injectivity_witness(
    kappa_1: MatrixKernel, kappa_2: MatrixKernel, tol: float = 1e-8, strict: bool = True
) -> WitnessReport:
    """Report ||eta(k1) - eta(k2)|| and ||k1 - k2|| and test the implication
    "equal eta forces equal kappa" that holds on the domain
    {symmetric, I + B >= 0}.

    With strict=True (default) a non-member input raises PreconditionError;
    with strict=False the report documents the failure of injectivity outside
    the domain (member flags false).
    """
    if kappa_1.grid != kappa_2.grid or kappa_1.dim != kappa_2.dim:
        raise InvalidArgumentError("witness inputs must share grid and dimension")
    n_id = np.eye(kappa_1.grid.n_steps * kappa_1.dim)

    def membership(k: MatrixKernel) -> tuple[bool, float]:
        m = assemble(k).matrix
        if float(np.max(np.abs(m - m.T))) > _SYM_RTOL * max(1.0, float(np.max(np.abs(m)))):
            return False, np.nan
        mn = float(np.linalg.eigvalsh(n_id + m)[0])
        return mn >= -1e-10, mn

    mem1, mn1 = membership(kappa_1)
    mem2, mn2 = membership(kappa_2)
    if strict and not (mem1 and mem2):
        raise PreconditionError(
            "injectivity witness requires symmetric kernels with I + B >= 0 "
            f"(membership: {mem1}, {mem2}); pass strict=False to document the violation"
        )
    eta_dist = kernel_l2_norm(
        MatrixKernel(
            kappa_1.grid,
            kappa_1.dim,
            eta_of_kappa(kappa_1).values - eta_of_kappa(kappa_2).values,
        )
    )
    kap_dist = kernel_l2_norm(
        MatrixKernel(kappa_1.grid, kappa_1.dim, kappa_1.values - kappa_2.values)
    )
    if mem1 and mem2:
        # Lipschitz factor of the square root on the spectral gap
        cond = 1.0 / max(np.sqrt(max(mn1, 0.0)) + np.sqrt(max(mn2, 0.0)), 1e-30)
        implication = (eta_dist > tol) or (kap_dist <= tol * cond)
    else:
        implication = False
    return WitnessReport(eta_dist, kap_dist, mem1, mem2, mn1, mn2, tol, implication)


@dataclass(frozen=True)
class SpectralSummary:
    """Flat summary of the spectral data attached to a kernel.

    lambda_max is the gate eigenvalue Lambda(B_eta(kappa)); det2 refers to
    det2(I + B_kappa).  Serializes to the flat JSON object used by the CLI.
    """

    lambda_max: float
    det2_sign: int
    det2_log_modulus: float
    trace: float
    hs_norm: float
    singular: bool = False

    def to_dict(self) -> dict:
        return {
            "lambda_max": self.lambda_max,
            "det2_sign": self.det2_sign,
            "det2_log_modulus": self.det2_log_modulus if np.isfinite(self.det2_log_modulus) else None,
            "trace": self.trace,
            "hs_norm": self.hs_norm,
            "singular": self.singular,
        }


def spectral_summary(kappa: MatrixKernel) -> SpectralSummary:
    op = assemble(kappa)
    d2 = det2(op)
    lam = lambda_max(assemble(eta_of_kappa(kappa)))
    return SpectralSummary(
        lambda_max=lam,
        det2_sign=d2.sign,
        det2_log_modulus=d2.log_modulus,
        trace=trace(op),
        hs_norm=op.hs_norm(),
        singular=d2.singular,
    )
