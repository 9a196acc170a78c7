"""Monte Carlo engine: Wiener path batches and the path functionals.

Increments dW[m, i] ~ N(0, Delta I_d) are drawn from a counter-based Philox
stream keyed by (seed, *stream), so every batch is bit-for-bit reproducible
and independent streams are derived by extending the key, never by sharing a
generator.  Path values at the left nodes are W(t_k) = sum_{i<k} dW[m, i]
(W(0) = 0), and all stochastic sums are Ito sums: the integrand is evaluated
strictly before the increment that multiplies it.

Functionals of a batch:

    wiener integral     I[m, i]  = sum_j kappa(t_i, t_j) dW[m, j]
    transformation      dW'[m,i] = dW[m, i] + I[m, i] Delta
    quadratic form      q[m]     = sum_i < sum_{j<i} eta(t_i,t_j) dW[m,j], dW[m,i] >
    oscillator energy   h[m]     = 1/2 sum_i |I[m, i]|^2 Delta   (or <x, I>^2)
    linear-drift weight psi[m]   = - sum_j < sum_i phi(t_i,t_j)^T dW[m,i], W(t_j) > Delta
                                   - 1/2 sum_i |sum_j phi(t_i,t_j) W(t_j) Delta|^2 Delta

The quadratic form excludes the diagonal (strict lower triangle), matching the
defining Riemann sums of the Ito integral; evaluating the path at left nodes
keeps every cross term unbiased because dW_j is independent of W(t_j).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
import struct

import numpy as np

from .errors import InvalidArgumentError, PreconditionError
from .grid_kernel import MatrixKernel, TimeGrid, flat
from .operator import GATE_MARGIN, assemble, lambda_max

__all__ = [
    "PathBatch",
    "TestFunctional",
    "sample_paths",
    "wiener_integral",
    "apply_transformation",
    "quadratic_form",
    "h_functionals",
    "cameron_martin_drift",
    "apply_linear_transformation",
    "cm_exponent",
    "cm_trace_correction",
    "exp_q_moment_guard",
    "save_batch",
    "load_batch",
]


@dataclass(frozen=True)
class PathBatch:
    """Batch of Wiener increments plus the stream metadata that produced it."""

    grid: TimeGrid
    dim: int
    increments: np.ndarray  # (M, N, d), read-only
    seed: int
    stream: tuple = ()

    def __post_init__(self):
        m, n, d = self.increments.shape
        if n != self.grid.n_steps or d != self.dim:
            raise InvalidArgumentError(
                f"increment shape {self.increments.shape} does not match grid/dim"
            )
        self.increments.setflags(write=False)

    @property
    def n_paths(self) -> int:
        return self.increments.shape[0]

    def left_node_values(self) -> np.ndarray:
        """W(t_k) = sum_{i<k} dW_i for k = 0 .. N-1 (so W(t_0) = 0)."""
        m, n, d = self.increments.shape
        w = np.empty((m, n, d))
        w[:, 0] = 0.0
        np.cumsum(self.increments[:, :-1], axis=1, out=w[:, 1:])
        return w

    def terminal_values(self) -> np.ndarray:
        """W(T) per path, shape (M, d)."""
        return self.increments.sum(axis=1)

    def value_at_node(self, k: int) -> np.ndarray:
        """W(t_k) per path for k = 0 .. N (k = N gives W(T))."""
        if not 0 <= k <= self.grid.n_steps:
            raise InvalidArgumentError(f"node index {k} outside 0..{self.grid.n_steps}")
        if k == 0:
            return np.zeros((self.n_paths, self.dim))
        return self.increments[:, :k].sum(axis=1)


def sample_paths(
    grid: TimeGrid, dim: int, n_paths: int, seed: int, stream: tuple = ()
) -> PathBatch:
    """Draw a batch of increments from the Philox stream keyed by (seed, *stream).

    The draw is a single deterministic pass: identical arguments give identical
    bits regardless of how callers schedule batches.
    """
    if n_paths < 1:
        raise InvalidArgumentError(f"n_paths must be >= 1, got {n_paths}")
    if dim < 1:
        raise InvalidArgumentError(f"dim must be >= 1, got {dim}")
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    rng = np.random.Generator(np.random.Philox(key))
    inc = rng.standard_normal((n_paths, grid.n_steps, dim)) * np.sqrt(grid.step)
    return PathBatch(grid, dim, inc, int(seed), tuple(stream))


def _check_grid(kernel: MatrixKernel, batch: PathBatch):
    if kernel.grid != batch.grid or kernel.dim != batch.dim:
        raise InvalidArgumentError("kernel and path batch live on different grids")


def _flat_paths(arr: np.ndarray) -> np.ndarray:
    m, n, d = arr.shape
    return arr.reshape(m, n * d)


def wiener_integral(kappa: MatrixKernel, batch: PathBatch) -> np.ndarray:
    """I[m, i] = sum_j kappa(t_i, t_j) dW[m, j], shape (M, N, d).

    The integrand is deterministic, so the sum runs over the whole grid; for
    the Volterra indicator it telescopes back to the path at the left nodes.
    """
    _check_grid(kappa, batch)
    m, n, d = batch.increments.shape
    out = _flat_paths(batch.increments) @ flat(kappa.values).T
    return out.reshape(m, n, d)


def apply_transformation(kappa: MatrixKernel, batch: PathBatch) -> PathBatch:
    """The transformation of order one on the grid: dW'_i = dW_i + I_i Delta,
    I the Wiener integral of kappa along the batch.

    Affine in the path, so composing with the inverse kernel's transformation
    returns the original increments to machine precision.
    """
    drift = wiener_integral(kappa, batch)
    inc = batch.increments + drift * kappa.grid.step
    return replace(batch, increments=inc)


def quadratic_form(eta: MatrixKernel, batch: PathBatch) -> np.ndarray:
    """Double Ito sum of a symmetric kernel over the strict lower triangle."""
    if not eta.symmetric:
        raise PreconditionError("quadratic_form requires a symmetric kernel")
    _check_grid(eta, batch)
    n = eta.grid.n_steps
    tri = np.tril(np.ones((n, n)), k=-1)
    lower = flat(eta.values * tri[:, :, None, None])
    dwf = _flat_paths(batch.increments)
    inner = dwf @ lower.T  # inner[m, (i,a)] = sum_{j<i} (eta_ij dW_j)_a
    return np.einsum("mk,mk->m", inner, dwf)


def h_functionals(
    kappa: MatrixKernel, batch: PathBatch, x: np.ndarray | None = None
) -> np.ndarray:
    """Oscillator energies: 1/2 int <x, I(t)>^2 dt, or 1/2 int |I(t)|^2 dt without x."""
    integral = wiener_integral(kappa, batch)
    if x is None:
        return 0.5 * np.einsum("mia,mia->m", integral, integral) * kappa.grid.step
    x = np.asarray(x, dtype=float)
    if x.shape != (kappa.dim,):
        raise InvalidArgumentError(f"direction x has shape {x.shape}, expected ({kappa.dim},)")
    proj = integral @ x
    return 0.5 * np.einsum("mi,mi->m", proj, proj) * kappa.grid.step


def cameron_martin_drift(phi: MatrixKernel, batch: PathBatch) -> np.ndarray:
    """G[m, i] = sum_j phi(t_i, t_j) W(t_j) Delta, the derivative of the linear
    transformation's shift; agrees with the Wiener integral of the tail kernel
    of phi up to an O(sqrt(Delta)) pathwise error."""
    _check_grid(phi, batch)
    m, n, d = batch.increments.shape
    wf = _flat_paths(batch.left_node_values())
    out = wf @ flat(phi.values).T * phi.grid.step
    return out.reshape(m, n, d)


def apply_linear_transformation(phi: MatrixKernel, batch: PathBatch) -> PathBatch:
    drift = cameron_martin_drift(phi, batch)
    inc = batch.increments + drift * phi.grid.step
    return replace(batch, increments=inc)


def cm_exponent(phi: MatrixKernel, batch: PathBatch) -> tuple[np.ndarray, np.ndarray]:
    """Exponents of the linear change-of-variables weight.

    Returns (psi, psi_tilde) per path, where

        psi       = - sum_j < sum_i phi(t_i,t_j)^T dW_i, W(t_j) > Delta
                    - 1/2 sum_i |sum_j phi(t_i,t_j) W(t_j) Delta|^2 Delta
        psi_tilde = psi + sum_j (sum_{i: t_i < t_j} tr phi(t_i,t_j) Delta) Delta.

    The path enters at left nodes, so dW_j is independent of the W(t_j) it is
    paired with and the cross term is unbiased.
    """
    _check_grid(phi, batch)
    dt = phi.grid.step
    dwf = _flat_paths(batch.increments)
    wf = _flat_paths(batch.left_node_values())
    pf = flat(phi.values)
    cross = dwf @ pf  # cross[m, (j,b)] = sum_i (phi_ij^T dW_i)_b
    term1 = -np.einsum("mk,mk->m", cross, wf) * dt
    drift = wf @ pf.T * dt
    term2 = -0.5 * np.einsum("mk,mk->m", drift, drift) * dt
    psi = term1 + term2
    return psi, psi + cm_trace_correction(phi)


def cm_trace_correction(phi: MatrixKernel) -> float:
    """Deterministic gap between the trace-free and trace-corrected exponents."""
    tr_blocks = np.einsum("ijaa->ij", phi.values)
    return float(np.sum(np.triu(tr_blocks, k=1)) * phi.grid.step ** 2)


def exp_q_moment_guard(eta: MatrixKernel) -> str:
    """Integrability state of exp(q_eta) under the Wiener measure.

    'reject'    lambda >= 1 - gate margin: the mean itself is infinite
    'ok_no_ci'  2 lambda >= 1: mean finite but variance infinite, so sample
                standard errors are meaningless and no CI may be reported
    'ok'        both moments finite
    """
    if not eta.symmetric:
        raise PreconditionError("moment guard requires a symmetric kernel")
    lam = lambda_max(assemble(eta))
    if lam >= 1.0 - GATE_MARGIN:
        return "reject"
    # roundoff guard: exactly-critical spectra (2 lambda == 1) must flag no-CI
    # regardless of last-bit rounding of the eigensolve
    if 2.0 * lam >= 1.0 - 1e-12:
        return "ok_no_ci"
    return "ok"


# ---------------------------------------------------------------------------
# bounded test functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunctional:
    """Small family of bounded continuous path functionals, |f| <= 1.

    Tags: 'one', 'cos_end:a' (cos of a times the coordinate sum of W(T)),
    'exp_negsq' (exp(-|W(T)|^2)), 'cos_mid:a,tau' (cos of a times the first
    coordinate of W(tau), tau snapped to the nearest node).
    """

    __test__ = False  # not a pytest class

    tag: str
    a: float = 1.0
    tau: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "TestFunctional":
        text = text.strip()
        name, _, body = text.partition(":")
        if name == "one":
            return cls("one")
        if name == "exp_negsq":
            return cls("exp_negsq")
        if name == "cos_end":
            try:
                return cls("cos_end", a=float(body))
            except ValueError:
                raise InvalidArgumentError(f"cos_end needs a real parameter, got {text!r}")
        if name == "cos_mid":
            parts = body.split(",")
            if len(parts) != 2:
                raise InvalidArgumentError(f"cos_mid needs 'a,tau', got {text!r}")
            return cls("cos_mid", a=float(parts[0]), tau=float(parts[1]))
        raise InvalidArgumentError(
            f"unknown functional {text!r}; expected one, cos_end:a, exp_negsq, cos_mid:a,tau"
        )

    def __str__(self) -> str:
        if self.tag == "cos_end":
            return f"cos_end:{self.a:g}"
        if self.tag == "cos_mid":
            return f"cos_mid:{self.a:g},{self.tau:g}"
        return self.tag

    @property
    def is_constant_one(self) -> bool:
        return self.tag == "one"

    def evaluate(self, batch: PathBatch) -> np.ndarray:
        if self.tag == "one":
            return np.ones(batch.n_paths)
        if self.tag == "cos_end":
            return np.cos(self.a * batch.terminal_values().sum(axis=1))
        if self.tag == "exp_negsq":
            end = batch.terminal_values()
            return np.exp(-np.einsum("md,md->m", end, end))
        if self.tag == "cos_mid":
            k = int(round(self.tau / batch.grid.step))
            k = min(max(k, 0), batch.grid.n_steps)
            return np.cos(self.a * batch.value_at_node(k)[:, 0])
        raise InvalidArgumentError(f"unknown functional tag {self.tag!r}")


# ---------------------------------------------------------------------------
# binary replay format
# ---------------------------------------------------------------------------

_MAGIC = b"WPB1"
_HEADER = struct.Struct("<4sd3Qq")  # magic, T, N, d, M, seed


def save_batch(batch: PathBatch, path) -> None:
    """Dump header (T, N, d, M, seed) + row-major float64 increments."""
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                _MAGIC,
                batch.grid.horizon,
                batch.grid.n_steps,
                batch.dim,
                batch.n_paths,
                batch.seed,
            )
        )
        fh.write(np.ascontiguousarray(batch.increments, dtype="<f8").tobytes())


def load_batch(path) -> PathBatch:
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        magic, horizon, n, d, m, seed = _HEADER.unpack(header)
        if magic != _MAGIC:
            raise InvalidArgumentError(f"{path}: not a path-batch dump")
        payload = np.frombuffer(fh.read(), dtype="<f8").reshape(m, n, d).copy()
    return PathBatch(TimeGrid(horizon, n), d, payload, seed)
