"""Dense symmetric spectral computations for empirical covariance matrices.

The deviation of interest is ||A A^T / N - I|| (operator norm).  For an
isotropic ensemble this equals sup over unit x of |(1/N) sum <X_i, x>^2 - 1|,
and both are computed here through one eigendecomposition of the Gram matrix
on the cheaper side: A A^T (n x n) when n <= N, A^T A (N x N) otherwise, with
eigenvalues transported (A A^T then has n - N extra zeros).

The eigensolver is a threshold cyclic Jacobi iteration: quadratically
convergent, dependency-free, and with directly assertable accuracy
invariants (orthogonality, reconstruction, trace).  Desk scale (dim <= 512)
makes the O(dim^3)-per-sweep cost acceptable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NumericalError
from .sampler import SampleMatrix

__all__ = [
    "SymMatrix",
    "Spectrum",
    "DeviationReport",
    "gram_covariance",
    "sym_eigen",
    "operator_deviation",
    "matrix_norm",
    "boundedness_ratio",
]

#: Off-diagonal Frobenius mass at convergence, relative to ||M||_F.
JACOBI_TOL = 1e-14
#: Hard cap on full sweeps before declaring non-convergence.
JACOBI_MAX_SWEEPS = 50


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric matrix stored as the packed upper triangle (row-wise)."""

    dim: int
    packed: np.ndarray

    def __post_init__(self) -> None:
        expected = self.dim * (self.dim + 1) // 2
        if self.dim < 1 or self.packed.shape != (expected,):
            raise ContractError(
                f"packed length {self.packed.shape} does not match dim {self.dim} (need {expected})"
            )
        if not np.isfinite(self.packed).all():
            raise ContractError("matrix entries contain non-finite values")

    @classmethod
    def from_full(cls, full: np.ndarray) -> "SymMatrix":
        """Pack a square array, symmetrizing exactly via (M + M^T)/2."""
        full = np.asarray(full, dtype=np.float64)
        if full.ndim != 2 or full.shape[0] != full.shape[1]:
            raise ContractError(f"expected a square matrix, got shape {full.shape}")
        dim = full.shape[0]
        sym = 0.5 * (full + full.T)
        iu = np.triu_indices(dim)
        return cls(dim=dim, packed=np.ascontiguousarray(sym[iu]))

    def to_full(self) -> np.ndarray:
        full = np.zeros((self.dim, self.dim))
        iu = np.triu_indices(self.dim)
        full[iu] = self.packed
        full.T[iu] = self.packed
        return full

    def frobenius(self) -> float:
        diag_idx = np.cumsum(np.r_[0, np.arange(self.dim, 1, -1)])
        diag_sq = float(np.sum(self.packed[diag_idx] ** 2))
        total = 2.0 * float(np.sum(self.packed**2)) - diag_sq
        return float(np.sqrt(total))


@dataclass(frozen=True)
class Spectrum:
    """Eigendecomposition M = V diag(eigenvalues) V^T, eigenvalues ascending."""

    eigenvalues: np.ndarray
    basis: np.ndarray
    residual: float


@dataclass(frozen=True)
class DeviationReport:
    """Everything measured from one ensemble draw.

    lambda_min / lambda_max are eigenvalues of the *unnormalized* A A^T;
    deviation is ||A A^T / N - I||; boundedness_ratio is
    max_i |X_i| / (sqrt(n) * max{1, (N/n)^{1/4}}).
    """

    n: int
    N: int
    lambda_min: float
    lambda_max: float
    deviation: float
    max_col_norm: float
    boundedness_ratio: float
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "N": self.N,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "deviation": self.deviation,
            "max_col_norm": self.max_col_norm,
            "boundedness_ratio": self.boundedness_ratio,
            "seed": self.seed,
        }


def gram_covariance(A: SampleMatrix) -> SymMatrix:
    """The empirical covariance A A^T / N as an exactly symmetric matrix."""
    e = A.entries
    return SymMatrix.from_full((e @ e.T) / A.N)


def _jacobi(full: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray, float]:
    """Threshold cyclic-by-row Jacobi on a working copy of `full`.

    Returns (diagonal, accumulated rotations V with full = V diag V^T, final
    off-diagonal Frobenius mass).  Rotations below the threshold
    tol*||M||_F/(2 dim) are skipped; once every pivot is below it, the
    off-diagonal mass is within the convergence target, so the sweep loop
    always terminates for finite input.
    """
    dim = full.shape[0]
    a = full.copy()
    v = np.eye(dim)
    fro = float(np.linalg.norm(full))
    if dim == 1 or fro == 0.0:
        return np.diagonal(a).copy(), v, 0.0
    target = tol * fro
    skip = target / (2.0 * dim)

    def offdiag() -> float:
        # Sum the off-diagonal entries themselves; subtracting the diagonal
        # mass from the total would cancel catastrophically near convergence.
        masked = a.copy()
        np.fill_diagonal(masked, 0.0)
        return float(np.linalg.norm(masked))

    for _sweep in range(max_sweeps):
        off = offdiag()
        if off <= target:
            return np.diagonal(a).copy(), v, off
        for p in range(dim - 1):
            for q in range(p + 1, dim):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                new_p = c * row_p - s * row_q
                new_q = s * row_p + c * row_q
                a[p, :] = new_p
                a[:, p] = new_p
                a[q, :] = new_q
                a[:, q] = new_q
                # The 2x2 pivot block is set from the closed form so the
                # pivot is exactly zero and symmetry is exact.
                a[p, p] = app - t * apq
                a[q, q] = aqq + t * apq
                a[p, q] = 0.0
                a[q, p] = 0.0
                v_p = v[:, p].copy()
                v_q = v[:, q].copy()
                v[:, p] = c * v_p - s * v_q
                v[:, q] = s * v_p + c * v_q
    off = offdiag()
    if off <= target:
        return np.diagonal(a).copy(), v, off
    raise NumericalError(
        f"Jacobi did not converge in {max_sweeps} sweeps: off-diagonal mass {off:.3e} > {target:.3e}"
    )


def sym_eigen(M: SymMatrix, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> Spectrum:
    """Full eigendecomposition of a SymMatrix by cyclic Jacobi rotations."""
    full = M.to_full()
    diag, v, _off = _jacobi(full, tol, max_sweeps)
    order = np.argsort(diag, kind="stable")
    eigenvalues = np.ascontiguousarray(diag[order])
    basis = np.ascontiguousarray(v[:, order])
    residual = float(np.linalg.norm((basis * eigenvalues) @ basis.T - full))
    return Spectrum(eigenvalues=eigenvalues, basis=basis, residual=residual)


def boundedness_ratio(n: int, N: int, max_col_norm: float) -> float:
    """max_i |X_i| / sqrt(n), relative to the regime factor max{1, (N/n)^{1/4}}."""
    return max_col_norm / np.sqrt(n) / max(1.0, (N / n) ** 0.25)


def operator_deviation(A: SampleMatrix) -> DeviationReport:
    """Extremal eigenvalues of A A^T and the covariance deviation, in one pass.

    For N < n the spectrum of A A^T is the spectrum of A^T A padded with
    n - N zeros, so lambda_min = 0 exactly and only the small Gram is
    decomposed.
    """
    n, N = A.n, A.N
    e = A.entries
    if N >= n:
        spectrum = sym_eigen(gram_covariance(A))
        scaled = spectrum.eigenvalues  # eigenvalues of A A^T / N
        lam_min_scaled = max(float(scaled[0]), 0.0)
        lam_max_scaled = max(float(scaled[-1]), 0.0)
    else:
        small = SymMatrix.from_full((e.T @ e) / N)
        spectrum = sym_eigen(small)
        lam_min_scaled = 0.0
        lam_max_scaled = max(float(spectrum.eigenvalues[-1]), 0.0)
    deviation = max(abs(lam_max_scaled - 1.0), abs(lam_min_scaled - 1.0))
    max_col = A.max_column_norm()
    return DeviationReport(
        n=n,
        N=N,
        lambda_min=lam_min_scaled * N,
        lambda_max=lam_max_scaled * N,
        deviation=deviation,
        max_col_norm=max_col,
        boundedness_ratio=float(boundedness_ratio(n, N, max_col)),
        seed=A.seed,
    )


def matrix_norm(A: SampleMatrix) -> float:
    """Largest singular value of A, via the smaller of the two Gram matrices."""
    e = A.entries
    gram = e @ e.T if A.n <= A.N else e.T @ e
    spectrum = sym_eigen(SymMatrix.from_full(gram))
    return float(np.sqrt(max(float(spectrum.eigenvalues[-1]), 0.0)))
