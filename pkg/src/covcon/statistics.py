"""Hypothesis-side estimators: psi_1 norms, boundedness, sparse operator
norms, sphere nets, and the truncation decomposition of the deviation.

These measure every quantity the concentration bounds take as hypotheses
(the sub-exponential constant psi, the column-norm constant K, the sparse
norms A_m) and reproduce the internal decomposition S(x) <= S1 + S2 + S3
used to control the deviation, so each analytic step can be checked on
sampled data.

psi_1 (sub-exponential Orlicz) norm of a scalar Y:

    ||Y||_{psi_1} = inf{ C > 0 : E exp(|Y|/C) <= 2 }.

The empirical version replaces E by the sample mean; the mean is monotone
decreasing and continuous in C, so the infimum is found by bisection in
log-sum-exp space.  Finite-sample estimates are downward biased (they see no
tail beyond the sample); treat them as lower bounds and report sample sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import logsumexp, ndtr
from scipy.stats import qmc

from . import rng
from .errors import (
    AnalyticUnavailableError,
    ContractError,
    EnumerationBudgetError,
)
from .linalg import boundedness_ratio, matrix_norm
from .sampler import SampleMatrix, sample_ensemble

__all__ = [
    "Psi1Estimate",
    "SparseNormProfile",
    "TruncationSplit",
    "SphereNet",
    "psi1_estimate",
    "psi1_ensemble",
    "boundedness_check",
    "sparse_norm",
    "sparse_norm_profile",
    "truncation_split",
    "direction_deviation",
    "build_net",
    "net_sup_deviation",
    "net_covering_radius_probe",
]

#: Subset budget for exact sparse-norm enumeration.
EXACT_ENUMERATION_BUDGET = 1_000_000

_BISECT_REL_TOL = 1e-13
_BISECT_MAX_ITER = 110


@dataclass(frozen=True)
class Psi1Estimate:
    """Empirical psi_1 norm with its terminal bisection bracket."""

    value: float
    sample_size: int
    bracket: tuple[float, float]


@dataclass(frozen=True)
class SparseNormProfile:
    """Estimates of A_m = sup{|Az| : z unit, m-sparse} over a geometric m grid."""

    m_values: np.ndarray
    a_m: np.ndarray
    mode: str
    certificates: tuple[tuple[int, ...], ...] | None = None

    def to_json_dict(self) -> dict:
        d = {
            "m_values": [int(m) for m in self.m_values],
            "a_m": [float(v) for v in self.a_m],
            "mode": self.mode,
        }
        if self.certificates is not None:
            d["certificates"] = [list(c) for c in self.certificates]
        return d


@dataclass(frozen=True)
class TruncationSplit:
    """Decomposition of the one-direction deviation at truncation level B.

    s1: |mean over i of (min(|<X_i,x>|, B)^2 - E min(...)^2)|
    s2: (1/N) sum over E_B of (<X_i,x>^2 - B^2), the empirical excess
    s3: the expectation analogue of s2
    e_b_indices: E_B(x) = {i : |<X_i,x>| >= B}
    big_m: max{psi^2 n, max_i |X_i|^2}
    """

    B: float
    x: np.ndarray
    s1: float
    s2: float
    s3: float
    e_b_indices: np.ndarray
    m_observed: int
    big_m: float
    expectation: str

    def to_json_dict(self) -> dict:
        return {
            "B": self.B,
            "x": [float(v) for v in self.x],
            "s1": self.s1,
            "s2": self.s2,
            "s3": self.s3,
            "e_b_indices": [int(i) for i in self.e_b_indices],
            "m_observed": self.m_observed,
            "big_m": self.big_m,
            "expectation": self.expectation,
        }


@dataclass(frozen=True)
class SphereNet:
    """Greedy maximal epsilon-separated point set on the unit sphere."""

    n: int
    epsilon: float
    points: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "epsilon": self.epsilon,
            "size": int(self.points.shape[0]),
            "points": [[float(v) for v in row] for row in self.points],
        }


# --- psi_1 estimation --------------------------------------------------------


def _psi1_bisect_rows(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row-wise empirical psi_1 values for a (d, T) array.

    Solves mean_j exp(|a_ij|/C_i) = 2 per row, i.e. logsumexp(|a_i|/C) =
    ln(2T), by bisection on the bracket [amax/ln(2T), amax/ln 2] (the mean is
    >= 2 at the left end and <= 2 at the right end).  Returns (values, lo, hi);
    all-zero rows get value 0 with a degenerate bracket.
    """
    a = np.abs(np.asarray(arr, dtype=np.float64))
    if a.ndim != 2 or a.shape[1] == 0:
        raise ContractError(f"expected a nonempty (d, T) sample array, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ContractError("samples contain non-finite values")
    d, T = a.shape
    amax = a.max(axis=1)
    zero = amax == 0.0
    target = math.log(2.0 * T)
    lo = amax / target
    hi = amax / math.log(2.0)
    for _ in range(_BISECT_MAX_ITER):
        mid = 0.5 * (lo + hi)
        mid_safe = np.where(mid > 0.0, mid, 1.0)
        g = logsumexp(a / mid_safe[:, None], axis=1) - target
        ok = g <= 0.0
        hi = np.where(ok, mid, hi)
        lo = np.where(ok, lo, mid)
        if np.all(hi - lo <= _BISECT_REL_TOL * np.maximum(1.0, hi)):
            break
    value = np.where(zero, 0.0, 0.5 * (lo + hi))
    lo = np.where(zero, 0.0, lo)
    hi = np.where(zero, 0.0, hi)
    return value, lo, hi


def psi1_estimate(samples: np.ndarray) -> Psi1Estimate:
    """Empirical psi_1 norm of a scalar sample (0 for the all-zero sample)."""
    a = np.asarray(samples, dtype=np.float64).ravel()
    if a.size == 0:
        raise ContractError("psi1_estimate requires a nonempty sample")
    value, lo, hi = _psi1_bisect_rows(a[None, :])
    return Psi1Estimate(
        value=float(value[0]),
        sample_size=int(a.size),
        bracket=(float(lo[0]), float(hi[0])),
    )


def probe_directions(n: int, count: int, seed: int) -> np.ndarray:
    """`count` deterministic pseudo-random unit vectors in R^n (rows)."""
    if count <= 0:
        return np.empty((0, n))
    g, _ = rng.normal_columns(seed, np.arange(count, dtype=np.uint64), rng.TAG_PROBES, n)
    return g / np.linalg.norm(g, axis=1)[:, None]


def psi1_ensemble(A: SampleMatrix, directions: int) -> float:
    """Max empirical psi_1 of <X_i, y> over basis + random probe directions.

    Projections are pooled across all columns of A (the columns are i.i.d.),
    and the probe set is the n coordinate directions plus `directions`
    pseudo-random unit vectors derived from the matrix seed.  A probed sup is
    a lower bound on the true uniform psi_1 constant.
    """
    if directions < 0:
        raise ContractError(f"directions must be >= 0, got {directions}")
    probes = np.eye(A.n)
    if directions > 0:
        probes = np.vstack([probes, probe_directions(A.n, directions, A.seed)])
    proj = probes @ A.entries
    values, _, _ = _psi1_bisect_rows(proj)
    return float(values.max())


def boundedness_check(A: SampleMatrix, K: float) -> tuple[float, bool]:
    """The max-column-norm ratio and whether it is within the constant K."""
    if not K >= 1.0:
        raise ContractError(f"K must be >= 1, got {K!r}")
    ratio = float(boundedness_ratio(A.n, A.N, A.max_column_norm()))
    return ratio, ratio <= K


# --- sparse operator norms ---------------------------------------------------


def _top_singular_sq_batch(sub: np.ndarray) -> np.ndarray:
    """Largest squared singular value for a batch of (b, n, m) submatrices."""
    b, n, m = sub.shape
    if m <= n:
        gram = np.matmul(sub.transpose(0, 2, 1), sub)
    else:
        gram = np.matmul(sub, sub.transpose(0, 2, 1))
    return np.linalg.eigvalsh(gram)[:, -1]


def _sparse_norm_exact(A: SampleMatrix, m: int) -> tuple[float, tuple[int, ...]]:
    """Enumerate all m-column supports; return (A_m, optimal support)."""
    from itertools import combinations, islice

    N = A.N
    total = math.comb(N, m)
    if total > EXACT_ENUMERATION_BUDGET:
        raise EnumerationBudgetError(
            f"binom({N}, {m}) = {total} supports exceed the exact budget "
            f"{EXACT_ENUMERATION_BUDGET}; use mode='greedy'"
        )
    e = A.entries
    combos = combinations(range(N), m)
    best = -np.inf
    best_support: tuple[int, ...] = ()
    chunk_size = max(1, min(4096, (1 << 22) // max(1, A.n * m)))
    while True:
        chunk = list(islice(combos, chunk_size))
        if not chunk:
            break
        idx = np.asarray(chunk, dtype=np.intp)
        sub = e[:, idx.ravel()].reshape(A.n, len(chunk), m).transpose(1, 0, 2)
        vals = _top_singular_sq_batch(np.ascontiguousarray(sub))
        k = int(np.argmax(vals))
        if vals[k] > best:
            best = float(vals[k])
            best_support = chunk[k]
    return float(np.sqrt(max(best, 0.0))), best_support


def _thresholded_power(e: np.ndarray, m: int, seed: int, starts: int = 64, iters: int = 60) -> float:
    """Lower bound on A_m by power iteration with hard thresholding to m
    coordinates, from `starts` deterministic pseudo-random starting vectors."""
    n, N = e.shape
    z, _ = rng.normal_columns(seed, np.arange(starts, dtype=np.uint64), rng.TAG_SEARCH, N)
    z = np.ascontiguousarray(z.T)  # (N, starts)

    def project(w: np.ndarray) -> np.ndarray:
        if m < N:
            drop = np.argpartition(np.abs(w), N - m - 1, axis=0)[: N - m]
            w = w.copy()
            np.put_along_axis(w, drop, 0.0, axis=0)
        norms = np.linalg.norm(w, axis=0)
        norms[norms == 0.0] = 1.0
        return w / norms

    z = project(z)
    for _ in range(iters):
        z = project(e.T @ (e @ z))
    return float(np.linalg.norm(e @ z, axis=0).max())


def _greedy_growth(e: np.ndarray, m: int) -> float:
    """Lower bound on A_m by greedy support growth from every single-column
    start, scoring candidate supports by the exact top singular value."""
    n, N = e.shape
    G = e.T @ e
    best = 0.0
    for start in range(N):
        support = [start]
        while len(support) < m:
            cands = [j for j in range(N) if j not in support]
            k = len(support)
            base = G[np.ix_(support, support)]
            cross = G[np.ix_(support, cands)]
            diag = G[cands, cands]
            bordered = np.empty((len(cands), k + 1, k + 1))
            bordered[:, :k, :k] = base
            bordered[:, :k, k] = cross.T
            bordered[:, k, :k] = cross.T
            bordered[:, k, k] = diag
            vals = np.linalg.eigvalsh(bordered)[:, -1]
            support.append(cands[int(np.argmax(vals))])
        top = float(np.linalg.eigvalsh(G[np.ix_(support, support)])[-1])
        best = max(best, top)
    return float(np.sqrt(max(best, 0.0)))


def sparse_norm(A: SampleMatrix, m: int, mode: str = "exact") -> float:
    """A_m, the operator norm restricted to m-sparse unit vectors.

    Exact mode enumerates supports (the m-sparse sup over a fixed support is
    the top singular value of that column-submatrix); greedy mode returns the
    better of thresholded power iteration and greedy support growth, always a
    lower bound.  The endpoints m = 1 (max column norm) and m = N (operator
    norm) are exact identities in both modes.
    """
    if mode not in ("exact", "greedy"):
        raise ContractError(f"mode must be 'exact' or 'greedy', got {mode!r}")
    if not 1 <= m <= A.N:
        raise ContractError(f"m must satisfy 1 <= m <= N = {A.N}, got {m}")
    if m == 1:
        return A.max_column_norm()
    if m == A.N:
        return matrix_norm(A)
    if mode == "exact":
        value, _ = _sparse_norm_exact(A, m)
        return value
    return max(_thresholded_power(A.entries, m, A.seed), _greedy_growth(A.entries, m))


def sparse_norm_profile(A: SampleMatrix, mode: str = "greedy") -> SparseNormProfile:
    """A_m over the geometric grid m in {1, 2, 4, ..., N}, monotone by
    cumulative max (U_m grows with m, so A_m must be nondecreasing)."""
    ms: list[int] = []
    m = 1
    while m < A.N:
        ms.append(m)
        m *= 2
    ms.append(A.N)
    values: list[float] = []
    certificates: list[tuple[int, ...]] = []
    for m in ms:
        if mode == "exact" and 1 < m < A.N:
            value, support = _sparse_norm_exact(A, m)
        else:
            value = sparse_norm(A, m, mode)
            if m == 1:
                support = (int(np.argmax(A.column_norms())),)
            elif m == A.N:
                support = tuple(range(A.N))
            else:
                support = ()
        values.append(value)
        certificates.append(support)
    a_m = np.maximum.accumulate(np.asarray(values))
    return SparseNormProfile(
        m_values=np.asarray(ms, dtype=np.int64),
        a_m=a_m,
        mode=mode,
        certificates=tuple(certificates) if mode == "exact" else None,
    )


# --- truncation decomposition ------------------------------------------------


def _phi(t: float) -> float:
    return math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)


def _gaussian_tail_excess(B: float) -> float:
    """E (g^2 - B^2) 1{|g| >= B} for standard normal g, in closed form:
    2[B phi(B) + (1 - B^2) (1 - Phi(B))]."""
    upper = 1.0 - float(ndtr(B))
    return 2.0 * (B * _phi(B) + (1.0 - B * B) * upper)


def _ball_tail_excess(B: float, n: int) -> float:
    """E (Y^2 - B^2) 1{|Y| >= B} for Y = <X, x>, X uniform on the radius
    sqrt(n+2) ball.  The marginal density on [-r, r] is proportional to
    (1 - (t/r)^2)^{(n-1)/2} for every unit x (rotation invariance), so the
    ratio of two half-line integrals needs no normalizing constant."""
    r = math.sqrt(n + 2.0)
    if B >= r:
        return 0.0
    half = (n - 1) / 2.0

    def density(t: float) -> float:
        return (max(1.0 - (t / r) ** 2, 0.0)) ** half

    num, _ = quad(lambda t: (t * t - B * B) * density(t), B, r, limit=200)
    den, _ = quad(density, 0.0, r, limit=200)
    return num / den


_LAPLACE_RATE = math.sqrt(2.0)


def _exponential_tail_excess(B: float) -> float:
    """E (Y^2 - B^2) 1{|Y| >= B} for the variance-1 symmetric exponential
    (rate lambda = sqrt 2): exp(-lambda B) * 2 (1 + lambda B) / lambda^2."""
    lam = _LAPLACE_RATE
    return math.exp(-lam * B) * 2.0 * (1.0 + lam * B) / (lam * lam)


def _is_basis_direction(x: np.ndarray) -> bool:
    i = int(np.argmax(np.abs(x)))
    rest = np.delete(x, i)
    return abs(abs(float(x[i])) - 1.0) <= 1e-12 and float(np.linalg.norm(rest)) <= 1e-12


def _analytic_excess(A: SampleMatrix, x: np.ndarray, B: float) -> float:
    spec = A.spec
    if spec is None:
        raise AnalyticUnavailableError(
            "analytic expectations need the generating spec; use expectation='fresh_sample'"
        )
    if math.isinf(B):
        return 0.0
    if spec.family == "gaussian":
        return _gaussian_tail_excess(B)
    if spec.family == "euclidean_ball":
        return _ball_tail_excess(B, spec.n)
    if spec.family == "exponential_product":
        if not _is_basis_direction(x):
            raise AnalyticUnavailableError(
                "exponential_product has closed-form projections only along "
                "coordinate directions; use expectation='fresh_sample'"
            )
        return _exponential_tail_excess(B)
    raise AnalyticUnavailableError(
        f"no closed-form 1-D marginal for family {spec.family!r}; use expectation='fresh_sample'"
    )


def direction_deviation(A: SampleMatrix, x: np.ndarray) -> float:
    """S(x) = |(1/N) sum <X_i, x>^2 - 1|, the deviation along one direction."""
    proj = np.asarray(x, dtype=np.float64) @ A.entries
    return abs(float(np.mean(proj**2)) - 1.0)


def truncation_split(
    A: SampleMatrix,
    x: np.ndarray,
    B: float,
    expectation: str = "analytic_isotropic",
    fresh_T: int = 100_000,
    psi: float | None = None,
) -> TruncationSplit:
    """Split the one-direction deviation at truncation level B.

    The expectation terms come either from closed-form 1-D integrals
    (`analytic_isotropic`; available for gaussian and euclidean_ball at any
    direction, exponential_product along coordinate directions) or from an
    independent fresh sample of size `fresh_T` drawn from the matrix seed in
    a separate counter namespace.  Fresh-sample expectations are rescaled by
    the fresh sample's second moment, so the truncated and excess parts sum
    to exactly 1 (the isotropic value) and the recombination inequality
    S(x) <= s1 + s2 + s3 holds to rounding.

    `psi` enters only the big_m field (M = max{psi^2 n, max|X_i|^2}); when
    omitted it is estimated from the matrix along basis directions.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != A.n:
        raise ContractError(f"direction has dimension {x.size}, matrix has n={A.n}")
    if abs(np.linalg.norm(x) - 1.0) > 1e-12:
        raise ContractError(f"direction must be a unit vector (|x| = {np.linalg.norm(x)!r})")
    if not (B >= 0.0):
        raise ContractError(f"truncation level B must be >= 0, got {B!r}")
    if expectation not in ("analytic_isotropic", "fresh_sample"):
        raise ContractError(f"unknown expectation mode {expectation!r}")

    proj = x @ A.entries
    absp = np.abs(proj)
    if math.isinf(B):
        e_b = np.empty(0, dtype=np.int64)
        trunc_sq = proj**2
        s2 = 0.0
    else:
        e_b = np.nonzero(absp >= B)[0].astype(np.int64)
        trunc_sq = np.minimum(absp, B) ** 2
        s2 = float(np.sum(proj[e_b] ** 2 - B * B)) / A.N

    if expectation == "analytic_isotropic":
        s3 = float(_analytic_excess(A, x, B))
        expected_trunc_sq = 1.0 - s3
    else:
        if A.spec is None:
            raise ContractError("fresh_sample expectations need the generating spec")
        fresh = sample_ensemble(replace(A.spec, N=fresh_T), _tag=rng.TAG_FRESH)
        fp = x @ fresh.entries
        m2 = float(np.mean(fp**2))
        if m2 == 0.0:
            raise ContractError("fresh sample has zero second moment along x")
        if math.isinf(B):
            s3 = 0.0
            expected_trunc_sq = 1.0
        else:
            afp = np.abs(fp)
            s3 = float(np.mean((fp**2 - B * B) * (afp >= B))) / m2
            expected_trunc_sq = float(np.mean(np.minimum(afp, B) ** 2)) / m2

    s1 = abs(float(np.mean(trunc_sq)) - expected_trunc_sq)

    if psi is None:
        psi = psi1_ensemble(A, 0)
    big_m = max(psi * psi * A.n, A.max_column_norm() ** 2)

    return TruncationSplit(
        B=float(B),
        x=x.copy(),
        s1=s1,
        s2=s2,
        s3=s3,
        e_b_indices=e_b,
        m_observed=int(e_b.size),
        big_m=float(big_m),
        expectation=expectation,
    )


# --- sphere nets -------------------------------------------------------------

_SOBOL_LOG2_COUNT = {2: 13, 3: 16, 4: 17, 5: 16, 6: 16, 7: 16, 8: 16}


@lru_cache(maxsize=32)
def _net_points_cached(n: int, epsilon: float) -> np.ndarray:
    if n == 1:
        return np.array([[1.0], [-1.0]])
    from scipy.special import ndtri

    engine = qmc.Sobol(d=n, scramble=False)
    u = engine.random_base2(_SOBOL_LOG2_COUNT[n])
    # Shift off the closed endpoints (the unscrambled stream contains 0).
    u = u + 0.5 / len(u)
    g = ndtri(u)
    cands = g / np.linalg.norm(g, axis=1)[:, None]

    eps_sq = epsilon * epsilon
    accepted = [cands[0]]
    block = np.array([cands[0]])
    chunk = 2048
    for lo in range(1, len(cands), chunk):
        part = cands[lo : lo + chunk]
        # Squared distance to the already-frozen net via 2 - 2<a, b>.
        base_min = np.min(2.0 - 2.0 * part @ block.T, axis=1)
        fresh: list[np.ndarray] = []
        for j in range(len(part)):
            d2 = base_min[j]
            if fresh and d2 > eps_sq:
                d2 = min(d2, np.min(2.0 - 2.0 * np.asarray(fresh) @ part[j]))
            if d2 > eps_sq:
                fresh.append(part[j])
        if fresh:
            accepted.extend(fresh)
            block = np.asarray(accepted)
    return np.asarray(accepted)


def build_net(n: int, epsilon: float) -> SphereNet:
    """Greedy maximal epsilon-separated subset of a deterministic
    low-discrepancy point cloud on S^{n-1}.

    Maximality makes the net cover the candidate cloud within epsilon; the
    cloud itself resolves the sphere to within its own dispersion (fine for
    n <= 4, coarser for n up to 8).  Pairwise separation > epsilon is exact
    by construction, which gives the packing cardinality bound
    |net| <= (1 + 2/epsilon)^n.
    """
    if not (isinstance(n, int) and 1 <= n <= 8):
        raise ContractError(f"net construction is limited to 1 <= n <= 8, got {n!r}")
    if not (0.0 < epsilon < 1.0):
        raise ContractError(f"epsilon must lie in (0, 1), got {epsilon!r}")
    points = _net_points_cached(n, float(epsilon))
    limit = (1.0 + 2.0 / epsilon) ** n
    if len(points) > limit:
        raise RuntimeError(
            f"net construction bug: {len(points)} points exceed the packing bound {limit:.0f}"
        )
    return SphereNet(n=n, epsilon=float(epsilon), points=points)


def net_sup_deviation(A: SampleMatrix, net: SphereNet) -> float:
    """max over net points y of |<(A A^T/N - I) y, y>|."""
    if net.n != A.n:
        raise ContractError(f"net dimension {net.n} does not match matrix n={A.n}")
    e = A.entries
    T = (e @ e.T) / A.N - np.eye(A.n)
    vals = np.einsum("pi,ij,pj->p", net.points, T, net.points)
    return float(np.abs(vals).max())


def net_covering_radius_probe(net: SphereNet, probes: int = 10_000, seed: int = 0) -> float:
    """Empirical covering radius: max over pseudo-random unit probes of the
    distance to the nearest net point."""
    q = probe_directions(net.n, probes, seed)
    d2 = 2.0 - 2.0 * q @ net.points.T
    return float(np.sqrt(np.maximum(d2.min(axis=1), 0.0)).max())
