"""Exogenous environments and the Bures-Wasserstein geometric toolbox.

Environments are either Gaussian (mean + PSD covariance) or empirical
(one sample per row). A joint environment is always a product measure:
low-level and high-level marginals, no cross-level coupling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GaussianEnv",
    "EmpiricalEnv",
    "JointEnv",
    "PerturbationPair",
    "psd_sqrt",
    "repair_psd",
    "gelbrich_distance_sq",
    "empirical_w2_sq",
    "joint_w2_sq",
    "project_gelbrich_ball",
    "project_frobenius_ball",
    "frobenius_prox",
    "barycenter_gaussian",
    "monge_map_gaussian",
    "BarycenterError",
]

_PSD_TOL = 1e-10


class BarycenterError(RuntimeError):
    """Fixed-point iteration did not reach the requested tolerance."""

    def __init__(self, residual: float, max_iter: int):
        self.residual = residual
        self.max_iter = max_iter
        super().__init__(
            f"barycenter fixed point not converged after {max_iter} iterations "
            f"(last residual {residual:.3e})"
        )


def _check_symmetric(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be square, got shape {m.shape}")
    scale = float(np.max(np.abs(m))) if m.size else 0.0
    if not np.allclose(m, m.T, atol=1e-8 * max(1.0, scale)):
        raise ValueError(f"{name} must be symmetric")
    return m


def repair_psd(m: np.ndarray) -> np.ndarray:
    """Symmetrize and clamp negative eigenvalues at zero.

    Counteracts numerical drift accumulated by repeated squaring/rooting in
    the fixed-point and projection iterations.
    """
    m = np.asarray(m, dtype=float)
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    if w[0] >= 0.0:
        return m
    return (v * np.clip(w, 0.0, None)) @ v.T


def psd_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues below zero (down to -1e-10, tolerated as numerical noise)
    are clamped before rooting.
    """
    m = _check_symmetric(m)
    w, v = np.linalg.eigh(m)
    if w[0] < -1e-8 * max(1.0, abs(w[-1])):
        raise ValueError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


@dataclass(frozen=True)
class GaussianEnv:
    """Gaussian exogenous environment N(mean, cov).

    Constructed diagonal for Markovian SCMs; a general PSD covariance is
    allowed (pushforwards and adversarial updates produce them).
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = _check_symmetric(np.asarray(self.cov, dtype=float), "cov")
        if cov.shape[0] != mean.shape[0]:
            raise ValueError(
                f"dimension mismatch: mean has {mean.shape[0]}, cov has {cov.shape[0]}"
            )
        w = np.linalg.eigvalsh(cov)
        if w[0] < -_PSD_TOL * max(1.0, abs(w[-1])) - _PSD_TOL:
            raise ValueError(f"cov is not PSD (min eigenvalue {w[0]:.3e})")
        if w[0] < 0.0:
            cov = repair_psd(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        root = psd_sqrt(self.cov)
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ root.T


@dataclass(frozen=True)
class EmpiricalEnv:
    """Empirical exogenous environment: uniform mixture of row Diracs."""

    samples: np.ndarray

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if samples.shape[0] < 1:
            raise ValueError("need at least one sample")
        object.__setattr__(self, "samples", samples)

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # Rows verbatim when the count matches, bootstrap otherwise: keeps
        # train/test pairing deterministic while allowing arbitrary n.
        if n == self.n:
            return self.samples.copy()
        idx = rng.integers(0, self.n, size=n)
        return self.samples[idx]


@dataclass(frozen=True)
class JointEnv:
    """Product environment: low-level and high-level marginals of one kind."""

    low: GaussianEnv | EmpiricalEnv
    high: GaussianEnv | EmpiricalEnv

    def __post_init__(self):
        if type(self.low) is not type(self.high):
            raise TypeError(
                f"marginal kinds differ: {type(self.low).__name__} vs "
                f"{type(self.high).__name__}"
            )

    @property
    def kind(self) -> str:
        return "gaussian" if isinstance(self.low, GaussianEnv) else "empirical"


@dataclass(frozen=True)
class PerturbationPair:
    """Additive sample displacements for the two empirical marginals."""

    theta_low: np.ndarray
    theta_high: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta_low", np.asarray(self.theta_low, dtype=float))
        object.__setattr__(self, "theta_high", np.asarray(self.theta_high, dtype=float))


def gelbrich_distance_sq(
    a: GaussianEnv | tuple[np.ndarray, np.ndarray],
    b: GaussianEnv | tuple[np.ndarray, np.ndarray],
) -> float:
    """Squared 2-Wasserstein distance between Gaussians from their moments."""
    ma, ca = _moments(a)
    mb, cb = _moments(b)
    if ma.shape != mb.shape:
        raise ValueError("dimension mismatch")
    ra = psd_sqrt(ca)
    cross = psd_sqrt(repair_psd(ra @ cb @ ra))
    d2 = (
        float(np.sum((ma - mb) ** 2))
        + float(np.trace(ca))
        + float(np.trace(cb))
        - 2.0 * float(np.trace(cross))
    )
    return max(d2, 0.0)


def _moments(env) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(env, GaussianEnv):
        return env.mean, env.cov
    mean, cov = env
    return np.asarray(mean, dtype=float).reshape(-1), _check_symmetric(
        np.asarray(cov, dtype=float), "cov"
    )


def empirical_w2_sq(a: EmpiricalEnv, b: EmpiricalEnv) -> float:
    """Index-paired mean squared displacement between two sample sets.

    This is the distance implied by perturbing sample i to sample i (the
    Theta reparameterization); exact OT over permutations is only used as
    a small-n test oracle.
    """
    if a.n != b.n:
        raise ValueError(f"sample counts differ: {a.n} vs {b.n}")
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    return float(np.mean(np.sum((a.samples - b.samples) ** 2, axis=1)))


def joint_w2_sq(a: JointEnv, b: JointEnv) -> float:
    """Squared W2 between product environments: the marginal distances add."""
    if a.kind != b.kind:
        raise TypeError(f"kind mismatch: {a.kind} vs {b.kind}")
    if a.kind == "gaussian":
        return gelbrich_distance_sq(a.low, b.low) + gelbrich_distance_sq(a.high, b.high)
    return empirical_w2_sq(a.low, b.low) + empirical_w2_sq(a.high, b.high)


def project_gelbrich_ball(
    env: GaussianEnv, center: GaussianEnv, eps: float
) -> GaussianEnv:
    """Pull ``env`` inside the Gelbrich ball of radius ``eps`` around ``center``.

    Outside the ball, the point is moved along the segment from the center
    in (mean, sqrt-covariance) coordinates, scaled by eps over the current
    distance. The scaling is exact only in the commuting case (the segment
    length upper-bounds the distance), so it is repeated until the ball
    constraint holds within a 1e-9 relative slack.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    d = np.sqrt(gelbrich_distance_sq(env, center))
    if d <= eps:
        return env
    if eps == 0.0:
        return center
    root_c = psd_sqrt(center.cov)
    mean = env.mean
    root = psd_sqrt(env.cov)
    for _ in range(100):
        alpha = eps / d
        mean = center.mean + alpha * (mean - center.mean)
        root = root_c + alpha * (root - root_c)
        out = GaussianEnv(mean, repair_psd(root @ root.T))
        d = np.sqrt(gelbrich_distance_sq(out, center))
        if d <= eps * (1.0 + 1e-9):
            return out
        root = psd_sqrt(out.cov)
    return out


def project_frobenius_ball(theta: np.ndarray, bound: float) -> np.ndarray:
    """Radial projection onto the Frobenius ball of the given radius."""
    if bound < 0:
        raise ValueError("bound must be nonnegative")
    theta = np.asarray(theta, dtype=float)
    norm = np.linalg.norm(theta)
    if norm <= bound:
        return theta
    if norm == 0.0:
        return theta
    return theta * (bound / norm)


def frobenius_prox(a: np.ndarray, lam: float) -> np.ndarray:
    """Proximal operator of lam * ||.||_F: shrink toward zero, or vanish."""
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    a = np.asarray(a, dtype=float)
    norm = np.linalg.norm(a)
    if norm > lam:
        return (1.0 - lam / norm) * a
    return np.zeros_like(a)


def barycenter_gaussian(
    envs: list,
    weights: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 500,
) -> GaussianEnv:
    """Wasserstein barycenter of Gaussians.

    The mean is the weighted average; the covariance solves the fixed-point
    equation S = sum_j w_j (S^{1/2} C_j S^{1/2})^{1/2}, iterated with full
    steps and a damped (gamma = 0.5) fallback on oscillation.
    """
    moments = [_moments(e) for e in envs]
    k = len(moments)
    if k == 0:
        raise ValueError("need at least one environment")
    if weights is None:
        weights = np.full(k, 1.0 / k)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (k,) or np.any(weights <= 0):
        raise ValueError("weights must be positive, one per environment")
    if abs(weights.sum() - 1.0) > 1e-8:
        raise ValueError("weights must sum to 1")

    mean = sum(w * m for w, (m, _) in zip(weights, moments))
    covs = [c for _, c in moments]
    sigma = sum(w * c for w, c in zip(weights, covs))
    sigma = repair_psd(sigma) + 1e-12 * np.eye(sigma.shape[0])

    gamma = 1.0
    prev_residual = np.inf
    for _ in range(max_iter):
        root = psd_sqrt(sigma)
        rhs = sum(
            w * psd_sqrt(repair_psd(root @ c @ root)) for w, c in zip(weights, covs)
        )
        rhs = repair_psd(rhs)
        residual = float(np.linalg.norm(rhs - sigma))
        if residual <= tol:
            return GaussianEnv(mean, rhs)
        if residual > prev_residual:
            gamma = 0.5
        prev_residual = residual
        sigma = repair_psd((1.0 - gamma) * sigma + gamma * rhs)
    raise BarycenterError(prev_residual, max_iter)


def monge_map_gaussian(
    src: GaussianEnv | tuple[np.ndarray, np.ndarray],
    dst: GaussianEnv | tuple[np.ndarray, np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Optimal affine transport map x -> offset + A x between Gaussians.

    A = S2^{1/2} (S2^{1/2} S1 S2^{1/2})^{-1/2} S2^{1/2}; requires the
    source covariance to be strictly positive definite.
    """
    m1, c1 = _moments(src)
    m2, c2 = _moments(dst)
    if np.linalg.eigvalsh(c1)[0] <= 1e-12:
        raise np.linalg.LinAlgError("source covariance is singular")
    r2 = psd_sqrt(c2)
    mid = repair_psd(r2 @ c1 @ r2)
    w, v = np.linalg.eigh(mid)
    w = np.clip(w, 1e-15, None)
    mid_inv_root = (v * (1.0 / np.sqrt(w))) @ v.T
    a = r2 @ mid_inv_root @ r2
    offset = m2 - a @ m1
    return a, offset
