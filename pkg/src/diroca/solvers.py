"""Learning the abstraction matrix T.

Two robust min-max solvers (moment-based and sample-based) plus three
non-robust baselines: plain gradient descent, barycentric aggregation, and
observational least squares (with an optional L1-sparse variant).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from diroca.environments import (
    EmpiricalEnv,
    GaussianEnv,
    JointEnv,
    barycenter_gaussian,
    frobenius_prox,
    gelbrich_distance_sq,
    project_frobenius_ball,
    project_gelbrich_ball,
    psd_sqrt,
    repair_psd,
)
from diroca.scm import (
    InterventionMap,
    LinearScm,
    apply_intervention_exo,
    reduced_transform,
)

__all__ = [
    "AbstractionMap",
    "SolverConfig",
    "ProblemInstance",
    "SolverDivergenceError",
    "gaussian_objective",
    "gaussian_surrogate",
    "empirical_objective",
    "fit_diroca_gaussian",
    "fit_diroca_empirical",
    "fit_grad",
    "fit_bary",
    "fit_abslin",
    "initial_t",
    "save_map",
    "load_map",
]


class SolverDivergenceError(RuntimeError):
    """Objective became NaN/inf; carries the trace up to the failure."""

    def __init__(self, trace: list[float]):
        self.trace = trace
        super().__init__("objective diverged (NaN or inf)")


@dataclass(frozen=True)
class AbstractionMap:
    """The h x l matrix realizing tau(x) = T x."""

    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        if t.ndim != 2:
            raise ValueError("T must be a matrix")
        if t.shape[0] > t.shape[1]:
            raise ValueError(f"T must map down: shape {t.shape} has h > l")
        if not np.all(np.isfinite(t)):
            raise ValueError("T has non-finite entries")
        object.__setattr__(self, "t", t)

    @property
    def shape(self) -> tuple[int, int]:
        return self.t.shape


@dataclass(frozen=True)
class SolverConfig:
    eps_low: float = 0.0
    eps_high: float = 0.0
    lr_t: float = 1e-2
    lr_env: float = 1e-3
    k_min: int = 5
    k_max: int = 2
    max_outer: int = 500
    tol: float = 1e-4
    seed: int = 0
    t_init: str = "least_squares"  # or "random"
    prox_lambda: float | None = None  # defaults to lr_env

    def __post_init__(self):
        if self.eps_low < 0 or self.eps_high < 0:
            raise ValueError("radii must be nonnegative")
        if self.lr_t <= 0 or self.lr_env <= 0:
            raise ValueError("step sizes must be positive")
        if self.k_min < 1 or self.k_max < 1:
            raise ValueError("inner step counts must be at least 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")

    @property
    def lam(self) -> float:
        return self.lr_env if self.prox_lambda is None else self.prox_lambda


@dataclass(frozen=True)
class ProblemInstance:
    """One abstraction-learning problem: SCM pair, omega, nominal env, q."""

    low_scm: LinearScm
    high_scm: LinearScm
    omega: InterventionMap
    env: JointEnv
    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        if q.shape != (len(self.omega),):
            raise ValueError("q must have one weight per intervention pair")
        if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-8:
            raise ValueError("q must be a probability vector")
        if self.env.low.dim != self.low_scm.dim or self.env.high.dim != self.high_scm.dim:
            raise ValueError("environment dimensions do not match the SCM pair")
        object.__setattr__(self, "q", q)
        # Per-pair reduced transforms and intervention masks, fixed for the
        # lifetime of the instance.
        terms = []
        for (low, high), w in zip(self.omega, q):
            low.validate(self.low_scm.dim)
            high.validate(self.high_scm.dim)
            terms.append(
                _Term(
                    q=float(w),
                    l_mat=reduced_transform(self.low_scm, low),
                    h_mat=reduced_transform(self.high_scm, high),
                    low=low,
                    high=high,
                    low_free=_free_mask(self.low_scm.dim, low.targets),
                    high_free=_free_mask(self.high_scm.dim, high.targets),
                )
            )
        object.__setattr__(self, "_terms", tuple(terms))

    @property
    def dims(self) -> tuple[int, int]:
        return self.low_scm.dim, self.high_scm.dim


@dataclass(frozen=True)
class _Term:
    q: float
    l_mat: np.ndarray
    h_mat: np.ndarray
    low: object
    high: object
    low_free: np.ndarray
    high_free: np.ndarray


def _free_mask(dim: int, targets: tuple[int, ...]) -> np.ndarray:
    mask = np.ones(dim)
    mask[list(targets)] = 0.0
    return mask


def _adjusted_moments(env: GaussianEnv, iota) -> tuple[np.ndarray, np.ndarray]:
    adj = apply_intervention_exo(iota, env)
    return adj.mean, adj.cov


def _pinv_sqrt(m: np.ndarray) -> np.ndarray:
    """Pseudo-inverse square root of a PSD matrix (near-zero modes dropped)."""
    w, v = np.linalg.eigh(repair_psd(m))
    cutoff = 1e-12 * max(w[-1], 1.0)
    inv = np.where(w > cutoff, 1.0 / np.sqrt(np.clip(w, cutoff, None)), 0.0)
    return (v * inv) @ v.T


# ---------------------------------------------------------------------------
# Gaussian objective and gradients


def gaussian_objective(t: AbstractionMap | np.ndarray, env: JointEnv,
                       inst: ProblemInstance) -> float:
    """q-weighted squared Gaussian W2 between pushforwards, per intervention."""
    t_mat = t.t if isinstance(t, AbstractionMap) else np.asarray(t, dtype=float)
    if env.kind != "gaussian":
        raise TypeError("gaussian_objective needs a Gaussian environment")
    total = 0.0
    for term in inst._terms:
        mu_l, cov_l = _adjusted_moments(env.low, term.low)
        mu_h, cov_h = _adjusted_moments(env.high, term.high)
        p = t_mat @ term.l_mat
        total += term.q * gelbrich_distance_sq(
            (p @ mu_l, repair_psd(p @ cov_l @ p.T)),
            (term.h_mat @ mu_h, repair_psd(term.h_mat @ cov_h @ term.h_mat.T)),
        )
    return total


def gaussian_surrogate(t: AbstractionMap | np.ndarray, env: JointEnv,
                       inst: ProblemInstance) -> float:
    """Smooth part of the Gaussian objective with the trace cross-term replaced
    by the product of Frobenius norms of the covariance square roots.

    Always a lower bound on gaussian_objective (nuclear norm bounded by the
    Frobenius product)."""
    t_mat = t.t if isinstance(t, AbstractionMap) else np.asarray(t, dtype=float)
    if env.kind != "gaussian":
        raise TypeError("gaussian_surrogate needs a Gaussian environment")
    total = 0.0
    for term in inst._terms:
        mu_l, cov_l = _adjusted_moments(env.low, term.low)
        mu_h, cov_h = _adjusted_moments(env.high, term.high)
        p = t_mat @ term.l_mat
        tr_l = float(np.trace(p @ cov_l @ p.T))
        tr_h = float(np.einsum("ij,jk,ik->", term.h_mat, cov_h, term.h_mat))
        mean_part = float(np.sum((p @ mu_l - term.h_mat @ mu_h) ** 2))
        total += term.q * (
            mean_part + tr_l + tr_h - 2.0 * np.sqrt(max(tr_l, 0.0) * max(tr_h, 0.0))
        )
    return total


def _masked_moments(env: GaussianEnv, iota) -> tuple[np.ndarray, np.ndarray]:
    """Intervention-adjusted (mean, cov) without environment re-validation."""
    if iota.is_null:
        return env.mean, env.cov
    idx = list(iota.targets)
    mean = env.mean.copy()
    mean[idx] = np.asarray(iota.values, dtype=float)
    cov = env.cov.copy()
    cov[idx, :] = 0.0
    cov[:, idx] = 0.0
    return mean, cov


def _gaussian_cache(env: JointEnv, inst: ProblemInstance) -> list[tuple]:
    """Per-term pushforward quantities that do not depend on T."""
    out = []
    for term in inst._terms:
        mu_l, cov_l = _masked_moments(env.low, term.low)
        mu_h, cov_h = _masked_moments(env.high, term.high)
        a = term.l_mat @ mu_l
        k = term.l_mat @ cov_l @ term.l_mat.T
        b = term.h_mat @ mu_h
        s_h = repair_psd(term.h_mat @ cov_h @ term.h_mat.T)
        root_h = psd_sqrt(s_h)
        out.append((term.q, a, k, b, s_h, root_h, float(np.trace(s_h))))
    return out


def _cached_objective(t_mat: np.ndarray, cache: list[tuple]) -> float:
    total = 0.0
    for q, a, k, b, _, root_h, tr_h in cache:
        r = t_mat @ a - b
        s_l = t_mat @ k @ t_mat.T
        cross = psd_sqrt(repair_psd(root_h @ s_l @ root_h))
        d2 = float(r @ r) + float(np.trace(s_l)) + tr_h - 2.0 * float(np.trace(cross))
        total += q * max(d2, 0.0)
    return total


def _cached_grad_t(t_mat: np.ndarray, cache: list[tuple]) -> np.ndarray:
    grad = np.zeros_like(t_mat)
    for q, a, k, b, _, root_h, _ in cache:
        r = t_mat @ a - b
        tk = t_mat @ k
        s_l = repair_psd(tk @ t_mat.T)
        cross = repair_psd(root_h @ s_l @ root_h)
        g = 0.5 * root_h @ _pinv_sqrt(cross) @ root_h
        grad += q * (2.0 * np.outer(r, a) + 2.0 * tk - 4.0 * g @ tk)
    return grad


def _gaussian_grad_t(t_mat: np.ndarray, env: JointEnv, inst: ProblemInstance
                     ) -> np.ndarray:
    """Analytic gradient of the exact Gaussian objective with respect to T."""
    return _cached_grad_t(t_mat, _gaussian_cache(env, inst))


def _cached_grad_means(t_mat: np.ndarray, cache: list[tuple],
                       inst: ProblemInstance) -> tuple[np.ndarray, np.ndarray]:
    g_l = np.zeros(inst.low_scm.dim)
    g_h = np.zeros(inst.high_scm.dim)
    for term, (q, a, _, b, _, _, _) in zip(inst._terms, cache):
        r = t_mat @ a - b
        g_l += q * term.low_free * (2.0 * term.l_mat.T @ (t_mat.T @ r))
        g_h += q * term.high_free * (-2.0 * term.h_mat.T @ r)
    return g_l, g_h


def _gaussian_grad_means(t_mat: np.ndarray, env: JointEnv, inst: ProblemInstance
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the exact objective w.r.t. the free environment means."""
    return _cached_grad_means(t_mat, _gaussian_cache(env, inst), inst)


def _surrogate_grad_factors(t_mat: np.ndarray, r_l: np.ndarray, r_h: np.ndarray,
                            inst: ProblemInstance) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the surrogate w.r.t. the covariance factors R (Sigma = R R^T).

    Intervened coordinates enter through zeroed factor rows, so their
    gradients vanish for the corresponding intervention automatically.
    """
    g_l = np.zeros_like(r_l)
    g_h = np.zeros_like(r_h)
    for term in inst._terms:
        pl = (t_mat @ term.l_mat) * term.low_free  # columns of pinned coords drop
        ph = term.h_mat * term.high_free
        fl = pl @ r_l
        fh = ph @ r_h
        tr_l = float(np.sum(fl * fl))
        tr_h = float(np.sum(fh * fh))
        scale_l = 1.0 - (np.sqrt(tr_h / tr_l) if tr_l > 1e-300 else 0.0)
        scale_h = 1.0 - (np.sqrt(tr_l / tr_h) if tr_h > 1e-300 else 0.0)
        g_l += term.q * scale_l * 2.0 * pl.T @ fl
        g_h += term.q * scale_h * 2.0 * ph.T @ fh
    return g_l, g_h


def _surrogate_from_factors(t_mat: np.ndarray, mu_l, r_l, mu_h, r_h,
                            inst: ProblemInstance) -> float:
    """Surrogate evaluated on factor parameterization (used by gradient tests)."""
    env = JointEnv(
        GaussianEnv(mu_l, repair_psd(r_l @ r_l.T)),
        GaussianEnv(mu_h, repair_psd(r_h @ r_h.T)),
    )
    return gaussian_surrogate(t_mat, env, inst)


# ---------------------------------------------------------------------------
# Empirical objective and gradients


def _adjusted_samples(u: np.ndarray, theta: np.ndarray, iota) -> np.ndarray:
    v = u + theta
    if not iota.is_null:
        v = v.copy()
        v[:, list(iota.targets)] = np.asarray(iota.values, dtype=float)
    return v


def empirical_objective(t: AbstractionMap | np.ndarray, env: JointEnv,
                        inst: ProblemInstance,
                        theta_low: np.ndarray | None = None,
                        theta_high: np.ndarray | None = None) -> float:
    """q-weighted squared Frobenius gap between perturbed pushforwards, / N."""
    t_mat = t.t if isinstance(t, AbstractionMap) else np.asarray(t, dtype=float)
    if env.kind != "empirical":
        raise TypeError("empirical_objective needs an empirical environment")
    u_l, u_h = env.low.samples, env.high.samples
    if u_l.shape[0] != u_h.shape[0]:
        raise ValueError("low and high sample counts must match")
    n = u_l.shape[0]
    th_l = np.zeros_like(u_l) if theta_low is None else theta_low
    th_h = np.zeros_like(u_h) if theta_high is None else theta_high
    total = 0.0
    for term in inst._terms:
        v_l = _adjusted_samples(u_l, th_l, term.low)
        v_h = _adjusted_samples(u_h, th_h, term.high)
        d = v_l @ term.l_mat.T @ t_mat.T - v_h @ term.h_mat.T
        total += term.q * float(np.sum(d * d)) / n
    return total


def _empirical_grads(t_mat: np.ndarray, env: JointEnv, inst: ProblemInstance,
                     th_l: np.ndarray, th_h: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    u_l, u_h = env.low.samples, env.high.samples
    n = u_l.shape[0]
    g_t = np.zeros_like(t_mat)
    g_l = np.zeros_like(th_l)
    g_h = np.zeros_like(th_h)
    for term in inst._terms:
        v_l = _adjusted_samples(u_l, th_l, term.low)
        v_h = _adjusted_samples(u_h, th_h, term.high)
        x_l = v_l @ term.l_mat.T
        d = x_l @ t_mat.T - v_h @ term.h_mat.T
        g_t += term.q * (2.0 / n) * d.T @ x_l
        g_l += term.q * (2.0 / n) * (d @ (t_mat @ term.l_mat)) * term.low_free
        g_h += term.q * (-2.0 / n) * (d @ term.h_mat) * term.high_free
    return g_t, g_l, g_h


# ---------------------------------------------------------------------------
# Initialization


def initial_t(inst: ProblemInstance, cfg: SolverConfig) -> np.ndarray:
    """Least squares between nominal pushforward means, random fallback.

    The fallback (and the "random" policy) draws i.i.d. N(0, 0.01) entries
    from the config seed.
    """
    dim_l, dim_h = inst.dims
    rng = np.random.default_rng(cfg.seed)
    if cfg.t_init == "random":
        return rng.normal(0.0, 0.1, size=(dim_h, dim_l))
    rows_a, rows_b = [], []
    for term in inst._terms:
        if inst.env.kind == "gaussian":
            mu_l, _ = _adjusted_moments(inst.env.low, term.low)
            mu_h, _ = _adjusted_moments(inst.env.high, term.high)
        else:
            mu_l = _adjusted_samples(
                inst.env.low.samples, 0.0, term.low).mean(axis=0)
            mu_h = _adjusted_samples(
                inst.env.high.samples, 0.0, term.high).mean(axis=0)
        rows_a.append(term.l_mat @ mu_l)
        rows_b.append(term.h_mat @ mu_h)
    a = np.asarray(rows_a)
    b = np.asarray(rows_b)
    if np.linalg.matrix_rank(a) < dim_l:
        return rng.normal(0.0, 0.1, size=(dim_h, dim_l))
    coef, _, _, _ = np.linalg.lstsq(a, b, rcond=None)
    return coef.T


# ---------------------------------------------------------------------------
# Solvers


def _check_finite(value: float, trace: list[float]) -> None:
    if not np.isfinite(value):
        raise SolverDivergenceError(trace)


def _scaled_cov_env(env: GaussianEnv, budget: float) -> GaussianEnv:
    """Move the covariance factor radially by |budget|, toward zero when
    budget is negative and away from it when positive, keeping the mean.

    Used to start the inner ascent at an inflated boundary configuration,
    which avoids stalling in the flat region around the nominal moments.
    """
    root = psd_sqrt(env.cov)
    norm = float(np.linalg.norm(root))
    if norm <= 0.0:
        return env
    scale = max(0.0, 1.0 + budget / norm)
    return GaussianEnv(env.mean, repair_psd((scale**2) * env.cov))


def fit_diroca_gaussian(inst: ProblemInstance, cfg: SolverConfig
                        ) -> tuple[AbstractionMap, JointEnv, list[float]]:
    """Alternating descent on T / proximal-projected ascent on the moments.

    Each outer iteration runs k_min descent steps against the exact
    objective, then k_max ascent steps: gradient on the means, gradient plus
    Frobenius prox on the covariance factors for the surrogate, followed by
    a Gelbrich-ball projection per level. Stops when the objective change
    drops below tol.
    """
    if inst.env.kind != "gaussian":
        raise TypeError("fit_diroca_gaussian needs a Gaussian nominal environment")
    nominal_l: GaussianEnv = inst.env.low
    nominal_h: GaussianEnv = inst.env.high
    t_mat = initial_t(inst, cfg)
    env_l = _scaled_cov_env(nominal_l, cfg.eps_low)
    env_h = _scaled_cov_env(nominal_h, cfg.eps_high)
    trace: list[float] = []
    prev = np.inf
    cache = _gaussian_cache(JointEnv(env_l, env_h), inst)
    for _ in range(cfg.max_outer):
        for _ in range(cfg.k_min):
            t_mat = t_mat - cfg.lr_t * _cached_grad_t(t_mat, cache)
        for _ in range(cfg.k_max):
            g_mu_l, g_mu_h = _cached_grad_means(t_mat, cache, inst)
            r_l = psd_sqrt(env_l.cov)
            r_h = psd_sqrt(env_h.cov)
            g_r_l, g_r_h = _surrogate_grad_factors(t_mat, r_l, r_h, inst)
            mu_l = env_l.mean + cfg.lr_env * g_mu_l
            mu_h = env_h.mean + cfg.lr_env * g_mu_h
            r_l = frobenius_prox(r_l + cfg.lr_env * g_r_l, cfg.lam)
            r_h = frobenius_prox(r_h + cfg.lr_env * g_r_h, cfg.lam)
            env_l = project_gelbrich_ball(
                GaussianEnv(mu_l, repair_psd(r_l @ r_l.T)), nominal_l, cfg.eps_low)
            env_h = project_gelbrich_ball(
                GaussianEnv(mu_h, repair_psd(r_h @ r_h.T)), nominal_h, cfg.eps_high)
            cache = _gaussian_cache(JointEnv(env_l, env_h), inst)
        value = _cached_objective(t_mat, cache)
        _check_finite(value, trace)
        trace.append(value)
        if abs(prev - value) < cfg.tol:
            break
        prev = value
    return AbstractionMap(t_mat), JointEnv(env_l, env_h), trace


def _to_sphere(theta: np.ndarray, bound: float) -> np.ndarray:
    """Scale a nonzero perturbation block radially onto the Frobenius sphere."""
    norm = float(np.linalg.norm(theta))
    if bound <= 0.0 or norm <= 0.0:
        return theta
    return theta * (bound / norm)


def fit_diroca_empirical(inst: ProblemInstance, cfg: SolverConfig):
    """Alternating descent on T / projected ascent on the sample perturbations."""
    from diroca.environments import PerturbationPair

    if inst.env.kind != "empirical":
        raise TypeError("fit_diroca_empirical needs an empirical nominal environment")
    u_l, u_h = inst.env.low.samples, inst.env.high.samples
    n_l, n_h = u_l.shape[0], u_h.shape[0]
    bound_l = cfg.eps_low * np.sqrt(n_l)
    bound_h = cfg.eps_high * np.sqrt(n_h)
    t_mat = initial_t(inst, cfg)
    th_l = np.zeros_like(u_l)
    th_h = np.zeros_like(u_h)
    trace: list[float] = []
    prev = np.inf
    for _ in range(cfg.max_outer):
        for _ in range(cfg.k_min):
            g_t, _, _ = _empirical_grads(t_mat, inst.env, inst, th_l, th_h)
            t_mat = t_mat - cfg.lr_t * g_t
        for _ in range(cfg.k_max):
            _, g_l, g_h = _empirical_grads(t_mat, inst.env, inst, th_l, th_h)
            th_l = project_frobenius_ball(th_l + cfg.lr_env * g_l, bound_l)
            th_h = project_frobenius_ball(th_h + cfg.lr_env * g_h, bound_h)
        # The objective is convex in the perturbations, so the inner maximum
        # sits on the ball boundary; push each block radially out to it.
        th_l = _to_sphere(th_l, bound_l)
        th_h = _to_sphere(th_h, bound_h)
        value = empirical_objective(t_mat, inst.env, inst, th_l, th_h)
        _check_finite(value, trace)
        trace.append(value)
        if abs(prev - value) < cfg.tol:
            break
        prev = value
    return AbstractionMap(t_mat), PerturbationPair(th_l, th_h), trace


def fit_grad(inst: ProblemInstance, cfg: SolverConfig,
             return_trace: bool = False):
    """Pure minimization against the nominal environment (radius-zero case)."""
    t_mat = initial_t(inst, cfg)
    gaussian = inst.env.kind == "gaussian"
    trace: list[float] = []
    prev = np.inf
    zeros_l = None if gaussian else np.zeros_like(inst.env.low.samples)
    zeros_h = None if gaussian else np.zeros_like(inst.env.high.samples)
    cache = _gaussian_cache(inst.env, inst) if gaussian else None
    for _ in range(cfg.max_outer):
        for _ in range(cfg.k_min):
            if gaussian:
                g_t = _cached_grad_t(t_mat, cache)
            else:
                g_t, _, _ = _empirical_grads(t_mat, inst.env, inst, zeros_l, zeros_h)
            t_mat = t_mat - cfg.lr_t * g_t
        if gaussian:
            value = _cached_objective(t_mat, cache)
        else:
            value = empirical_objective(t_mat, inst.env, inst)
        _check_finite(value, trace)
        trace.append(value)
        if abs(prev - value) < cfg.tol:
            break
        prev = value
    result = AbstractionMap(t_mat)
    return (result, trace) if return_trace else result


def _pca_projection(cov: np.ndarray, h: int) -> np.ndarray:
    """Top-h eigenvectors, each with its largest-magnitude entry made positive."""
    w, v = np.linalg.eigh(cov)
    v = v[:, ::-1][:, :h]
    for j in range(h):
        k = int(np.argmax(np.abs(v[:, j])))
        if v[k, j] < 0:
            v[:, j] = -v[:, j]
    return v


def fit_bary(inst: ProblemInstance, cfg: SolverConfig) -> AbstractionMap:
    """Barycentric aggregation baseline.

    Gaussian mode: aggregate the per-intervention pushforward moments at
    both levels into barycenters, project the low-level one with PCA, and
    return the covariance-matching map between the two. Empirical mode:
    average the mixing matrices and fit T by gradient descent on the
    Frobenius gap of the propagated samples.
    """
    dim_l, dim_h = inst.dims
    if inst.env.kind == "gaussian":
        # Pushforwards of the nominal noise through each mutilated mixing
        # matrix; the intervention enters only through the graph surgery.
        mu_l, cov_l = inst.env.low.mean, inst.env.low.cov
        low_envs = [
            (term.l_mat @ mu_l, repair_psd(term.l_mat @ cov_l @ term.l_mat.T))
            for term in inst._terms
        ]
        mu_h, cov_h = inst.env.high.mean, inst.env.high.cov
        high_envs = []
        seen = set()
        for term in inst._terms:
            if term.high in seen:
                continue
            seen.add(term.high)
            high_envs.append(
                (term.h_mat @ mu_h, repair_psd(term.h_mat @ cov_h @ term.h_mat.T))
            )
        bary_l = barycenter_gaussian(low_envs, tol=1e-8, max_iter=2000)
        bary_h = barycenter_gaussian(high_envs, tol=1e-8, max_iter=2000)
        v = _pca_projection(bary_l.cov, dim_h)
        cov_proj = repair_psd(v.T @ bary_l.cov @ v)
        w = np.linalg.eigvalsh(cov_proj)
        if w[0] <= 1e-12:
            raise np.linalg.LinAlgError("projected barycentric covariance is singular")
        a = psd_sqrt(bary_h.cov) @ _pinv_sqrt(cov_proj)
        return AbstractionMap(a @ v.T)

    # Empirical mode: average mixing matrices, then plain descent.
    l_bar = np.mean([term.l_mat for term in inst._terms], axis=0)
    seen = set()
    h_mats = []
    for term in inst._terms:
        if term.high in seen:
            continue
        seen.add(term.high)
        h_mats.append(term.h_mat)
    h_bar = np.mean(h_mats, axis=0)
    x_l = inst.env.low.samples @ l_bar.T
    x_h = inst.env.high.samples @ h_bar.T
    n = x_l.shape[0]
    rng = np.random.default_rng(cfg.seed)
    t_mat = rng.normal(0.0, 0.1, size=(dim_h, dim_l))
    prev = np.inf
    for _ in range(cfg.max_outer * cfg.k_min):
        d = x_l @ t_mat.T - x_h
        t_mat = t_mat - cfg.lr_t * (2.0 / n) * d.T @ x_l
        value = float(np.sum(d * d)) / n
        if not np.isfinite(value):
            raise SolverDivergenceError([value])
        if abs(prev - value) < cfg.tol:
            break
        prev = value
    return AbstractionMap(t_mat)


def fit_abslin(endo_low_obs: np.ndarray, endo_high_obs: np.ndarray,
               variant: str = "perfect", reg: float = 0.01) -> AbstractionMap:
    """Observational least-squares abstraction.

    perfect: plain OLS of high-level on low-level samples. noisy: the same
    objective plus an L1 penalty, solved by proximal gradient descent
    (soft thresholding).
    """
    x_l = np.atleast_2d(np.asarray(endo_low_obs, dtype=float))
    x_h = np.atleast_2d(np.asarray(endo_high_obs, dtype=float))
    n, dim_l = x_l.shape
    if n <= dim_l:
        raise ValueError("need more observational rows than low-level variables")
    if variant not in ("perfect", "noisy"):
        raise ValueError(f"unknown variant {variant!r}")
    if np.linalg.matrix_rank(x_l) < dim_l:
        raise np.linalg.LinAlgError("rank-deficient low-level design matrix")
    coef, _, _, _ = np.linalg.lstsq(x_l, x_h, rcond=None)
    if variant == "perfect":
        return AbstractionMap(coef.T)
    if reg < 0:
        raise ValueError("reg must be nonnegative")
    # ISTA from the OLS solution; Lipschitz constant of the smooth part.
    gram = x_l.T @ x_l
    step = 1.0 / (2.0 * np.linalg.eigvalsh(gram)[-1])
    t_mat = coef.T
    for _ in range(5000):
        grad = 2.0 * (t_mat @ gram - x_h.T @ x_l)
        z = t_mat - step * grad
        new = np.sign(z) * np.maximum(np.abs(z) - reg * step, 0.0)
        if np.max(np.abs(new - t_mat)) < 1e-12:
            t_mat = new
            break
        t_mat = new
    return AbstractionMap(t_mat)


# ---------------------------------------------------------------------------
# Serialization


def save_map(path: str | Path, amap: AbstractionMap, method: str,
             eps_low: float, eps_high: float, seed: int,
             dataset_hash: str = "") -> None:
    doc = {
        "shape": list(amap.shape),
        "entries": amap.t.reshape(-1).tolist(),
        "metadata": {
            "method": method,
            "eps_low": eps_low,
            "eps_high": eps_high,
            "seed": seed,
            "dataset_hash": dataset_hash,
        },
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_map(path: str | Path) -> tuple[AbstractionMap, dict]:
    doc = json.loads(Path(path).read_text())
    shape = tuple(doc["shape"])
    t = np.asarray(doc["entries"], dtype=float).reshape(shape)
    return AbstractionMap(t), doc["metadata"]
