"""Evaluation harness: error metrics, contamination, misspecification, k-fold grid.

The driver is split into a fitting stage (per fold, clean training data)
and a scoring stage (contaminated held-out data), so trained maps can be
persisted between the two. Every random draw is keyed by a seed derived
from the root seed and the cell coordinates, which makes results
independent of scheduling order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from diroca.datasets import DatasetBundle
from diroca.environments import (
    EmpiricalEnv,
    GaussianEnv,
    JointEnv,
    gelbrich_distance_sq,
    repair_psd,
)
from diroca.scm import (
    Intervention,
    InterventionMap,
    LinearScm,
    abduct,
    apply_intervention_exo,
    sample_endogenous,
)
from diroca.solvers import (
    AbstractionMap,
    ProblemInstance,
    SolverConfig,
    fit_abslin,
    fit_bary,
    fit_diroca_empirical,
    fit_diroca_gaussian,
    fit_grad,
)

__all__ = [
    "ContaminationSpec",
    "ExperimentResult",
    "MethodSpec",
    "contaminate",
    "abstraction_error_gaussian",
    "abstraction_error_empirical",
    "f_misspec_sample",
    "omega_misspec",
    "derive_seed",
    "generate_data",
    "fold_indices",
    "fit_fold",
    "run_grid",
    "run_f_misspec",
    "run_omega_misspec",
    "write_results",
    "read_results",
    "summarize",
    "write_summary",
    "RESULT_HEADER",
]

RESULT_HEADER = "method,eps_low,eps_high,fold,alpha,sigma,noise_kind,seed,error"


# ---------------------------------------------------------------------------
# Contamination


@dataclass(frozen=True)
class ContaminationSpec:
    """Huber contamination: x + alpha * N with zero-centered scaled noise."""

    alpha: float
    sigma: float
    noise_kind: str = "gaussian"
    df: float = 3.0
    rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")
        if self.noise_kind not in ("gaussian", "student_t", "exponential"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        if self.noise_kind == "student_t" and self.df <= 2:
            raise ValueError("student_t needs df > 2 for finite variance")
        if self.noise_kind == "exponential" and self.rate <= 0:
            raise ValueError("exponential rate must be positive")


def contaminate(x: np.ndarray, spec: ContaminationSpec) -> np.ndarray:
    """Convex mixture of clean and shifted data, (1-a) x + a (x + N) = x + a N."""
    x = np.asarray(x, dtype=float)
    if spec.alpha == 0.0 or spec.sigma == 0.0:
        return x.copy()
    rng = np.random.default_rng(spec.seed)
    if spec.noise_kind == "gaussian":
        noise = spec.sigma * rng.standard_normal(x.shape)
    elif spec.noise_kind == "student_t":
        # scaled so the noise standard deviation is exactly sigma
        scale = spec.sigma * math.sqrt((spec.df - 2.0) / spec.df)
        noise = scale * rng.standard_t(spec.df, size=x.shape)
    else:
        draws = rng.exponential(scale=1.0 / spec.rate, size=x.shape)
        noise = spec.sigma * (draws - 1.0 / spec.rate)
    return x + spec.alpha * noise


# ---------------------------------------------------------------------------
# Error metrics


def _fit_moments(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if x.shape[0] < 2:
        raise ValueError("need at least two rows to fit a covariance")
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    return mean, repair_psd(cov)


def abstraction_error_gaussian(
    t: AbstractionMap | np.ndarray,
    pairs: list[tuple[np.ndarray, np.ndarray]],
    q: np.ndarray,
) -> float:
    """q-weighted W2 (not squared) between moment fits of T x_low and x_high."""
    t_mat = t.t if isinstance(t, AbstractionMap) else np.asarray(t, dtype=float)
    total = 0.0
    for w, (x_low, x_high) in zip(q, pairs):
        pushed = np.asarray(x_low, dtype=float) @ t_mat.T
        total += w * math.sqrt(
            gelbrich_distance_sq(_fit_moments(pushed), _fit_moments(np.asarray(x_high)))
        )
    return total


def abstraction_error_empirical(
    t: AbstractionMap | np.ndarray,
    pairs: list[tuple[np.ndarray, np.ndarray]],
    q: np.ndarray,
) -> float:
    """q-weighted row-paired Frobenius distance, normalized by sqrt(n)."""
    t_mat = t.t if isinstance(t, AbstractionMap) else np.asarray(t, dtype=float)
    total = 0.0
    for w, (x_low, x_high) in zip(q, pairs):
        x_low = np.asarray(x_low, dtype=float)
        x_high = np.asarray(x_high, dtype=float)
        if x_low.shape[0] != x_high.shape[0]:
            raise ValueError("row counts must match for the paired metric")
        gap = x_low @ t_mat.T - x_high
        total += w * float(np.linalg.norm(gap)) / math.sqrt(x_low.shape[0])
    return total


# ---------------------------------------------------------------------------
# Misspecification generators


_FNL = {"sin": np.sin, "tanh": np.tanh}


def f_misspec_sample(
    scm: LinearScm,
    k: float,
    fnl: str,
    env,
    iota: Intervention,
    n: int,
    seed: int | np.random.Generator,
) -> np.ndarray:
    """Sample from a nonlinear sibling of the SCM: x_j = k f(sum w x_pa) + u_j.

    Shares the SCM's graph and weights but replaces the linear parent
    contribution by a scaled nonlinearity of the weighted parent sum.
    Intervened variables are pinned to their values.
    """
    if fnl not in _FNL:
        raise ValueError(f"unknown nonlinearity {fnl!r}")
    f = _FNL[fnl]
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    adjusted = apply_intervention_exo(iota, env)
    u = adjusted.sample(n, rng)
    x = np.zeros_like(u)
    pinned = dict(zip(iota.targets, iota.values))
    b = scm.adjacency
    for j in scm._topo:
        if j in pinned:
            x[:, j] = pinned[j]
            continue
        parents = np.flatnonzero(b[:, j])
        if parents.size:
            x[:, j] = k * f(x[:, parents] @ b[parents, j]) + u[:, j]
        else:
            x[:, j] = u[:, j]
    return x


def omega_misspec(
    omega: InterventionMap,
    n_misalign: int,
    delta: int,
    seed: int,
) -> InterventionMap:
    """Reassign some low-level interventions to wrong high-level counterparts.

    Chosen uniformly among non-null pairs; each new counterpart has a
    target-set size within delta of the original one (nearest size as a
    fallback). Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    pairs = list(omega.pairs)
    candidates = [i for i, (lo, _) in enumerate(pairs) if not lo.is_null]
    if n_misalign > len(candidates):
        raise ValueError("n_misalign exceeds the number of reassignable pairs")
    chosen = rng.choice(len(candidates), size=n_misalign, replace=False)
    high_pool = list(dict.fromkeys(omega.highs))
    for c in sorted(int(i) for i in chosen):
        idx = candidates[c]
        low, old_high = pairs[idx]
        alternatives = [h for h in high_pool if h != old_high]
        if not alternatives:
            raise ValueError("no alternative high-level intervention exists")
        size = len(old_high.targets)
        near = [h for h in alternatives if abs(len(h.targets) - size) <= delta]
        if not near:
            best = min(abs(len(h.targets) - size) for h in alternatives)
            near = [h for h in alternatives if abs(len(h.targets) - size) == best]
        pick = near[int(rng.integers(len(near)))]
        pairs[idx] = (low, pick)
    return InterventionMap(tuple(pairs))


# ---------------------------------------------------------------------------
# Experiment grid


@dataclass(frozen=True)
class ExperimentResult:
    method: str
    eps_low: float
    eps_high: float
    fold: int
    alpha: float
    sigma: float
    noise_kind: str
    seed: int
    error: float

    def __post_init__(self):
        if not (np.isfinite(self.error) and self.error >= 0):
            raise ValueError(f"error must be finite and nonnegative, got {self.error}")

    def row(self) -> list[str]:
        return [
            self.method,
            f"{self.eps_low:.12g}",
            f"{self.eps_high:.12g}",
            str(self.fold),
            f"{self.alpha:.12g}",
            f"{self.sigma:.12g}",
            self.noise_kind,
            str(self.seed),
            f"{self.error:.12g}",
        ]


@dataclass(frozen=True)
class MethodSpec:
    """One training method plus its solver hyperparameters."""

    name: str
    kind: str  # grad | diroca | bary | abslin
    eps_low: float = 0.0
    eps_high: float = 0.0
    variant: str = "perfect"
    reg: float = 0.01
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("grad", "diroca", "bary", "abslin"):
            raise ValueError(f"unknown method kind {self.kind!r}")

    def config(self, seed: int) -> SolverConfig:
        return SolverConfig(
            eps_low=self.eps_low, eps_high=self.eps_high, seed=seed, **self.solver
        )


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary printable parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def generate_data(
    bundle: DatasetBundle,
    n: int,
    root_seed: int,
    low_sampler=None,
) -> dict[str, list[np.ndarray]]:
    """n endogenous rows per intervention per level, seeded per cell.

    ``low_sampler(iota, n, seed)`` overrides the low-level generator (used
    by the functional-misspecification sweep).
    """
    low_env = bundle.low_scm.noise
    high_env = bundle.high_scm.noise
    low = []
    for i, iota in enumerate(bundle.interventions_low):
        seed = derive_seed(root_seed, "data", "low", i)
        if low_sampler is None:
            low.append(sample_endogenous(bundle.low_scm, iota, low_env, n, seed))
        else:
            low.append(low_sampler(iota, n, seed))
    high = []
    for i, iota in enumerate(bundle.interventions_high):
        seed = derive_seed(root_seed, "data", "high", i)
        high.append(sample_endogenous(bundle.high_scm, iota, high_env, n, seed))
    return {"low": low, "high": high}


def fold_indices(n: int, k: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous k-fold split of range(n): list of (train, test) index arrays."""
    if k < 2:
        raise ValueError("k must be at least 2")
    if n < 2 * k:
        raise ValueError("fold too small for covariance fitting")
    blocks = np.array_split(np.arange(n), k)
    out = []
    for f in range(k):
        test = blocks[f]
        train = np.concatenate([blocks[g] for g in range(k) if g != f])
        out.append((train, test))
    return out


def _null_index(interventions) -> int:
    for i, iota in enumerate(interventions):
        if iota.is_null:
            return i
    raise ValueError("no observational (null) intervention in the set")


def _nominal_env(bundle: DatasetBundle, setting: str,
                 train_low_null: np.ndarray, train_high_null: np.ndarray) -> JointEnv:
    u_low = abduct(bundle.low_scm, train_low_null)
    u_high = abduct(bundle.high_scm, train_high_null)
    if setting == "gaussian":
        return JointEnv(
            GaussianEnv(u_low.mean(axis=0), np.diag(u_low.var(axis=0, ddof=1))),
            GaussianEnv(u_high.mean(axis=0), np.diag(u_high.var(axis=0, ddof=1))),
        )
    return JointEnv(EmpiricalEnv(u_low), EmpiricalEnv(u_high))


def fit_fold(
    bundle: DatasetBundle,
    setting: str,
    method: MethodSpec,
    train_low: list[np.ndarray],
    train_high: list[np.ndarray],
    seed: int,
    omega: InterventionMap | None = None,
    return_trace: bool = False,
):
    """Fit one method on one fold's clean training data.

    The nominal environment is abducted from the observational training
    rows; abslin regresses the paired observational endogenous data
    directly. ``omega`` overrides the bundle's map (misspecification runs).
    With ``return_trace`` the result is (map, objective trace); baselines
    without an iterative objective return an empty trace.
    """
    if setting not in ("gaussian", "empirical"):
        raise ValueError(f"unknown setting {setting!r}")
    omega = bundle.omega if omega is None else omega
    i_low = _null_index(bundle.interventions_low)
    i_high = _null_index(bundle.interventions_high)
    if method.kind == "abslin":
        amap = fit_abslin(
            train_low[i_low], train_high[i_high], method.variant, method.reg
        )
        return (amap, []) if return_trace else amap
    env = _nominal_env(bundle, setting, train_low[i_low], train_high[i_high])
    inst = ProblemInstance(bundle.low_scm, bundle.high_scm, omega, env, bundle.q)
    cfg = method.config(seed)
    if method.kind == "grad":
        amap, trace = fit_grad(inst, cfg, return_trace=True)
    elif method.kind == "bary":
        amap, trace = fit_bary(inst, cfg), []
    elif setting == "gaussian":
        amap, _, trace = fit_diroca_gaussian(inst, cfg)
    else:
        amap, _, trace = fit_diroca_empirical(inst, cfg)
    return (amap, trace) if return_trace else amap


def _score(
    amap: AbstractionMap,
    setting: str,
    bundle: DatasetBundle,
    test_low: list[np.ndarray],
    test_high: list[np.ndarray],
    alpha: float,
    sigma: float,
    noise_kind: str,
    cell_seed: int,
) -> float:
    # Contamination enters through the low level: outliers live in the
    # observed fine-grained data, and the high-level interventional
    # distributions act as the clean reference being abstracted into.
    pairs = []
    for i, (low_iota, high_iota) in enumerate(bundle.omega):
        j = bundle.interventions_high.index(high_iota)
        x_low = contaminate(
            test_low[i],
            ContaminationSpec(alpha, sigma, noise_kind,
                              seed=derive_seed(cell_seed, "low", i)),
        )
        pairs.append((x_low, test_high[j]))
    if setting == "gaussian":
        return abstraction_error_gaussian(amap, pairs, bundle.q)
    return abstraction_error_empirical(amap, pairs, bundle.q)


def run_grid(
    bundle: DatasetBundle,
    setting: str,
    methods: list[MethodSpec],
    alphas: list[float],
    sigmas: list[float],
    noise_kinds: list[str],
    k: int = 5,
    m: int = 1,
    root_seed: int = 0,
    n: int = 10000,
    data: dict[str, list[np.ndarray]] | None = None,
    test_data: dict[str, list[np.ndarray]] | None = None,
    omega: InterventionMap | None = None,
    fitted: dict[tuple[str, int], AbstractionMap] | None = None,
    sigma_label: list[float] | None = None,
    kind_label: str | None = None,
) -> list[ExperimentResult]:
    """k-fold train/score sweep over the contamination grid.

    ``fitted`` (keyed by (method name, fold)) skips training; ``omega``
    replaces the training-time map while scoring always uses the bundle's
    true pairing. ``test_data`` replaces the held-out rows (functional
    misspecification scores linearly trained maps on nonlinear samples).
    ``sigma_label``/``kind_label`` override the values recorded in the
    emitted rows (misspecification sweeps reuse those columns for their
    own knobs).
    """
    if not alphas or not sigmas or not noise_kinds or not methods:
        raise ValueError("empty grid")
    if data is None:
        data = generate_data(bundle, n, root_seed)
    held_out = data if test_data is None else test_data
    n_rows = data["low"][0].shape[0]
    folds = fold_indices(n_rows, k)
    results: list[ExperimentResult] = []
    for fold, (train_idx, test_idx) in enumerate(folds):
        train_low = [x[train_idx] for x in data["low"]]
        train_high = [x[train_idx] for x in data["high"]]
        test_low = [x[test_idx] for x in held_out["low"]]
        test_high = [x[test_idx] for x in held_out["high"]]
        for method in methods:
            if fitted is not None and (method.name, fold) in fitted:
                amap = fitted[(method.name, fold)]
            else:
                amap = fit_fold(
                    bundle, setting, method, train_low, train_high,
                    derive_seed(root_seed, "fit", method.name, fold), omega,
                )
            for ai, alpha in enumerate(alphas):
                for si, sigma in enumerate(sigmas):
                    for kind in noise_kinds:
                        for s in range(m):
                            cell_seed = derive_seed(
                                root_seed, method.name, fold, ai, si, kind, s
                            )
                            error = _score(
                                amap, setting, bundle, test_low, test_high,
                                alpha, sigma, kind, cell_seed,
                            )
                            results.append(ExperimentResult(
                                method=method.name,
                                eps_low=method.eps_low,
                                eps_high=method.eps_high,
                                fold=fold,
                                alpha=alpha,
                                sigma=sigma if sigma_label is None
                                else sigma_label[si],
                                noise_kind=kind if kind_label is None
                                else kind_label,
                                seed=cell_seed,
                                error=error,
                            ))
    return results


def run_f_misspec(
    bundle: DatasetBundle,
    setting: str,
    methods: list[MethodSpec],
    fnl: str,
    k_strengths: list[float],
    k: int = 5,
    m: int = 1,
    root_seed: int = 0,
    n: int = 10000,
) -> list[ExperimentResult]:
    """Sweep of the nonlinearity strength; rows carry it in the sigma column.

    Maps are trained on linear samples; only the held-out rows come from
    the nonlinear sibling model.
    """
    results = []
    data = generate_data(bundle, n, root_seed)
    for strength in k_strengths:
        sampler = lambda iota, n_s, seed, _k=strength: f_misspec_sample(
            bundle.low_scm, _k, fnl, bundle.low_scm.noise, iota, n_s, seed
        )
        test = generate_data(
            bundle, n, derive_seed(root_seed, "fmisspec", strength),
            low_sampler=sampler,
        )
        results += run_grid(
            bundle, setting, methods, alphas=[0.0], sigmas=[strength],
            noise_kinds=["gaussian"], k=k, m=m, root_seed=root_seed,
            data=data, test_data=test, sigma_label=[strength],
            kind_label=f"fmisspec_{fnl}",
        )
    return results


def run_omega_misspec(
    bundle: DatasetBundle,
    setting: str,
    methods: list[MethodSpec],
    n_misalign: int,
    delta: int,
    k: int = 5,
    m: int = 1,
    root_seed: int = 0,
    n: int = 10000,
) -> list[ExperimentResult]:
    """Train with a corrupted omega, score against the true pairing."""
    corrupted = omega_misspec(
        bundle.omega, n_misalign, delta, derive_seed(root_seed, "omega")
    )
    return run_grid(
        bundle, setting, methods, alphas=[0.0], sigmas=[float(n_misalign)],
        noise_kinds=["gaussian"], k=k, m=m, root_seed=root_seed,
        omega=corrupted, kind_label=f"omisspec_{n_misalign}",
    )


# ---------------------------------------------------------------------------
# Persistence and aggregation


def write_results(path: str | Path, results: list[ExperimentResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_HEADER.split(","))
        for r in results:
            writer.writerow(r.row())


def read_results(path: str | Path) -> list[ExperimentResult]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_HEADER.split(","):
            raise ValueError(f"unexpected results header in {path}")
        return [
            ExperimentResult(
                method=row["method"],
                eps_low=float(row["eps_low"]),
                eps_high=float(row["eps_high"]),
                fold=int(row["fold"]),
                alpha=float(row["alpha"]),
                sigma=float(row["sigma"]),
                noise_kind=row["noise_kind"],
                seed=int(row["seed"]),
                error=float(row["error"]),
            )
            for row in reader
        ]


def summarize(results: list[ExperimentResult]) -> dict:
    """Per-cell mean/std keyed by method, alpha, sigma, and noise kind."""
    cells: dict[str, list[float]] = {}
    for r in results:
        key = f"{r.method}|alpha={r.alpha:g}|sigma={r.sigma:g}|{r.noise_kind}"
        cells.setdefault(key, []).append(r.error)
    return {
        key: {
            "mean": float(np.mean(v)),
            "std": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
            "count": len(v),
        }
        for key, v in sorted(cells.items())
    }


def write_summary(path: str | Path, results: list[ExperimentResult]) -> None:
    Path(path).write_text(json.dumps(summarize(results), indent=2) + "\n")
