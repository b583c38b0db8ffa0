"""Linear additive-noise SCMs: interventions, reduced forms, sampling, abduction.

Adjacency convention: ``B[j, i]`` is the weight of the edge j -> i, so the
structural equations read x = B^T x + u and the reduced form is
x = M u with M = (I - B^T)^{-1}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from diroca.environments import EmpiricalEnv, GaussianEnv

__all__ = [
    "LinearScm",
    "Intervention",
    "InterventionMap",
    "mixing_matrix",
    "mutilate",
    "apply_intervention_exo",
    "reduced_transform",
    "sample_endogenous",
    "abduct",
    "estimate_coefficients",
    "load_scm",
    "save_scm",
    "load_interventions",
    "save_interventions",
    "load_omega",
    "save_omega",
]


def _topological_order(b: np.ndarray) -> list[int]:
    """Kahn's algorithm on the nonzero pattern of B (edge j -> i iff B[j,i] != 0)."""
    d = b.shape[0]
    children = [np.flatnonzero(b[j]).tolist() for j in range(d)]
    indeg = np.count_nonzero(b, axis=0)
    frontier = [i for i in range(d) if indeg[i] == 0]
    order: list[int] = []
    while frontier:
        j = frontier.pop()
        order.append(j)
        for i in children[j]:
            indeg[i] -= 1
            if indeg[i] == 0:
                frontier.append(i)
    if len(order) != d:
        raise ValueError("adjacency matrix contains a cycle (not a DAG)")
    return order


@dataclass(frozen=True)
class LinearScm:
    """Weighted-adjacency linear SCM with named variables and a noise spec."""

    variables: tuple[str, ...]
    adjacency: np.ndarray
    noise: GaussianEnv | EmpiricalEnv

    def __post_init__(self):
        variables = tuple(self.variables)
        if len(set(variables)) != len(variables):
            raise ValueError("duplicate variable names")
        b = np.asarray(self.adjacency, dtype=float)
        d = len(variables)
        if b.shape != (d, d):
            raise ValueError(f"adjacency shape {b.shape} does not match {d} variables")
        if self.noise.dim != d:
            raise ValueError(
                f"noise dimension {self.noise.dim} does not match {d} variables"
            )
        topo = _topological_order(b)  # raises on cycles
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "adjacency", b)
        object.__setattr__(self, "_topo", tuple(topo))

    @property
    def dim(self) -> int:
        return len(self.variables)

    def index(self, name: str) -> int:
        return self.variables.index(name)

    def parents(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[:, i])


@dataclass(frozen=True)
class Intervention:
    """do-assignment on a subset of variables; empty targets = observational."""

    targets: tuple[int, ...] = ()
    values: tuple[float, ...] = ()

    def __post_init__(self):
        targets = tuple(int(t) for t in self.targets)
        values = tuple(float(v) for v in self.values)
        if len(targets) != len(set(targets)):
            raise ValueError("intervention targets must be distinct")
        if len(targets) != len(values):
            raise ValueError("targets and values must have the same length")
        if any(t < 0 for t in targets):
            raise ValueError("negative target index")
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "values", values)

    @property
    def is_null(self) -> bool:
        return not self.targets

    def validate(self, dim: int) -> None:
        for t in self.targets:
            if t >= dim:
                raise IndexError(f"target index {t} out of range for dimension {dim}")


@dataclass(frozen=True)
class InterventionMap:
    """Pairs each low-level intervention with its high-level counterpart.

    The low-level interventions must be distinct (the map is a function) and
    every listed high-level intervention must be hit (surjectivity).
    """

    pairs: tuple[tuple[Intervention, Intervention], ...]

    def __post_init__(self):
        pairs = tuple((low, high) for low, high in self.pairs)
        lows = [low for low, _ in pairs]
        if len(set(lows)) != len(lows):
            raise ValueError("a low-level intervention appears more than once")
        object.__setattr__(self, "pairs", pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def lows(self) -> list[Intervention]:
        return [low for low, _ in self.pairs]

    @property
    def highs(self) -> list[Intervention]:
        return [high for _, high in self.pairs]

    def high_for(self, low: Intervention) -> Intervention:
        for lo, hi in self.pairs:
            if lo == low:
                return hi
        raise KeyError(f"no mapping for intervention {low}")

    def check_surjective(self, high_set: list[Intervention]) -> None:
        image = set(self.highs)
        missing = [h for h in high_set if h not in image]
        if missing:
            raise ValueError(f"{len(missing)} high-level interventions are never hit")


def mixing_matrix(scm: LinearScm) -> np.ndarray:
    """Reduced-form matrix M with x = M u.

    Computed by a triangular solve after a topological permutation, not by
    general inversion: acyclicity makes (I - B^T) permutable to unit lower
    triangular form, so the solve is exact and stable.
    """
    d = scm.dim
    order = list(scm._topo)
    a = np.eye(d) - scm.adjacency.T  # x = B^T x + u  =>  (I - B^T) x = u
    perm = a[np.ix_(order, order)]  # unit lower triangular in topo order
    m_perm = solve_triangular(perm, np.eye(d), lower=True, unit_diagonal=True)
    m = np.empty((d, d))
    m[np.ix_(order, order)] = m_perm
    return m


def mutilate(scm: LinearScm, iota: Intervention) -> LinearScm:
    """Remove all incoming edges of each target (zero its adjacency column)."""
    iota.validate(scm.dim)
    if iota.is_null:
        return scm
    b = scm.adjacency.copy()
    b[:, list(iota.targets)] = 0.0
    return LinearScm(scm.variables, b, scm.noise)


def apply_intervention_exo(iota: Intervention, env):
    """Pin the exogenous coordinates of intervened variables to their values.

    Gaussian: mean entries set to the assigned values, their variances (rows
    and columns) zeroed. Empirical: target columns overwritten. With the
    mutilated reduced form this makes the endogenous targets exactly equal
    to the assigned values.
    """
    if iota.is_null:
        return env
    iota.validate(env.dim)
    idx = list(iota.targets)
    vals = np.asarray(iota.values, dtype=float)
    if isinstance(env, GaussianEnv):
        mean = env.mean.copy()
        mean[idx] = vals
        cov = env.cov.copy()
        cov[idx, :] = 0.0
        cov[:, idx] = 0.0
        return GaussianEnv(mean, cov)
    if isinstance(env, EmpiricalEnv):
        samples = env.samples.copy()
        samples[:, idx] = vals
        return EmpiricalEnv(samples)
    raise TypeError(f"unsupported environment type {type(env).__name__}")


def reduced_transform(scm: LinearScm, iota: Intervention) -> np.ndarray:
    """Mixing matrix of the mutilated SCM (the per-intervention linear map)."""
    return mixing_matrix(mutilate(scm, iota))


def sample_endogenous(
    scm: LinearScm,
    iota: Intervention,
    env,
    n: int,
    seed: int | np.random.Generator,
) -> np.ndarray:
    """Draw n endogenous vectors under the given intervention and environment."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    adjusted = apply_intervention_exo(iota, env)
    u = adjusted.sample(n, rng)
    m = reduced_transform(scm, iota)
    return u @ m.T


def abduct(scm: LinearScm, endo: np.ndarray) -> np.ndarray:
    """Recover exogenous samples from endogenous ones: u = (I - B^T) x per row."""
    endo = np.atleast_2d(np.asarray(endo, dtype=float))
    if endo.shape[1] != scm.dim:
        raise ValueError(
            f"endogenous data has {endo.shape[1]} columns, SCM has {scm.dim}"
        )
    return endo @ (np.eye(scm.dim) - scm.adjacency.T).T


def estimate_coefficients(
    endo_obs: np.ndarray,
    variables: list[str],
    dag: list[tuple[str, str]],
) -> LinearScm:
    """Fill the adjacency by OLS of each variable on its parents.

    The residuals become the empirical exogenous samples of the returned SCM.
    """
    endo_obs = np.atleast_2d(np.asarray(endo_obs, dtype=float))
    n, d = endo_obs.shape
    if len(variables) != d:
        raise ValueError("variable count does not match data width")
    if n <= d:
        raise ValueError(f"need more samples ({n}) than variables ({d})")
    index = {name: i for i, name in enumerate(variables)}
    parents: dict[int, list[int]] = {i: [] for i in range(d)}
    for frm, to in dag:
        parents[index[to]].append(index[frm])

    b = np.zeros((d, d))
    residuals = np.empty_like(endo_obs)
    for i in range(d):
        pa = parents[i]
        if not pa:
            residuals[:, i] = endo_obs[:, i]
            continue
        x = endo_obs[:, pa]
        y = endo_obs[:, i]
        coef, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
        if rank < len(pa):
            raise np.linalg.LinAlgError(
                f"rank-deficient regressors for variable {variables[i]}"
            )
        b[pa, i] = coef
        residuals[:, i] = y - x @ coef
    return LinearScm(tuple(variables), b, EmpiricalEnv(residuals))


# ---------------------------------------------------------------------------
# File formats


def save_scm(scm: LinearScm, path: str | Path) -> None:
    edges = []
    b = scm.adjacency
    for j in range(scm.dim):
        for i in range(scm.dim):
            if b[j, i] != 0.0:
                edges.append(
                    {"from": scm.variables[j], "to": scm.variables[i], "weight": b[j, i]}
                )
    if isinstance(scm.noise, GaussianEnv):
        noise = {
            name: {"mean": scm.noise.mean[i], "std": float(np.sqrt(scm.noise.cov[i, i]))}
            for i, name in enumerate(scm.variables)
        }
    else:
        noise = {"samples_path": str(Path(path).with_suffix(".noise.csv"))}
        np.savetxt(noise["samples_path"], scm.noise.samples, delimiter=",")
    doc = {"variables": list(scm.variables), "edges": edges, "noise": noise}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_scm(path: str | Path) -> LinearScm:
    doc = json.loads(Path(path).read_text())
    variables = list(doc["variables"])
    d = len(variables)
    index = {name: i for i, name in enumerate(variables)}
    b = np.zeros((d, d))
    for edge in doc["edges"]:
        b[index[edge["from"]], index[edge["to"]]] = float(edge["weight"])
    noise_doc = doc["noise"]
    if "samples_path" in noise_doc:
        noise = EmpiricalEnv(np.loadtxt(noise_doc["samples_path"], delimiter=","))
    else:
        mean = np.array([noise_doc[v]["mean"] for v in variables], dtype=float)
        std = np.array([noise_doc[v]["std"] for v in variables], dtype=float)
        noise = GaussianEnv(mean, np.diag(std**2))
    return LinearScm(tuple(variables), b, noise)


def save_interventions(
    interventions: list[Intervention], variables: list[str], path: str | Path
) -> None:
    doc = [
        {"targets": {variables[t]: v for t, v in zip(iota.targets, iota.values)}}
        for iota in interventions
    ]
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_interventions(path: str | Path, variables: list[str]) -> list[Intervention]:
    doc = json.loads(Path(path).read_text())
    index = {name: i for i, name in enumerate(variables)}
    out = []
    for entry in doc:
        items = sorted((index[name], val) for name, val in entry["targets"].items())
        out.append(
            Intervention(
                tuple(t for t, _ in items), tuple(float(v) for _, v in items)
            )
        )
    return out


def save_omega(
    omega: InterventionMap,
    lows: list[Intervention],
    highs: list[Intervention],
    path: str | Path,
) -> None:
    doc = [
        {"low": lows.index(lo), "high": highs.index(hi)} for lo, hi in omega.pairs
    ]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_omega(
    path: str | Path, lows: list[Intervention], highs: list[Intervention]
) -> InterventionMap:
    doc = json.loads(Path(path).read_text())
    return InterventionMap(
        tuple((lows[e["low"]], highs[e["high"]]) for e in doc)
    )
