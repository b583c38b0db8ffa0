"""Built-in benchmark SCM pairs with their intervention sets and omega maps.

Two bundles ship with the package: a three-node chain abstracted to a
two-node pair (the mediator is marginalized away), and a six-node
linearized medical network abstracted to three cluster variables.
Structural weights and noise parameters are drawn from documented seeded
ranges; all downstream checks are ordering- and property-based, so the
exact draws only need to be reproducible, not canonical. The default
seeds pin the versioned draws that ship with the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from diroca.environments import GaussianEnv, JointEnv
from diroca.scm import (
    Intervention,
    InterventionMap,
    LinearScm,
    save_interventions,
    save_omega,
    save_scm,
)

__all__ = ["DatasetBundle", "build_slc", "build_lilucas", "save_bundle"]

_DOSE = 2.0


@dataclass(frozen=True)
class DatasetBundle:
    """A low/high SCM pair, the paired intervention sets, and omega."""

    name: str
    low_scm: LinearScm
    high_scm: LinearScm
    interventions_low: tuple[Intervention, ...]
    interventions_high: tuple[Intervention, ...]
    omega: InterventionMap
    q: np.ndarray

    def __post_init__(self):
        self.omega.check_surjective(list(self.interventions_high))
        if len(self.omega) != len(self.interventions_low):
            raise ValueError("omega must cover every low-level intervention")
        q = np.asarray(self.q, dtype=float)
        if q.shape != (len(self.omega),) or abs(q.sum() - 1.0) > 1e-8:
            raise ValueError("q must be a probability vector over the pairs")
        object.__setattr__(self, "q", q)

    @property
    def nominal_env(self) -> JointEnv:
        return JointEnv(self.low_scm.noise, self.high_scm.noise)


def _draw_noise(rng: np.random.Generator, d: int) -> GaussianEnv:
    mean = rng.uniform(-1.0, 1.0, size=d)
    std = rng.uniform(0.5, 1.5, size=d)
    return GaussianEnv(mean, np.diag(std**2))


def _scm(variables: tuple[str, ...], edges: list[tuple[str, str]],
         rng: np.random.Generator,
         overrides: dict[tuple[str, str], float] | None) -> LinearScm:
    d = len(variables)
    index = {v: i for i, v in enumerate(variables)}
    b = np.zeros((d, d))
    for frm, to in edges:
        w = rng.uniform(0.5, 2.0)
        if overrides and (frm, to) in overrides:
            w = float(overrides[(frm, to)])
        b[index[frm], index[to]] = w
    return LinearScm(variables, b, _draw_noise(rng, d))


def _iota(variables: tuple[str, ...], assignment: dict[str, float]) -> Intervention:
    items = sorted((variables.index(name), val) for name, val in assignment.items())
    return Intervention(
        tuple(t for t, _ in items), tuple(float(v) for _, v in items)
    )


def build_slc(weights: dict[tuple[str, str], float] | None = None,
              seed: int = 2) -> DatasetBundle:
    """Chain S -> T -> C abstracted to S' -> C' (mediator removed).

    Six low-level interventions (null, each variable at +2, S and C at -2)
    and three high-level ones (null, S' and C' at +2). Omega groups the
    mediator with the effect side.
    """
    rng = np.random.default_rng(seed)
    low = _scm(("S", "T", "C"), [("S", "T"), ("T", "C")], rng, weights)
    high = _scm(("S'", "C'"), [("S'", "C'")], rng, weights)

    lv, hv = low.variables, high.variables
    lows = (
        _iota(lv, {}),
        _iota(lv, {"S": _DOSE}),
        _iota(lv, {"T": _DOSE}),
        _iota(lv, {"C": _DOSE}),
        _iota(lv, {"S": -_DOSE}),
        _iota(lv, {"C": -_DOSE}),
    )
    highs = (
        _iota(hv, {}),
        _iota(hv, {"S'": _DOSE}),
        _iota(hv, {"C'": _DOSE}),
    )
    omega = InterventionMap((
        (lows[0], highs[0]),
        (lows[1], highs[1]),
        (lows[2], highs[2]),  # mediator interventions act on the effect side
        (lows[3], highs[2]),
        (lows[4], highs[1]),
        (lows[5], highs[2]),
    ))
    q = np.full(len(lows), 1.0 / len(lows))
    return DatasetBundle("slc", low, high, lows, highs, omega, q)


_LILUCAS_CLUSTER = {
    "SM": "EN'",
    "GE": "GE'",
    "LC": "LC'",
    "CO": "LC'",
    "FA": "LC'",
    "AL": "LC'",
}


def build_lilucas(weights: dict[tuple[str, str], float] | None = None,
                  seed: int = 2,
                  cluster: dict[str, str] | None = None) -> DatasetBundle:
    """Linearized six-node medical network abstracted to three clusters.

    Low level: SM, GE, LC, CO, FA, AL with edges SM->LC, GE->LC, LC->CO,
    LC->FA, GE->FA, CO->AL. High level: EN', GE', LC' with edges EN'->LC'
    and GE'->LC'. Twenty low-level and eleven high-level interventions;
    omega maps target sets through the variable clusters (AL is grouped
    with LC' by default, overridable via ``cluster``).
    """
    rng = np.random.default_rng(seed)
    low = _scm(
        ("SM", "GE", "LC", "CO", "FA", "AL"),
        [("SM", "LC"), ("GE", "LC"), ("LC", "CO"), ("LC", "FA"),
         ("GE", "FA"), ("CO", "AL")],
        rng,
        weights,
    )
    high = _scm(("EN'", "GE'", "LC'"), [("EN'", "LC'"), ("GE'", "LC'")], rng, weights)
    cluster = dict(_LILUCAS_CLUSTER if cluster is None else cluster)

    lv, hv = low.variables, high.variables
    singles = list(lv)
    pair_sets = [("SM", "GE"), ("SM", "LC"), ("GE", "LC"),
                 ("LC", "CO"), ("CO", "FA"), ("SM", "CO")]
    lows = [_iota(lv, {})]
    lows += [_iota(lv, {v: _DOSE}) for v in singles]
    lows += [_iota(lv, {v: -_DOSE}) for v in singles]
    lows += [_iota(lv, {a: _DOSE, b: _DOSE}) for a, b in pair_sets]
    lows.append(_iota(lv, {"SM": _DOSE, "GE": _DOSE, "LC": _DOSE}))

    highs = [_iota(hv, {})]
    highs += [_iota(hv, {v: _DOSE}) for v in hv]
    highs += [_iota(hv, {v: -_DOSE}) for v in hv]
    highs += [_iota(hv, {a: _DOSE, b: _DOSE})
              for a, b in [("EN'", "GE'"), ("EN'", "LC'"), ("GE'", "LC'")]]
    highs.append(_iota(hv, {v: _DOSE for v in hv}))
    high_lookup = {h: h for h in highs}

    pairs = []
    for low_iota in lows:
        mapped: dict[str, float] = {}
        for t, val in zip(low_iota.targets, low_iota.values):
            mapped[cluster[lv[t]]] = val  # duplicates collapse within a cluster
        image = _iota(hv, mapped)
        if image not in high_lookup:
            raise ValueError(f"cluster image {image} is not a listed intervention")
        pairs.append((low_iota, high_lookup[image]))
    omega = InterventionMap(tuple(pairs))
    q = np.full(len(lows), 1.0 / len(lows))
    return DatasetBundle(
        "lilucas", low, high, tuple(lows), tuple(highs), omega, q
    )


def save_bundle(bundle: DatasetBundle, out_dir: str | Path) -> dict[str, Path]:
    """Write the bundle in the standard SCM/intervention/omega file formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "low_scm": out / "low_scm.json",
        "high_scm": out / "high_scm.json",
        "interventions_low": out / "interventions_low.json",
        "interventions_high": out / "interventions_high.json",
        "omega": out / "omega.json",
    }
    save_scm(bundle.low_scm, paths["low_scm"])
    save_scm(bundle.high_scm, paths["high_scm"])
    save_interventions(
        list(bundle.interventions_low), list(bundle.low_scm.variables),
        paths["interventions_low"],
    )
    save_interventions(
        list(bundle.interventions_high), list(bundle.high_scm.variables),
        paths["interventions_high"],
    )
    save_omega(
        bundle.omega, list(bundle.interventions_low),
        list(bundle.interventions_high), paths["omega"],
    )
    return paths
