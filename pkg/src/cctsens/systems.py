"""Built-in test systems.

``example75`` is a two-state, one-algebraic-variable example with a
semi-saddle point at the origin and a transverse saddle pseudo equilibrium at
(-3, -2, 1).  ``smib_const`` and ``smib_freq`` are the one machine, one bus
model with a constant or frequency-dependent reactive load.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .exceptions import ContractViolation
from .model import ParamSet, Point, ScenarioModel, StageModel

EXAMPLE75_VARIANTS = ("consistent", "printed", "shift")
SMIB_LOADS = ("constant", "frequency_dependent")


def _example75_g(x, y, p):
    pv = p["p"]
    yy = y[0]
    return np.array([x[0] * yy - pv * yy - x[1] + yy ** 3])


def _example75_gx(x, y, p):
    return np.array([[y[0], -1.0]])


def _example75_gy(x, y, p):
    return np.array([[x[0] - p["p"] + 3.0 * y[0] ** 2]])


def _example75_gp(x, y, p, name):
    return np.array([-y[0] if name == "p" else 0.0])


def _example75_delta(x, y, p):
    return 3.0 * y[0] ** 2 - p["p"] + x[0]


def _example75_delta_grad(x, y, p, name):
    return (np.array([1.0, 0.0]), np.array([6.0 * y[0]]),
            -1.0 if name == "p" else 0.0)


def _example75_post(variant: str) -> StageModel:
    if variant == "consistent":
        # Drift rebuilt so that -g_x f reproduces the closed-form kappa.
        def f(x, y, p):
            pv, yy = p["p"], y[0]
            return np.array([1.0 + pv - x[0] + pv * yy, 2.0 - x[1] + pv * yy * yy])

        def fx(x, y, p):
            return np.array([[-1.0, 0.0], [0.0, -1.0]])

        def fy(x, y, p):
            pv, yy = p["p"], y[0]
            return np.array([[pv], [2.0 * pv * yy]])

        def fp(x, y, p, name):
            if name != "p":
                return np.zeros(2)
            return np.array([1.0 + y[0], y[0] ** 2])
    elif variant == "printed":
        def f(x, y, p):
            pv, yy = p["p"], y[0]
            return np.array([yy * yy + pv * yy - 2.0 * x[0] + x[1] + 1.0, -x[1]])

        def fx(x, y, p):
            return np.array([[-2.0, 1.0], [0.0, -1.0]])

        def fy(x, y, p):
            return np.array([[2.0 * y[0] + p["p"]], [0.0]])

        def fp(x, y, p, name):
            return np.array([y[0], 0.0]) if name == "p" else np.zeros(2)
    elif variant == "shift":
        # p only translates the state; the CCT does not depend on it.
        def f(x, y, p):
            return np.array([1.0 + p["p"] - x[0], 2.0 - x[1]])

        def fx(x, y, p):
            return np.array([[-1.0, 0.0], [0.0, -1.0]])

        def fy(x, y, p):
            return np.zeros((2, 1))

        def fp(x, y, p, name):
            return np.array([1.0, 0.0]) if name == "p" else np.zeros(2)
    else:
        raise ContractViolation(f"unknown example75 variant {variant!r}")
    return StageModel(
        n=2, m=1, f=f, g=_example75_g, fx=fx, fy=fy, fp=fp,
        gx=_example75_gx, gy=_example75_gy, gp=_example75_gp,
        delta=_example75_delta, delta_grad=_example75_delta_grad,
        name=f"example75-post-{variant}", params_used=frozenset({"p"}))


def _example75_fault() -> StageModel:
    return StageModel(
        n=2, m=1,
        f=lambda x, y, p: np.array([x[1], -1.0]),
        fx=lambda x, y, p: np.array([[0.0, 1.0], [0.0, 0.0]]),
        fy=lambda x, y, p: np.zeros((2, 1)),
        fp=lambda x, y, p, name: np.zeros(2),
        g=_example75_g, gx=_example75_gx, gy=_example75_gy, gp=_example75_gp,
        delta=_example75_delta, delta_grad=_example75_delta_grad,
        name="example75-fault", params_used=frozenset({"p"}))


def example75_kappa_closed_form(x, y, p) -> float:
    return 2.0 - y[0] * (p["p"] - x[0] + 1.0) - x[1]


def example75_indicator_closed_form(x, y, p) -> float:
    yy, pv = y[0], p["p"]
    return 12 * yy + 6 * x[0] * yy ** 2 - (6 * x[1] * yy + 6 * pv * yy ** 2 + 6 * yy ** 2)


def build_example75(params: ParamSet | None = None, variant: str = "consistent") -> ScenarioModel:
    """Example scenario; the pre-fault stage equals the post-fault stage.

    ``variant`` picks the post-fault drift: ``consistent`` (default, matches
    the closed-form kappa), ``printed`` (SEP at (0.5, 0, 0), never unstable
    under the fault) or ``shift`` (the parameter only translates the state).
    """
    params = params if params is not None else ParamSet({"p": 0.0}, active="p")
    if "p" not in params:
        raise ContractViolation("example75 needs parameter 'p'")
    post = _example75_post(variant)

    def sep_guess(prm: ParamSet) -> Point:
        pv = prm["p"]
        if variant == "consistent":
            return Point([1.0 + 2.0 * pv, 2.0 + pv], [1.0])
        if variant == "shift":
            return Point([1.0 + pv, 2.0], [1.0])
        return Point([0.5, 0.0], [0.0])

    return ScenarioModel(pre=post, fault=_example75_fault(), post=post,
                         name=f"example75/{variant}", sep_guess=sep_guess,
                         default_params=params)


SMIB_DEFAULTS = {"X": 0.5, "Pm": 0.3, "E": 1.0, "M": 1.0, "Dl": 1.0, "Dg": 1.0, "Ql": 0.1}


def _smib_f(x, y, p):
    pe = p["E"] * y[0] * math.sin(x[0]) / p["X"]
    acc = p["Pm"] - pe
    return np.array([x[1] + acc / p["Dl"], (acc - p["Dg"] * x[1]) / p["M"]])


def _smib_fx(x, y, p):
    c = p["E"] * y[0] * math.cos(x[0]) / p["X"]
    return np.array([[-c / p["Dl"], 1.0], [-c / p["M"], -p["Dg"] / p["M"]]])


def _smib_fy(x, y, p):
    s = p["E"] * math.sin(x[0]) / p["X"]
    return np.array([[-s / p["Dl"]], [-s / p["M"]]])


def _smib_fp(x, y, p, name):
    X, E, M, Dl = p["X"], p["E"], p["M"], p["Dl"]
    s = math.sin(x[0])
    pe = E * y[0] * s / X
    acc = p["Pm"] - pe
    if name == "Pm":
        return np.array([1.0 / Dl, 1.0 / M])
    if name == "X":
        return np.array([pe / (X * Dl), pe / (X * M)])
    if name == "E":
        d = -y[0] * s / X
        return np.array([d / Dl, d / M])
    if name == "M":
        return np.array([0.0, -(acc - p["Dg"] * x[1]) / M ** 2])
    if name == "Dl":
        return np.array([-acc / Dl ** 2, 0.0])
    if name == "Dg":
        return np.array([0.0, -x[1] / M])
    return np.zeros(2)


def _smib_post(load: str) -> StageModel:
    freq = load == "frequency_dependent"
    if load not in SMIB_LOADS:
        raise ContractViolation(f"unknown load model {load!r}")

    def g(x, y, p):
        X = p["X"]
        q = p["Ql"] * (1.0 + x[1]) if freq else p["Ql"]
        return np.array([p["E"] * y[0] * math.cos(x[0]) / X - y[0] ** 2 / X - q])

    def gx(x, y, p):
        return np.array([[-p["E"] * y[0] * math.sin(x[0]) / p["X"],
                          -p["Ql"] if freq else 0.0]])

    def gy(x, y, p):
        return np.array([[(p["E"] * math.cos(x[0]) - 2.0 * y[0]) / p["X"]]])

    def gp(x, y, p, name):
        X, yy, c = p["X"], y[0], math.cos(x[0])
        if name == "X":
            return np.array([-(p["E"] * yy * c - yy * yy) / X ** 2])
        if name == "E":
            return np.array([yy * c / X])
        if name == "Ql":
            return np.array([-(1.0 + x[1]) if freq else -1.0])
        return np.zeros(1)

    def delta(x, y, p):
        return (p["E"] * math.cos(x[0]) - 2.0 * y[0]) / p["X"]

    def delta_grad(x, y, p, name):
        X, c = p["X"], math.cos(x[0])
        dp = 0.0
        if name == "X":
            dp = -(p["E"] * c - 2.0 * y[0]) / X ** 2
        elif name == "E":
            dp = c / X
        return (np.array([-p["E"] * math.sin(x[0]) / X, 0.0]),
                np.array([-2.0 / X]), dp)

    return StageModel(n=2, m=1, f=_smib_f, g=g, fx=_smib_fx, fy=_smib_fy, fp=_smib_fp,
                      gx=gx, gy=gy, gp=gp, delta=delta, delta_grad=delta_grad,
                      name=f"smib-post-{load}",
                      params_used=frozenset(SMIB_DEFAULTS))


def _smib_fault() -> StageModel:
    return StageModel(
        n=2, m=1, f=_smib_f, fx=_smib_fx, fy=_smib_fy, fp=_smib_fp,
        g=lambda x, y, p: np.array([y[0]]),
        gx=lambda x, y, p: np.zeros((1, 2)),
        gy=lambda x, y, p: np.ones((1, 1)),
        gp=lambda x, y, p, name: np.zeros(1),
        delta=lambda x, y, p: 1.0,
        delta_grad=lambda x, y, p, name: (np.zeros(2), np.zeros(1), 0.0),
        name="smib-fault", params_used=frozenset(SMIB_DEFAULTS))


def build_smib(params: ParamSet | None = None, load: str = "constant") -> ScenarioModel:
    """One machine, one bus; bolted fault at the bus, cleared without topology change."""
    params = params if params is not None else ParamSet(SMIB_DEFAULTS, active="Pm")
    missing = [k for k in SMIB_DEFAULTS if k not in params]
    if missing:
        raise ContractViolation(f"machine model parameters missing: {missing}")
    post = _smib_post(load)

    def sep_guess(prm: ParamSet) -> Point:
        y0 = 0.9 * prm["E"]
        s = min(1.0, prm["Pm"] * prm["X"] / (prm["E"] * y0))
        return Point([math.asin(s), 0.0], [y0])

    return ScenarioModel(pre=post, fault=_smib_fault(), post=post,
                         name=f"smib/{load}", sep_guess=sep_guess, default_params=params)


@dataclass(frozen=True)
class SystemCatalogEntry:
    id: str
    description: str
    builder: Callable[[ParamSet], ScenarioModel]
    defaults: dict
    active: str
    bracket: tuple[float, float]
    t_max: float
    states: str


CATALOG: dict[str, SystemCatalogEntry] = {
    "example75": SystemCatalogEntry(
        id="example75",
        description="two-state example with a semi-saddle at the origin",
        builder=lambda prm: build_example75(prm, "consistent"),
        defaults={"p": 0.0}, active="p", bracket=(0.0, 8.0), t_max=30.0,
        states="x1, x2: dynamic states; y1: algebraic state (dimensionless)"),
    "smib_const": SystemCatalogEntry(
        id="smib_const",
        description="one machine, one bus, constant reactive load",
        builder=lambda prm: build_smib(prm, "constant"),
        defaults=dict(SMIB_DEFAULTS), active="Pm", bracket=(0.0, 4.0), t_max=30.0,
        states="x1: rotor angle (rad); x2: speed deviation (pu); y1: bus voltage (pu)"),
    "smib_freq": SystemCatalogEntry(
        id="smib_freq",
        description="one machine, one bus, frequency-dependent reactive load",
        builder=lambda prm: build_smib(prm, "frequency_dependent"),
        defaults={**SMIB_DEFAULTS, "Pm": 0.5}, active="M", bracket=(0.0, 4.0), t_max=30.0,
        states="x1: rotor angle (rad); x2: speed deviation (pu); y1: bus voltage (pu)"),
}


def get_system(system_id: str) -> SystemCatalogEntry:
    try:
        return CATALOG[system_id]
    except KeyError:
        raise ContractViolation(
            f"unknown system {system_id!r}; known: {sorted(CATALOG)}") from None


def build_system(system_id: str, overrides: dict | None = None,
                 active: str | None = None,
                 variant: str | None = None) -> tuple[ScenarioModel, ParamSet]:
    """Scenario and parameter set for a catalog entry.

    ``variant`` selects the example75 drift; other systems take none.
    """
    entry = get_system(system_id)
    if variant is not None and system_id != "example75":
        raise ContractViolation(f"system {system_id} has no variants")
    values = dict(entry.defaults)
    for k, v in (overrides or {}).items():
        if k not in values:
            raise ContractViolation(f"system {system_id} has no parameter {k!r}")
        values[k] = float(v)
    params = ParamSet(values, active=active or entry.active)
    if variant is not None:
        if variant not in EXAMPLE75_VARIANTS:
            raise ContractViolation(f"unknown example75 variant {variant!r}")
        return build_example75(params, variant), params
    return entry.builder(params), params
