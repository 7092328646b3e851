"""Generator configs: turn a ``generator:`` mapping into train/test datasets."""
from __future__ import annotations

from dataclasses import asdict, fields

import numpy as np

from . import benchdata as bd
from .errors import ConfigError
from .signal_core import TransferFunction

GENERATOR_KINDS = ("wh", "boucwen", "friction_integrator")
NONLINEARITIES = {"tanh": np.tanh, "identity": lambda x: x}


def _seeds(seed, n):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _tf(raw, path):
    if not isinstance(raw, dict) or "b" not in raw:
        raise ConfigError(path, "expected {b: [...], a: [...]}")
    try:
        return TransferFunction(raw["b"], raw.get("a", []))
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None


def _dataclass_from(cls, raw, path):
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(path, "expected a mapping")
    names = {f.name for f in fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"{path}.{key}", "unknown field")
    try:
        return cls(**raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from None


def _number(raw, key, path, default=None, cast=float):
    val = raw.get(key, default)
    if val is None:
        raise ConfigError(f"{path}.{key}", "missing")
    try:
        return cast(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {val!r}") from None


def generate_datasets(raw: dict, seed=None, prefix="generator"):
    """Build ``(train, test, info)`` from a generator mapping.

    ``info`` holds derived facts worth recording in a manifest, such as the
    RK4 step-halving change for integrated plants.
    """
    if not isinstance(raw, dict):
        raise ConfigError(prefix, "expected a mapping")
    kind = raw.get("kind")
    if kind not in GENERATOR_KINDS:
        raise ConfigError(f"{prefix}.kind", f"expected one of {', '.join(GENERATOR_KINDS)}")
    seed = int(raw.get("seed", 0) if seed is None else seed)
    T_train = _number(raw, "T_train", prefix, cast=int)
    T_test = _number(raw, "T_test", prefix, cast=int)
    plant_raw = raw.get("plant", {})
    if kind == "boucwen":
        plant = _dataclass_from(bd.BoucWenParams, plant_raw, f"{prefix}.plant")
        f_s = plant.f_s
    elif kind == "friction_integrator":
        plant = _dataclass_from(bd.FrictionIntegratorParams, plant_raw, f"{prefix}.plant")
        f_s = plant.f_s
    else:
        f_s = _number(raw, "f_s", prefix, default=1.0)
        if not isinstance(plant_raw, dict):
            raise ConfigError(f"{prefix}.plant", "expected a mapping")
        g1 = _tf(plant_raw.get("g1"), f"{prefix}.plant.g1")
        g2 = _tf(plant_raw.get("g2"), f"{prefix}.plant.g2")
        nl = plant_raw.get("nonlinearity", "tanh")
        if nl not in NONLINEARITIES:
            raise ConfigError(f"{prefix}.plant.nonlinearity", f"expected one of {', '.join(NONLINEARITIES)}")
        f = NONLINEARITIES[nl]

    inp = raw.get("input", {})
    if not isinstance(inp, dict):
        raise ConfigError(f"{prefix}.input", "expected a mapping")
    band = inp.get("band", [0.0, f_s / 2])
    rms = _number(inp, "rms", f"{prefix}.input", default=1.0)
    s_in_train, s_in_test, s_noise_train, s_noise_test = _seeds(seed, 4)
    try:
        u_train = bd.generate_multisine(bd.MultisineConfig(T_train, f_s, tuple(band), rms, s_in_train))
        u_test = bd.generate_multisine(bd.MultisineConfig(T_test, f_s, tuple(band), rms, s_in_test))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix}.input", str(exc)) from None

    info = {"kind": kind, "seed": seed, "f_s": f_s}
    if kind != "wh":
        info["plant"] = asdict(plant)
    if kind == "wh":
        y_train = bd.simulate_wh_reference(g1, f, g2, u_train)
        y_test = bd.simulate_wh_reference(g1, f, g2, u_test)
    elif kind == "boucwen":
        y_train = bd.simulate_boucwen(plant, u_train)
        y_test = bd.simulate_boucwen(plant, u_test)
        info["rk4_step_halving_change"] = bd.step_halving_change(plant, u_train)
    else:
        # in closed loop the recorded input is the applied force, not the reference
        y_train, u_train = bd.simulate_friction_integrator(plant, u_train, return_force=True)
        y_test, u_test = bd.simulate_friction_integrator(plant, u_test, return_force=True)

    noise = raw.get("noise")
    if noise:
        if not isinstance(noise, dict) or len({"snr_db", "sigma"} & set(noise)) != 1:
            raise ConfigError(f"{prefix}.noise", "expected exactly one of snr_db or sigma")
        kw = {k: float(v) for k, v in noise.items() if k in ("snr_db", "sigma")}
        y_train = bd.add_noise(y_train, seed=s_noise_train, **kw)
        if noise.get("test", True):
            y_test = bd.add_noise(y_test, seed=s_noise_test, **kw)

    train = bd.Dataset(u_train, y_train, f_s=f_s, split=T_train)
    test = bd.Dataset(u_test, y_test, f_s=f_s, split=0)
    return train, test, info
