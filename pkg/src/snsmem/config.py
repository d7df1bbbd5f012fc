"""Run configuration: a versioned JSON schema and the desk-scale defaults.

A configuration is a dict with the sections ``grid``, ``kernel``,
``physics``, ``noise``, ``integration`` and ``experiment`` plus
``schema_version``.  Unknown keys anywhere are errors.  Field-valued entries
(forcing, noise profile, initial velocity) are small specs such as
``{"kind": "vortex", "amplitude": 1.0, "width": 0.5, "center": [3.14, 3.14]}``.
"""

from __future__ import annotations

import copy
import json
import math

import numpy as np

from .memory import make_kernel, steady_history
from .solver import SimConfig, SimState, make_state
from .spaces import SpectralField, SpectralGrid, analyze, make_grid, random_field
from .stochastic import build_ledger
from .trilinear import measure_ladyzhenskaya_constant

SCHEMA_VERSION = 1
ENV_PREFIX = "SNSMEM_"

_CENTER = [math.pi, math.pi]

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "grid": {"L": 2.0 * math.pi, "N": 32},
    "kernel": {"delta": 1.0},
    "physics": {
        "nu": 0.05,
        "forcing": {"kind": "vortex_forcing", "amplitude": 1.0, "width": 0.5, "center": _CENTER},
        "noise_profile": {"kind": "vortex", "amplitude": 0.3, "width": 1.0, "center": _CENTER},
    },
    "noise": {"epsilon": 0.0, "sigma": None, "seed": 0, "T_trunc": None, "c_hat": None},
    "integration": {"dt": 1e-3, "t_end": 1.0, "scheme": "cubic", "n_nodes": 64, "quad_order": 2,
                    "sample_every": 10, "checkpoint_every": 0},
    "experiment": {
        "initial": {"kind": "zero"},
        "n_members": 32,
        "radius": 10.0,
        "cloud_seed": 0,
        "horizons": [10.0, 15.0, 20.0],
        "tol": 1e-3,
        "epsilons": [1.0, 0.5, 0.2, 0.1],
        "seeds": [0, 1, 2, 3],
        "reference_T": 40.0,
        "reference_every": 5.0,
    },
}

_FIELD_KEYS = {
    "zero": set(),
    "vortex": {"amplitude", "width", "center"},
    "vortex_forcing": {"amplitude", "width", "center"},
    "random": {"seed", "slope", "energy"},
    "steady": set(),
}


class ConfigError(ValueError):
    """Schema violation; the message names the offending key."""


def _check_keys(section: dict, allowed: dict | set, where: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown config key '{where}{key}'")


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    _check_keys(over, base, where)
    for k, v in over.items():
        if isinstance(base[k], dict) and k not in ("forcing", "noise_profile", "initial"):
            if not isinstance(v, dict):
                raise ConfigError(f"config key '{where}{k}' must be a section")
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_field_spec(spec, where: str):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError(f"config key '{where}' needs a 'kind'")
    kind = spec["kind"]
    if kind not in _FIELD_KEYS:
        raise ConfigError(f"config key '{where}.kind' has unknown value {kind!r}")
    _check_keys({k: 0 for k in spec if k != "kind"}, _FIELD_KEYS[kind], f"{where}.")


def load_config(raw: dict | None = None) -> dict:
    """Validate ``raw`` and fill defaults.

    A run manifest is accepted too: its ``config`` entry is used.
    """
    raw = {} if raw is None else dict(raw)
    if "config" in raw and "manifest_version" in raw:
        raw = dict(raw["config"] or {})
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    cfg = _merge(DEFAULTS, raw)
    for name in ("forcing", "noise_profile"):
        _check_field_spec(cfg["physics"][name], f"physics.{name}")
    _check_field_spec(cfg["experiment"]["initial"], "experiment.initial")
    if cfg["physics"]["forcing"]["kind"] == "steady" or cfg["physics"]["noise_profile"]["kind"] == "steady":
        raise ConfigError("config key 'physics' cannot use kind 'steady'")
    return cfg


def read_config(path) -> dict:
    with open(path) as fh:
        return load_config(json.load(fh))


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)


# -- field builders ---------------------------------------------------------

def gaussian_stream(grid: SpectralGrid, amplitude: float, width: float, center) -> np.ndarray:
    """Periodised ``A exp(-d^2 / (2 w^2))`` on the collocation grid."""
    X, Y = grid.coords()
    L = grid.L
    dx = (X - center[0] + 0.5 * L) % L - 0.5 * L
    dy = (Y - center[1] + 0.5 * L) % L - 0.5 * L
    return amplitude * np.exp(-(dx * dx + dy * dy) / (2.0 * width * width))


def gaussian_vortex(grid: SpectralGrid, amplitude: float = 1.0, width: float = 0.5,
                    center=(math.pi, math.pi)) -> SpectralField:
    """Localised divergence-free bump ``grad^perp G`` of a Gaussian stream function.

    Axisymmetric, so ``B(u, u)`` is a pure gradient and projects to zero.
    """
    if width <= 0:
        raise ValueError("width must be positive")
    g = analyze(grid, gaussian_stream(grid, amplitude, width, center)[None])[0]
    coef = np.stack([-1j * grid.ky * g, 1j * grid.kx * g]) * grid.dealias
    return SpectralField(grid, coef)


def build_field(spec: dict, grid: SpectralGrid, nu: float = 0.05, kernel=None) -> SpectralField:
    """Field from a config spec (see ``_FIELD_KEYS`` for the parameters).

    ``vortex_forcing`` is ``(nu + kappa/delta) A u*`` with ``u*`` the Gaussian
    vortex, which makes ``(u*, s u*)`` a steady state of the unforced-noise
    system: the forcing is a localised bump whose response is a localised bump.
    """
    kind = spec["kind"]
    if kind == "zero":
        return SpectralField.zeros(grid)
    if kind == "random":
        return random_field(grid, int(spec.get("seed", 0)), float(spec.get("slope", 2.0)),
                            spec.get("energy")).truncate()
    u = gaussian_vortex(grid, float(spec.get("amplitude", 1.0)), float(spec.get("width", 0.5)),
                        spec.get("center", _CENTER))
    if kind == "vortex":
        return u
    if kind == "vortex_forcing":
        factor = nu + (kernel.kappa / kernel.delta if kernel is not None else 1.0)
        return u.stokes(2) * factor
    raise ConfigError(f"unknown field kind {kind!r}")


def steady_vortex(cfg: dict) -> SpectralField:
    """The velocity that ``vortex_forcing`` holds steady (zero if not applicable)."""
    spec = cfg["physics"]["forcing"]
    grid = make_grid(cfg["grid"]["L"], cfg["grid"]["N"])
    if spec["kind"] != "vortex_forcing":
        return SpectralField.zeros(grid)
    return gaussian_vortex(grid, spec["amplitude"], spec["width"], spec["center"])


_C_HAT_CACHE: dict = {}


def measured_c_hat(grid: SpectralGrid) -> float:
    key = (grid.L, grid.N)
    if key not in _C_HAT_CACHE:
        _C_HAT_CACHE[key] = measure_ladyzhenskaya_constant(grid)
    return _C_HAT_CACHE[key]


def build_sim_config(cfg: dict, epsilon: float | None = None) -> SimConfig:
    """SimConfig with a constants ledger attached (sigma from the ledger unless set)."""
    grid = make_grid(cfg["grid"]["L"], cfg["grid"]["N"])
    kernel = make_kernel(cfg["kernel"]["delta"])
    ph, nz, it = cfg["physics"], cfg["noise"], cfg["integration"]
    f = build_field(ph["forcing"], grid, ph["nu"], kernel)
    h = build_field(ph["noise_profile"], grid, ph["nu"], kernel)
    eps = float(nz["epsilon"] if epsilon is None else epsilon)
    c_hat = nz["c_hat"] if nz["c_hat"] is not None else measured_c_hat(grid)
    ledger = build_ledger(ph["nu"], grid.lambda1, kernel, h, c_hat, epsilon=eps, sigma=nz["sigma"])
    return SimConfig(grid=grid, kernel=kernel, nu=ph["nu"], f=f, h=h, epsilon=eps, dt=it["dt"],
                     t_end=it["t_end"], scheme=it["scheme"], sigma=nz["sigma"], ledger=ledger,
                     n_nodes=it["n_nodes"], quad_order=it["quad_order"], T_trunc=nz["T_trunc"],
                     sample_every=it["sample_every"])


def build_initial(cfg: dict, sim: SimConfig) -> SimState:
    """Initial physical state: zero, random velocity with empty history, or the steady vortex."""
    spec = cfg["experiment"]["initial"]
    if spec["kind"] == "steady":
        u = steady_vortex(cfg)
        return make_state(sim, u, steady_history(u, sim.s_nodes, sim.kernel, order=sim.quad_order))
    return make_state(sim, build_field(spec, sim.grid, sim.nu, sim.kernel))
