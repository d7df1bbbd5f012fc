"""Invariant and oracle checks behind ``snsmem verify`` and ``snsmem oracle``.

Each check returns a :class:`CheckResult`; ``value`` is the measured
quantity and ``tol`` the bound it must satisfy (``value <= tol``).  The
``fast`` level uses shortened runs that stay within a minute in total; the
``full`` level uses the desk-scale sizes of the acceptance suite.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from .config import build_sim_config, gaussian_vortex, load_config
from .diagnostics import absorbing_radius, dissipation_residual, linear_decay_check
from .memory import brute_force_history, exact_memory_oracle, steady_history
from .solver import energy_H, integrate, integrate_split, make_state
from .spaces import ModeSet, SpectralField, leray_project, make_grid, random_field
from .stochastic import batch_means_se, ou_pullback, ou_run, sample_wiener
from .trilinear import ConvectionWorkspace, direct_convolution_B, trilinear_b


@dataclass
class CheckResult:
    name: str
    criterion: int
    passed: bool
    value: float
    tol: float
    seconds: float
    detail: dict

    def as_dict(self) -> dict:
        return asdict(self)


def _result(name, criterion, value, tol, t0, **detail) -> CheckResult:
    value = float(value)
    return CheckResult(name, criterion, bool(value <= tol), value, float(tol),
                       time.perf_counter() - t0, detail)


def _desk(overrides=None, epsilon=0.0):
    cfg = load_config(overrides or {})
    return cfg, build_sim_config(cfg, epsilon=epsilon)


def _random_state(sim, seed, energy=1.0):
    v = random_field(sim.grid, seed, 2.0, energy=energy).truncate()
    w = random_field(sim.grid, seed + 1, 2.0, energy=energy).truncate()
    eta = steady_history(w, sim.s_nodes, sim.kernel, order=sim.quad_order)
    return make_state(sim, v, eta)


def check_divergence(steps: int) -> list[CheckResult]:
    t0 = time.perf_counter()
    _, sim = _desk({"integration": {"dt": 1e-3}})
    st = _random_state(sim, 3)
    fin = integrate(st, None, sim.with_(sample_every=steps, s_nodes=sim.s_nodes), t_end=steps * sim.dt).final
    div = fin.v.max_divergence() / fin.v.norm_V()
    out = [_result("divergence", 1, div, 1e-12, t0, steps=steps)]
    t0 = time.perf_counter()
    g = sim.grid
    c = random_field(g, 5, 1.0).coef + np.stack([g.kx, g.ky]) * random_field(g, 6, 1.0).coef[0]
    p1 = leray_project(g, c)
    p2 = leray_project(g, p1)
    out.append(_result("leray_idempotence", 1, np.max(np.abs(p2 - p1)) / np.max(np.abs(p1)), 1e-14, t0))
    return out


def check_trilinear(triples: int) -> list[CheckResult]:
    t0 = time.perf_counter()
    g = make_grid(2 * math.pi, 32)
    ws = ConvectionWorkspace(g)
    rng = np.random.default_rng(2024)
    worst_c = worst_s = 0.0
    for _ in range(triples):
        s = rng.integers(0, 2**31, size=3)
        u, v, w = (random_field(g, int(x), 1.5).truncate() for x in s)
        scale = u.norm_V() * v.norm_V() * w.norm_V()
        worst_c = max(worst_c, abs(trilinear_b(u, v, v, ws)) / scale)
        worst_s = max(worst_s, abs(trilinear_b(u, v, w, ws) + trilinear_b(u, w, v, ws)) / scale)
    out = [_result("cancellation", 2, worst_c, 1e-10, t0, triples=triples),
           _result("skew_symmetry", 2, worst_s, 1e-10, t0, triples=triples)]
    t0 = time.perf_counter()
    g16 = make_grid(2 * math.pi, 16)
    u, v = random_field(g16, 7, 1.0), random_field(g16, 8, 1.0)
    fast = ConvectionWorkspace(g16).B(u.coef, v.coef)
    ref = direct_convolution_B(u, v).coef
    out.append(_result("direct_convolution", 2, np.max(np.abs(fast - ref)) / np.max(np.abs(ref)), 1e-12, t0))
    return out


def _driven_record(steps: int):
    """Desk forcing switched on at rest; returns the config, final state and the velocity record."""
    _, sim = _desk({"integration": {"dt": 1e-3}})
    st = make_state(sim, SpectralField.zeros(sim.grid))
    rec = []
    cb = lambda t, v, eta, z: rec.append(np.array(v))
    fin = integrate(st, None, sim.with_(sample_every=1, s_nodes=sim.s_nodes), t_end=steps * sim.dt,
                    callback=cb).final
    return sim, fin, np.array(rec)


def memory_errors(sim, fin, rec) -> tuple[float, float]:
    """Relative errors of the quadrature convolution and of the transported history."""
    m = fin.eta.modes
    q = np.tensordot(fin.eta.weights, fin.eta.values, axes=([0], [0]))
    exact = exact_memory_oracle(rec, sim.kernel, sim.dt)[-1]
    quad_err = m.norm(q - exact, 2) / m.norm(exact, 2)
    bf = brute_force_history(rec, sim.dt, sim.s_nodes)
    d = m.inner(fin.eta.values - bf, fin.eta.values - bf, 1)
    r = m.inner(bf, bf, 1)
    return float(quad_err), math.sqrt(float(np.dot(fin.eta.weights, d) / np.dot(fin.eta.weights, r)))


def check_memory(steps: int) -> list[CheckResult]:
    t0 = time.perf_counter()
    sim, fin, rec = _driven_record(steps)
    quad_err, sl_err = memory_errors(sim, fin, rec)
    return [_result("memory_quadrature", 5, quad_err, 1e-3, t0, steps=steps, nodes=len(sim.s_nodes)),
            _result("memory_transport", 5, sl_err, 1e-3, t0, steps=steps, nodes=len(sim.s_nodes))]


def check_ou(steps: int) -> list[CheckResult]:
    t0 = time.perf_counter()
    # dt divides ln2/sigma, so the longer horizon is a whole number of steps
    sigma = 2.0
    dt = math.log(2) / sigma / 35
    z = ou_run(1.0, np.zeros(100), dt, sigma)
    decay = np.max(np.abs(z - np.exp(-sigma * dt * np.arange(101))))
    out = [_result("ou_noise_free", 6, decay, 1e-12, t0)]
    t0 = time.perf_counter()
    path = sample_wiener(11, 0.0, steps * dt, dt)
    zs = ou_run(ou_pullback(path, sigma, 0.0)[0], path.increments(), dt, sigma)[1:]
    z2, z4 = zs**2, zs**4
    nv = abs(z2.mean() - 1 / (2 * sigma)) / batch_means_se(z2)
    n4 = abs(z4.mean() - 3 / (4 * sigma**2)) / batch_means_se(z4)
    out.append(_result("ou_variance", 6, nv, 3.0, t0, steps=steps))
    out.append(_result("ou_fourth_moment", 6, n4, 3.0, t0, steps=steps))
    t0 = time.perf_counter()
    # the zero-start error at horizon T is exactly e^{-sigma T} z(t - T); normalising by
    # z(t - T) leaves the factor that must halve
    t_eval = steps * dt
    z_true = lambda t: ou_pullback(path, sigma, -t, -t + 40.0)[0]
    errs = []
    for T in (2.0, 2.0 + math.log(2) / sigma):
        z_T, _ = ou_pullback(path, sigma, -t_eval, -t_eval + T)
        errs.append(abs(z_T - z_true(t_eval)) / abs(z_true(t_eval - T)))
    ratio = errs[1] / errs[0]
    out.append(_result("ou_truncation_halving", 6, abs(ratio - 0.5), 1e-6, t0, ratio=ratio))
    return out


def check_energy_decay(T: float) -> list[CheckResult]:
    t0 = time.perf_counter()
    _, sim = _desk({"physics": {"forcing": {"kind": "zero"}}, "integration": {"dt": 1e-3}})
    st = _random_state(sim, 21)
    tr = integrate(st, None, sim.with_(sample_every=1, s_nodes=sim.s_nodes), t_end=T)
    E = tr["psi_H"] ** 2
    d0 = sim.ledger.delta0
    ratio = np.max(E / (np.exp(-2 * d0 * tr.t) * E[0]))
    res = dissipation_residual(tr, sim.ledger)
    return [_result("energy_decay", 3, ratio, 1.02, t0, T=T),
            _result("dissipation_residual", 3, res["max_residual"] / res["scale"], 1e-8, t0, T=T)]


def check_split(T: float) -> list[CheckResult]:
    t0 = time.perf_counter()
    _, sim = _desk({"integration": {"dt": 1e-3}}, epsilon=1.0)
    st = _random_state(sim, 31)
    path = sample_wiener(5, 0.0, T, sim.dt)
    sp = integrate_split(st, path, sim.with_(sample_every=int(round(T / sim.dt)), s_nodes=sim.s_nodes), t_end=T)
    ratio = linear_decay_check(sp, sim.ledger.delta0)
    return [_result("linear_split_decay", 4, ratio, 1.02, t0, T=T),
            _result("split_consistency", 4, float(sp.consistency[-1]), 1e-6, t0, T=T)]


def check_radius() -> list[CheckResult]:
    t0 = time.perf_counter()
    _, sim = _desk()
    path = sample_wiener(3, -1.0, 0.0, 0.01)
    r = absorbing_radius(path, sim.ledger, 0.0)
    return [_result("radius_eps0", 7, abs(r.r1 - 1.0 / sim.ledger.delta0), 1e-6, t0, r1=r.r1)]


def check_determinism(steps: int) -> list[CheckResult]:
    t0 = time.perf_counter()
    _, sim = _desk({"integration": {"dt": 1e-3}}, epsilon=0.5)
    st = make_state(sim, gaussian_vortex(sim.grid))
    path = sample_wiener(8, 0.0, steps * sim.dt, sim.dt)
    a = integrate(st, path, sim, t_end=steps * sim.dt).final
    b = integrate(st, path, sim, t_end=steps * sim.dt).final
    same = a.v.to_bytes() == b.v.to_bytes() and np.array_equal(a.eta.values, b.eta.values)
    return [_result("bit_identical", 9, 0.0 if same else 1.0, 0.0, t0, steps=steps)]


LEVELS = {
    "fast": {"divergence": 1000, "triples": 20, "memory": 1000, "ou": 10**5, "decay": 1.0,
             "split": 1.0, "determinism": 200},
    "full": {"divergence": 10**4, "triples": 100, "memory": 1000, "ou": 10**5, "decay": 5.0,
             "split": 1.0, "determinism": 1000},
}


def run_verify(level: str = "fast") -> dict:
    """The invariant suite; returns a JSON-ready report."""
    p = LEVELS[level]
    checks = (check_divergence(p["divergence"]) + check_trilinear(p["triples"]) + check_memory(p["memory"])
              + check_ou(p["ou"]) + check_energy_decay(p["decay"]) + check_split(p["split"])
              + check_radius() + check_determinism(p["determinism"]))
    return _report(level, checks)


def run_oracles(level: str = "fast") -> dict:
    """Only the oracle comparisons (trilinear, memory, OU)."""
    p = LEVELS[level]
    checks = check_trilinear(p["triples"]) + check_memory(p["memory"]) + check_ou(p["ou"])
    return _report(level, checks)


def _report(level, checks) -> dict:
    return {"level": level, "passed": all(c.passed for c in checks),
            "checks": [c.as_dict() for c in checks],
            "coverage": sorted({c.criterion for c in checks})}
