"""Pathwise integration of the transformed velocity/history system.

With ``u = v + eps y`` and ``y = h z(theta_t omega)`` the velocity solves

    v_t = -nu A v - int mu A eta ds - B(u, u) + f + eps (sigma y - nu A y),
    eta_t = -eta_s + u,

a random ODE: the noise only enters through the scalar coefficient ``z``.
Each step uses the exact viscous integrating factor ``E = exp(-nu |k|^2 dt)``
and a two-stage Heun correction for the memory, convection and forcing.
The stiff term ``eps sigma y`` is integrated exactly over the step using
``int sigma z dt = dW - dz`` (from ``dz = -sigma z dt + dW``), which keeps the
scheme usable for the very large ``sigma`` that the estimates call for.

All arrays in the stepper use the Galerkin layout of :class:`ModeSet`
(modes inside the 2/3 mask), so the convection term is alias-free.  Leading
axes are ensemble members; they share one noise path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .memory import (HistoryState, KernelSpec, Transport, add_drive, geometric_nodes,
                     quadrature_weights, shift_history)
from .spaces import ModeSet, SpectralField, SpectralGrid
from .stochastic import NoisePath, beta1, default_truncation, ou_series
from .trilinear import ConvectionWorkspace

BLOWUP_FACTOR = 1e12


class BlowUpError(RuntimeError):
    """Raised when the energy exceeds the guard threshold.

    The threshold is ``BLOWUP_FACTOR`` times the larger of the initial energy
    and the scale set by the forcing and the noise amplitude.
    """


@dataclass
class SimConfig:
    """Everything that defines a run apart from initial data and noise path.

    ``sigma`` may be left ``None`` when a ledger is attached (its ``sigma`` is
    used) or when ``epsilon == 0``.  ``s_nodes`` defaults to 64 geometric ages
    from ``dt`` to ``20/delta``.
    """

    grid: SpectralGrid
    kernel: KernelSpec
    nu: float
    f: SpectralField
    h: SpectralField
    epsilon: float = 0.0
    dt: float = 1e-3
    t_end: float = 1.0
    scheme: str = "cubic"
    sigma: float | None = None
    ledger: object | None = None
    s_nodes: np.ndarray | None = None
    n_nodes: int = 64
    quad_order: int = 2
    T_trunc: float | None = None
    sample_every: int = 1
    with_convection: bool = True
    with_memory: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not self.nu > 0:
            raise ValueError("viscosity must be positive")
        for name in ("f", "h"):
            fld = getattr(self, name)
            if fld.grid != self.grid:
                raise ValueError(f"{name} is defined on a different grid")
            if fld.max_divergence() > 1e-10 * max(fld.norm_V(), 1e-300):
                raise ValueError(f"{name} must be divergence-free")
        if self.s_nodes is None:
            self.s_nodes = geometric_nodes(self.dt, self.kernel.delta, self.n_nodes)
        self.s_nodes = np.asarray(self.s_nodes, dtype=float)

    @property
    def sigma_value(self) -> float:
        if self.sigma is not None:
            return float(self.sigma)
        if self.ledger is not None and np.isfinite(getattr(self.ledger, "sigma", np.nan)):
            return float(self.ledger.sigma)
        if self.epsilon == 0.0:
            return float("nan")
        raise ValueError("sigma is required when epsilon > 0 (set it or attach a ledger)")

    def with_(self, **kw) -> "SimConfig":
        if "dt" in kw and "s_nodes" not in kw:
            kw["s_nodes"] = None
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class SimState:
    """``psi = (v, eta)`` at time ``t``; ``v`` may carry leading ensemble axes."""

    t: float
    v: SpectralField
    eta: HistoryState

    @property
    def grid(self) -> SpectralGrid:
        return self.v.grid

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.v.coef.shape[:-3]

    def member(self, i) -> "SimState":
        return SimState(self.t, SpectralField(self.grid, self.v.coef[i]),
                        self.eta.replace(self.eta.values[i]))

    def __sub__(self, other: "SimState") -> "SimState":
        return SimState(self.t, self.v - other.v, self.eta.replace(self.eta.values - other.eta.values))

    def __add__(self, other: "SimState") -> "SimState":
        return SimState(self.t, self.v + other.v, self.eta.replace(self.eta.values + other.eta.values))


@dataclass
class SplitState:
    psi_L: SimState
    psi_N: SimState


def zero_history(config: SimConfig, batch: tuple[int, ...] = ()) -> HistoryState:
    modes = ModeSet(config.grid)
    vals = np.zeros(tuple(batch) + (len(config.s_nodes),) + modes.shape, dtype=complex)
    return HistoryState(config.s_nodes, quadrature_weights(config.kernel, config.s_nodes, config.quad_order),
                        vals, modes)


def make_state(config: SimConfig, v: SpectralField, eta: HistoryState | None = None, t: float = 0.0) -> SimState:
    """Initial state; ``v`` is truncated to the Galerkin modes, ``eta`` defaults to zero."""
    v = SpectralField(v.grid, v.coef * config.grid.dealias)
    if eta is None:
        eta = zero_history(config, v.coef.shape[:-3])
    return SimState(float(t), v, eta)


def energy_H(state: SimState):
    """``||psi||_H^2 = ||v||^2 + ||eta||_M^2`` (array over ensemble axes)."""
    m = state.eta.modes
    v = m.gather(state.v.coef)
    e_eta = m.inner(state.eta.values, state.eta.values, 1)
    return m.inner(v, v, 0) + np.tensordot(e_eta, state.eta.weights, axes=([-1], [0]))


def energy_H1(state: SimState):
    """``||v||_V^2 + ||eta||_{M1}^2``."""
    m = state.eta.modes
    v = m.gather(state.v.coef)
    e_eta = m.inner(state.eta.values, state.eta.values, 2)
    return m.inner(v, v, 1) + np.tensordot(e_eta, state.eta.weights, axes=([-1], [0]))


def recover_u(state: SimState, z: float, config: SimConfig) -> SpectralField:
    """Physical velocity ``u = v + eps h z``."""
    return state.v + config.h * (config.epsilon * float(z))


def rhs_v(state: SimState, z: float, config: SimConfig) -> dict[str, SpectralField]:
    """The five terms of the velocity equation and their sum (``"total"``).

    ``noise`` is ``eps sigma y``; ``forcing`` is ``f - eps nu A y``.
    """
    grid = config.grid
    ws = ConvectionWorkspace(grid)
    eps, sigma = config.epsilon, config.sigma_value if config.epsilon else 0.0
    y = config.h * float(z)
    u = state.v + y * eps
    k2 = state.eta.modes.k2
    q = np.tensordot(state.eta.weights, state.eta.values, axes=([0], [state.eta.node_axis]))
    terms = {
        "viscous": state.v.stokes(2) * (-config.nu),
        "memory": SpectralField(grid, -state.eta.modes.scatter(k2 * q)),
        "convection": SpectralField(grid, -ws.B(u.coef, u.coef)),
        "forcing": config.f - y.stokes(2) * (eps * config.nu),
        "noise": y * (eps * sigma) if eps else SpectralField.zeros(grid),
    }
    total = SpectralField.zeros(grid)
    for t in terms.values():
        total = total + t
    terms["total"] = total
    return terms


@dataclass
class Trajectory:
    """Sampled series (first axis = sample) plus optional stored states."""

    t: np.ndarray
    series: dict
    states: list = field(default_factory=list)
    final: SimState | None = None
    z_final: float = 0.0

    def __getitem__(self, key):
        return self.series[key]


SERIES = ("v_H", "v_V", "eta_M", "psi_H", "z", "beta1")


class Stepper:
    """Precomputed operators for one configuration; advances raw Galerkin arrays."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.modes = ModeSet(config.grid)
        self.ws = ConvectionWorkspace(config.grid)
        dt = config.dt
        k2 = self.modes.k2
        self.k2 = k2
        self.E = np.exp(-config.nu * k2 * dt)
        self.Eh = 0.5 * (1.0 + self.E)
        self.weights = quadrature_weights(config.kernel, config.s_nodes, config.quad_order)
        self.transport = Transport(config.s_nodes, dt, config.scheme)
        self.a = self.transport.a
        self.wa = float(np.dot(self.weights, self.a))
        self.f = self.modes.gather(config.f.coef)
        self.h = self.modes.gather(config.h.coef)
        self.Ah = k2 * self.h
        self.eps = float(config.epsilon)
        self.mem_on = 1.0 if config.with_memory else 0.0

    # -- pieces ---------------------------------------------------------

    def phys(self, u):
        return self.ws.velocity(self.modes.scatter(u))

    def convect(self, adv_phys, w):
        if not self.config.with_convection:
            return np.zeros_like(w)
        return self.ws.B_modes(self.modes, adv_phys, w)

    def quad(self, eta):
        return np.tensordot(eta, self.weights, axes=([-3], [0])) if eta.ndim >= 3 else None

    def shift(self, eta, tau=None, U=None):
        if tau is None:
            idx, w, kw = self.transport.idx, self.transport.w, None
        else:
            idx, w, kw = self.transport.at(tau)
        return shift_history(eta, idx, w, self.weights, self.modes.n_axes, kw, U)

    def add_drive(self, base, drive):
        return add_drive(base, self.a, drive, self.modes.n_axes)

    # -- one step of one subsystem -------------------------------------------

    def advance(self, v, eta, Q, zn, zn1, dW, adv=None, forced=True, tau=None, U=None):
        """One Heun/integrating-factor step.

        Args:
            v, eta, Q: velocity, history values and ``sum_j w_j eta_j``.
            zn, zn1, dW: OU value at both ends of the step and the increment.
            adv: ``(u_n, u_star)`` physical advecting velocities from the full
                system, or ``None`` for the self-advecting full system.
            forced: include ``f`` and every ``eps y`` contribution.
            tau, U: elapsed time since the history was given and the history
                value at that age (see :class:`~snsmem.memory.Transport`);
                ``None`` uses the plain stencils.

        Returns:
            ``(v, eta, Q, U, (u_n_phys, u_star_phys))``.
        """
        dt, E, eps = self.config.dt, self.E, self.eps
        ey_n = eps * zn * self.h if forced else 0.0
        ey_1 = eps * zn1 * self.h if forced else 0.0
        w_n = v + ey_n
        u_n_phys = self.phys(w_n) if adv is None else adv[0]
        F_n = (self.f - self.config.nu * self.k2 * ey_n) if forced else 0.0
        N0 = -self.mem_on * self.k2 * Q - self.convect(u_n_phys, w_n) + F_n
        noise = self.Eh * (eps * (dW - (zn1 - zn))) * self.h if (forced and eps) else 0.0

        vs = E * (v + dt * N0) + noise
        base, Qb = self.shift(eta, tau, U)
        Qs = Qb + self.wa * w_n
        w_s = vs + ey_1
        u_s_phys = self.phys(w_s) if adv is None else adv[1]
        F_1 = (self.f - self.config.nu * self.k2 * ey_1) if forced else 0.0
        N1 = -self.mem_on * self.k2 * Qs - self.convect(u_s_phys, w_s) + F_1

        v_new = E * v + 0.5 * dt * (E * N0 + N1) + noise
        drive = 0.5 * (w_n + w_s)
        eta_new = self.add_drive(base, drive)
        Q_new = Qb + self.wa * drive
        U_new = None if U is None else U + dt * drive
        return v_new, eta_new, Q_new, U_new, (u_n_phys, u_s_phys)

    # -- diagnostics on raw arrays ------------------------------------------

    def energies(self, v, eta):
        m = self.modes
        eH = m.inner(v, v, 0)
        eV = m.inner(v, v, 1)
        eM = np.tensordot(m.inner(eta, eta, 1), self.weights, axes=([-1], [0]))
        return eH, eV, eM


def _noise_schedule(config: SimConfig, path: NoisePath | None, n_start: int, n_steps: int):
    """``z`` at every step boundary and the increments; zeros when eps = 0."""
    if config.epsilon == 0.0 or path is None:
        if config.epsilon != 0.0:
            raise ValueError("a noise path is required when epsilon > 0")
        return np.zeros(n_steps + 1), np.zeros(n_steps)
    if not math.isclose(path.dt, config.dt, rel_tol=1e-12):
        raise ValueError(f"path step {path.dt} differs from solver step {config.dt}")
    sigma = config.sigma_value
    T = config.T_trunc if config.T_trunc is not None else default_truncation(sigma, config.dt)
    return ou_series(path, sigma, n_start, n_steps, T)


def _energy_floor(config: SimConfig) -> float:
    """Energy scale set by the data, so runs started from rest are not flagged at once."""
    lam = config.grid.lambda1
    forced = (config.f.norm_H() / (config.nu * lam)) ** 2
    noisy = (config.epsilon * config.h.norm_H()) ** 2
    return max(forced, noisy, 1e-300)


def _check_initial(config: SimConfig, state: SimState):
    if state.grid != config.grid:
        raise ValueError("initial state lives on a different grid")
    if not np.array_equal(state.eta.s_nodes, config.s_nodes):
        raise ValueError("initial history uses different age nodes than the configuration")
    if state.eta.modes.kind != "galerkin":
        raise ValueError("solver histories must use the Galerkin mode set")


def integrate(initial: SimState, path: NoisePath | None, config: SimConfig,
              t_end: float | None = None, store_states: bool = False,
              callback=None) -> Trajectory:
    """Advance ``initial`` to ``t_end`` (default ``config.t_end``) along ``path``.

    The run covers step indices ``n = round(t/dt)`` so that a state at time
    ``t`` always meets the same noise increments.  Samples are taken every
    ``config.sample_every`` steps (and at the end).
    """
    _check_initial(config, initial)
    st = Stepper(config)
    dt = config.dt
    t_end = config.t_end if t_end is None else t_end
    n_start = int(round(initial.t / dt))
    n_steps = int(round(t_end / dt)) - n_start
    if n_steps < 0:
        raise ValueError("t_end lies before the initial time")
    zs, dWs = _noise_schedule(config, path, n_start, n_steps)

    v = st.modes.gather(initial.v.coef)
    eta = np.array(initial.eta.values)
    Q = st.quad(eta)
    U = np.zeros_like(v)
    rec_t, rec = [], {k: [] for k in SERIES}
    states = []
    e0 = None

    def sample(n):
        nonlocal e0
        eH, eV, eM = st.energies(v, eta)
        z = zs[n]
        rec_t.append((n_start + n) * dt)
        rec["v_H"].append(np.sqrt(eH))
        rec["v_V"].append(np.sqrt(eV))
        rec["eta_M"].append(np.sqrt(eM))
        rec["psi_H"].append(np.sqrt(eH + eM))
        rec["z"].append(z)
        rec["beta1"].append(beta1(z))
        tot = eH + eM
        if e0 is None:
            e0 = np.maximum(tot, _energy_floor(config))
        if not np.all(np.isfinite(tot)) or np.any(tot > BLOWUP_FACTOR * e0):
            raise BlowUpError(f"energy exceeded {BLOWUP_FACTOR:g} x initial at t={(n_start + n) * dt:.6g}")
        if store_states:
            states.append(_to_state(st, (n_start + n) * dt, v, eta, initial.eta))
        if callback is not None:
            callback((n_start + n) * dt, v, eta, z)

    sample(0)
    for n in range(n_steps):
        v, eta, Q, U, _ = st.advance(v, eta, Q, zs[n], zs[n + 1], dWs[n], tau=n * dt, U=U)
        if (n + 1) % config.sample_every == 0 or n + 1 == n_steps:
            sample(n + 1)
    final = _to_state(st, (n_start + n_steps) * dt, v, eta, initial.eta)
    series = {k: np.array(x) for k, x in rec.items()}
    return Trajectory(np.array(rec_t), series, states, final, float(zs[-1]))


def _to_state(st: Stepper, t, v, eta, like: HistoryState) -> SimState:
    return SimState(float(t), SpectralField(st.config.grid, st.modes.scatter(v)), like.replace(np.array(eta)))


def integrate_deterministic(initial: SimState, config: SimConfig, **kw) -> Trajectory:
    """The limiting deterministic system (``eps = 0``), through the same stepper."""
    if config.epsilon != 0.0:
        config = config.with_(epsilon=0.0, s_nodes=config.s_nodes)
    return integrate(initial, None, config, **kw)


@dataclass
class SplitTrajectory:
    full: Trajectory
    linear: Trajectory
    nonlinear: Trajectory
    consistency: np.ndarray
    split: SplitState | None = None


def integrate_split(initial: SimState, path: NoisePath | None, config: SimConfig,
                    t_end: float | None = None, check_times=()) -> SplitTrajectory:
    """Co-evolve ``psi``, ``psi_L`` (from ``psi_0``) and ``psi_N`` (from 0).

    Both split systems are advected by the full ``u = v + eps y`` at each
    stage.  ``consistency[i] = ||psi - psi_L - psi_N|| / ||psi||`` at each
    sample, with ``psi_N`` integrated directly (not formed as a difference).
    """
    _check_initial(config, initial)
    st = Stepper(config)
    dt = config.dt
    t_end = config.t_end if t_end is None else t_end
    n_start = int(round(initial.t / dt))
    n_steps = int(round(t_end / dt)) - n_start
    zs, dWs = _noise_schedule(config, path, n_start, n_steps)

    v = st.modes.gather(initial.v.coef)
    eta = np.array(initial.eta.values)
    Q = st.quad(eta)
    vL, etaL, QL = v.copy(), eta.copy(), Q.copy()
    vN, etaN, QN = np.zeros_like(v), np.zeros_like(eta), np.zeros_like(Q)
    U, UL, UN = np.zeros_like(v), np.zeros_like(v), np.zeros_like(v)

    recs = {name: {"t": [], **{k: [] for k in SERIES}} for name in ("full", "linear", "nonlinear")}
    cons = []

    def sample(n):
        t = (n_start + n) * dt
        z = zs[n]
        for name, (a, b) in (("full", (v, eta)), ("linear", (vL, etaL)), ("nonlinear", (vN, etaN))):
            eH, eV, eM = st.energies(a, b)
            r = recs[name]
            r["t"].append(t)
            r["v_H"].append(np.sqrt(eH))
            r["v_V"].append(np.sqrt(eV))
            r["eta_M"].append(np.sqrt(eM))
            r["psi_H"].append(np.sqrt(eH + eM))
            r["z"].append(z)
            r["beta1"].append(beta1(z))
        dv, de = v - vL - vN, eta - etaL - etaN
        num = st.energies(dv, de)
        den = st.energies(v, eta)
        cons.append(np.sqrt((num[0] + num[2]) / np.maximum(den[0] + den[2], 1e-300)))

    sample(0)
    for n in range(n_steps):
        args = (zs[n], zs[n + 1], dWs[n])
        tau = n * dt
        v1, eta1, Q1, U, adv = st.advance(v, eta, Q, *args, tau=tau, U=U)
        vL, etaL, QL, UL, _ = st.advance(vL, etaL, QL, *args, adv=adv, forced=False, tau=tau, U=UL)
        vN, etaN, QN, UN, _ = st.advance(vN, etaN, QN, *args, adv=adv, forced=True, tau=tau, U=UN)
        v, eta, Q = v1, eta1, Q1
        if (n + 1) % config.sample_every == 0 or n + 1 == n_steps:
            sample(n + 1)

    def traj(name, a, b):
        r = recs[name]
        series = {k: np.array(r[k]) for k in SERIES}
        return Trajectory(np.array(r["t"]), series, [], _to_state(st, t_end, a, b, initial.eta), float(zs[-1]))

    full = traj("full", v, eta)
    lin = traj("linear", vL, etaL)
    non = traj("nonlinear", vN, etaN)
    return SplitTrajectory(full, lin, non, np.array(cons), SplitState(lin.final, non.final))
