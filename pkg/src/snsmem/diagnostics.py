"""Energy functionals, residuals of the energy inequality, far-field
(cutoff-weighted) energies and the random absorbing radii.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .solver import SimConfig, SimState, SplitTrajectory, Trajectory, energy_H, energy_H1
from .spaces import SpectralField, SpectralGrid
from .stochastic import ConstantsLedger, NoisePath, beta1, default_truncation, ou_series

__all__ = [
    "energy_H", "energy_H1", "dissipation_residual", "free_constant", "linear_decay_check",
    "CutoffSpec", "make_cutoff", "cutoff_energy_H", "tail_energy", "generalized_poincare_check",
    "AbsorbingRadii", "absorbing_radius", "radius_series", "absorbing_set_check",
]


# ---------------------------------------------------------------------------
# energy inequality


def free_constant(config: SimConfig, ledger: ConstantsLedger, inflate: float = 2.0) -> float:
    """Forcing-dependent constant ``C_free`` of the energy inequality.

    Collects the terms that the Young/Poincare steps leave behind (force,
    memory acting on ``y``, convection of ``y`` and the viscous ``A y``
    term), with ``d/dt`` carried without the factor one half, then inflates
    by ``inflate``.  ``ledger`` supplies the measured constants.
    """
    nu, lam = ledger.nu, ledger.lambda1
    ct, ch = ledger.c_tilde, ledger.c_hat
    f_part = 2.0 * config.f.norm_H() ** 2 / (nu * lam)
    y_part = 0.0
    if config.epsilon:
        y_part = 2.0 * (ledger.kappa * ct**2 / ledger.delta
                        + ch**2 * ct**4 / (nu * lam)
                        + 4.0 * ct**2 / (nu * lam))
    return inflate * max(f_part, y_part)


def dissipation_residual(traj: Trajectory, ledger: ConstantsLedger, epsilon: float = 0.0,
                         C_free: float = 0.0, rtol: float = 1e-8) -> dict:
    """Residual of the discrete energy inequality between consecutive samples.

    ``res_n = (E_{n+1} - E_n)/dt + (nu/2) ||v||_V^2 - (-delta0 + c0 eps^2 beta1) E - C_free (1 + eps^2 beta1)``
    with the last three terms averaged over the two ends of the interval.
    ``scale`` is the largest energy along the run; ``fraction_ok`` counts
    steps with ``res_n <= rtol * scale``.
    """
    t = np.asarray(traj.t)
    E = np.asarray(traj["psi_H"]) ** 2
    V = np.asarray(traj["v_V"]) ** 2
    b = np.asarray(traj["beta1"], dtype=float)
    if E.ndim > 1:
        b = b.reshape(b.shape + (1,) * (E.ndim - 1))
    dt = np.diff(t).reshape((-1,) + (1,) * (E.ndim - 1))
    mid = lambda a: 0.5 * (a[1:] + a[:-1])
    e2 = epsilon * epsilon
    res = (np.diff(E, axis=0) / dt + 0.5 * ledger.nu * mid(V)
           - (-ledger.delta0 + ledger.c0 * e2 * mid(b)) * mid(E)
           - C_free * (1.0 + e2 * mid(b)))
    scale = float(np.max(E)) if E.size else 0.0
    ok = res <= rtol * scale
    return {"t": t[1:], "residual": res, "scale": scale,
            "fraction_ok": float(np.mean(ok)) if ok.size else 1.0,
            "max_residual": float(np.max(res)) if res.size else -C_free}


def linear_decay_check(split: SplitTrajectory | Trajectory, delta0: float) -> float:
    """``max_t ||psi_L(t)||^2 / (e^{-2 delta0 t} ||psi_L(0)||^2)`` (0 for zero data)."""
    tr = split.linear if isinstance(split, SplitTrajectory) else split
    E = np.asarray(tr["psi_H"]) ** 2
    t = np.asarray(tr.t) - tr.t[0]
    if np.all(E[0] == 0):
        return 0.0
    t = t.reshape((-1,) + (1,) * (E.ndim - 1))
    return float(np.max(E / (np.exp(-2.0 * delta0 * t) * E[0])))


# ---------------------------------------------------------------------------
# cutoff weights and far field


def smoothstep5(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * x * (10.0 + x * (-15.0 + 6.0 * x))


@dataclass(frozen=True)
class CutoffSpec:
    """``rho(|x - x_c|^2 / k^2)`` with ``rho = 0`` on ``[0, 1]`` and ``1`` on ``[2, inf)``."""

    k: float
    x_c: tuple[float, float]
    sup_drho: float = 1.875

    def rho(self, s):
        return smoothstep5(np.asarray(s, dtype=float) - 1.0)

    def drho(self, s):
        x = np.clip(np.asarray(s, dtype=float) - 1.0, 0.0, 1.0)
        return 30.0 * x * x * (1.0 - x) ** 2

    def weight(self, grid: SpectralGrid) -> np.ndarray:
        d2 = periodic_distance2(grid, self.x_c)
        return self.rho(d2 / self.k**2)


def make_cutoff(k: float, x_c, grid: SpectralGrid | None = None) -> CutoffSpec:
    if not k > 0:
        raise ValueError("cutoff radius must be positive")
    spec = CutoffSpec(float(k), (float(x_c[0]), float(x_c[1])))
    # sup |rho'| by dense sampling of the bridge; equals 15/8 for the quintic
    s = np.linspace(1.0, 2.0, 20001)
    return CutoffSpec(spec.k, spec.x_c, float(np.max(spec.drho(s))))


def periodic_distance2(grid: SpectralGrid, x_c) -> np.ndarray:
    """Squared minimum-image distance from ``x_c`` to every collocation point."""
    X, Y = grid.coords()
    L = grid.L
    dx = (X - x_c[0] + 0.5 * L) % L - 0.5 * L
    dy = (Y - x_c[1] + 0.5 * L) % L - 0.5 * L
    return dx * dx + dy * dy


def _grad_phys(grid: SpectralGrid, coef: np.ndarray) -> np.ndarray:
    """``d_i u_j`` on the grid, shape ``(..., 2, 2, N, N)``."""
    ik = np.stack([1j * grid.kx, 1j * grid.ky])
    c = ik[:, None] * coef[..., None, :, :, :]
    return np.fft.irfft2(c * grid.N**2, s=(grid.N, grid.N))


def _weighted_energy(state: SimState, weight: np.ndarray):
    grid = state.grid
    cell = grid.dx**2
    v = state.v.to_physical()
    ev = (weight * (v * v).sum(axis=-3)).sum(axis=(-2, -1)) * cell
    full = state.eta.modes.scatter(state.eta.values)
    g = _grad_phys(grid, full)
    eg = (weight * (g * g).sum(axis=(-4, -3))).sum(axis=(-2, -1)) * cell
    return ev + np.tensordot(eg, state.eta.weights, axes=([-1], [0]))


def cutoff_energy_H(state: SimState, cutoff: CutoffSpec):
    """``int rho |v|^2 + sum_j w_j int rho |grad eta_j|^2`` by grid quadrature."""
    return _weighted_energy(state, cutoff.weight(state.grid))


def tail_energy(state: SimState, R: float, x_c):
    """The same energy restricted to ``|x - x_c| >= R`` (sharp indicator)."""
    d2 = periodic_distance2(state.grid, x_c)
    return _weighted_energy(state, (d2 >= R * R).astype(float))


def generalized_poincare_check(u: SpectralField, cutoff: CutoffSpec) -> tuple[float, float, float]:
    """``(lhs, rhs, rhs - lhs)`` for ``(lambda1/4) int rho |u|^2 <= int rho |grad u|^2``."""
    grid = u.grid
    w = cutoff.weight(grid)
    cell = grid.dx**2
    up = u.to_physical()
    g = _grad_phys(grid, u.coef)
    lhs = 0.25 * grid.lambda1 * float((w * (up * up).sum(axis=0)).sum() * cell)
    rhs = float((w * (g * g).sum(axis=(0, 1))).sum() * cell)
    return lhs, rhs, rhs - lhs


# ---------------------------------------------------------------------------
# absorbing radii


@dataclass
class AbsorbingRadii:
    r1: float
    r2: float
    r3: float
    r4: float
    r_hat: float
    T_trunc: float
    dt: float
    truncation_error: float
    c1: float = 1.0

    def as_dict(self) -> dict:
        return asdict(self)


def _beta_on_past(path: NoisePath, sigma: float, epsilon: float, n: int) -> np.ndarray:
    """``beta1(theta_s omega)`` at ``s = -n dt .. 0``; zeros when ``eps = 0``."""
    if epsilon == 0.0:
        return np.zeros(n + 1)
    z, _ = ou_series(path, sigma, -n, n, default_truncation(sigma, path.dt))
    return beta1(z)


def _weighted_past_integral(b, dt, rate, coef, extra):
    """Trapezoid rule for ``int_{-T}^0 e^{rate s + coef int_s^0 b} extra(s) ds``."""
    # inner integral I(s) = int_s^0 b, accumulated once from the right
    inner = np.zeros_like(b)
    inner[:-1] = np.cumsum((0.5 * dt * (b[1:] + b[:-1]))[::-1])[::-1]
    s = (np.arange(len(b)) - (len(b) - 1)) * dt
    expo = rate * s + coef * inner
    vals = np.exp(expo) * extra
    return float(np.trapezoid(vals, dx=dt)), float(vals[0]), float(np.exp(expo[0]))


def radius_series(b: np.ndarray, dt: float, delta0: float, c0: float, epsilon: float) -> np.ndarray:
    """``r1(theta_s omega)`` along a grid, from the linear ODE it satisfies.

    ``dR/ds = (1 + eps^2 b) - (delta0 - c0 eps^2 b) R`` with ``R = 0`` at the
    first sample; each step is exact for coefficients frozen at the midpoint.
    """
    e2 = epsilon * epsilon
    R = np.zeros(len(b))
    bm = 0.5 * (b[1:] + b[:-1])
    lam = delta0 - c0 * e2 * bm
    src = 1.0 + e2 * bm
    decay = np.exp(-lam * dt)
    gain = np.where(np.abs(lam * dt) > 1e-12, -np.expm1(-lam * dt) / np.where(lam == 0, 1.0, lam), dt)
    for n in range(len(b) - 1):
        R[n + 1] = decay[n] * R[n] + gain[n] * src[n]
    return R


def absorbing_radius(path: NoisePath, ledger: ConstantsLedger, epsilon: float,
                     T_trunc: float | None = None, c1: float = 1.0) -> AbsorbingRadii:
    """Random radii ``r1..r4`` at the fibre ``omega`` by trapezoid quadrature on ``[-T_trunc, 0]``.

    ``r_hat = max_s beta1(theta_s omega) e^{-(delta0/2)|s|}`` is the empirical
    tempered envelope.  ``r3`` uses ``r1(theta_s omega)`` from
    :func:`radius_series` and the unspecified constant ``c1`` (default 1).
    The truncation error is estimated by the integrand at ``-T_trunc`` over
    the effective decay rate.
    """
    d0 = ledger.delta0
    T = T_trunc if T_trunc is not None else 40.0 / d0
    dt = path.dt
    n = int(round(T / dt))
    sigma = ledger.sigma if epsilon else 1.0
    b = _beta_on_past(path, sigma, epsilon, n)
    e2 = epsilon * epsilon
    r1, edge1, _ = _weighted_past_integral(b, dt, d0, ledger.c0 * e2, 1.0 + e2 * b)
    s = (np.arange(n + 1) - n) * dt
    r_hat = float(np.max(b * np.exp(-0.5 * d0 * np.abs(s))))
    R = radius_series(b, dt, d0, ledger.c0, epsilon)
    extra3 = 1.0 + e2 * b + c1 * e2 * b * (R + 1.0)
    r3, edge3, _ = _weighted_past_integral(b, dt, d0, ledger.c5 * e2 * e2, extra3)
    rate = max(d0 - ledger.c0 * e2 * float(np.mean(b)), 1e-12)
    trunc = max(edge1, edge3) / rate
    return AbsorbingRadii(r1=r1, r2=r1 + e2 * r_hat, r3=r3, r4=r3 + e2 * r_hat,
                          r_hat=r_hat, T_trunc=n * dt, dt=dt, truncation_error=trunc, c1=c1)


def absorbing_set_check(times: np.ndarray, energies: np.ndarray, r2: np.ndarray | float,
                        safety: float = 2.0, late_fraction: float = 0.25) -> dict:
    """Smallest working ``C`` and absorption time for ``||phi||^2 <= C (r2 + 1)``.

    Args:
        times: sample times (elapsed since the ensemble started).
        energies: ``(n_times, n_members)`` physical energies.
        r2: radius at each sample fibre (array) or a constant.
        safety: ``C`` is ``safety`` times the worst late-time ratio.
        late_fraction: trailing share of the run used to size ``C``.
    """
    E = np.asarray(energies, dtype=float)
    if E.ndim == 1:
        E = E[:, None]
    r = np.broadcast_to(np.asarray(r2, dtype=float), (E.shape[0],))
    ratio = E.max(axis=1) / (r + 1.0)
    tail = ratio[int(math.floor((1.0 - late_fraction) * len(ratio))):]
    C = safety * float(np.max(tail)) if tail.size else 0.0
    bad = np.nonzero(ratio > C)[0]
    if C == 0.0:
        T_abs = float(times[0])
    elif bad.size == 0:
        T_abs = float(times[0])
    else:
        T_abs = float(times[min(bad[-1] + 1, len(times) - 1)])
    T_abs -= float(times[0])
    return {"C": C, "T_absorb": T_abs, "finite": bool(np.isfinite(C) and np.isfinite(T_abs)),
            "max_ratio": float(np.max(ratio)), "n_members": int(E.shape[1])}
