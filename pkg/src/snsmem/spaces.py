"""Periodic function spaces H, V and W on the square box [0, L]^2.

Velocity fields are stored spectrally in ``numpy.fft.rfft2`` layout with
shape ``(..., 2, N, N//2 + 1)`` and the normalisation

    u(x) = sum_k  u_hat(k) exp(i k.x),    u_hat = rfft2(u) / N^2,

so that Parseval reads ``int |u|^2 dx = L^2 sum_k |u_hat(k)|^2`` over the
full (Hermitian) spectrum.  The half spectrum stores each interior ``ky``
column once, hence the factor-two symmetry weights used in every inner
product below.

Mean and Nyquist modes are never populated: the mean is removed by the
mean-zero constraint and the Nyquist lines carry no real-valued,
divergence-free content that survives the Leray projector.

Leading axes in front of ``(2, N, N//2+1)`` are batch axes; all norms
return arrays over those axes (plain floats for a single field).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

_FIELD_MAGIC = b"SNSF"
# magic, divergence-free flag, L, N
_HEADER = struct.Struct("<4sIdI")


@dataclass(frozen=True, eq=False)
class SpectralGrid:
    """Wavenumber tables for an N x N periodic grid of side L.

    Args:
        L: box side length.
        N: number of collocation points per direction (even, >= 8).
    """

    L: float
    N: int
    kx: np.ndarray = field(init=False, repr=False)
    ky: np.ndarray = field(init=False, repr=False)
    k2: np.ndarray = field(init=False, repr=False)
    dealias: np.ndarray = field(init=False, repr=False)
    active: np.ndarray = field(init=False, repr=False)
    sym: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.L > 0 and np.isfinite(self.L)):
            raise ValueError(f"box length must be positive, got {self.L}")
        if int(self.N) != self.N or self.N < 8 or self.N % 2:
            raise ValueError(f"grid size must be an even integer >= 8, got {self.N}")
        N = int(self.N)
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "L", float(self.L))
        k0 = 2.0 * np.pi / self.L
        ix = np.fft.fftfreq(N, 1.0 / N)
        iy = np.arange(N // 2 + 1, dtype=float)
        IX, IY = np.meshgrid(ix, iy, indexing="ij")
        kx, ky = k0 * IX, k0 * IY
        # Nyquist row (ix = -N/2) and column (iy = N/2), plus the mean mode
        nyq = (np.abs(IX) == N // 2) | (IY == N // 2)
        mean = (IX == 0) & (IY == 0)
        active = ~(nyq | mean)
        # 2/3 rule, one decision per wavevector component
        kmax = k0 * N / 3.0
        dealias = (np.abs(kx) <= kmax) & (np.abs(ky) <= kmax) & active
        sym = np.where((IY == 0) | (IY == N // 2), 1.0, 2.0)
        for name, arr in (("kx", kx), ("ky", ky), ("k2", kx**2 + ky**2),
                          ("dealias", dealias), ("active", active), ("sym", sym)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __eq__(self, other):
        return isinstance(other, SpectralGrid) and (self.L, self.N) == (other.L, other.N)

    def __hash__(self):
        return hash((self.L, self.N))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (2, self.N, self.N // 2 + 1)

    @property
    def lambda1(self) -> float:
        """First eigenvalue of the Stokes operator, (2 pi / L)^2."""
        return (2.0 * np.pi / self.L) ** 2

    @property
    def dx(self) -> float:
        return self.L / self.N

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical collocation points as two (N, N) arrays (x along axis 0)."""
        x = np.arange(self.N) * self.dx
        return np.meshgrid(x, x, indexing="ij")

    def zeros(self, batch: tuple[int, ...] = ()) -> np.ndarray:
        return np.zeros(tuple(batch) + self.shape, dtype=complex)


def make_grid(L: float = 2.0 * np.pi, N: int = 32) -> SpectralGrid:
    """Build a :class:`SpectralGrid` (validates ``L > 0`` and even ``N``)."""
    return SpectralGrid(L, N)


class ModeSet:
    """A layout for spectral coefficients used by the time integrator.

    ``full`` keeps the rfft2 layout.  ``galerkin`` keeps only the modes that
    survive the 2/3 mask, flattened to shape ``(..., 2, n_modes)``.  The
    Galerkin layout is what the solver evolves: the nonlinear term is
    alias-free on it and the history arrays shrink by a factor ~2.4.
    """

    def __init__(self, grid: SpectralGrid, kind: str = "galerkin"):
        if kind not in ("full", "galerkin"):
            raise ValueError(f"unknown mode set {kind!r}")
        self.grid = grid
        self.kind = kind
        if kind == "full":
            self.index = None
            self.kx, self.ky, self.k2 = grid.kx, grid.ky, grid.k2
            self.sym = grid.sym * grid.active
        else:
            self.index = np.nonzero(grid.dealias)
            self.kx = grid.kx[self.index]
            self.ky = grid.ky[self.index]
            self.k2 = grid.k2[self.index]
            self.sym = grid.sym[self.index]
        self.mode_shape = self.k2.shape
        self.n_axes = 1 + len(self.mode_shape)

    def __eq__(self, other):
        return isinstance(other, ModeSet) and self.kind == other.kind and self.grid == other.grid

    def __hash__(self):
        return hash((self.kind, self.grid))

    @property
    def shape(self) -> tuple[int, ...]:
        return (2,) + tuple(self.mode_shape)

    def zeros(self, batch: tuple[int, ...] = ()) -> np.ndarray:
        return np.zeros(tuple(batch) + self.shape, dtype=complex)

    def gather(self, coef: np.ndarray) -> np.ndarray:
        """Full rfft2 coefficients -> this layout (drops masked modes)."""
        if self.index is None:
            return np.where(self.grid.active, coef, 0.0)
        return coef[..., self.index[0], self.index[1]]

    def scatter(self, vals: np.ndarray) -> np.ndarray:
        """This layout -> full rfft2 coefficients (zeros elsewhere)."""
        if self.index is None:
            return np.array(vals, dtype=complex)
        out = np.zeros(vals.shape[:-1] + (self.grid.N, self.grid.N // 2 + 1), dtype=complex)
        out[..., self.index[0], self.index[1]] = vals
        return out

    def inner(self, a: np.ndarray, b: np.ndarray, r: int = 0):
        """Real inner product with weight |k|^(2r); sums over component and mode axes."""
        w = self.grid.L**2 * self.sym * self.k2**r
        prod = (a * np.conj(b)).real * w
        return prod.sum(axis=tuple(range(-self.n_axes, 0)))

    def norm(self, a: np.ndarray, r: int = 0):
        return np.sqrt(self.inner(a, a, r))

    def leray(self, a: np.ndarray) -> np.ndarray:
        if self.index is None:
            return leray_project(self.grid, a)
        div = self.kx * a[..., 0, :] + self.ky * a[..., 1, :]
        return a - np.stack([self.kx * div, self.ky * div], axis=-2) / self.k2


# ---------------------------------------------------------------------------
# operations on raw coefficient arrays (full layout)


def leray_project(grid: SpectralGrid, coef: np.ndarray) -> np.ndarray:
    """Project onto divergence-free, mean-zero fields: u - k (k.u) / |k|^2."""
    coef = np.asarray(coef, dtype=complex)
    kx, ky = grid.kx, grid.ky
    k2 = np.where(grid.k2 > 0, grid.k2, 1.0)
    div = kx * coef[..., 0, :, :] + ky * coef[..., 1, :, :]
    out = np.empty_like(coef)
    out[..., 0, :, :] = coef[..., 0, :, :] - kx * div / k2
    out[..., 1, :, :] = coef[..., 1, :, :] - ky * div / k2
    return out * grid.active


def divergence(grid: SpectralGrid, coef: np.ndarray) -> np.ndarray:
    """Spectral divergence i k.u (full layout, one scalar per mode)."""
    return 1j * (grid.kx * coef[..., 0, :, :] + grid.ky * coef[..., 1, :, :])


def stokes_apply(grid: SpectralGrid, coef: np.ndarray, r: float = 2.0) -> np.ndarray:
    """Multiply each mode by |k|^r, so r=2 is the Stokes operator A = -Delta.

    ``r = 1`` gives A^(1/2), whose H-norm is the V-norm.  Inactive modes
    (mean, Nyquist) are set to zero.
    """
    k = np.sqrt(np.where(grid.active, grid.k2, 1.0))
    return coef * np.where(grid.active, k**r, 0.0)


def inner(grid: SpectralGrid, a: np.ndarray, b: np.ndarray, r: int = 0):
    """Inner product in H (r=0), V (r=1, gradient) or W (r=2, Stokes)."""
    w = grid.L**2 * grid.sym * grid.active * grid.k2**r
    return ((a * np.conj(b)).real * w).sum(axis=(-3, -2, -1))


def norm_H(grid, coef):
    return np.sqrt(inner(grid, coef, coef, 0))


def norm_V(grid, coef):
    return np.sqrt(inner(grid, coef, coef, 1))


def norm_W(grid, coef):
    return np.sqrt(inner(grid, coef, coef, 2))


def synthesize(grid: SpectralGrid, coef: np.ndarray) -> np.ndarray:
    """Spectral -> physical values on the collocation grid."""
    return np.fft.irfft2(coef * grid.N**2, s=(grid.N, grid.N))


def analyze(grid: SpectralGrid, values: np.ndarray) -> np.ndarray:
    """Physical -> spectral; the mean and Nyquist modes are discarded."""
    return np.fft.rfft2(values) / grid.N**2 * grid.active


def enforce_hermitian(grid: SpectralGrid, coef: np.ndarray) -> np.ndarray:
    """Make the ky=0 column consistent with a real field (c(-kx) = conj c(kx))."""
    out = np.array(coef, dtype=complex)
    N = grid.N
    i = np.arange(1, N // 2)
    out[..., N - i, 0] = np.conj(out[..., i, 0])
    out[..., 0, 0] = out[..., 0, 0].real
    return out * grid.active


def random_field(grid: SpectralGrid, seed: int, p: float = 2.0, energy: float | None = None) -> "SpectralField":
    """Random divergence-free field with |u_hat(k)| proportional to |k|^-p.

    Each mode is ``a(k) k_perp / |k|`` with a uniformly random phase; larger
    ``p`` concentrates the energy at low wavenumbers.

    Args:
        grid: target grid.
        seed: integer seed for ``numpy.random.default_rng``.
        p: spectral decay exponent.
        energy: if given, rescale so that ``||u||_H^2 == energy``.
    """
    rng = np.random.default_rng(seed)
    k = np.sqrt(np.where(grid.active, grid.k2, 1.0))
    phase = np.exp(2j * np.pi * rng.random(grid.k2.shape))
    amp = k ** (-float(p)) * phase
    coef = np.stack([-grid.ky / k * amp, grid.kx / k * amp])
    coef = enforce_hermitian(grid, coef * grid.active)
    out = SpectralField(grid, coef)
    if energy is not None:
        out = out * np.sqrt(energy / out.energy())
    return out


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A real vector field on the periodic box, held as rfft2 coefficients."""

    grid: SpectralGrid
    coef: np.ndarray
    divergence_free: bool = True

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=complex)
        if coef.shape[-3:] != self.grid.shape:
            raise ValueError(f"coefficient shape {coef.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "coef", coef)

    @classmethod
    def zeros(cls, grid: SpectralGrid) -> "SpectralField":
        return cls(grid, grid.zeros())

    @classmethod
    def from_physical(cls, grid: SpectralGrid, values: np.ndarray) -> "SpectralField":
        return cls(grid, analyze(grid, values), divergence_free=False)

    def _wrap(self, coef, divergence_free=None):
        flag = self.divergence_free if divergence_free is None else divergence_free
        return SpectralField(self.grid, coef, flag)

    def _check(self, other):
        if not isinstance(other, SpectralField):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")
        return other.coef

    def __add__(self, other):
        c = self._check(other)
        if c is NotImplemented:
            return c
        return self._wrap(self.coef + c, self.divergence_free and other.divergence_free)

    def __sub__(self, other):
        c = self._check(other)
        if c is NotImplemented:
            return c
        return self._wrap(self.coef - c, self.divergence_free and other.divergence_free)

    def __mul__(self, scalar):
        return self._wrap(self.coef * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self._wrap(-self.coef)

    def to_physical(self) -> np.ndarray:
        return synthesize(self.grid, self.coef)

    def leray(self) -> "SpectralField":
        return self._wrap(leray_project(self.grid, self.coef), True)

    def stokes(self, r: float = 2.0) -> "SpectralField":
        return self._wrap(stokes_apply(self.grid, self.coef, r))

    def inner(self, other: "SpectralField", r: int = 0) -> float:
        return float(inner(self.grid, self.coef, other.coef, r))

    def norm_H(self) -> float:
        return float(norm_H(self.grid, self.coef))

    def norm_V(self) -> float:
        return float(norm_V(self.grid, self.coef))

    def norm_W(self) -> float:
        return float(norm_W(self.grid, self.coef))

    def energy(self) -> float:
        return self.norm_H() ** 2

    def max_divergence(self) -> float:
        return float(np.max(np.abs(divergence(self.grid, self.coef))))

    def truncate(self) -> "SpectralField":
        """Keep only the modes inside the 2/3 dealiasing mask."""
        return self._wrap(self.coef * self.grid.dealias)

    # serialization: header (L, N) followed by interleaved real/imag float64

    def to_bytes(self) -> bytes:
        data = np.ascontiguousarray(self.coef, dtype="<c16")
        if data.shape != self.grid.shape:
            raise ValueError("only single (unbatched) fields can be serialized")
        head = _HEADER.pack(_FIELD_MAGIC, int(self.divergence_free), self.grid.L, self.grid.N)
        return head + data.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SpectralField":
        magic, flag, L, N = _HEADER.unpack_from(blob)
        if magic != _FIELD_MAGIC:
            raise ValueError("not a serialized spectral field")
        grid = SpectralGrid(L, N)
        if len(blob) != _HEADER.size + 16 * int(np.prod(grid.shape)):
            raise ValueError("field record size does not match its (L, N) header")
        coef = np.frombuffer(blob, dtype="<c16", offset=_HEADER.size).reshape(grid.shape)
        return cls(grid, coef.copy(), bool(flag))

    def to_json(self) -> str:
        flat = np.ascontiguousarray(self.coef).view(float).ravel()
        return json.dumps({"L": self.grid.L, "N": self.grid.N,
                           "divergence_free": self.divergence_free,
                           "coef": [float(x) for x in flat]})

    @classmethod
    def from_json(cls, text: str) -> "SpectralField":
        d = json.loads(text)
        grid = SpectralGrid(d["L"], d["N"])
        coef = np.asarray(d["coef"], dtype=float).view(complex).reshape(grid.shape)
        return cls(grid, coef, bool(d.get("divergence_free", True)))
