"""Flat-torus grids, scalar and Hermitian fields, and derivative backends.

The domain is the real torus R^{2n}/Z^{2n} seen as a complex n-torus with
coordinates z_j = x_j + i y_j, n in {1, 2}.  Real axes are stored in the
order (x_1, y_1, ..., x_n, y_n) and every axis carries N equispaced points
x = k/N.  The reference Kahler form is normalised to the identity matrix in
this frame, so "the potential phi is admissible" means I + H(phi) >= 0
pointwise, where H is the complex Hessian

    H_jk(phi) = d^2 phi / dz_j dzbar_k
              = 1/4 [ (d_{x_j} d_{x_k} + d_{y_j} d_{y_k}) phi
                      + i (d_{x_j} d_{y_k} - d_{y_j} d_{x_k}) phi ].

Classical normalisation factors 1/(2 i pi) are absorbed into this frame; the
flat metric has zero curvature, so no curvature terms appear anywhere
downstream.

Two derivative backends are provided.  "spectral" differentiates through the
FFT and is the default for smooth fields; "fd" uses second-order centred
differences and keeps the discrete maximum principle, which is what the
comparison-sensitive n=1 runs rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError

BACKENDS = ("spectral", "fd")


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TorusGrid:
    """Equispaced grid on R^{2n}/Z^{2n}.

    n : complex dimension, 1 or 2.
    resolution : points per real axis, a power of two >= 8.
    """

    n: int
    resolution: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ConfigError(f"complex dimension must be 1 or 2, got {self.n}")
        N = self.resolution
        if N < 8 or (N & (N - 1)) != 0:
            raise ConfigError(f"resolution must be a power of two >= 8, got {N}")

    @property
    def real_dim(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple:
        return (self.resolution,) * self.real_dim

    @property
    def spacing(self) -> float:
        return 1.0 / self.resolution

    @property
    def num_points(self) -> int:
        return self.resolution ** self.real_dim

    def axis_coordinate(self, axis: int) -> np.ndarray:
        """1-d coordinate array for one real axis."""
        return np.arange(self.resolution) * self.spacing

    def coordinates(self) -> tuple:
        """Broadcastable coordinate arrays, one per real axis (sparse meshgrid)."""
        return _grid_coordinates(self.n, self.resolution)

    def wavenumbers(self) -> tuple:
        """Integer wavenumbers per axis, broadcastable; Nyquist retained."""
        return _grid_wavenumbers(self.n, self.resolution)

    def wavenumbers_d1(self) -> tuple:
        """Wavenumbers for first derivatives: Nyquist mode zeroed."""
        return _grid_wavenumbers_d1(self.n, self.resolution)


@lru_cache(maxsize=32)
def _grid_coordinates(n, N):
    axes = [np.arange(N) / N for _ in range(2 * n)]
    mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
    return tuple(_freeze(m) for m in mesh)


@lru_cache(maxsize=32)
def _grid_wavenumbers(n, N):
    k = np.fft.fftfreq(N, d=1.0 / N)  # integers 0..N/2-1, -N/2..-1
    out = []
    for axis in range(2 * n):
        shape = [1] * (2 * n)
        shape[axis] = N
        out.append(_freeze(k.reshape(shape)))
    return tuple(out)


@lru_cache(maxsize=32)
def _grid_wavenumbers_d1(n, N):
    k = np.fft.fftfreq(N, d=1.0 / N).copy()
    k[N // 2] = 0.0  # odd-order derivative: drop the unpaired Nyquist mode
    out = []
    for axis in range(2 * n):
        shape = [1] * (2 * n)
        shape[axis] = N
        out.append(_freeze(k.reshape(shape)))
    return tuple(out)


# ---------------------------------------------------------------------------
# fields


@dataclass(frozen=True)
class ScalarField:
    """Real scalar sample on a grid.  Values are immutable after construction."""

    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != self.grid.shape:
            raise ConfigError(
                f"field shape {v.shape} does not match grid shape {self.grid.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ConfigError("field contains non-finite values")
        object.__setattr__(self, "values", _freeze(v))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "ScalarField":
        vals = np.broadcast_to(fn(*grid.coordinates()), grid.shape)
        return cls(grid, np.array(vals, dtype=np.float64))

    @classmethod
    def constant(cls, grid: TorusGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    def shifted(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self.values + c)


@dataclass(frozen=True)
class HermitianField:
    """Pointwise Hermitian n x n matrix field, stored by components.

    h11 (and h22 for n=2) are the real diagonal entries, h12 the complex
    off-diagonal entry of the upper triangle; the lower triangle is implied.
    Components may be full grid-shaped arrays or scalars (spatially constant
    matrix), and broadcasting is used throughout.
    """

    grid: TorusGrid
    h11: np.ndarray = field(repr=False)
    h22: np.ndarray = field(default=None, repr=False)
    h12: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        h11 = _freeze(np.asarray(self.h11, dtype=np.float64))
        object.__setattr__(self, "h11", h11)
        if self.grid.n == 2:
            if self.h22 is None or self.h12 is None:
                raise ConfigError("n=2 Hermitian field needs h22 and h12 components")
            object.__setattr__(self, "h22", _freeze(np.asarray(self.h22, dtype=np.float64)))
            object.__setattr__(self, "h12", _freeze(np.asarray(self.h12, dtype=np.complex128)))
        else:
            if self.h22 is not None or self.h12 is not None:
                raise ConfigError("n=1 Hermitian field has a single component")
        for comp in self.components():
            try:
                np.broadcast_shapes(comp.shape, self.grid.shape)
            except ValueError:
                raise ConfigError(
                    f"component shape {comp.shape} not broadcastable to {self.grid.shape}"
                ) from None

    @classmethod
    def identity(cls, grid: TorusGrid, scale: float = 1.0) -> "HermitianField":
        if grid.n == 1:
            return cls(grid, np.float64(scale))
        return cls(grid, np.float64(scale), np.float64(scale), np.complex128(0.0))

    @classmethod
    def from_matrix(cls, grid: TorusGrid, mat) -> "HermitianField":
        """Spatially constant field from an n x n matrix (Hermitian part taken)."""
        m = np.asarray(mat, dtype=np.complex128)
        if m.shape != (grid.n, grid.n):
            raise ConfigError(f"expected a {grid.n}x{grid.n} matrix, got shape {m.shape}")
        m = 0.5 * (m + m.conj().T)
        if grid.n == 1:
            return cls(grid, m[0, 0].real)
        return cls(grid, m[0, 0].real, m[1, 1].real, m[0, 1])

    def components(self) -> tuple:
        if self.grid.n == 1:
            return (self.h11,)
        return (self.h11, self.h22, self.h12)

    def det(self) -> np.ndarray:
        if self.grid.n == 1:
            return self.h11
        return self.h11 * self.h22 - np.abs(self.h12) ** 2

    def trace(self) -> np.ndarray:
        if self.grid.n == 1:
            return self.h11
        return self.h11 + self.h22

    def eig_min(self) -> np.ndarray:
        if self.grid.n == 1:
            return self.h11
        mid = 0.5 * (self.h11 + self.h22)
        rad = np.sqrt(0.25 * (self.h11 - self.h22) ** 2 + np.abs(self.h12) ** 2)
        return mid - rad

    def eig_max(self) -> np.ndarray:
        if self.grid.n == 1:
            return self.h11
        mid = 0.5 * (self.h11 + self.h22)
        rad = np.sqrt(0.25 * (self.h11 - self.h22) ** 2 + np.abs(self.h12) ** 2)
        return mid + rad

    def __add__(self, other: "HermitianField") -> "HermitianField":
        if self.grid != other.grid:
            raise ConfigError("cannot add Hermitian fields on different grids")
        if self.grid.n == 1:
            return HermitianField(self.grid, self.h11 + other.h11)
        return HermitianField(
            self.grid, self.h11 + other.h11, self.h22 + other.h22, self.h12 + other.h12
        )

    def __sub__(self, other: "HermitianField") -> "HermitianField":
        return self + other.scaled(-1.0)

    def scaled(self, c: float) -> "HermitianField":
        if self.grid.n == 1:
            return HermitianField(self.grid, c * self.h11)
        return HermitianField(self.grid, c * self.h11, c * self.h22, c * self.h12)

    def as_matrices(self) -> np.ndarray:
        """Dense (grid.shape + (n, n)) complex array, mostly for inspection."""
        n = self.grid.n
        out = np.zeros(self.grid.shape + (n, n), dtype=np.complex128)
        out[..., 0, 0] = np.broadcast_to(self.h11, self.grid.shape)
        if n == 2:
            out[..., 1, 1] = np.broadcast_to(self.h22, self.grid.shape)
            out[..., 0, 1] = np.broadcast_to(self.h12, self.grid.shape)
            out[..., 1, 0] = np.conj(out[..., 0, 1])
        return out


# ---------------------------------------------------------------------------
# derivatives

def _spectral_second_pair(values, grid, axis_a, axis_b):
    """d_a d_b of a real field via the FFT (integer wavenumber convention)."""
    hat = np.fft.fftn(values)
    if axis_a == axis_b:
        k = grid.wavenumbers()[axis_a]
        return np.fft.ifftn(hat * (-4.0 * np.pi**2) * k * k).real
    kd = grid.wavenumbers_d1()
    return np.fft.ifftn(hat * (-4.0 * np.pi**2) * kd[axis_a] * kd[axis_b]).real


def _fd_second(values, h, axis):
    return (np.roll(values, -1, axis) - 2.0 * values + np.roll(values, 1, axis)) / h**2


def _fd_first(values, h, axis):
    return (np.roll(values, -1, axis) - np.roll(values, 1, axis)) / (2.0 * h)


def hessian_components(values: np.ndarray, grid: TorusGrid, backend: str = "spectral"):
    """Raw complex-Hessian components of a real sample array.

    Returns (h11,) for n=1 and (h11, h22, h12) for n=2.  This is the
    allocation-light entry point the flow solver uses; `complex_hessian`
    wraps the result in a HermitianField.
    """
    if backend not in BACKENDS:
        raise ConfigError(f"unknown derivative backend {backend!r}")
    if backend == "spectral":
        return _hessian_spectral(values, grid)
    return _hessian_fd(values, grid)


def _hessian_spectral(values, grid):
    hat = np.fft.fftn(values)
    k = grid.wavenumbers()
    c = -4.0 * np.pi**2
    if grid.n == 1:
        sym = c * (k[0] ** 2 + k[1] ** 2)
        return (0.25 * np.fft.ifftn(hat * sym).real,)
    kd = grid.wavenumbers_d1()
    h11 = 0.25 * np.fft.ifftn(hat * (c * (k[0] ** 2 + k[1] ** 2))).real
    h22 = 0.25 * np.fft.ifftn(hat * (c * (k[2] ** 2 + k[3] ** 2))).real
    # real part (x1x2 + y1y2), imaginary part (x1y2 - y1x2)
    sym12 = c * ((kd[0] * kd[2] + kd[1] * kd[3]) + 1j * (kd[0] * kd[3] - kd[1] * kd[2]))
    h12 = 0.25 * np.fft.ifftn(hat * sym12)
    return h11, h22, h12


def _hessian_fd(values, grid):
    h = grid.spacing
    if grid.n == 1:
        lap = _fd_second(values, h, 0) + _fd_second(values, h, 1)
        return (0.25 * lap,)
    h11 = 0.25 * (_fd_second(values, h, 0) + _fd_second(values, h, 1))
    h22 = 0.25 * (_fd_second(values, h, 2) + _fd_second(values, h, 3))
    dx1 = _fd_first(values, h, 0)
    dy1 = _fd_first(values, h, 1)
    re = _fd_first(dx1, h, 2) + _fd_first(dy1, h, 3)
    im = _fd_first(dx1, h, 3) - _fd_first(dy1, h, 2)
    return h11, h22, 0.25 * (re + 1j * im)


def complex_hessian(phi: ScalarField, backend: str = "spectral") -> HermitianField:
    """Complex Hessian H(phi) as a Hermitian matrix field.

    For n=1 this is the quarter Laplacian: H(phi) = (1/4) (phi_xx + phi_yy).
    """
    comps = hessian_components(phi.values, phi.grid, backend)
    return HermitianField(phi.grid, *comps)


def gradient_sq(phi: ScalarField, backend: str = "spectral") -> ScalarField:
    """Squared norm of the (1,0)-gradient: sum_j |d phi / dz_j|^2.

    With d/dz_j = (d_{x_j} - i d_{y_j})/2 this equals
    (1/4) sum_j ((d_{x_j} phi)^2 + (d_{y_j} phi)^2), which is |grad phi|^2/4
    in real terms.  For a single mode a cos(2 pi x) the result is
    a^2 pi^2 sin^2(2 pi x).
    """
    grid = phi.grid
    if backend == "spectral":
        hat = np.fft.fftn(phi.values)
        kd = grid.wavenumbers_d1()
        acc = np.zeros(grid.shape)
        for axis in range(grid.real_dim):
            d = np.fft.ifftn(hat * (2j * np.pi) * kd[axis]).real
            acc += d * d
    else:
        h = grid.spacing
        acc = np.zeros(grid.shape)
        for axis in range(grid.real_dim):
            d = _fd_first(phi.values, h, axis)
            acc += d * d
    return ScalarField(grid, 0.25 * acc)


# ---------------------------------------------------------------------------
# norms and distances


def norms(phi: ScalarField) -> dict:
    """Grid sup, inf, oscillation and L1 norm (unit total volume)."""
    v = phi.values
    sup = float(v.max())
    inf = float(v.min())
    return {"sup": sup, "inf": inf, "osc": sup - inf, "l1": float(np.abs(v).mean())}


def oscillation(phi: ScalarField) -> float:
    return float(phi.values.max() - phi.values.min())


def restrict(phi: ScalarField, coarse: TorusGrid) -> ScalarField:
    """Exact restriction to a coarser grid whose points are a subset of the fine ones."""
    fine = phi.grid
    if coarse.n != fine.n or fine.resolution % coarse.resolution != 0:
        raise ConfigError("coarse grid is not nested in the fine grid")
    s = fine.resolution // coarse.resolution
    sl = (slice(None, None, s),) * fine.real_dim
    return ScalarField(coarse, phi.values[sl].copy())


def torus_separation(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Euclidean distance on the torus between coordinate rows p and q."""
    d = np.abs(p - q)
    d = np.minimum(d, 1.0 - d)
    return np.sqrt((d * d).sum(axis=-1))


def parabolic_holder_seminorm(
    snapshots,
    alpha: float,
    max_events: int = 1024,
) -> float:
    """Space-time Holder seminorm estimate from a finite list of snapshots.

    snapshots : sequence of (time, ScalarField) pairs on a common grid.
    alpha     : Holder exponent in (0, 1].

    The parabolic distance between events X=(x,t) and Y=(x',t') is
    rho = |x - x'| + |t - t'|^(1/2) with the torus metric in space, and the
    returned value is max |f(X) - f(Y)| / rho^alpha over a deterministic
    stride-based subsample of grid points (identical events excluded).
    The estimate is a lower bound for the true seminorm and is intended as a
    regularity diagnostic, not a certified norm.
    """
    if not 0.0 < alpha <= 1.0:
        raise ConfigError(f"alpha must lie in (0, 1], got {alpha}")
    snaps = list(snapshots)
    if not snaps:
        raise ConfigError("need at least one snapshot")
    grid = snaps[0][1].grid
    per_snap = max(1, max_events // len(snaps))
    stride = 1
    while grid.num_points // stride ** grid.real_dim > per_snap:
        stride *= 2
    sl = (slice(None, None, stride),) * grid.real_dim
    mesh = np.meshgrid(*(grid.axis_coordinate(a) for a in range(grid.real_dim)), indexing="ij")
    pts = np.stack([m[sl].ravel() for m in mesh], axis=-1)

    coords, times, vals = [], [], []
    for t, fld in snaps:
        if fld.grid != grid:
            raise ConfigError("snapshots must share one grid")
        coords.append(pts)
        times.append(np.full(len(pts), float(t)))
        vals.append(fld.values[sl].ravel())
    coords = np.concatenate(coords)
    times = np.concatenate(times)
    vals = np.concatenate(vals)

    best = 0.0
    chunk = 512
    for i0 in range(0, len(vals), chunk):
        i1 = min(i0 + chunk, len(vals))
        dsp = torus_separation(coords[i0:i1, None, :], coords[None, :, :])
        rho = dsp + np.sqrt(np.abs(times[i0:i1, None] - times[None, :]))
        dv = np.abs(vals[i0:i1, None] - vals[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = dv / rho**alpha
        q[rho == 0.0] = 0.0
        best = max(best, float(q.max()))
    return best
