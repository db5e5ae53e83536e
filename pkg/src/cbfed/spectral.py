"""Spectral representation of periodic incompressible vector fields.

Everything downstream works on truncated Fourier series of d-component real
vector fields on the torus [0, L]^d, d = 2 or 3.  A field is stored as one
complex spectrum per component, normalized so that coefficient c_k multiplies
exp(2*pi*i k.x / L).  With that normalization Parseval reads

    ||u||_{L^2}^2 = L^d * sum_k |c_k|^2.

The Nyquist planes (k_i = -N/2) are always zeroed, so every stored spectrum
corresponds to a real trigonometric polynomial with modes |k_i| <= N/2 - 1.
"""
from __future__ import annotations

import struct
from itertools import product

import numpy as np

TWO_THIRDS = 2.0 / 3.0


class TorusGrid:
    """Uniform N^d collocation grid on [0, L]^d with cached wavenumber arrays."""

    def __init__(self, d: int, N: int, L: float = 2 * np.pi):
        if d not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if N < 4 or N % 2:
            raise ValueError("N must be an even integer >= 4")
        if not (L > 0):
            raise ValueError("period L must be positive")
        self.d = int(d)
        self.N = int(N)
        self.L = float(L)
        k1 = np.fft.fftfreq(N, 1.0 / N).astype(np.int64)
        mesh = np.meshgrid(*([k1] * d), indexing="ij")
        self.wave = np.stack(mesh)                     # (d, N, ..., N) integer wavevectors
        self.k2 = np.sum(self.wave**2, axis=0)         # |k|^2, integer
        self.lap = (2 * np.pi / L) ** 2 * self.k2      # -Laplacian symbol
        self.keep = np.all(self.wave != -N // 2, axis=0)
        # 2/3 rule, strict: kept |k_i| < N/3 so quadratic aliases fall outside
        kmax_dealias = (N - 1) // 3
        self.dealias = np.all(np.abs(self.wave) <= kmax_dealias, axis=0) & self.keep
        inv = np.zeros_like(self.lap)
        nz = self.k2 > 0
        inv[nz] = 1.0 / self.k2[nz]
        self.inv_k2 = inv

    @property
    def shape(self):
        return (self.N,) * self.d

    @property
    def cell_volume(self):
        return (self.L / self.N) ** self.d

    def nodes(self):
        x1 = np.arange(self.N) * (self.L / self.N)
        return np.stack(np.meshgrid(*([x1] * self.d), indexing="ij"))

    def axes(self):
        return tuple(range(1, self.d + 1))

    def __eq__(self, other):
        return (
            isinstance(other, TorusGrid)
            and self.d == other.d
            and self.N == other.N
            and self.L == other.L
        )

    def __repr__(self):
        return f"TorusGrid(d={self.d}, N={self.N}, L={self.L})"


class SpectralField:
    """A truncated d-component Fourier series on a TorusGrid."""

    __slots__ = ("grid", "c")

    def __init__(self, grid: TorusGrid, coeffs: np.ndarray):
        self.grid = grid
        self.c = coeffs

    @classmethod
    def from_physical(cls, grid: TorusGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.d,) + grid.shape:
            raise ValueError(f"expected shape {(grid.d,) + grid.shape}, got {values.shape}")
        c = np.fft.fftn(values, axes=grid.axes()) / grid.N**grid.d
        c *= grid.keep
        return cls(grid, c)

    @classmethod
    def zero(cls, grid: TorusGrid):
        return cls(grid, np.zeros((grid.d,) + grid.shape, dtype=complex))

    def physical(self) -> np.ndarray:
        return np.real(np.fft.ifftn(self.c, axes=self.grid.axes()) * self.grid.N**self.grid.d)

    def copy(self):
        return SpectralField(self.grid, self.c.copy())

    def __add__(self, other):
        return SpectralField(self.grid, self.c + other.c)

    def __sub__(self, other):
        return SpectralField(self.grid, self.c - other.c)

    def __mul__(self, a):
        return SpectralField(self.grid, self.c * a)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.grid, -self.c)


class EigenMode:
    """One orthonormal eigenfield of I - Laplacian on divergence-free fields."""

    __slots__ = ("field", "eigenvalue", "shell", "wavevector", "phase", "axis")

    def __init__(self, field, eigenvalue, shell, wavevector, phase, axis):
        self.field = field
        self.eigenvalue = float(eigenvalue)
        self.shell = int(shell)
        self.wavevector = tuple(int(k) for k in wavevector)
        self.phase = phase
        self.axis = int(axis)

    def __repr__(self):
        return (
            f"EigenMode(k={self.wavevector}, {self.phase}, axis={self.axis}, "
            f"lam={self.eigenvalue:g})"
        )


# ---------------------------------------------------------------------------
# inner products and norms


def inner(a: SpectralField, b: SpectralField) -> float:
    """L^2 inner product (a, b) via Parseval."""
    return float(a.grid.L**a.grid.d * np.real(np.vdot(b.c, a.c)))


def norm_H(a: SpectralField) -> float:
    return float(np.sqrt(a.grid.L**a.grid.d * np.sum(np.abs(a.c) ** 2)))


def norm_grad(a: SpectralField) -> float:
    w = a.grid.lap * np.sum(np.abs(a.c) ** 2, axis=0)
    return float(np.sqrt(a.grid.L**a.grid.d * np.sum(w)))


def norm_V(a: SpectralField) -> float:
    return float(np.hypot(norm_H(a), norm_grad(a)))


def oversample_factor(p: float) -> int:
    """Zero-padding factor for p-th power integrands (capped at 4)."""
    return max(1, min(int(np.ceil((p + 1) / 2)), 4))


def norm_Lp(a: SpectralField, p: float) -> float:
    """L^p norm by rectangle rule on an oversampled nodal grid."""
    f = oversample_factor(p)
    vals = oversample(a, f) if f > 1 else a.physical()
    M = f * a.grid.N
    mag2 = np.sum(vals**2, axis=0)
    integral = np.sum(mag2 ** (p / 2.0)) * (a.grid.L / M) ** a.grid.d
    return float(integral ** (1.0 / p))


def divergence_max(a: SpectralField) -> float:
    """max_k |k . c_k| (integer wavevectors), zero for solenoidal fields."""
    dot = np.sum(a.grid.wave * a.c, axis=0)
    return float(np.max(np.abs(dot)))


def reality_defect(a: SpectralField) -> float:
    """Largest imaginary residue of the inverse transform."""
    vals = np.fft.ifftn(a.c, axes=a.grid.axes()) * a.grid.N**a.grid.d
    return float(np.max(np.abs(vals.imag)))


# ---------------------------------------------------------------------------
# linear operators (diagonal in Fourier space)


def leray(a: SpectralField) -> SpectralField:
    """Project onto divergence-free fields: c_k -> c_k - k (k.c_k)/|k|^2."""
    g = a.grid
    dot = np.sum(g.wave * a.c, axis=0)
    return SpectralField(g, a.c - g.wave * (dot * g.inv_k2))


def stokes(a: SpectralField) -> SpectralField:
    """Apply A = -Laplacian."""
    return SpectralField(a.grid, a.c * a.grid.lap)


def stokes_shifted(a: SpectralField) -> SpectralField:
    """Apply I + A (spectrum 1 + 4 pi^2 |k|^2 / L^2)."""
    return SpectralField(a.grid, a.c * (1.0 + a.grid.lap))


def resolvent(a: SpectralField, lam: float) -> SpectralField:
    """Apply (I + lam A)^{-1}; a contraction for lam >= 0."""
    return SpectralField(a.grid, a.c / (1.0 + lam * a.grid.lap))


def gradient_physical(a: SpectralField) -> np.ndarray:
    """Nodal values of all partials: out[i, j] = d u_j / d x_i."""
    g = a.grid
    ik = (2j * np.pi / g.L) * g.wave
    gc = ik[:, None] * a.c[None, :]
    return np.real(np.fft.ifftn(gc, axes=tuple(range(2, g.d + 2))) * g.N**g.d)


# ---------------------------------------------------------------------------
# zero-padded oversampling


def _block_pairs(N: int, M: int):
    # (coarse slab, fine slab) index pairs for spectrum embedding
    return [
        (slice(0, N // 2), slice(0, N // 2)),
        (slice(N // 2, N), slice(M - N // 2, M)),
    ]


def pad_coeffs(c: np.ndarray, grid: TorusGrid, M: int) -> np.ndarray:
    """Embed coarse spectra (leading component axis) into an M^d spectrum."""
    N, d = grid.N, grid.d
    out = np.zeros(c.shape[:-d] + (M,) * d, dtype=complex)
    for corner in product(range(2), repeat=d):
        src = tuple(_block_pairs(N, M)[i][0] for i in corner)
        dst = tuple(_block_pairs(N, M)[i][1] for i in corner)
        out[(Ellipsis,) + dst] = c[(Ellipsis,) + src]
    return out


def gather_coeffs(cf: np.ndarray, grid: TorusGrid, M: int) -> np.ndarray:
    """Restrict fine M^d spectra back to the coarse grid (Nyquist zeroed)."""
    N, d = grid.N, grid.d
    out = np.zeros(cf.shape[:-d] + (N,) * d, dtype=complex)
    for corner in product(range(2), repeat=d):
        src = tuple(_block_pairs(N, M)[i][0] for i in corner)
        dst = tuple(_block_pairs(N, M)[i][1] for i in corner)
        out[(Ellipsis,) + src] = cf[(Ellipsis,) + dst]
    out *= grid.keep
    return out


def oversample(a: SpectralField, factor: int) -> np.ndarray:
    """Nodal values on the refined (factor*N)^d grid (exact interpolation)."""
    if factor == 1:
        return a.physical()
    g = a.grid
    M = factor * g.N
    cf = pad_coeffs(a.c, g, M)
    axes = tuple(range(1, g.d + 1))
    return np.real(np.fft.ifftn(cf, axes=axes) * M**g.d)


def fine_to_coeffs(vals: np.ndarray, grid: TorusGrid, factor: int) -> np.ndarray:
    """Transform fine nodal values and truncate to the coarse spectrum."""
    M = factor * grid.N
    axes = tuple(range(vals.ndim - grid.d, vals.ndim))
    cf = np.fft.fftn(vals, axes=axes) / M**grid.d
    if factor == 1:
        return cf * grid.keep
    return gather_coeffs(cf, grid, M)


# ---------------------------------------------------------------------------
# eigenbasis of I + A on divergence-free fields


def _polarizations(k: np.ndarray, d: int):
    khat = k / np.linalg.norm(k)
    first = None
    for j in range(d):
        cand = np.eye(d)[j] - np.dot(np.eye(d)[j], khat) * khat
        n = np.linalg.norm(cand)
        if n > 1e-10:
            first = cand / n
            break
    if d == 2:
        return [first]
    return [first, np.cross(khat, first)]


def _canonical(k):
    for ki in k:
        if ki != 0:
            return ki > 0
    return False


def eigenbasis(grid: TorusGrid, n: int):
    """First n orthonormal eigenmodes of I + A, deterministically ordered.

    Ordering: by shell |k|^2, then wavevector (lexicographic over canonical
    representatives, first nonzero component positive), then phase
    (cosine before sine), then polarization index.  Shell zero supplies the
    d constant modes.
    """
    d, N, L = grid.d, grid.N, grid.L
    kmax = N // 2 - 1
    modes = []
    for axis in range(d):
        c = np.zeros((d,) + grid.shape, dtype=complex)
        c[axis][(0,) * d] = L ** (-d / 2.0)
        modes.append(EigenMode(SpectralField(grid, c), 1.0, 0, (0,) * d, "constant", axis))
    if n <= d:
        return modes[:n]

    reps = [
        k
        for k in product(range(-kmax, kmax + 1), repeat=d)
        if _canonical(k) and sum(ki**2 for ki in k) > 0
    ]
    reps.sort(key=lambda k: (sum(ki**2 for ki in k), k))
    amp = np.sqrt(2.0 / L**d)
    for k in reps:
        if len(modes) >= n:
            break
        shell = sum(ki**2 for ki in k)
        lam = 1.0 + (2 * np.pi / L) ** 2 * shell
        pols = _polarizations(np.array(k, dtype=float), d)
        pos = tuple(ki % N for ki in k)
        neg = tuple((-ki) % N for ki in k)
        for phase in ("cosine", "sine"):
            for axis, p in enumerate(pols):
                c = np.zeros((d,) + grid.shape, dtype=complex)
                if phase == "cosine":
                    for comp in range(d):
                        c[comp][pos] = 0.5 * amp * p[comp]
                        c[comp][neg] = 0.5 * amp * p[comp]
                else:
                    for comp in range(d):
                        c[comp][pos] = -0.5j * amp * p[comp]
                        c[comp][neg] = +0.5j * amp * p[comp]
                modes.append(EigenMode(SpectralField(grid, c), lam, shell, k, phase, axis))
    if len(modes) < n:
        raise ValueError(f"grid supports only {len(modes)} modes, requested {n}")
    return modes[:n]


# ---------------------------------------------------------------------------
# random fields (counter-based generator, reproducible)


def random_field(grid: TorusGrid, seed: int, decay: float = 2.0) -> SpectralField:
    """Random real field with spectrum scaled by (1 + |k|^2)^(-decay/2)."""
    rng = np.random.Generator(np.random.Philox(seed))
    shape = (grid.d,) + grid.shape
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c *= (1.0 + grid.k2) ** (-decay / 2.0)
    idx = (-np.arange(grid.N)) % grid.N
    flipped = c
    for ax in range(1, grid.d + 1):
        flipped = np.take(flipped, idx, axis=ax)
    c = 0.5 * (c + np.conj(flipped))
    c *= grid.keep
    return SpectralField(grid, c)


def random_solenoidal(grid: TorusGrid, seed: int, decay: float = 2.0) -> SpectralField:
    """Divergence-free unit-H-norm random field, deterministic per seed."""
    f = leray(random_field(grid, seed, decay))
    nrm = norm_H(f)
    if nrm == 0:
        raise ValueError("degenerate random draw")
    return (1.0 / nrm) * f


# ---------------------------------------------------------------------------
# snapshot file format
#
# header (32 bytes, little-endian): magic "CBFD", version u32, d u32, N u32,
# L f64, mode count u64; payload: for each wavevector in lexicographic order
# (components -N/2 .. N/2-1), for each velocity component, (re, im) as f64.

_HEADER = struct.Struct("<4sIIIdQ")
SNAPSHOT_VERSION = 1


def _lex_index(N: int) -> np.ndarray:
    return np.arange(-N // 2, N // 2) % N


def write_snapshot(field: SpectralField, path) -> None:
    g = field.grid
    idx = _lex_index(g.N)
    gathered = field.c[(slice(None),) + np.ix_(*([idx] * g.d))]
    arr = np.moveaxis(gathered, 0, -1)  # (*sorted wavevectors, component)
    flat = np.empty(arr.size * 2, dtype="<f8")
    flat[0::2] = arr.real.ravel()
    flat[1::2] = arr.imag.ravel()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(b"CBFD", SNAPSHOT_VERSION, g.d, g.N, g.L, g.N**g.d))
        fh.write(flat.tobytes())


def read_snapshot(path) -> SpectralField:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise ValueError("snapshot too short")
        magic, version, d, N, L, count = _HEADER.unpack(head)
        if magic != b"CBFD":
            raise ValueError("bad magic, not a field snapshot")
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        grid = TorusGrid(d=d, N=N, L=L)
        if count != N**d:
            raise ValueError("inconsistent mode count")
        payload = np.frombuffer(fh.read(), dtype="<f8")
    if payload.size != count * d * 2:
        raise ValueError("truncated snapshot payload")
    arr = payload[0::2] + 1j * payload[1::2]
    arr = arr.reshape((N,) * d + (d,))
    arr = np.moveaxis(arr, -1, 0)
    idx = _lex_index(N)
    c = np.zeros((d,) + grid.shape, dtype=complex)
    c[(slice(None),) + np.ix_(*([idx] * d))] = arr
    return SpectralField(grid, c)
