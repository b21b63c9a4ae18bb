"""Parallel-imaging forward model, sampling masks and synthetic data.

The acquisition maps a complex spin density x and per-coil sensitivities
sigma to undersampled k-space: z_i = M F(sigma_i * x), with F the unitary
2-D DFT and M a binary sampling operator.  Masks are generated in centred
(fftshift) layout and stored in DFT layout so that no shifting happens in
the hot path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SamplingMask",
    "KSpaceData",
    "make_mask",
    "forward",
    "adjoint_x",
    "grad_x_likelihood",
    "grad_sigma_likelihood",
    "zero_filled",
    "simulate_coils",
    "phantom",
    "add_noise",
]

# Sensitivities are plain complex arrays of shape (coils, n, m).
Sensitivities = np.ndarray

MASK_PATTERNS = ("cartesian", "cartesian_horizontal", "radial", "spiral", "gaussian2d")


@dataclass(frozen=True)
class SamplingMask:
    """Binary k-space indicator in DFT (unshifted) layout."""

    indicator: np.ndarray
    pattern: str
    acceleration: float
    acl_fraction: float | None
    seed: int
    _flat_index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        ind = np.asarray(self.indicator, dtype=bool)
        object.__setattr__(self, "indicator", ind)
        object.__setattr__(self, "_flat_index", np.flatnonzero(ind.ravel()))
        if self.n_sampled < 1:
            raise ValueError("mask must sample at least one frequency")

    @property
    def shape(self) -> tuple[int, int]:
        return self.indicator.shape

    @property
    def n_sampled(self) -> int:
        return int(self.indicator.sum())

    @property
    def achieved_acceleration(self) -> float:
        return self.indicator.size / self.n_sampled

    def extract(self, kspace: np.ndarray) -> np.ndarray:
        """Sampled entries (..., f) of a full k-space grid (..., n, m)."""
        flat = kspace.reshape(*kspace.shape[:-2], -1)
        return flat[..., self._flat_index]

    def embed(self, samples: np.ndarray) -> np.ndarray:
        """Zero-filled k-space grid (..., n, m) from sampled entries (..., f)."""
        out = np.zeros((*samples.shape[:-1], self.indicator.size), dtype=samples.dtype)
        out[..., self._flat_index] = samples
        return out.reshape(*samples.shape[:-1], *self.shape)


@dataclass
class KSpaceData:
    """Per-coil measured samples plus the mask that produced them."""

    data: np.ndarray  # (coils, f) complex
    mask: SamplingMask
    noise_std: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2 or self.data.shape[1] != self.mask.n_sampled:
            raise ValueError(
                f"data must have shape (coils, {self.mask.n_sampled}), got {self.data.shape}"
            )

    @property
    def n_coils(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def _check_shapes(x: np.ndarray, sens: np.ndarray, shape: tuple[int, int]):
    if x.shape[-2:] != shape:
        raise ValueError(f"image shape {x.shape[-2:]} does not match mask shape {shape}")
    if sens.shape[-2:] != shape or sens.ndim < 3:
        raise ValueError(f"sensitivities shape {sens.shape} does not match {('c',) + shape}")


def forward(x: np.ndarray, sens: Sensitivities, mask: SamplingMask) -> np.ndarray:
    """Sampled k-space (..., c, f): z_i = M F(sigma_i * x)."""
    x = np.asarray(x, dtype=np.complex128)
    sens = np.asarray(sens, dtype=np.complex128)
    _check_shapes(x, sens, mask.shape)
    coil_imgs = sens * x[..., None, :, :]
    return mask.extract(np.fft.fft2(coil_imgs, norm="ortho"))


def simulate(x: np.ndarray, sens: Sensitivities, mask: SamplingMask,
             noise_std: float = 0.0, seed: int = 0) -> KSpaceData:
    """Measure a ground-truth image, optionally with complex Gaussian noise."""
    z = forward(x, sens, mask)
    kdata = KSpaceData(data=z, mask=mask, noise_std=noise_std)
    if noise_std > 0:
        kdata = add_noise(kdata, noise_std, seed)
    return kdata


def add_noise(kdata: KSpaceData, std: float, seed: int = 0) -> KSpaceData:
    """Add circular complex Gaussian noise of the given per-sample std."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    eps = rng.standard_normal(kdata.data.shape) + 1j * rng.standard_normal(kdata.data.shape)
    return KSpaceData(data=kdata.data + std / np.sqrt(2.0) * eps,
                      mask=kdata.mask, noise_std=std)


def _backproject(residual_samples: np.ndarray, mask: SamplingMask) -> np.ndarray:
    return np.fft.ifft2(mask.embed(residual_samples), norm="ortho")


def adjoint_x(samples: np.ndarray, sens: Sensitivities, mask: SamplingMask) -> np.ndarray:
    """Adjoint of the forward map in x: sum_i conj(sigma_i) * F^* M^* w_i."""
    sens = np.asarray(sens, dtype=np.complex128)
    back = _backproject(np.asarray(samples, dtype=np.complex128), mask)
    return np.sum(np.conj(sens) * back, axis=-3)


def grad_x_likelihood(x: np.ndarray, sens: Sensitivities, kdata: KSpaceData) -> np.ndarray:
    """Gradient of 0.5 * ||A(x, sigma) - z||^2 in x (Wirtinger convention).

    The real and imaginary parts of the returned array are the partial
    derivatives with respect to Re(x) and Im(x).
    """
    residual = forward(x, sens, kdata.mask) - kdata.data
    return adjoint_x(residual, sens, kdata.mask)


def grad_sigma_likelihood(x: np.ndarray, sens: Sensitivities,
                          kdata: KSpaceData) -> np.ndarray:
    """Gradient of the data term in the sensitivities, one map per coil."""
    x = np.asarray(x, dtype=np.complex128)
    residual = forward(x, sens, kdata.mask) - kdata.data
    back = _backproject(residual, kdata.mask)
    return np.conj(x)[..., None, :, :] * back


def zero_filled(kdata: KSpaceData) -> tuple[np.ndarray, np.ndarray]:
    """Zero-filled coil images (c, n, m) and their root-sum-of-squares."""
    coil_imgs = _backproject(kdata.data, kdata.mask)
    rss = np.sqrt(np.sum(np.abs(coil_imgs) ** 2, axis=-3))
    return coil_imgs, rss


# -- sampling masks ---------------------------------------------------------


def make_mask(pattern: str, shape: tuple[int, int], acceleration: float,
              acl_fraction: float = 0.08, seed: int = 0,
              rho_fraction: float = 0.18) -> SamplingMask:
    """Deterministic sampling mask for the requested pattern.

    cartesian samples full columns (phase-encode lines): a fully-sampled
    centre block covering ``acl_fraction`` of the lines plus equispaced outer
    lines.  cartesian_horizontal samples rows instead.  radial rasterises
    golden-angle spokes, spiral an Archimedean spiral, and gaussian2d draws
    frequencies without replacement with density exp(-|k|^2 / (2 rho^2)),
    always keeping DC.
    """
    n, m = int(shape[0]), int(shape[1])
    if acceleration < 1:
        raise ValueError("infeasible acceleration: must be >= 1")
    if pattern not in MASK_PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}")

    if acceleration == 1:
        centred = np.ones((n, m), dtype=bool)
    elif pattern in ("cartesian", "cartesian_horizontal"):
        lines = m if pattern == "cartesian" else n
        centred_1d = _cartesian_lines(lines, acceleration, acl_fraction)
        centred = np.zeros((n, m), dtype=bool)
        if pattern == "cartesian":
            centred[:, centred_1d] = True
        else:
            centred[centred_1d, :] = True
    elif pattern == "radial":
        centred = _radial(n, m, acceleration)
    elif pattern == "spiral":
        centred = _spiral(n, m, acceleration)
    else:
        centred = _gaussian2d(n, m, acceleration, rho_fraction, seed)

    mask = SamplingMask(
        indicator=np.fft.ifftshift(centred),
        pattern=pattern,
        acceleration=float(acceleration),
        acl_fraction=acl_fraction if pattern.startswith("cartesian") else None,
        seed=seed,
    )
    achieved = mask.achieved_acceleration
    if abs(achieved - acceleration) > 0.1 * acceleration:
        raise ValueError(
            f"infeasible acceleration: requested {acceleration}, achieved {achieved:.2f}"
        )
    return mask


def _cartesian_lines(m: int, acceleration: float, acl_fraction: float) -> np.ndarray:
    target = int(round(m / acceleration))
    acl = max(1, int(round(acl_fraction * m)))
    if target < acl or target < 1:
        raise ValueError("infeasible acceleration: centre block exceeds line budget")
    centre = m // 2
    lo = centre - acl // 2
    acl_cols = np.arange(lo, lo + acl)
    outer = np.setdiff1d(np.arange(m), acl_cols)
    k = target - acl
    if k > outer.size:
        raise ValueError("infeasible acceleration")
    chosen = outer[(np.arange(k) * outer.size) // max(k, 1)] if k > 0 else np.empty(0, int)
    return np.concatenate([acl_cols, chosen])


def _rasterize(points: np.ndarray, n: int, m: int) -> np.ndarray:
    """Round continuous centred k-space points onto the grid."""
    rows = np.round(points[:, 0] + n // 2).astype(int)
    cols = np.round(points[:, 1] + m // 2).astype(int)
    keep = (rows >= 0) & (rows < n) & (cols >= 0) & (cols < m)
    mask = np.zeros((n, m), dtype=bool)
    mask[rows[keep], cols[keep]] = True
    return mask


def _radial(n: int, m: int, acceleration: float) -> np.ndarray:
    target = n * m / acceleration
    golden = np.pi / ((1.0 + np.sqrt(5.0)) / 2.0)
    radius = np.hypot(n / 2.0, m / 2.0)
    t = np.arange(-radius, radius + 0.25, 0.5)

    def spokes(count: int) -> np.ndarray:
        angles = np.arange(count) * golden
        pts = np.concatenate(
            [np.stack([t * np.sin(a), t * np.cos(a)], axis=1) for a in angles]
        )
        return _rasterize(pts, n, m)

    best, best_err = None, np.inf
    count = 1
    while True:
        mask = spokes(count)
        f = mask.sum()
        err = abs(f - target)
        if err < best_err:
            best, best_err = mask, err
        if f >= target or count > 4 * max(n, m):
            break
        count += 1
    return best


def _spiral(n: int, m: int, acceleration: float) -> np.ndarray:
    target = n * m / acceleration
    radius = np.hypot(n / 2.0, m / 2.0)

    def turns(total_angle: float) -> np.ndarray:
        arc = radius * (1.0 + total_angle / 2.0)
        t = np.linspace(0.0, 1.0, max(int(arc / 0.25), 64))
        r = radius * t
        phi = total_angle * t
        pts = np.stack([r * np.sin(phi), r * np.cos(phi)], axis=1)
        return _rasterize(pts, n, m)

    lo, hi = np.pi / 2, np.pi
    while turns(hi).sum() < target and hi < 1e4:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if turns(mid).sum() < target:
            lo = mid
        else:
            hi = mid
    cand = [turns(lo), turns(hi)]
    return min(cand, key=lambda msk: abs(msk.sum() - target))


def _gaussian2d(n: int, m: int, acceleration: float, rho_fraction: float,
                seed: int) -> np.ndarray:
    target = int(round(n * m / acceleration))
    if target < 1:
        raise ValueError("infeasible acceleration")
    rho = rho_fraction * min(n, m)
    ky = np.arange(n) - n // 2
    kx = np.arange(m) - m // 2
    logw = -(ky[:, None] ** 2 + kx[None, :] ** 2) / (2.0 * rho**2)
    rng = np.random.Generator(np.random.Philox(key=seed))
    # Gumbel top-k: weighted sampling without replacement, fully vectorised
    keys = logw.ravel() + rng.gumbel(size=n * m)
    dc = (n // 2) * m + (m // 2)
    keys[dc] = np.inf
    chosen = np.argpartition(keys, n * m - target)[-target:]
    mask = np.zeros(n * m, dtype=bool)
    mask[chosen] = True
    return mask.reshape(n, m)


# -- synthetic data ---------------------------------------------------------


def simulate_coils(shape: tuple[int, int], c: int, seed: int = 0,
                   normalize: bool = True) -> Sensitivities:
    """Smooth complex coil maps: border Gaussian bumps with linear phase ramps."""
    n, m = shape
    rng = np.random.Generator(np.random.Philox(key=seed))
    yy = np.arange(n)[:, None]
    xx = np.arange(m)[None, :]
    width = 0.9 * min(n, m)
    maps = np.zeros((c, n, m), dtype=np.complex128)
    for i in range(c):
        theta = 2.0 * np.pi * i / c + rng.uniform(-0.2, 0.2)
        cy = n / 2.0 + 0.55 * n * np.sin(theta)
        cx = m / 2.0 + 0.55 * m * np.cos(theta)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * width**2))
        ramp = (rng.uniform(-0.03, 0.03) * yy + rng.uniform(-0.03, 0.03) * xx
                + rng.uniform(0, 2 * np.pi))
        maps[i] = mag * np.exp(1j * ramp)
    if normalize:
        rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
        maps /= rss
    return maps


# modified Shepp-Logan ellipses: intensity, half axes, centre, rotation (deg)
_SHEPP_LOGAN = [
    (1.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
    (-0.80, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
    (-0.20, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
    (-0.20, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
    (0.10, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
    (0.10, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
    (0.10, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
    (0.10, 0.0230, 0.0230, 0.00, -0.6060, 0.0),
    (0.10, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
]


def _render_ellipses(shape: tuple[int, int], table) -> np.ndarray:
    n, m = shape
    y = (np.arange(n) - (n - 1) / 2.0) / (n / 2.0)
    x = (np.arange(m) - (m - 1) / 2.0) / (m / 2.0)
    yy, xx = np.meshgrid(y, x, indexing="ij")
    img = np.zeros((n, m))
    for inten, a, b, x0, y0, phi in table:
        t = np.deg2rad(phi)
        xr = (xx - x0) * np.cos(t) + (yy + y0) * np.sin(t)
        yr = -(xx - x0) * np.sin(t) + (yy + y0) * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += inten
    return img


def random_ellipse_table(rng: np.random.Generator, count: int | None = None):
    count = count if count is not None else int(rng.integers(3, 9))
    table = []
    for _ in range(count):
        table.append((
            float(rng.uniform(-0.5, 1.0)),
            float(rng.uniform(0.08, 0.55)),
            float(rng.uniform(0.08, 0.55)),
            float(rng.uniform(-0.5, 0.5)),
            float(rng.uniform(-0.5, 0.5)),
            float(rng.uniform(0.0, 180.0)),
        ))
    return table


def phantom(shape: tuple[int, int], kind: str = "shepp-logan",
            seed: int = 0) -> np.ndarray:
    """Synthetic complex-valued ground truth, magnitude normalised to 1."""
    if kind == "shepp-logan":
        img = _render_ellipses(shape, _SHEPP_LOGAN)
    elif kind == "ellipses":
        rng = np.random.Generator(np.random.Philox(key=seed))
        img = np.clip(_render_ellipses(shape, random_ellipse_table(rng)), 0.0, None)
    elif kind == "flat":
        img = np.ones(shape)
    else:
        raise ValueError(f"unknown phantom kind {kind!r}")
    img = np.clip(img, 0.0, None)
    peak = img.max()
    if peak > 0:
        img = img / peak
    return img.astype(np.complex128)
