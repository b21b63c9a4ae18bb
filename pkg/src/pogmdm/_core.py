"""Differentiable core used for model construction and training.

Everything in this module is written against ``jax.numpy`` so that the
denoising-score-matching loss can be differentiated through the whole
parameter-to-filter map (low-pass taps, directional generator, per-filter
weights, mixture weights).  The public, numpy-facing API lives in
:mod:`pogmdm.shearlet`, :mod:`pogmdm.prior` and :mod:`pogmdm.training`.
"""

from __future__ import annotations

import functools

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp

# Filter bank layout: two cones x two scales x five shearings.
CONES = ("v", "h")
N_SCALES = 2
SHEARS = (-2, -1, 0, 1, 2)
N_FILTERS = len(CONES) * N_SCALES * len(SHEARS)

H_LEN = 9
P_SIZE = 17

# Mixture layout: odd component count, symmetric about zero.
N_COMPONENTS = 125
N_FREE_WEIGHTS = (N_COMPONENTS + 1) // 2
MEANS = np.linspace(-0.5, 0.5, N_COMPONENTS)
GRID_STEP = float(MEANS[1] - MEANS[0])
BASE_STD = GRID_STEP
BASE_VAR = BASE_STD**2

MIN_SHAPE = 16

N_PARAMETERS = H_LEN + P_SIZE**2 + N_FILTERS * N_FREE_WEIGHTS + N_FILTERS


def filter_index(cone: str, scale: int, shear: int) -> int:
    """Flat index of the (cone, scale, shear) filter."""
    return (
        CONES.index(cone) * N_SCALES * len(SHEARS)
        + scale * len(SHEARS)
        + SHEARS.index(shear)
    )


@functools.lru_cache(maxsize=1)
def shear_matrices() -> np.ndarray:
    """Bilinear resampling matrices, one (289, 289) matrix per filter.

    The vertical cone shears the generator along its second axis by
    ``s / 2**scale`` per row offset; the horizontal cone applies the
    transposed map to the transposed generator so that the two cones cover
    orthogonal orientation fans and stay distinct at shear zero.
    Samples falling outside the 17x17 grid are treated as zero.
    """
    c = P_SIZE // 2
    mats = np.zeros((N_FILTERS, P_SIZE**2, P_SIZE**2))
    for cone in CONES:
        for j in range(N_SCALES):
            for s in SHEARS:
                a = s / 2.0**j
                k = filter_index(cone, j, s)
                m = mats[k]
                for i in range(P_SIZE):
                    for q in range(P_SIZE):
                        if cone == "v":
                            src_r, src_c = float(i), q - a * (i - c)
                        else:
                            src_r, src_c = float(q), i - a * (q - c)
                        r0, c0 = int(np.floor(src_r)), int(np.floor(src_c))
                        tr, tc = src_r - r0, src_c - c0
                        for dr, wr in ((0, 1.0 - tr), (1, tr)):
                            for dc, wc in ((0, 1.0 - tc), (1, tc)):
                                rr, cc = r0 + dr, c0 + dc
                                if 0 <= rr < P_SIZE and 0 <= cc < P_SIZE and wr * wc != 0.0:
                                    m[i * P_SIZE + q, rr * P_SIZE + cc] += wr * wc
    return mats


def _place_taps_1d(h, dilation: int, n: int):
    """Circularly place the dilated tap pattern on an n-point axis."""
    offsets = (dilation * (np.arange(H_LEN) - H_LEN // 2)) % n
    return jnp.zeros(n, dtype=h.dtype).at[offsets].add(h)


def _place_taps_2d(p, n: int, m: int):
    rows = (np.arange(P_SIZE) - P_SIZE // 2) % n
    cols = (np.arange(P_SIZE) - P_SIZE // 2) % m
    return jnp.zeros((n, m), dtype=p.dtype).at[np.ix_(rows, cols)].add(p)


def filter_spectra(h, p, gamma, n: int, m: int):
    """Frequency responses of the scaled filter bank.

    The scale-j high-pass residual is 1 minus the cascaded separable low-pass
    window built from the squared magnitude response of the (DC-normalised)
    taps at dilations 1..2^j; squaring keeps the windows real and nonnegative
    and the cascade suppresses the spectral replicas of the dilated taps.
    Each raw filter (residual times sheared generator spectrum) is normalised
    to unit spatial l2 norm before scaling, so the returned norms equal
    ``gamma`` wherever the raw spectrum is nonzero.
    """
    mats = jnp.asarray(shear_matrices(), dtype=h.dtype)

    def axis_window(d, size):
        spec = jnp.fft.fft(_place_taps_1d(h, d, size))
        dc = jnp.sum(h)
        scale = jnp.where(jnp.abs(dc) > 1e-12, dc**2, 1.0)
        return (spec.real**2 + spec.imag**2) / scale

    residuals = []
    cascade = 1.0
    for j in range(N_SCALES):
        d = 2**j
        cascade = cascade * (axis_window(d, n)[:, None] * axis_window(d, m)[None, :])
        residuals.append(1.0 - cascade)

    sheared = (mats @ p.reshape(-1)).reshape(N_FILTERS, P_SIZE, P_SIZE)
    spectra = []
    norms = []
    for cone in CONES:
        for j in range(N_SCALES):
            for s in SHEARS:
                k = filter_index(cone, j, s)
                direct = jnp.fft.fft2(_place_taps_2d(sheared[k], n, m))
                raw = residuals[j] * direct
                raw_norm = jnp.sqrt(jnp.sum(jnp.abs(raw) ** 2) / (n * m))
                safe = jnp.where(raw_norm > 0.0, raw_norm, 1.0)
                spectra.append(gamma[k] * raw / safe)
                norms.append(gamma[k] * jnp.where(raw_norm > 0.0, 1.0, 0.0))
    return jnp.stack(spectra), jnp.stack(norms)


def expand_weights(free):
    """Full symmetric mixture weights (..., 125) from the free half (..., 63).

    Off-centre entries are split evenly between a component and its mirror,
    so free vectors on the simplex map to full weight vectors on the simplex.
    """
    half = free[..., :-1] / 2.0
    centre = free[..., -1:]
    return jnp.concatenate([half, centre, half[..., ::-1]], axis=-1)


def mixture_log_and_dlog(v, w, var):
    """Log-density and its derivative for Gaussian mixtures on the mean grid.

    v: evaluation points (...,); w: weights (..., L) broadcastable against
    ``v[..., None]``; var: variances broadcastable against ``v``.

    The log-sum-exp shift is taken over positive-weight components only, so
    sparse weight vectors stay exact even in the far tails; zero-weight
    components contribute exactly zero with finite gradients (their exponent
    is capped below the overflow threshold of the working dtype).
    """
    mu = jnp.asarray(MEANS, dtype=v.dtype)
    var_e = jnp.broadcast_to(var, v.shape)[..., None]
    g = -(v[..., None] - mu) ** 2 / (2.0 * var_e) - 0.5 * jnp.log(2.0 * jnp.pi * var_e)
    pos = w > 0
    b = jnp.where(pos, g + jnp.log(jnp.where(pos, w, 1.0)), -jnp.inf)
    c = jax.lax.stop_gradient(jnp.max(b, axis=-1))
    cap = 0.9 * np.log(np.finfo(np.dtype(v.dtype)).max)
    e = w * jnp.exp(jnp.minimum(g - c[..., None], cap))
    total = jnp.sum(e, axis=-1)
    logpsi = c + jnp.log(total)
    dlog = jnp.sum(e * (mu - v[..., None]), axis=-1) / (total * jnp.squeeze(var_e, -1))
    return logpsi, dlog


def _analyze(transfer, x):
    """Filter responses (..., K, n, m) by pointwise spectral multiplication."""
    spec = jnp.fft.fft2(x)
    return jnp.real(jnp.fft.ifft2(transfer * spec[..., None, :, :]))


def _adjoint(transfer, r):
    spec = jnp.sum(jnp.conj(transfer) * jnp.fft.fft2(r), axis=-3)
    return jnp.real(jnp.fft.ifft2(spec))


def neg_log_prior_from(transfer, norms, w_full, x, zeta):
    """Unnormalised negative log density of a single image."""
    resp = _analyze(transfer, x)
    var = BASE_VAR + zeta**2 * norms**2
    logpsi, _ = mixture_log_and_dlog(resp, w_full[:, None, None, :], var[:, None, None])
    return -jnp.sum(logpsi)


def score_from(transfer, norms, w_full, x, zeta):
    """Gradient of the log density (negative gradient of the energy)."""
    resp = _analyze(transfer, x)
    var = BASE_VAR + zeta**2 * norms**2
    _, dlog = mixture_log_and_dlog(resp, w_full[:, None, None, :], var[:, None, None])
    return _adjoint(transfer, dlog)


def _dsm_residual_sq(h, p, gamma, free_w, x, zetas, noises):
    """Per-sample squared Tweedie residuals ||x - y - zeta^2 score(y)||^2."""
    n, m = x.shape[-2:]
    transfer, norms = filter_spectra(h, p, gamma, n, m)
    w_full = expand_weights(free_w)
    y = x + zetas[:, None, None] * noises
    resp = _analyze(transfer, y)
    var = BASE_VAR + zetas[:, None] ** 2 * norms[None, :] ** 2
    _, dlog = mixture_log_and_dlog(
        resp, w_full[None, :, None, None, :], var[:, :, None, None]
    )
    score = _adjoint(transfer, dlog)
    residual = x - y - (zetas**2)[:, None, None] * score
    return jnp.sum(residual**2, axis=(-2, -1))


def dsm_loss_arrays(h, p, gamma, free_w, x, zetas, noises):
    """Denoising score matching loss: batch mean of the squared residuals."""
    return jnp.mean(_dsm_residual_sq(h, p, gamma, free_w, x, zetas, noises))


def dsm_weighted_loss_arrays(h, p, gamma, free_w, x, zetas, noises, weights):
    """Per-sample weighted variant used by the training driver."""
    return jnp.mean(weights * _dsm_residual_sq(h, p, gamma, free_w, x, zetas, noises))


dsm_loss_jit = jax.jit(dsm_loss_arrays)
dsm_value_and_grad = jax.jit(jax.value_and_grad(dsm_loss_arrays, argnums=(0, 1, 2, 3)))
dsm_weighted_value_and_grad = jax.jit(
    jax.value_and_grad(dsm_weighted_loss_arrays, argnums=(0, 1, 2, 3))
)
filter_spectra_jit = jax.jit(filter_spectra, static_argnums=(3, 4))
