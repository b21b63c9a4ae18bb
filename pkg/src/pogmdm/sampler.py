"""Joint posterior sampling over the image and the coil sensitivities.

Each reverse-diffusion level runs, per chain: a predictor step on the real
and imaginary channels, a likelihood descent step, optional Langevin
corrector rounds (each followed by another likelihood step), and finally a
proximal smoothness update of the sensitivities.  Chains are independent;
they are executed in lockstep as one vectorised batch, with every chain
owning its own counter-based random stream so that results do not depend on
how chains are grouped or parallelised.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .coil_prior import prox_smoothness
from .mri import KSpaceData, grad_sigma_likelihood, grad_x_likelihood, zero_filled
from .prior import CharbonnierPrior, MixturePrior, PogmdmModel

__all__ = [
    "SamplerConfig",
    "ReconResult",
    "schedule",
    "corrector_eps",
    "ccdf_init",
    "posterior_sample",
    "estimate",
    "map_refine",
]


@dataclass
class SamplerConfig:
    N: int = 1000
    M_corr: int = 1
    lam: float = 1.0
    mu: float = 10.0
    zeta_min: float = 0.01
    zeta_max: float = 10.0
    snr_r: float = 0.16
    n_posterior: int = 10
    map_steps: int = 250
    map_lr: float = 0.001
    map_prior_weight: float = 1.0
    ccdf_start: float = 0.0
    noise_scale: float = 1.0
    keep_samples: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.M_corr < 0:
            raise ValueError("M_corr must be >= 0")
        if not 0 < self.zeta_min < self.zeta_max:
            raise ValueError("need 0 < zeta_min < zeta_max")
        if not 0 <= self.ccdf_start < 1:
            raise ValueError("ccdf_start must lie in [0, 1)")


@dataclass
class ReconResult:
    """Outputs of one reconstruction: posterior mean, spread, mode, coils."""

    mmse: np.ndarray
    variance: np.ndarray
    map_image: np.ndarray | None
    sensitivities: np.ndarray
    samples: np.ndarray | None = None


class SamplerDiverged(RuntimeError):
    pass


def schedule(cfg: SamplerConfig) -> np.ndarray:
    """Geometric noise levels zeta_0 .. zeta_N."""
    i = np.arange(cfg.N + 1)
    return cfg.zeta_min * (cfg.zeta_max / cfg.zeta_min) ** (i / cfg.N)


def corrector_eps(score: np.ndarray, noise: np.ndarray, snr_r: float) -> float:
    """Langevin step size from the target signal-to-noise ratio."""
    s = np.linalg.norm(np.asarray(score).ravel())
    if s == 0:
        return 0.0
    n = np.linalg.norm(np.asarray(noise).ravel())
    return float(2.0 * (snr_r * n / s) ** 2)


def _chain_generator(seed: int, chain: int) -> np.random.Generator:
    # counter-based bit stream keyed by (seed, chain): chains can run in any
    # grouping and still reproduce bit-identically
    key = (int(seed) & (2**64 - 1)) * 2**64 + int(chain)
    return np.random.Generator(np.random.Philox(key=key))


def start_index(cfg: SamplerConfig) -> int:
    return int(round((1.0 - cfg.ccdf_start) * cfg.N))


def ccdf_init(kdata: KSpaceData, cfg: SamplerConfig,
              rng: np.random.Generator) -> tuple[np.ndarray, int]:
    """Accelerated start: forward-noised zero-filled magnitude at level i0.

    With ``ccdf_start == 0`` this is the full schedule, starting from the
    data-derived image buried under noise at zeta_max.
    """
    i0 = start_index(cfg)
    zetas = schedule(cfg)
    _, rss = zero_filled(kdata)
    xi = rng.standard_normal((2, *kdata.shape))
    x0 = rss.astype(np.complex128) + zetas[i0] * cfg.noise_scale * (xi[0] + 1j * xi[1])
    return x0, i0


def _init_sigma(kdata: KSpaceData) -> np.ndarray:
    coils, rss = zero_filled(kdata)
    floor = max(rss.max(), 1.0) * 1e-12
    return coils / np.maximum(rss, floor)


def _check_finite(x: np.ndarray, level: int, phase: str):
    if not np.all(np.isfinite(x)):
        raise SamplerDiverged(f"non-finite iterate at level {level} after {phase}")


def _as_prior(prior, shape):
    if isinstance(prior, PogmdmModel):
        prior = MixturePrior(prior)
    if hasattr(prior, "with_shape"):
        prior = prior.with_shape(shape)
    return prior


def _run_chains(prior, kdata: KSpaceData, cfg: SamplerConfig,
                chains: list[int], sigma_init: np.ndarray | None = None):
    """Lockstep reverse diffusion for the given chain indices."""
    prior = _as_prior(prior, kdata.shape)
    zetas = schedule(cfg)
    gens = [_chain_generator(cfg.seed, c) for c in chains]
    n_ch = len(chains)

    inits = [ccdf_init(kdata, cfg, g) for g in gens]
    i0 = inits[0][1]
    x = np.stack([xi for xi, _ in inits])
    if sigma_init is None:
        sigma = np.broadcast_to(_init_sigma(kdata), (n_ch, kdata.n_coils, *kdata.shape)).copy()
    else:
        sigma = np.broadcast_to(
            np.asarray(sigma_init, dtype=np.complex128), (n_ch, kdata.n_coils, *kdata.shape)
        ).copy()

    def channels(xc):
        return np.stack([xc.real, xc.imag], axis=1)

    def recombine(ch):
        return ch[:, 0] + 1j * ch[:, 1]

    def data_step(xc):
        return xc - cfg.lam * grad_x_likelihood(xc, sigma, kdata)

    for i in range(i0 - 1, -1, -1):
        z_hi, z_lo = zetas[i + 1], zetas[i]
        dv = z_hi**2 - z_lo**2

        score_hi = prior.scorer(z_hi)
        ch = channels(x)
        sc = score_hi(ch)
        xi = np.stack([g.standard_normal((2, *kdata.shape)) for g in gens])
        ch = ch + dv * sc + np.sqrt(dv) * cfg.noise_scale * xi
        x = data_step(recombine(ch))
        _check_finite(x, i, "predictor")

        for _ in range(cfg.M_corr):
            score_lo = prior.scorer(z_lo)
            ch = channels(x)
            sc = score_lo(ch)
            xi = np.stack([g.standard_normal((2, *kdata.shape)) for g in gens])
            s_norm = np.sqrt((sc**2).sum(axis=(1, 2, 3)))
            n_norm = np.sqrt((xi**2).sum(axis=(1, 2, 3)))
            eps = np.where(s_norm > 0, 2.0 * (cfg.snr_r * n_norm / np.maximum(s_norm, 1e-300)) ** 2, 0.0)
            ch = ch + eps[:, None, None, None] * sc \
                + np.sqrt(2.0 * eps)[:, None, None, None] * cfg.noise_scale * xi
            x = data_step(recombine(ch))
            _check_finite(x, i, "corrector")

        if cfg.mu > 0:
            g_sigma = grad_sigma_likelihood(x, sigma, kdata)
            sigma = prox_smoothness(sigma - cfg.mu * g_sigma, cfg.mu)
            _check_finite(sigma, i, "sensitivity update")

    return x, sigma


def posterior_sample(prior, kdata: KSpaceData, cfg: SamplerConfig,
                     chain: int = 0, sigma_init: np.ndarray | None = None):
    """Endpoint (x, sigma) of a single posterior chain."""
    x, sigma = _run_chains(prior, kdata, cfg, [chain], sigma_init)
    return x[0], sigma[0]


def map_refine(prior, kdata: KSpaceData, x0: np.ndarray, sigma: np.ndarray,
               cfg: SamplerConfig) -> np.ndarray:
    """Accelerated gradient descent on the data term plus the prior energy.

    The sensitivities stay fixed; the prior is evaluated at the smallest
    noise level of the schedule on the real and imaginary parts.
    """
    prior = _as_prior(prior, kdata.shape)
    scorer = prior.scorer(cfg.zeta_min)
    x = np.asarray(x0, dtype=np.complex128).copy()
    x_prev = x.copy()
    for k in range(1, cfg.map_steps + 1):
        beta = (k - 1.0) / (k + 2.0)
        y = x + beta * (x - x_prev)
        sc = scorer(np.stack([y.real, y.imag]))
        grad = grad_x_likelihood(y, sigma, kdata) \
            - cfg.map_prior_weight * (sc[0] + 1j * sc[1])
        x_prev = x
        x = y - cfg.map_lr * grad
        _check_finite(x, k, "map step")
    return x


def estimate(prior, kdata: KSpaceData, cfg: SamplerConfig,
             with_map: bool = True) -> ReconResult:
    """Posterior mean, pixel-wise magnitude variance and optional mode.

    Runs ``n_posterior`` independent chains.  The worker count is capped by
    the POGMDM_THREADS environment variable; results are reduced in chain
    order regardless of the grouping.
    """
    if cfg.n_posterior < 1:
        raise ValueError("n_posterior must be >= 1")
    prior = _as_prior(prior, kdata.shape)
    chains = list(range(cfg.n_posterior))
    workers = int(os.environ.get("POGMDM_THREADS", "1") or "1")
    workers = max(1, min(workers, cfg.n_posterior))

    if workers == 1:
        x, sigma = _run_chains(prior, kdata, cfg, chains)
    else:
        groups = [chains[i::workers] for i in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda g: _run_chains(prior, kdata, cfg, g), groups))
        x = np.empty((cfg.n_posterior, *kdata.shape), dtype=np.complex128)
        sigma = np.empty((cfg.n_posterior, kdata.n_coils, *kdata.shape), dtype=np.complex128)
        for group, (xg, sg) in zip(groups, parts):
            for j, c in enumerate(group):
                x[c] = xg[j]
                sigma[c] = sg[j]

    mmse = x.mean(axis=0)
    variance = np.var(np.abs(x), axis=0)
    map_image = None
    if with_map and cfg.map_steps > 0:
        map_image = map_refine(prior, kdata, x[0], sigma[0], cfg)
    return ReconResult(
        mmse=mmse,
        variance=variance,
        map_image=map_image,
        sensitivities=sigma[0],
        samples=x if cfg.keep_samples else None,
    )
