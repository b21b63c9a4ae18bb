"""Non-separable shearlet filter bank built from two learnable blocks.

The bank is parameterised by a 9-tap one-dimensional low-pass filter ``h``,
a 17x17 directional generator ``P`` and one nonnegative weight per filter.
Filters are realised directly in the frequency domain, so analysis and its
adjoint are exact circular convolutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from . import _core
from ._core import CONES, H_LEN, MIN_SHAPE, N_FILTERS, N_SCALES, P_SIZE, SHEARS

__all__ = [
    "ShearletParams",
    "ShearletSystem",
    "build_system",
    "analyze",
    "adjoint",
    "N_FILTERS",
]

# 9-tap maximally flat half-band low-pass, a common quadrature mirror choice,
# rescaled to unit l2 norm for the default parameter set.
_DEFAULT_H = np.array(
    [
        0.0104933261758410,
        -0.0263483047033631,
        -0.0517766952966370,
        0.276348304703363,
        0.582566738241592,
        0.276348304703363,
        -0.0517766952966369,
        -0.0263483047033631,
        0.0104933261758408,
    ]
)
_DEFAULT_H /= np.linalg.norm(_DEFAULT_H)


def _default_p() -> np.ndarray:
    """Zero-mean directional generator with a flat-topped spectrum.

    Equiripple band-pass across rows times equiripple low-pass along columns:
    flat spectra keep the normalised filters spread out in frequency, which
    the noise-adapted mixture model needs to stay well conditioned.
    """
    bp = signal.remez(P_SIZE, [0.0, 0.04, 0.14, 1.0], [0.0, 1.0], fs=2.0)
    lp = signal.remez(P_SIZE, [0.0, 0.55, 0.75, 1.0], [1.0, 0.0], fs=2.0)
    p = np.outer(bp, lp)
    p -= p.mean()
    return p


@dataclass(frozen=True)
class ShearletParams:
    """Learnable building blocks of the filter bank."""

    h: np.ndarray
    P: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "h", np.asarray(self.h, dtype=np.float64))
        object.__setattr__(self, "P", np.asarray(self.P, dtype=np.float64))
        object.__setattr__(self, "gamma", np.asarray(self.gamma, dtype=np.float64))
        if self.h.shape != (H_LEN,):
            raise ValueError(f"h must have shape ({H_LEN},), got {self.h.shape}")
        if self.P.shape != (P_SIZE, P_SIZE):
            raise ValueError(f"P must have shape {(P_SIZE, P_SIZE)}, got {self.P.shape}")
        if self.gamma.shape != (N_FILTERS,):
            raise ValueError(f"gamma must have shape ({N_FILTERS},), got {self.gamma.shape}")
        if np.any(self.gamma < 0):
            raise ValueError("gamma must be nonnegative")

    @classmethod
    def default(cls, gamma: float | np.ndarray = 1.0) -> "ShearletParams":
        gamma = np.broadcast_to(np.asarray(gamma, dtype=np.float64), (N_FILTERS,))
        return cls(h=_DEFAULT_H.copy(), P=_default_p(), gamma=gamma.copy())


@dataclass(frozen=True)
class ShearletSystem:
    """Filter bank realised for one image shape.

    ``transfer[k]`` is the full DFT of the k-th (real) point-spread function;
    ``filter_norms[k]`` is the spatial l2 norm of that filter.  Instances are
    immutable and safe to share across threads.
    """

    params: ShearletParams
    shape: tuple[int, int]
    transfer: np.ndarray = field(repr=False)
    filter_norms: np.ndarray

    @property
    def n_filters(self) -> int:
        return N_FILTERS


def build_system(params: ShearletParams, shape: tuple[int, int]) -> ShearletSystem:
    """Construct the 20-filter bank for images of the given shape.

    For each scale j the separable low-pass spectrum of the dilated taps is
    removed (high-pass residual) and multiplied with the spectrum of the
    sheared directional generator; the result is normalised to unit l2 norm
    and scaled by the per-filter weight.
    """
    n, m = int(shape[0]), int(shape[1])
    if min(n, m) < MIN_SHAPE:
        raise ValueError(f"shape too small: need at least {MIN_SHAPE}x{MIN_SHAPE}, got {n}x{m}")
    transfer, norms = _core.filter_spectra_jit(
        np.asarray(params.h), np.asarray(params.P), np.asarray(params.gamma), n, m
    )
    return ShearletSystem(
        params=params,
        shape=(n, m),
        transfer=np.asarray(transfer, dtype=np.complex128),
        filter_norms=np.asarray(norms, dtype=np.float64),
    )


def analyze(system: ShearletSystem, x: np.ndarray) -> np.ndarray:
    """Filter responses (o, n, m): circular convolution with every filter."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != system.shape:
        raise ValueError(f"image shape {x.shape} does not match system shape {system.shape}")
    spec = np.fft.fft2(x)
    return np.fft.ifft2(system.transfer * spec[None, :, :]).real


def adjoint(system: ShearletSystem, responses: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`analyze`: sum of correlations with every filter."""
    responses = np.asarray(responses, dtype=np.float64)
    if responses.shape != (N_FILTERS, *system.shape):
        raise ValueError(
            f"responses must have shape {(N_FILTERS, *system.shape)}, got {responses.shape}"
        )
    spec = np.sum(np.conj(system.transfer) * np.fft.fft2(responses), axis=0)
    return np.fft.ifft2(spec).real


def spatial_filters(system: ShearletSystem) -> np.ndarray:
    """Point-spread functions (o, n, m), centred at the origin pixel."""
    return np.fft.ifft2(system.transfer).real
