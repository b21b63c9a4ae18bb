"""Binary containers, PNG export, synthetic datasets and TOML configuration.

All containers are little-endian with a four-byte magic and an explicit
version field; readers reject unknown magics and versions and report the
file offset of the failure.  PNG output is for inspection only and maps
[0, peak] linearly to 8 bits.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np
import tomli
from PIL import Image
from scipy import ndimage

from . import mri
from ._core import (
    H_LEN,
    MEANS,
    N_COMPONENTS,
    N_FILTERS,
    N_FREE_WEIGHTS,
    P_SIZE,
    BASE_STD,
)
from .mri import KSpaceData, SamplingMask
from .prior import PogmdmModel
from .shearlet import ShearletParams

__all__ = [
    "write_model",
    "read_model",
    "write_kspace",
    "read_kspace",
    "write_image",
    "read_image",
    "export_png",
    "synthesize_images",
    "make_dataset",
    "load_dataset",
    "load_toml",
    "save_recon_result",
]

MODEL_MAGIC = b"PGDM"
KSPACE_MAGIC = b"KSPC"
IMAGE_MAGIC = b"PGIM"
VERSION = 1


class ContainerError(ValueError):
    pass


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise ContainerError(
            f"truncated file while reading {what} at offset {fh.tell() - len(data)}"
        )
    return data


def _check_header(fh, magic: bytes):
    got = _read_exact(fh, 4, "magic")
    if got != magic:
        raise ContainerError(f"bad magic {got!r} at offset 0, expected {magic!r}")
    (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
    if version != VERSION:
        raise ContainerError(f"unsupported version {version} at offset 4")


# -- model container --------------------------------------------------------


def write_model(path, params: dict | ShearletParams, free_weights=None):
    """Serialise the shape-independent learnable parameters.

    Accepts either a parameter dict (keys h, P, gamma, free_weights) or a
    ShearletParams plus the free mixture weights.
    """
    if isinstance(params, dict):
        h, p, gamma = params["h"], params["P"], params["gamma"]
        free_weights = params["free_weights"]
    else:
        h, p, gamma = params.h, params.P, params.gamma
    free_weights = np.asarray(free_weights, dtype=np.float64)
    if free_weights.shape != (N_FILTERS, N_FREE_WEIGHTS):
        raise ValueError(f"free_weights must have shape {(N_FILTERS, N_FREE_WEIGHTS)}")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(np.asarray(h, dtype="<f8").tobytes())
        fh.write(np.asarray(p, dtype="<f8").tobytes())
        fh.write(np.asarray(gamma, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", N_COMPONENTS))
        fh.write(struct.pack("<dd", float(MEANS[0]), float(MEANS[-1])))
        fh.write(struct.pack("<d", BASE_STD))
        fh.write(free_weights.astype("<f8").tobytes())


def read_model(path) -> dict:
    """Parameter dict from a model container (bit-exact round trip)."""
    with open(path, "rb") as fh:
        _check_header(fh, MODEL_MAGIC)
        h = np.frombuffer(_read_exact(fh, 8 * H_LEN, "taps"), dtype="<f8").copy()
        p = np.frombuffer(
            _read_exact(fh, 8 * P_SIZE**2, "generator"), dtype="<f8"
        ).reshape(P_SIZE, P_SIZE).copy()
        gamma = np.frombuffer(_read_exact(fh, 8 * N_FILTERS, "gamma"), dtype="<f8").copy()
        (ncomp,) = struct.unpack("<I", _read_exact(fh, 4, "component count"))
        lo, hi = struct.unpack("<dd", _read_exact(fh, 16, "mean grid"))
        (base_std,) = struct.unpack("<d", _read_exact(fh, 8, "base std"))
        if ncomp != N_COMPONENTS or (lo, hi) != (float(MEANS[0]), float(MEANS[-1])):
            raise ContainerError("mean grid specification does not match this build")
        if base_std != BASE_STD:
            raise ContainerError("base std does not match this build")
        free = np.frombuffer(
            _read_exact(fh, 8 * N_FILTERS * N_FREE_WEIGHTS, "free weights"), dtype="<f8"
        ).reshape(N_FILTERS, N_FREE_WEIGHTS).copy()
    return {"h": h, "P": p, "gamma": gamma, "free_weights": free}


def model_from_file(path, shape: tuple[int, int]) -> PogmdmModel:
    params = read_model(path)
    sp = ShearletParams(h=params["h"], P=params["P"], gamma=params["gamma"])
    return PogmdmModel.create(sp, params["free_weights"], shape)


# -- k-space container ------------------------------------------------------


def write_kspace(path, kdata: KSpaceData):
    """Mask bitmap plus per-coil complex64 samples."""
    n, m = kdata.shape
    bits = np.packbits(kdata.mask.indicator.ravel())
    with open(path, "wb") as fh:
        fh.write(KSPACE_MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<IIII", n, m, kdata.n_coils, kdata.mask.n_sampled))
        fh.write(struct.pack("<d", float(kdata.noise_std)))
        fh.write(bits.tobytes())
        fh.write(kdata.data.astype("<c8").tobytes())


def read_kspace(path) -> KSpaceData:
    with open(path, "rb") as fh:
        _check_header(fh, KSPACE_MAGIC)
        n, m, c, f = struct.unpack("<IIII", _read_exact(fh, 16, "dimensions"))
        (noise_std,) = struct.unpack("<d", _read_exact(fh, 8, "noise std"))
        nbits = (n * m + 7) // 8
        bits = np.frombuffer(_read_exact(fh, nbits, "mask bitmap"), dtype=np.uint8)
        indicator = np.unpackbits(bits)[: n * m].astype(bool).reshape(n, m)
        if int(indicator.sum()) != f:
            raise ContainerError("mask bitmap does not match the sample count")
        data = np.frombuffer(
            _read_exact(fh, 8 * c * f, "samples"), dtype="<c8"
        ).reshape(c, f).astype(np.complex128)
    mask = SamplingMask(
        indicator=indicator,
        pattern="stored",
        acceleration=n * m / max(f, 1),
        acl_fraction=None,
        seed=0,
    )
    return KSpaceData(data=data, mask=mask, noise_std=noise_std)


# -- image container --------------------------------------------------------

_DTYPE_TAGS = {0: "<f8", 1: "<c16"}


def write_image(path, img: np.ndarray):
    img = np.asarray(img)
    if np.iscomplexobj(img):
        tag, dt = 1, "<c16"
    else:
        tag, dt = 0, "<f8"
    n, m = img.shape
    with open(path, "wb") as fh:
        fh.write(IMAGE_MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<IIB", n, m, tag))
        fh.write(img.astype(dt).tobytes())


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        _check_header(fh, IMAGE_MAGIC)
        n, m, tag = struct.unpack("<IIB", _read_exact(fh, 9, "image header"))
        if tag not in _DTYPE_TAGS:
            raise ContainerError(f"unknown dtype tag {tag} at offset 12")
        dt = np.dtype(_DTYPE_TAGS[tag])
        data = _read_exact(fh, dt.itemsize * n * m, "image data")
    return np.frombuffer(data, dtype=dt).reshape(n, m).copy()


def export_png(path, img: np.ndarray, vmax: float | None = None):
    """Magnitude image mapped linearly from [0, vmax] to 8 bits."""
    arr = np.abs(np.asarray(img)).astype(np.float64)
    peak = float(arr.max()) if vmax is None else float(vmax)
    if peak <= 0:
        out = np.zeros(arr.shape, dtype=np.uint8)
    else:
        out = np.clip(arr / peak * 255.0, 0.0, 255.0).astype(np.uint8)
    Image.fromarray(out, mode="L").save(path)


# -- synthetic training data ------------------------------------------------


def synthesize_images(kind: str, count: int, shape: tuple[int, int],
                      seed: int = 0) -> np.ndarray:
    """Piecewise-smooth training images with max intensity exactly 1."""
    if kind not in ("ellipses", "shepp-logan"):
        raise ValueError(f"unknown dataset kind {kind!r}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    out = np.empty((count, *shape))
    for i in range(count):
        if kind == "shepp-logan":
            img = np.abs(mri.phantom(shape, "shepp-logan"))
            img = ndimage.rotate(img, float(rng.uniform(0, 360)), reshape=False, order=1)
            img = np.clip(img, 0.0, None)
        else:
            img = np.clip(
                mri._render_ellipses(shape, mri.random_ellipse_table(rng)), 0.0, None
            )
        background = ndimage.gaussian_filter(rng.standard_normal(shape), 0.2 * min(shape))
        background = 0.15 * background / max(np.abs(background).max(), 1e-12)
        texture = ndimage.gaussian_filter(rng.standard_normal(shape), 1.0)
        texture = 0.05 * texture / max(np.abs(texture).max(), 1e-12)
        img = np.clip(img + background + texture * (img > 0.05), 0.0, None)
        peak = img.max()
        if peak <= 0:
            img[shape[0] // 2, shape[1] // 2] = 1.0
            peak = 1.0
        out[i] = img / peak
    return out


def make_dataset(kind: str, count: int, shape: tuple[int, int], seed: int,
                 out_dir) -> list[Path]:
    """Write a directory of image containers, one per sample."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = synthesize_images(kind, count, shape, seed)
    paths = []
    for i, img in enumerate(images):
        path = out_dir / f"img_{i:05d}.bin"
        write_image(path, img)
        paths.append(path)
    return paths


def load_dataset(data_dir) -> np.ndarray:
    """Stack of real images from every .bin container in a directory."""
    paths = sorted(Path(data_dir).glob("*.bin"))
    if not paths:
        raise FileNotFoundError(f"no .bin image containers in {data_dir}")
    images = [np.real(read_image(p)) for p in paths]
    return np.stack(images)


# -- configuration ----------------------------------------------------------


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomli.load(fh)


def apply_config(cfg, table: dict):
    """Return a copy of a config dataclass updated from a TOML table."""
    import dataclasses

    valid = {f.name for f in dataclasses.fields(cfg)}
    unknown = set(table) - valid
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return dataclasses.replace(cfg, **table)


# -- reconstruction outputs -------------------------------------------------


def save_recon_result(out_dir, result, vmax: float | None = None) -> list[Path]:
    """Write binary and PNG versions of every reconstruction output."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(stem: str, arr: np.ndarray):
        bin_path = out_dir / f"{stem}.bin"
        write_image(bin_path, arr)
        export_png(out_dir / f"{stem}.png", arr, vmax=vmax)
        written.extend([bin_path, out_dir / f"{stem}.png"])

    emit("mmse", result.mmse)
    emit("variance", result.variance)
    if result.map_image is not None:
        emit("map", result.map_image)
    for i in range(result.sensitivities.shape[0]):
        export_png(out_dir / f"sens_{i}.png", result.sensitivities[i])
        written.append(out_dir / f"sens_{i}.png")
        write_image(out_dir / f"sens_{i}.bin", result.sensitivities[i])
        written.append(out_dir / f"sens_{i}.bin")
    return written
