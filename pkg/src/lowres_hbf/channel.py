"""Clustered mmWave channel generation and dataset persistence.

Each user's downlink channel is a sum of ``L`` rank-one path contributions

    H_k = sqrt(N_t N_r / L) * sum_l alpha_l a_r(phi_r, theta_r) a_t(phi_t, theta_t)^H

with i.i.d. CN(0, 1) path gains and uniform-planar-array steering vectors.
Path angles are Laplacian around a uniformly drawn cluster mean.

Random streams
--------------
All randomness comes from numpy's PCG64 bit generator. Sample ``i`` of
stream ``s`` for a config seed ``seed`` uses
``SeedSequence(seed, spawn_key=(s, i))``, so any sample can be regenerated
independently of the others and serial/parallel generation agree.

Within one channel draw the order of consumption is, per user: cluster means
``(rx az, rx el, tx az, tx el)``, then ``L`` rx azimuth offsets, ``L`` rx
elevation offsets, ``L`` tx azimuth offsets, ``L`` tx elevation offsets, then
``L`` real and ``L`` imaginary gain parts.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ArrayGeometry",
    "ChannelConfig",
    "ChannelSample",
    "Dataset",
    "DatasetFormatError",
    "upa_response",
    "upa_responses",
    "sample_path_angles",
    "path_channel",
    "generate_channel",
    "sample_rng",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
]

DATASET_MAGIC = b"HBFD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sI4I3dQ")
_COUNT = struct.Struct("<Q")


class DatasetFormatError(ValueError):
    """A dataset file is malformed or inconsistent with its header."""


@dataclass(frozen=True)
class ArrayGeometry:
    """Square uniform planar array with ``n_elements = side**2`` antennas."""

    n_elements: int
    spacing_over_wavelength: float = 0.5

    def __post_init__(self):
        side = math.isqrt(self.n_elements) if self.n_elements >= 1 else 0
        if self.n_elements < 1 or side * side != self.n_elements:
            raise ValueError(f"UPA size must be a perfect square >= 1, got {self.n_elements}")
        if not self.spacing_over_wavelength > 0:
            raise ValueError("antenna spacing must be positive")

    @property
    def side(self) -> int:
        return math.isqrt(self.n_elements)


@dataclass(frozen=True)
class ChannelConfig:
    """Dimensions and statistics of the multiuser channel.

    ``tx_geometry`` / ``rx_geometry`` default to half-wavelength UPAs of the
    right size. ``angle_spread_convention`` is ``"std"`` (spread is the
    Laplacian standard deviation) or ``"scale"`` (spread is the Laplacian
    scale ``b``). With ``per_path_means`` each path gets its own uniform mean
    angle instead of sharing the user's cluster mean.
    """

    n_tx: int
    n_rx: int
    n_users: int
    n_paths: int = 10
    angle_spread_deg: float = 10.0
    tx_geometry: ArrayGeometry | None = None
    rx_geometry: ArrayGeometry | None = None
    seed: int = 0
    angle_spread_convention: str = field(default="std", compare=False)
    per_path_means: bool = field(default=False, compare=False)

    def __post_init__(self):
        for name in ("n_tx", "n_rx", "n_users", "n_paths"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not self.angle_spread_deg > 0:
            raise ValueError("angle_spread_deg must be positive")
        if self.tx_geometry is None:
            object.__setattr__(self, "tx_geometry", ArrayGeometry(self.n_tx))
        if self.rx_geometry is None:
            object.__setattr__(self, "rx_geometry", ArrayGeometry(self.n_rx))
        if self.tx_geometry.n_elements != self.n_tx or self.rx_geometry.n_elements != self.n_rx:
            raise ValueError("array geometry sizes must match n_tx / n_rx")
        if self.angle_spread_convention not in ("std", "scale"):
            raise ValueError("angle_spread_convention must be 'std' or 'scale'")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    @property
    def laplace_scale(self) -> float:
        spread = math.radians(self.angle_spread_deg)
        return spread / math.sqrt(2.0) if self.angle_spread_convention == "std" else spread


@dataclass(frozen=True)
class ChannelSample:
    """Per-user channels stacked as an array of shape ``(K, N_r, N_t)``."""

    per_user: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.per_user, dtype=np.complex128)
        if h.ndim != 3:
            raise ValueError(f"expected (K, N_r, N_t) channels, got shape {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValueError("channel has non-finite entries")
        object.__setattr__(self, "per_user", h)

    @property
    def n_users(self) -> int:
        return self.per_user.shape[0]

    def __getitem__(self, k) -> np.ndarray:
        return self.per_user[k]

    def __iter__(self):
        return iter(self.per_user)

    def __len__(self):
        return self.n_users


@dataclass
class Dataset:
    """A batch of channel samples, stored as one ``(n, K, N_r, N_t)`` array."""

    config: ChannelConfig
    channels: np.ndarray

    def __post_init__(self):
        c = self.config
        expected = (c.n_users, c.n_rx, c.n_tx)
        if self.channels.ndim != 4 or self.channels.shape[1:] != expected:
            raise ValueError(f"channels of shape {self.channels.shape} do not match config {expected}")

    def __len__(self):
        return self.channels.shape[0]

    def __getitem__(self, i) -> ChannelSample:
        return ChannelSample(self.channels[i])

    @property
    def samples(self) -> list[ChannelSample]:
        return [ChannelSample(h) for h in self.channels]

    def user_rows(self) -> np.ndarray:
        """All per-user matrices flattened to shape ``(n*K, N_r, N_t)``."""
        return self.channels.reshape(-1, self.config.n_rx, self.config.n_tx)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.config == other.config and np.array_equal(self.channels, other.channels)


def upa_responses(geom: ArrayGeometry, azimuth, elevation) -> np.ndarray:
    """Steering vectors for arrays of angles, one column per angle pair.

    Element ``(m, n)`` sits at flat index ``m * side + n`` (m-major).
    """
    az = np.atleast_1d(np.asarray(azimuth, dtype=float))
    el = np.atleast_1d(np.asarray(elevation, dtype=float))
    side = geom.side
    idx = np.arange(side, dtype=float)
    m = np.repeat(idx, side)[:, None]
    n = np.tile(idx, side)[:, None]
    phase = 2 * np.pi * geom.spacing_over_wavelength * (
        m * (np.sin(az) * np.sin(el))[None, :] + n * np.cos(el)[None, :]
    )
    return np.exp(1j * phase) / math.sqrt(geom.n_elements)


def upa_response(geom: ArrayGeometry, azimuth_rad: float, elevation_rad: float) -> np.ndarray:
    """Unit-norm UPA steering vector for one (azimuth, elevation) pair."""
    return upa_responses(geom, azimuth_rad, elevation_rad)[:, 0]


def sample_path_angles(mean_azimuth, mean_elevation, spread_deg, rng, size=None, convention="std"):
    """Laplacian-perturbed azimuth/elevation around the given means.

    With ``convention="std"`` the draw has standard deviation ``spread_deg``
    (in radians), i.e. scale ``b = spread / sqrt(2)``.
    """
    spread = math.radians(spread_deg)
    b = spread / math.sqrt(2.0) if convention == "std" else spread
    az = mean_azimuth + rng.laplace(0.0, b, size=size)
    el = mean_elevation + rng.laplace(0.0, b, size=size)
    return az, el


def path_channel(tx_geometry, rx_geometry, gains, rx_az, rx_el, tx_az, tx_el) -> np.ndarray:
    """Sum of rank-one path terms with the ``sqrt(N_t N_r / L)`` normalisation."""
    gains = np.atleast_1d(np.asarray(gains, dtype=np.complex128))
    a_r = upa_responses(rx_geometry, rx_az, rx_el)
    a_t = upa_responses(tx_geometry, tx_az, tx_el)
    norm = math.sqrt(tx_geometry.n_elements * rx_geometry.n_elements / gains.shape[0])
    return norm * (a_r * gains[None, :]) @ np.conj(a_t).T


def _user_channel(config: ChannelConfig, rng) -> np.ndarray:
    L = config.n_paths
    means = rng.uniform(0.0, 2 * np.pi, size=(4, L) if config.per_path_means else 4)
    b = config.laplace_scale
    rx_az = means[0] + rng.laplace(0.0, b, size=L)
    rx_el = means[1] + rng.laplace(0.0, b, size=L)
    tx_az = means[2] + rng.laplace(0.0, b, size=L)
    tx_el = means[3] + rng.laplace(0.0, b, size=L)
    gains = (rng.standard_normal(L) + 1j * rng.standard_normal(L)) / math.sqrt(2.0)
    return path_channel(config.tx_geometry, config.rx_geometry, gains, rx_az, rx_el, tx_az, tx_el)


def generate_channel(config: ChannelConfig, rng) -> ChannelSample:
    """Draw one multiuser channel realisation from ``rng``."""
    return ChannelSample(np.stack([_user_channel(config, rng) for _ in range(config.n_users)]))


def sample_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for sample ``index`` of ``stream``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, index))))


def generate_dataset(config: ChannelConfig, n_samples: int, stream: int = 0) -> Dataset:
    """Generate ``n_samples`` independent channels from the config seed.

    ``stream`` selects a disjoint family of substreams (train/val/test use
    different streams).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    chans = np.empty((n_samples, config.n_users, config.n_rx, config.n_tx), dtype=np.complex128)
    for i in range(n_samples):
        chans[i] = generate_channel(config, sample_rng(config.seed, i, stream)).per_user
    return Dataset(config, chans)


def _config_header(config: ChannelConfig) -> bytes:
    return _HEADER.pack(
        DATASET_MAGIC,
        DATASET_VERSION,
        config.n_tx,
        config.n_rx,
        config.n_users,
        config.n_paths,
        config.angle_spread_deg,
        config.tx_geometry.spacing_over_wavelength,
        config.rx_geometry.spacing_over_wavelength,
        config.seed,
    )


def save_dataset(d: Dataset, path) -> None:
    """Write ``d`` in the little-endian ``HBFD`` binary format."""
    payload = np.ascontiguousarray(d.channels, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(_config_header(d.config))
        fh.write(_COUNT.pack(len(d)))
        fh.write(payload)


def load_dataset(path) -> Dataset:
    """Read a dataset written by :func:`save_dataset`.

    Raises
    ------
    DatasetFormatError
        Bad magic, unsupported version, invalid header values, or a payload
        whose length disagrees with the header.
    """
    data = Path(path).read_bytes()
    head = _HEADER.size + _COUNT.size
    if len(data) < 4 or data[:4] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: not an HBFD dataset (bad magic)")
    if len(data) < head:
        raise DatasetFormatError(f"{path}: truncated header")
    magic, version, n_tx, n_rx, n_users, n_paths, spread, d_tx, d_rx, seed = _HEADER.unpack_from(data)
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    (n_samples,) = _COUNT.unpack_from(data, _HEADER.size)
    try:
        config = ChannelConfig(
            n_tx=n_tx,
            n_rx=n_rx,
            n_users=n_users,
            n_paths=n_paths,
            angle_spread_deg=spread,
            tx_geometry=ArrayGeometry(n_tx, d_tx),
            rx_geometry=ArrayGeometry(n_rx, d_rx),
            seed=seed,
        )
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: inconsistent header: {exc}") from exc
    expected = n_samples * n_users * n_rx * n_tx * 16
    if len(data) - head != expected:
        raise DatasetFormatError(
            f"{path}: payload is {len(data) - head} bytes, header implies {expected}"
        )
    chans = np.frombuffer(data, dtype="<c16", offset=head).reshape(n_samples, n_users, n_rx, n_tx)
    return Dataset(config, chans.astype(np.complex128))
