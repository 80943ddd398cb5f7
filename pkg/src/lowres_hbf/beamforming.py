"""Discrete-phase analog stage, MMSE baseband stage and sum-rate evaluation.

Conventions: ``F_RF`` is ``N_t x K`` (one analog column per user), ``F_BB``
is ``K x K``, ``w_RF[k]`` has length ``N_r``. The per-user baseband
equaliser is fixed to 1 because it cancels in the SINR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .numerics import DimensionError, SingularMatrixError, as_cmatrix, frobenius_norm, inverse

__all__ = [
    "PhaseAlphabet",
    "UserDesign",
    "AnalogDesign",
    "HybridBeamformer",
    "SystemConfig",
    "realize_analog",
    "realize_user",
    "equivalent_channel",
    "mmse_baseband",
    "regularized_mse",
    "normalize_power",
    "sinr",
    "sinrs",
    "sum_rate",
    "design_users",
    "assemble_beamformer",
    "two_stage_beamformer",
]


@dataclass(frozen=True)
class PhaseAlphabet:
    """``modulus * exp(j 2 pi b / 2**bits)`` for ``b = 0 .. 2**bits - 1``."""

    bits: int
    modulus: float

    def __post_init__(self):
        if self.bits < 0:
            raise ValueError("bits must be nonnegative")
        if not self.modulus > 0:
            raise ValueError("modulus must be positive")

    @classmethod
    def for_array(cls, bits: int, n_elements: int) -> "PhaseAlphabet":
        return cls(bits, 1.0 / math.sqrt(n_elements))

    @property
    def size(self) -> int:
        return 2**self.bits

    @property
    def phases(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.size) / self.size

    @property
    def values(self) -> np.ndarray:
        return self.modulus * np.exp(1j * self.phases)

    def realize(self, indices) -> np.ndarray:
        idx = np.asarray(indices)
        if idx.size and (idx.min() < 0 or idx.max() >= self.size):
            raise ValueError(f"phase index out of range for {self.bits}-bit alphabet")
        return self.values[idx]


@dataclass(frozen=True)
class UserDesign:
    """Phase indices of one user's analog precoder column and combiner."""

    tx: np.ndarray
    rx: np.ndarray
    bits: int

    def __post_init__(self):
        tx = np.asarray(self.tx, dtype=np.int64)
        rx = np.asarray(self.rx, dtype=np.int64)
        n = 2**self.bits
        if tx.ndim != 1 or rx.ndim != 1:
            raise ValueError("phase index vectors must be 1-D")
        if np.any(tx < 0) or np.any(tx >= n) or np.any(rx < 0) or np.any(rx >= n):
            raise ValueError(f"phase index out of range [0, {n})")
        object.__setattr__(self, "tx", tx)
        object.__setattr__(self, "rx", rx)

    def __eq__(self, other):
        if not isinstance(other, UserDesign):
            return NotImplemented
        return self.bits == other.bits and np.array_equal(self.tx, other.tx) and np.array_equal(self.rx, other.rx)

    def vectors(self):
        """Realised ``(f, w)`` with moduli ``1/sqrt(N_t)`` and ``1/sqrt(N_r)``."""
        f = PhaseAlphabet.for_array(self.bits, self.tx.size).realize(self.tx)
        w = PhaseAlphabet.for_array(self.bits, self.rx.size).realize(self.rx)
        return f, w


@dataclass(frozen=True)
class AnalogDesign:
    """Analog design for all users: index arrays of shape ``(K, N_t)`` and ``(K, N_r)``."""

    tx_phase_indices: np.ndarray
    rx_phase_indices: np.ndarray
    bits: int

    def __post_init__(self):
        tx = np.asarray(self.tx_phase_indices, dtype=np.int64)
        rx = np.asarray(self.rx_phase_indices, dtype=np.int64)
        if tx.ndim != 2 or rx.ndim != 2 or tx.shape[0] != rx.shape[0]:
            raise ValueError("expected (K, N_t) and (K, N_r) index arrays")
        n = 2**self.bits
        if np.any(tx < 0) or np.any(tx >= n) or np.any(rx < 0) or np.any(rx >= n):
            raise ValueError(f"phase index out of range [0, {n})")
        object.__setattr__(self, "tx_phase_indices", tx)
        object.__setattr__(self, "rx_phase_indices", rx)

    @classmethod
    def from_users(cls, users: Sequence[UserDesign]) -> "AnalogDesign":
        bits = {u.bits for u in users}
        if len(bits) != 1:
            raise ValueError("all users must share one phase resolution")
        return cls(np.stack([u.tx for u in users]), np.stack([u.rx for u in users]), bits.pop())

    @property
    def n_users(self) -> int:
        return self.tx_phase_indices.shape[0]

    def user(self, k: int) -> UserDesign:
        return UserDesign(self.tx_phase_indices[k], self.rx_phase_indices[k], self.bits)


@dataclass(frozen=True)
class SystemConfig:
    """Total transmit power ``P``, noise variance and user count."""

    power_total: float
    noise_var: float
    n_users: int

    def __post_init__(self):
        if not self.power_total > 0:
            raise ValueError("power_total must be positive")
        if not self.noise_var > 0:
            raise ValueError("noise_var must be positive")
        if self.n_users < 1:
            raise ValueError("n_users must be >= 1")

    @classmethod
    def from_snr_db(cls, snr_db: float, n_users: int, power_total: float = 1.0) -> "SystemConfig":
        """SNR = P / (K sigma^2)."""
        return cls(power_total, power_total / (n_users * 10 ** (snr_db / 10)), n_users)

    @property
    def snr_db(self) -> float:
        return 10 * math.log10(self.power_total / (self.n_users * self.noise_var))


@dataclass(frozen=True)
class HybridBeamformer:
    f_rf: np.ndarray
    f_bb: np.ndarray
    w_rf: tuple

    @property
    def n_users(self) -> int:
        return self.f_bb.shape[1]

    def check(self, atol: float = 1e-10) -> None:
        """Raise ``ValueError`` unless the modulus and power constraints hold."""
        n_t = self.f_rf.shape[0]
        if not np.allclose(np.abs(self.f_rf), 1 / math.sqrt(n_t), rtol=0, atol=1e-12):
            raise ValueError("analog precoder entries must have modulus 1/sqrt(N_t)")
        for w in self.w_rf:
            if not np.allclose(np.abs(w), 1 / math.sqrt(w.size), rtol=0, atol=1e-12):
                raise ValueError("analog combiner entries must have modulus 1/sqrt(N_r)")
        power = frobenius_norm(self.f_rf @ self.f_bb) ** 2
        if abs(power - self.n_users) > atol:
            raise ValueError(f"power constraint violated: {power} != {self.n_users}")


def realize_user(design: UserDesign):
    return design.vectors()


def realize_analog(design: AnalogDesign):
    """Map phase indices to ``(F_RF, [w_RF_k])``."""
    users = [design.user(k) for k in range(design.n_users)]
    pairs = [u.vectors() for u in users]
    f_rf = np.stack([f for f, _ in pairs], axis=1)
    return f_rf, [w for _, w in pairs]


def _stack_channels(h) -> np.ndarray:
    per_user = getattr(h, "per_user", h)
    arr = np.asarray(per_user, dtype=np.complex128)
    if arr.ndim != 3:
        raise DimensionError(f"expected (K, N_r, N_t) channels, got shape {arr.shape}")
    return arr


def equivalent_channel(h, f_rf, w_rf) -> np.ndarray:
    """``K x K`` matrix whose column k is ``(w_k^H H_k F_RF)^H``."""
    chans = _stack_channels(h)
    f_rf = as_cmatrix(f_rf)
    k_users, n_r, n_t = chans.shape
    if f_rf.shape[0] != n_t or len(w_rf) != k_users:
        raise DimensionError("analog precoder/combiners do not match channel dimensions")
    cols = []
    for k in range(k_users):
        w = np.asarray(w_rf[k], dtype=np.complex128)
        if w.shape != (n_r,):
            raise DimensionError(f"combiner {k} has shape {w.shape}, expected ({n_r},)")
        cols.append(np.conj(np.conj(w) @ chans[k] @ f_rf))
    return np.stack(cols, axis=1)


def mmse_baseband(h_eq, f_rf, sys: SystemConfig, on_singular: str = "raise") -> np.ndarray:
    """MMSE baseband precoder before power normalisation.

    ``(H_eq H_eq^H + (K sigma^2 / P) F_RF^H F_RF)^{-1} H_eq``; the regulariser
    uses the ``K x K`` Gram matrix of the analog precoder.

    The system is singular when two users share an analog column. With
    ``on_singular="pinv"`` the minimum-norm minimiser (pseudo-inverse) is
    returned instead of raising :class:`SingularMatrixError`.
    """
    h_eq = as_cmatrix(h_eq)
    f_rf = as_cmatrix(f_rf)
    reg = sys.n_users * sys.noise_var / sys.power_total
    gram = h_eq @ np.conj(h_eq).T + reg * (np.conj(f_rf).T @ f_rf)
    try:
        return inverse(gram) @ h_eq
    except SingularMatrixError:
        if on_singular != "pinv":
            raise
        return np.linalg.pinv(gram, hermitian=True) @ h_eq


def regularized_mse(f_bb, h_eq, f_rf, sys: SystemConfig) -> float:
    """``||H_eq^H F_BB - I||_F^2 + (K sigma^2 / P) ||F_RF F_BB||_F^2``.

    :func:`mmse_baseband` is the unique minimiser of this objective.
    """
    k = h_eq.shape[1]
    reg = sys.n_users * sys.noise_var / sys.power_total
    resid = np.conj(h_eq).T @ f_bb - np.eye(k)
    return frobenius_norm(resid) ** 2 + reg * frobenius_norm(f_rf @ f_bb) ** 2


def normalize_power(f_rf, f_bb, k: int) -> np.ndarray:
    """Scale ``f_bb`` by one real factor so that ``||F_RF F_BB||_F^2 = k``."""
    norm = frobenius_norm(np.asarray(f_rf) @ np.asarray(f_bb))
    if norm == 0.0:
        raise ArithmeticError("cannot normalise a zero precoder product")
    return np.asarray(f_bb, dtype=np.complex128) * (math.sqrt(k) / norm)


def sinrs(h, bf: HybridBeamformer, sys: SystemConfig) -> np.ndarray:
    """SINR of every user."""
    chans = _stack_channels(h)
    k_users = chans.shape[0]
    out = np.empty(k_users)
    scale = sys.power_total / sys.n_users
    for k in range(k_users):
        w = np.asarray(bf.w_rf[k])
        g = np.conj(w) @ chans[k] @ bf.f_rf @ bf.f_bb
        p = np.abs(g) ** 2
        signal = scale * p[k]
        interference = scale * (p.sum() - p[k])
        out[k] = signal / (interference + sys.noise_var * np.vdot(w, w).real)
    return out


def sinr(h, bf: HybridBeamformer, sys: SystemConfig, user: int) -> float:
    return float(sinrs(h, bf, sys)[user])


def sum_rate(h, bf: HybridBeamformer, sys: SystemConfig) -> float:
    """Sum of ``log2(1 + SINR_k)`` in bit/s/Hz."""
    return float(np.sum(np.log2(1.0 + sinrs(h, bf, sys))))


Designer = Callable[[np.ndarray], UserDesign]


def design_users(h, designer: Designer) -> AnalogDesign:
    """Stage one: run ``designer`` on every user's channel independently.

    Designers exposing ``design_batch(channels) -> (tx, rx)`` are called once
    for all users.
    """
    chans = _stack_channels(h)
    batch = getattr(designer, "design_batch", None)
    if batch is not None:
        tx, rx = batch(chans)
        return AnalogDesign(tx, rx, designer.bits)
    return AnalogDesign.from_users([designer(hk) for hk in chans])


def assemble_beamformer(h, design: AnalogDesign, sys: SystemConfig, on_singular: str = "raise") -> HybridBeamformer:
    """Stage two for a fixed analog design: equivalent channel, MMSE, normalisation."""
    chans = _stack_channels(h)
    k_users = chans.shape[0]
    if sys.n_users != k_users or design.n_users != k_users:
        raise ValueError(
            f"system has {sys.n_users} users, channel {k_users}, design {design.n_users}; "
            "the analog precoder needs one RF chain per user"
        )
    f_rf, w_rf = realize_analog(design)
    h_eq = equivalent_channel(chans, f_rf, w_rf)
    f_bb = normalize_power(f_rf, mmse_baseband(h_eq, f_rf, sys, on_singular), k_users)
    return HybridBeamformer(f_rf, f_bb, tuple(w_rf))


def two_stage_beamformer(h, designer: Designer, sys: SystemConfig, on_singular: str = "raise") -> HybridBeamformer:
    """Per-user analog design followed by the MMSE baseband precoder."""
    return assemble_beamformer(h, design_users(h, designer), sys, on_singular)
