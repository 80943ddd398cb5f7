"""Stage-one analog designers that maximise ``|w^H H f|`` per user.

Every designer takes one user's ``N_r x N_t`` channel and returns a
:class:`~lowres_hbf.beamforming.UserDesign`. The ``make_designer`` factory
wraps them as single-argument callables for
:func:`~lowres_hbf.beamforming.two_stage_beamformer`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .beamforming import PhaseAlphabet, UserDesign
from .numerics import as_cmatrix, dominant_singular_pair

__all__ = [
    "ObjectiveInstance",
    "CrossEntropyConfig",
    "CrossEntropyResult",
    "InstanceTooLargeError",
    "objective",
    "batch_objective",
    "phase_project",
    "quantize_phases",
    "svd_designer",
    "cross_entropy_search",
    "cross_entropy_designer",
    "exhaustive_designer",
    "random_designer",
    "make_designer",
    "DESIGNER_NAMES",
]

EXHAUSTIVE_LIMIT_BITS = 24
_TIE_ATOL = 1e-12


class InstanceTooLargeError(ValueError):
    """The exhaustive search space exceeds the configured guard."""


@dataclass(frozen=True)
class ObjectiveInstance:
    h: np.ndarray
    tx_alphabet: PhaseAlphabet
    rx_alphabet: PhaseAlphabet

    @classmethod
    def from_channel(cls, h, bits: int) -> "ObjectiveInstance":
        h = as_cmatrix(h)
        n_r, n_t = h.shape
        return cls(h, PhaseAlphabet.for_array(bits, n_t), PhaseAlphabet.for_array(bits, n_r))

    @property
    def bits(self) -> int:
        return self.tx_alphabet.bits

    @property
    def n_tx(self) -> int:
        return self.h.shape[1]

    @property
    def n_rx(self) -> int:
        return self.h.shape[0]


def objective(inst: ObjectiveInstance, design: UserDesign) -> float:
    """Beamforming gain ``|w^H H f|`` of a discrete design."""
    f = inst.tx_alphabet.realize(design.tx)
    w = inst.rx_alphabet.realize(design.rx)
    if f.shape[0] != inst.n_tx or w.shape[0] != inst.n_rx:
        raise ValueError("design dimensions do not match the channel")
    return float(abs(np.conj(w) @ inst.h @ f))


def batch_objective(inst: ObjectiveInstance, tx_idx: np.ndarray, rx_idx: np.ndarray) -> np.ndarray:
    """Objective of many designs at once; index arrays have a leading candidate axis."""
    f = inst.tx_alphabet.values[tx_idx]
    w = inst.rx_alphabet.values[rx_idx]
    return np.abs(np.einsum("ni,ij,nj->n", np.conj(w), inst.h, f))


def phase_project(v, modulus: float) -> np.ndarray:
    """Keep the phase of every entry and set its modulus; zeros get phase 0."""
    v = np.asarray(v, dtype=np.complex128)
    return modulus * np.exp(1j * np.angle(v))


def quantize_phases(v, alphabet: PhaseAlphabet) -> np.ndarray:
    """Index of the nearest alphabet phase for each entry (ties to the smaller index)."""
    ang = np.angle(np.asarray(v, dtype=np.complex128))
    diff = ang[:, None] - alphabet.phases[None, :]
    dist = np.abs(np.angle(np.exp(1j * diff)))
    best = dist.min(axis=1, keepdims=True)
    return np.argmax(dist <= best + _TIE_ATOL, axis=1).astype(np.int64)


def svd_designer(inst: ObjectiveInstance, precoder: str = "matched") -> UserDesign:
    """Quantised SVD design: combiner from the dominant left singular vector.

    The precoder is then the phase-aligned response to ``w^H H`` (``"matched"``,
    the default) or the quantised dominant right singular vector
    (``"right"``).
    """
    u, _, v = dominant_singular_pair(inst.h)
    w_idx = quantize_phases(phase_project(u, inst.rx_alphabet.modulus), inst.rx_alphabet)
    if precoder == "matched":
        w = inst.rx_alphabet.realize(w_idx)
        target = np.conj(np.conj(w) @ inst.h)
    elif precoder == "right":
        target = v
    else:
        raise ValueError(f"unknown precoder mode {precoder!r}")
    f_idx = quantize_phases(phase_project(target, inst.tx_alphabet.modulus), inst.tx_alphabet)
    return UserDesign(f_idx, w_idx, inst.bits)


@dataclass(frozen=True)
class CrossEntropyConfig:
    """Iterations, candidates per iteration, elite fraction and smoothing.

    ``smoothing`` is the weight given to the elite frequencies in the update
    ``p <- smoothing * elite_freq + (1 - smoothing) * p``.
    """

    n_iters: int = 20
    n_candidates: int = 150
    elite_fraction: float = 0.1
    smoothing: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n_iters < 1 or self.n_candidates < 1:
            raise ValueError("n_iters and n_candidates must be >= 1")
        if not 0 < self.elite_fraction <= 1:
            raise ValueError("elite_fraction must be in (0, 1]")
        if not 0 < self.smoothing <= 1:
            raise ValueError("smoothing must be in (0, 1]")

    @classmethod
    def for_bits(cls, bits: int, **overrides) -> "CrossEntropyConfig":
        """Iteration count used for each resolution: 20 up to 2 bits, 30 above."""
        params = {"n_iters": 20 if bits <= 2 else 30}
        params.update(overrides)
        return cls(**params)

    @property
    def n_elite(self) -> int:
        return max(1, math.ceil(self.elite_fraction * self.n_candidates - 1e-9))


@dataclass
class CrossEntropyResult:
    design: UserDesign
    value: float
    best_history: list = field(default_factory=list)
    tx_probs: np.ndarray | None = None
    rx_probs: np.ndarray | None = None


def _sample_categorical(probs: np.ndarray, n: int, rng) -> np.ndarray:
    # inverse-CDF draw for every (candidate, element) pair
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((n, probs.shape[0]))
    return (u[:, :, None] >= cdf[None, :, :]).sum(axis=2).astype(np.int64)


def cross_entropy_search(inst: ObjectiveInstance, cfg: CrossEntropyConfig, rng=None) -> CrossEntropyResult:
    """Cross-entropy search over independent per-element categorical distributions."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    m = inst.tx_alphabet.size
    p_tx = np.full((inst.n_tx, m), 1.0 / m)
    p_rx = np.full((inst.n_rx, m), 1.0 / m)
    n_elite = cfg.n_elite
    best_val = -np.inf
    best = None
    history = []
    for _ in range(cfg.n_iters):
        tx = _sample_categorical(p_tx, cfg.n_candidates, rng)
        rx = _sample_categorical(p_rx, cfg.n_candidates, rng)
        vals = batch_objective(inst, tx, rx)
        order = np.argsort(-vals, kind="stable")
        if vals[order[0]] > best_val:
            best_val = float(vals[order[0]])
            best = (tx[order[0]].copy(), rx[order[0]].copy())
        history.append(best_val)
        elite = order[:n_elite]
        freq_tx = np.stack([(tx[elite] == b).mean(axis=0) for b in range(m)], axis=1)
        freq_rx = np.stack([(rx[elite] == b).mean(axis=0) for b in range(m)], axis=1)
        p_tx = cfg.smoothing * freq_tx + (1 - cfg.smoothing) * p_tx
        p_rx = cfg.smoothing * freq_rx + (1 - cfg.smoothing) * p_rx
    return CrossEntropyResult(UserDesign(best[0], best[1], inst.bits), best_val, history, p_tx, p_rx)


def cross_entropy_designer(inst: ObjectiveInstance, cfg: CrossEntropyConfig, rng=None) -> UserDesign:
    return cross_entropy_search(inst, cfg, rng).design


def _all_index_vectors(m: int, n: int) -> np.ndarray:
    # rows in lexicographic order, first element most significant
    grids = np.indices((m,) * n).reshape(n, -1).T
    return grids.astype(np.int64)


def exhaustive_designer(inst: ObjectiveInstance, limit_bits: int = EXHAUSTIVE_LIMIT_BITS) -> UserDesign:
    """Global maximiser by enumeration.

    Ties (within 1e-12 relative) go to the lexicographically smallest
    ``(tx..., rx...)`` index vector.
    """
    total_bits = inst.bits * (inst.n_tx + inst.n_rx)
    if total_bits > limit_bits:
        raise InstanceTooLargeError(
            f"exhaustive search over 2^{total_bits} designs exceeds the 2^{limit_bits} guard"
        )
    m = inst.tx_alphabet.size
    tx_all = _all_index_vectors(m, inst.n_tx)
    rx_all = _all_index_vectors(m, inst.n_rx)
    f_all = inst.tx_alphabet.values[tx_all]  # (n_f, N_t)
    w_all = inst.rx_alphabet.values[rx_all]  # (n_w, N_r)
    g = np.conj(w_all) @ inst.h  # (n_w, N_t)

    # max value first, then the smallest (tx, rx) pair within tolerance of it
    chunk = max(1, (1 << 22) // max(1, g.shape[0]))
    best_val = 0.0
    for start in range(0, f_all.shape[0], chunk):
        vals = np.abs(f_all[start:start + chunk] @ g.T)
        best_val = max(best_val, float(vals.max()))
    cutoff = best_val - _TIE_ATOL * max(1.0, best_val)
    for start in range(0, f_all.shape[0], chunk):
        vals = np.abs(f_all[start:start + chunk] @ g.T)  # (chunk, n_w)
        hits = np.argwhere(vals >= cutoff)
        if hits.size:
            i, j = hits[0]  # argwhere is row-major: smallest tx, then smallest rx
            return UserDesign(tx_all[start + i], rx_all[j], inst.bits)
    raise AssertionError("unreachable: maximum not found on second pass")


def random_designer(inst: ObjectiveInstance, rng) -> UserDesign:
    m = inst.tx_alphabet.size
    tx = rng.integers(0, m, size=inst.n_tx)
    rx = rng.integers(0, m, size=inst.n_rx)
    return UserDesign(tx, rx, inst.bits)


DESIGNER_NAMES = ("random", "svd", "ce", "exhaustive")


def make_designer(name: str, bits: int, seed: int = 0, ce_config: CrossEntropyConfig | None = None):
    """Single-argument designer ``h -> UserDesign`` for the named baseline.

    Stochastic designers (``random``, ``ce``) draw from one generator seeded
    with ``seed`` and advanced across calls, so a designer object replays
    identically when rebuilt with the same seed.
    """
    if name == "svd":
        return lambda h: svd_designer(ObjectiveInstance.from_channel(h, bits))
    if name == "exhaustive":
        return lambda h: exhaustive_designer(ObjectiveInstance.from_channel(h, bits))
    rng = np.random.default_rng(seed)
    if name == "random":
        return lambda h: random_designer(ObjectiveInstance.from_channel(h, bits), rng)
    if name == "ce":
        cfg = ce_config or CrossEntropyConfig.for_bits(bits, seed=seed)
        return lambda h: cross_entropy_designer(ObjectiveInstance.from_channel(h, bits), cfg, rng)
    raise ValueError(f"unknown designer {name!r}; choose from {', '.join(DESIGNER_NAMES)}")
