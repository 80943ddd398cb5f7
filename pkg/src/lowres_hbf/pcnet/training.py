"""Adam optimiser and the unsupervised training loop."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import PcnetModel, backward, forward, model_input, stage_losses

__all__ = [
    "TrainConfig",
    "AdamState",
    "EpochRecord",
    "TrainingDivergedError",
    "adam_init",
    "adam_step",
    "evaluate_loss",
    "symmetry_transform",
    "train",
    "write_history_csv",
]


class TrainingDivergedError(ArithmeticError):
    """The training loss became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and schedule settings.

    ``learning_rate`` is the initial rate; it is multiplied by ``lr_decay``
    after every epoch. ``warm_start_epochs`` trains only the first
    (lowest-resolution) stage term for that many epochs before switching to
    the summed loss. ``augment_phase`` multiplies every training row by a
    fresh random global phase ``exp(j gamma)`` each time it is drawn; the
    gain ``|w^H H f|`` is unchanged by such a rotation. ``augment_symmetry``
    applies a random element of the array symmetry group (axis flips of
    both planar arrays and complex conjugation, see
    :func:`symmetry_transform`), each of which maps the channel
    distribution onto itself.
    """

    learning_rate: float = 3e-5
    batch_size: int = 256
    n_epochs: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    warm_start_epochs: int = 0
    lr_decay: float = 1.0
    augment_phase: bool = False
    augment_symmetry: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.batch_size < 1 or self.n_epochs < 0:
            raise ValueError("batch_size must be >= 1 and n_epochs >= 0")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(model: PcnetModel) -> AdamState:
    return AdamState([np.zeros_like(p) for p in model.params], [np.zeros_like(p) for p in model.params])


def adam_step(model: PcnetModel, grads, state: AdamState, cfg: TrainConfig, learning_rate=None):
    """One bias-corrected Adam update; returns ``(new_model, new_state)``."""
    lr = cfg.learning_rate if learning_rate is None else learning_rate
    t = state.t + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(model.params, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps))
        new_m.append(m)
        new_v.append(v)
    return PcnetModel(model.arch, new_params, model.rng_seed), AdamState(new_m, new_v, t)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


def _stage_weights(model, epoch, cfg):
    n = len(model.arch.stages)
    if epoch < cfg.warm_start_epochs:
        return [1.0] + [0.0] * (n - 1)
    return [1.0] * n


def symmetry_transform(h, codes) -> np.ndarray:
    """Apply array symmetries to a batch ``(n, N_r, N_t)`` of square-UPA channels.

    Bits of ``codes[i]``: 0 and 1 flip the receive array's two axes, 2 and 3
    flip the transmit array's axes, 4 conjugates. A flip negates one
    direction cosine (up to a per-path phase absorbed by the gains) and
    conjugation negates all of them, so each maps the channel
    distribution of uniformly drawn cluster angles onto itself.
    """
    h = np.asarray(h, dtype=np.complex128)
    n, n_rx, n_tx = h.shape
    sr, st = math.isqrt(n_rx), math.isqrt(n_tx)
    if sr * sr != n_rx or st * st != n_tx:
        raise ValueError("symmetry transforms need square planar arrays")
    codes = np.asarray(codes)
    g = h.reshape(n, sr, sr, st, st)
    for bit, axis in enumerate((1, 2, 3, 4)):
        sel = ((codes >> bit) & 1).astype(bool)
        g = np.where(sel[:, None, None, None, None], np.flip(g, axis=axis), g)
    conj = ((codes >> 4) & 1).astype(bool)
    g = np.where(conj[:, None, None, None, None], np.conj(g), g)
    return g.reshape(n, n_rx, n_tx)


def evaluate_loss(model: PcnetModel, channels, batch_size: int = 1024) -> float:
    """Mean eval-mode total loss over per-user channel matrices ``(n, N_r, N_t)``."""
    total = 0.0
    n = channels.shape[0]
    for start in range(0, n, batch_size):
        h = channels[start:start + batch_size]
        tr = forward(model, model_input(model.arch, h), "eval")
        per = sum(stage_losses(tr, h, st.bits, model.arch.loss_input) for st in tr.stages)
        total += float(np.sum(per))
    return total / n


def _rows(data) -> np.ndarray:
    if hasattr(data, "user_rows"):
        return data.user_rows()
    arr = np.asarray(data, dtype=np.complex128)
    return arr.reshape(-1, arr.shape[-2], arr.shape[-1])


def train(model: PcnetModel, dataset, cfg: TrainConfig, validation, log=None):
    """Minibatch Adam over per-user channel rows.

    Every channel sample contributes its ``K`` user matrices as separate
    rows. After each epoch the eval-mode validation loss is recorded and the
    best model so far (starting with the initial one) is kept.

    Returns
    -------
    best_model, history
        ``history`` has one :class:`EpochRecord` per epoch.
    """
    rows = _rows(dataset)
    val_rows = _rows(validation)
    if rows.shape[0] == 0:
        raise ValueError("training set is empty")
    if rows.shape[1:] != (model.arch.n_rx, model.arch.n_tx):
        raise ValueError(
            f"channels of shape {rows.shape[1:]} do not match the model "
            f"({model.arch.n_rx}, {model.arch.n_tx})"
        )
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    x_all = model_input(model.arch, rows)
    state = adam_init(model)
    best = model.copy()
    best_val = evaluate_loss(model, val_rows)
    history = []
    n = rows.shape[0]
    for epoch in range(cfg.n_epochs):
        weights = _stage_weights(model, epoch, cfg)
        lr = cfg.learning_rate * cfg.lr_decay**epoch
        order = rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            h = rows[idx]
            if cfg.augment_symmetry:
                h = symmetry_transform(h, rng.integers(0, 32, size=len(idx)))
            if cfg.augment_phase:
                h = h * np.exp(2j * np.pi * rng.random(len(idx)))[:, None, None]
            if cfg.augment_symmetry or cfg.augment_phase:
                x = model_input(model.arch, h)
            else:
                x = x_all[idx]
            tr = forward(model, x, "train", rng)
            per = sum(
                wgt * stage_losses(tr, h, st.bits, model.arch.loss_input)
                for wgt, st in zip(weights, tr.stages)
            )
            loss = float(np.mean(per))
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss {loss} at epoch {epoch + 1}, batch {b}; "
                    f"max |param| = {max(float(np.max(np.abs(p))) for p in model.params):.3g}"
                )
            grads = backward(model, tr, h, weights)
            model, state = adam_step(model, grads, state, cfg, lr)
            losses.append(loss * len(idx))
        train_loss = sum(losses) / n
        val_loss = evaluate_loss(model, val_rows)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(f"non-finite validation loss at epoch {epoch + 1}")
        history.append(EpochRecord(epoch + 1, train_loss, val_loss))
        if log is not None:
            log(f"epoch {epoch + 1}: train {train_loss:.6f} val {val_loss:.6f}")
        if val_loss < best_val:
            best_val = val_loss
            best = model.copy()
    return best, history


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss"])
        for rec in history:
            w.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_loss)])
