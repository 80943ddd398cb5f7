"""One-hot decoding of the network's phase distributions."""

from __future__ import annotations

import numpy as np

from ..beamforming import UserDesign
from .model import PcnetModel, forward, model_input

__all__ = ["infer", "infer_batch", "PcnetDesigner"]


def infer_batch(model: PcnetModel, channels, bits: int | None = None):
    """Decoded ``(tx, rx)`` index arrays for a batch ``(n, N_r, N_t)`` of channels.

    ``bits`` picks the stage (defaults to the highest resolution). Row-wise
    argmax of the logits equals argmax of the softmax; ties go to the
    smallest index. With ``pin_first_phase`` the first shifter of each array
    decodes to index 0.
    """
    bits = model.arch.bits[-1] if bits is None else bits
    model.arch.stage_index(bits)
    tr = forward(model, model_input(model.arch, channels), "eval")
    st = tr.stage(bits)
    tx, rx = np.argmax(st.logits_f, axis=-1), np.argmax(st.logits_w, axis=-1)
    if model.arch.pin_first_phase:
        tx[:, 0] = 0
        rx[:, 0] = 0
    return tx, rx


def infer(model: PcnetModel, h, bits: int | None = None) -> UserDesign:
    bits = model.arch.bits[-1] if bits is None else bits
    tx, rx = infer_batch(model, np.asarray(h)[None], bits)
    return UserDesign(tx[0], rx[0], bits)


class PcnetDesigner:
    """Stage-one designer backed by a trained model, usable with ``two_stage_beamformer``."""

    def __init__(self, model: PcnetModel, bits: int | None = None):
        self.model = model
        self.bits = model.arch.bits[-1] if bits is None else bits
        model.arch.stage_index(self.bits)

    def __call__(self, h) -> UserDesign:
        return infer(self.model, h, self.bits)

    def design_batch(self, channels):
        return infer_batch(self.model, channels, self.bits)
