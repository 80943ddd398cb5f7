"""Binary ``PCNW`` checkpoint format.

Layout (little-endian): magic ``PCNW``, version u32, then
``n_tx, n_rx, n_stages`` u32, ``input_scale`` f64, loss-input code u32,
flags u32 (bit 0: phase reference, bit 1: pinned first phase), rng seed u64; per stage ``n_layers, width, output_bits, n_skips`` u32,
``dropout`` f64 and ``n_skips`` (src, dst) u32 pairs; then every parameter
array in declaration order as raw f64.
"""

from __future__ import annotations

import struct

import numpy as np

from .model import LOSS_INPUTS, NetArchitecture, PcnetModel, StageSpec

__all__ = ["ModelFormatError", "ShapeMismatchError", "save_model", "load_model"]

MAGIC = b"PCNW"
VERSION = 1


class ModelFormatError(ValueError):
    """Checkpoint header is corrupt or from an unsupported version."""


class ShapeMismatchError(ValueError):
    """Checkpoint architecture differs from the one expected by the caller."""


def save_model(model: PcnetModel, path) -> None:
    arch = model.arch
    out = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<3IdIIQ", arch.n_tx, arch.n_rx, len(arch.stages), arch.input_scale,
                    LOSS_INPUTS.index(arch.loss_input), int(arch.phase_reference) | int(arch.pin_first_phase) << 1, model.rng_seed),
    ]
    for st in arch.stages:
        out.append(struct.pack("<4Id", st.n_layers, st.width, st.output_bits, len(st.skips), st.dropout))
        for src, dst in st.skips:
            out.append(struct.pack("<2I", src, dst))
    for p in model.params:
        out.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(out))


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise ModelFormatError(f"{self.path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals


def load_model(path, expected_arch: NetArchitecture | None = None) -> PcnetModel:
    """Read a checkpoint; optionally require a specific architecture."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ModelFormatError(f"{path}: not a PCNW checkpoint (bad magic)")
    r = _Reader(data, path)
    r.pos = 4
    (version,) = r.take("<I")
    if version != VERSION:
        raise ModelFormatError(f"{path}: unsupported checkpoint version {version}")
    n_tx, n_rx, n_stages, input_scale, loss_code, flags, seed = r.take("<3IdIIQ")
    if loss_code >= len(LOSS_INPUTS) or flags > 3 or n_stages == 0 or n_stages > 64:
        raise ModelFormatError(f"{path}: corrupt architecture header")
    stages = []
    for _ in range(n_stages):
        n_layers, width, bits, n_skips, dropout = r.take("<4Id")
        if n_skips > n_layers + 1:
            raise ModelFormatError(f"{path}: corrupt stage descriptor")
        skips = tuple(r.take("<2I") for _ in range(n_skips))
        stages.append((n_layers, width, dropout, bits, skips))
    try:
        arch = NetArchitecture(
            n_tx, n_rx, tuple(StageSpec(*s) for s in stages), input_scale, LOSS_INPUTS[loss_code],
            bool(flags & 1), bool(flags & 2),
        )
    except ValueError as exc:
        raise ModelFormatError(f"{path}: invalid architecture: {exc}") from exc
    if expected_arch is not None and arch != expected_arch:
        raise ShapeMismatchError(f"{path}: checkpoint architecture {arch} != expected {expected_arch}")
    params = []
    for shape in arch.param_shapes():
        count = int(np.prod(shape))
        end = r.pos + 8 * count
        if end > len(data):
            raise ModelFormatError(f"{path}: truncated parameter block")
        params.append(np.frombuffer(data, dtype="<f8", count=count, offset=r.pos).reshape(shape).astype(np.float64))
        r.pos = end
    if r.pos != len(data):
        raise ModelFormatError(f"{path}: {len(data) - r.pos} trailing bytes after parameters")
    return PcnetModel(arch, params, seed)
