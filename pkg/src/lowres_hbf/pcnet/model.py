"""Concatenated residual MLP for per-shifter phase classification.

The network maps one user's channel (real/imag encoding) to logits for every
transmit and receive phase shifter. Stage ``s`` predicts ``2**bits_s``
phase classes per shifter; every stage after the first also sees the row
softmax of the previous stage. Forward and backward passes are written out
by hand in float64 over a leading batch axis.

Parameter order, per stage: ``W_1, b_1, ..., W_n, b_n, W_out, b_out`` with
``W`` of shape ``(fan_in, fan_out)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "StageSpec",
    "NetArchitecture",
    "PcnetModel",
    "StageTrace",
    "ForwardTrace",
    "default_skips",
    "encode_input",
    "align_phase",
    "model_input",
    "init_model",
    "forward",
    "stage_losses",
    "loss_stage",
    "total_loss",
    "backward",
]

LOSS_INPUTS = ("softmax", "logits")


def default_skips(n_layers: int) -> tuple:
    """Two additive skips: layer 1 -> layer n//2, then that sum -> layer n."""
    if n_layers < 2:
        return ()
    mid = n_layers // 2
    if mid <= 1:
        return ((1, n_layers),)
    return ((1, mid), (mid, n_layers))


@dataclass(frozen=True)
class StageSpec:
    """One resolution stage.

    ``skips`` lists ``(src, dst)`` layer pairs: the fused output of layer
    ``src`` (0 = stage input) is added to the activation of layer ``dst``.
    """

    n_layers: int
    width: int
    dropout: float
    output_bits: int
    skips: tuple = None

    def __post_init__(self):
        if self.n_layers < 1 or self.width < 1:
            raise ValueError("n_layers and width must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.output_bits < 1:
            raise ValueError("output_bits must be >= 1")
        skips = default_skips(self.n_layers) if self.skips is None else self.skips
        skips = tuple((int(s), int(d)) for s, d in skips)
        for src, dst in skips:
            if not 0 <= src < dst <= self.n_layers:
                raise ValueError(f"invalid skip ({src}, {dst}) for {self.n_layers} layers")
        object.__setattr__(self, "skips", skips)


@dataclass(frozen=True)
class NetArchitecture:
    n_tx: int
    n_rx: int
    stages: tuple
    input_scale: float = 1.0
    loss_input: str = "softmax"
    phase_reference: bool = False
    pin_first_phase: bool = False

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if self.n_tx < 1 or self.n_rx < 1:
            raise ValueError("array sizes must be >= 1")
        if not self.stages:
            raise ValueError("at least one stage is required")
        bits = [s.output_bits for s in self.stages]
        if any(b2 <= b1 for b1, b2 in zip(bits, bits[1:])):
            raise ValueError("stage resolutions must strictly increase")
        if self.loss_input not in LOSS_INPUTS:
            raise ValueError(f"loss_input must be one of {LOSS_INPUTS}")
        if self.pin_first_phase and self.loss_input != "softmax":
            raise ValueError("pin_first_phase needs the softmax loss input")
        for s in self.stages:
            for src, _ in s.skips:
                if src == 0 and self.stage_input_dim(self.stages.index(s)) != s.width:
                    raise ValueError("a skip from the stage input needs input_dim == width")

    @classmethod
    def build(cls, n_tx, n_rx, bits=2, widths=(1024, 2048), n_layers=6, dropout=0.3, **kw):
        """Stages for resolutions ``2 .. bits``; ``widths[i]`` for stage ``i`` (last repeats)."""
        stages = []
        for i, b in enumerate(range(2, bits + 1)):
            width = widths[min(i, len(widths) - 1)]
            stages.append(StageSpec(n_layers, width, dropout, b))
        return cls(n_tx, n_rx, tuple(stages), **kw)

    @property
    def input_dim(self) -> int:
        return 2 * self.n_tx * self.n_rx

    @property
    def bits(self) -> tuple:
        return tuple(s.output_bits for s in self.stages)

    def stage_index(self, bits: int) -> int:
        try:
            return self.bits.index(bits)
        except ValueError:
            raise ValueError(f"model has no {bits}-bit stage (has {self.bits})") from None

    def output_dim(self, s: int) -> int:
        return (self.n_tx + self.n_rx) * 2 ** self.stages[s].output_bits

    def stage_input_dim(self, s: int) -> int:
        return self.input_dim + (self.output_dim(s - 1) if s > 0 else 0)

    def param_shapes(self) -> list:
        shapes = []
        for s, spec in enumerate(self.stages):
            fan_in = self.stage_input_dim(s)
            for _ in range(spec.n_layers):
                shapes += [(fan_in, spec.width), (spec.width,)]
                fan_in = spec.width
            shapes += [(fan_in, self.output_dim(s)), (self.output_dim(s),)]
        return shapes

    def stage_param_slices(self) -> list:
        out, start = [], 0
        for spec in self.stages:
            n = 2 * spec.n_layers + 2
            out.append(slice(start, start + n))
            start += n
        return out


@dataclass
class PcnetModel:
    arch: NetArchitecture
    params: list
    rng_seed: int = 0

    def __post_init__(self):
        shapes = self.arch.param_shapes()
        if len(shapes) != len(self.params):
            raise ValueError(f"expected {len(shapes)} parameter arrays, got {len(self.params)}")
        for want, p in zip(shapes, self.params):
            if tuple(p.shape) != want:
                raise ValueError(f"parameter shape {p.shape} does not match {want}")
            if not np.all(np.isfinite(p)):
                raise ValueError("parameters must be finite")

    def copy(self) -> "PcnetModel":
        return PcnetModel(self.arch, [p.copy() for p in self.params], self.rng_seed)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)


def init_model(arch: NetArchitecture, seed: int = 0) -> PcnetModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = []
    for shape in arch.param_shapes():
        if len(shape) == 2:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            params.append(rng.uniform(-limit, limit, size=shape))
        else:
            params.append(np.zeros(shape))
    return PcnetModel(arch, params, seed)


def encode_input(h) -> np.ndarray:
    """Real parts (row-major) followed by imaginary parts; works on batches."""
    h = np.asarray(h, dtype=np.complex128)
    lead = h.shape[:-2]
    flat = h.reshape(*lead, -1)
    return np.concatenate([flat.real, flat.imag], axis=-1)


def align_phase(h) -> np.ndarray:
    """Rotate each matrix by a global phase so that its ``[0, 0]`` entry is real and >= 0.

    ``|w^H H f|`` and every optimal design are unchanged by the rotation, so
    the network can be fed this canonical representative instead.
    """
    h = np.asarray(h, dtype=np.complex128)
    return h * np.exp(-1j * np.angle(h[..., :1, :1]))


def model_input(arch: "NetArchitecture", h) -> np.ndarray:
    """Network input for channels ``h``, honouring ``arch.phase_reference``."""
    return encode_input(align_phase(h) if arch.phase_reference else h)


def _alphabet(bits, n):
    m = 2**bits
    return np.exp(2j * np.pi * np.arange(m) / m) / math.sqrt(n)


def _softmax_rows(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


@dataclass
class StageTrace:
    stage_input: np.ndarray
    pre: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    fused: list = field(default_factory=list)
    logits_f: np.ndarray = None
    logits_w: np.ndarray = None
    probs_f: np.ndarray = None
    probs_w: np.ndarray = None
    bits: int = 0


@dataclass
class ForwardTrace:
    """Everything the backward pass needs; arrays carry a leading batch axis."""

    x: np.ndarray
    stages: list
    mode: str
    single: bool = False

    def stage(self, bits: int) -> StageTrace:
        for st in self.stages:
            if st.bits == bits:
                return st
        raise ValueError(f"trace has no {bits}-bit stage")


def _stage_forward(params, spec: StageSpec, inp, n_tx, n_rx, train, rng, pin=False):
    tr = StageTrace(stage_input=inp, bits=spec.output_bits)
    skips_to = {}
    for src, dst in spec.skips:
        skips_to.setdefault(dst, []).append(src)
    fused = [inp]
    h = inp
    for i in range(spec.n_layers):
        w, b = params[2 * i], params[2 * i + 1]
        z = h @ w + b
        a = _elu(z)
        mask = None
        if train and spec.dropout > 0:
            mask = (rng.random(a.shape) >= spec.dropout) / (1.0 - spec.dropout)
            a = a * mask
        for src in skips_to.get(i + 1, ()):
            a = a + fused[src]
        tr.pre.append(z)
        tr.masks.append(mask)
        fused.append(a)
        h = a
    tr.fused = fused
    logits = h @ params[-2] + params[-1]
    m = 2**spec.output_bits
    batch = logits.shape[0]
    tr.logits_f = logits[:, : n_tx * m].reshape(batch, n_tx, m)
    tr.logits_w = logits[:, n_tx * m:].reshape(batch, n_rx, m)
    tr.probs_f = _softmax_rows(tr.logits_f)
    tr.probs_w = _softmax_rows(tr.logits_w)
    if pin:
        # one-hot rows make the softmax backward vanish for these logits
        for probs in (tr.probs_f, tr.probs_w):
            probs[:, 0, :] = 0.0
            probs[:, 0, 0] = 1.0
    return tr


def forward(model: PcnetModel, x, mode: str = "eval", rng=None) -> ForwardTrace:
    """Run every stage. ``x`` is one encoded channel or a batch of them.

    In ``"train"`` mode inverted dropout masks are drawn from ``rng``; in
    ``"eval"`` mode dropout is the identity and ``rng`` is unused.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    arch = model.arch
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ValueError(f"input of shape {x.shape} does not match input_dim {arch.input_dim}")
    train = mode == "train"
    if train and rng is None:
        rng = np.random.default_rng(model.rng_seed)
    xs = x * arch.input_scale
    traces = []
    for s, (spec, sl) in enumerate(zip(arch.stages, arch.stage_param_slices())):
        if s == 0:
            inp = xs
        else:
            prev = traces[-1]
            batch = xs.shape[0]
            inp = np.concatenate(
                [xs, prev.probs_f.reshape(batch, -1), prev.probs_w.reshape(batch, -1)], axis=1
            )
        traces.append(
            _stage_forward(model.params[sl], spec, inp, arch.n_tx, arch.n_rx, train, rng, arch.pin_first_phase)
        )
    return ForwardTrace(x, traces, mode, single)


def _stage_mats(st: StageTrace, loss_input: str):
    if loss_input == "softmax":
        return st.probs_f, st.probs_w
    return st.logits_f, st.logits_w


def _gain_terms(trace, st, h, loss_input):
    pf_mat, pw_mat = _stage_mats(st, loss_input)
    n_tx, n_rx = pf_mat.shape[1], pw_mat.shape[1]
    p_f = _alphabet(st.bits, n_tx)
    p_w = _alphabet(st.bits, n_rx)
    soft_f = pf_mat @ p_f
    soft_w = pw_mat @ p_w
    h = np.asarray(h, dtype=np.complex128)
    if h.ndim == 2:
        h = h[None]
    hf = np.einsum("bij,bj->bi", h, soft_f)
    z = np.einsum("bi,bi->b", np.conj(soft_w), hf)
    return z, soft_f, soft_w, hf, h, p_f, p_w


def stage_losses(trace: ForwardTrace, h, stage_bits: int, loss_input: str = "softmax") -> np.ndarray:
    """Per-sample ``-|soft_w^H H soft_f|`` for one stage."""
    z = _gain_terms(trace, trace.stage(stage_bits), h, loss_input)[0]
    return -np.abs(z)


def loss_stage(trace: ForwardTrace, h, stage_bits: int, loss_input: str = "softmax") -> float:
    """Batch-mean stage loss."""
    return float(np.mean(stage_losses(trace, h, stage_bits, loss_input)))


def total_loss(trace: ForwardTrace, h, loss_input: str = "softmax", stage_weights=None) -> float:
    """Sum of the stage losses, averaged over the batch."""
    weights = stage_weights or [1.0] * len(trace.stages)
    per_sample = sum(
        wgt * stage_losses(trace, h, st.bits, loss_input) for wgt, st in zip(weights, trace.stages)
    )
    return float(np.mean(per_sample))


def _softmax_backward(p, dp):
    return p * (dp - np.sum(p * dp, axis=-1, keepdims=True))


def _stage_backward(params, spec: StageSpec, st: StageTrace, dlogits):
    grads = [None] * len(params)
    n = spec.n_layers
    h_last = st.fused[n]
    grads[-2] = h_last.T @ dlogits
    grads[-1] = dlogits.sum(axis=0)
    skips_to = {}
    for src, dst in spec.skips:
        skips_to.setdefault(dst, []).append(src)
    d_fused = [None] * (n + 1)
    d_fused[n] = dlogits @ params[-2].T
    for i in range(n, 0, -1):
        g = d_fused[i]
        for src in skips_to.get(i, ()):
            d_fused[src] = g if d_fused[src] is None else d_fused[src] + g
        da = g if st.masks[i - 1] is None else g * st.masks[i - 1]
        dz = da * _elu_grad(st.pre[i - 1])
        w = params[2 * (i - 1)]
        grads[2 * (i - 1)] = st.fused[i - 1].T @ dz
        grads[2 * (i - 1) + 1] = dz.sum(axis=0)
        d_in = dz @ w.T
        d_fused[i - 1] = d_in if d_fused[i - 1] is None else d_fused[i - 1] + d_in
    return grads, d_fused[0]


def backward(model: PcnetModel, trace: ForwardTrace, h, stage_weights=None) -> list:
    """Exact gradients of :func:`total_loss` (batch mean) for every parameter.

    Where ``soft_w^H H soft_f`` is exactly zero the modulus has no gradient
    and that sample contributes zero.
    """
    arch = model.arch
    loss_input = arch.loss_input
    weights = stage_weights or [1.0] * len(trace.stages)
    batch = trace.x.shape[0]

    # gradient w.r.t. the matrices entering each stage's own loss term
    d_loss = []
    for wgt, st in zip(weights, trace.stages):
        z, soft_f, soft_w, hf, hb, p_f, p_w = _gain_terms(trace, st, h, loss_input)
        mag = np.abs(z)
        g = np.zeros_like(z)
        nz = mag > 0
        g[nz] = -z[nz] / mag[nz]
        g *= wgt / batch
        b_vec = np.einsum("bi,bij->bj", np.conj(soft_w), hb)
        d_f = np.real(np.conj(g)[:, None, None] * b_vec[:, :, None] * p_f[None, None, :])
        d_w = np.real(np.conj(g)[:, None, None] * hf[:, :, None] * np.conj(p_w)[None, None, :])
        d_loss.append((d_f, d_w))

    grads = [None] * len(model.params)
    slices = arch.stage_param_slices()
    # gradient w.r.t. each stage's softmax output coming from the next stage's input
    d_next = [None] * len(arch.stages)
    for s in range(len(arch.stages) - 1, -1, -1):
        st = trace.stages[s]
        d_f, d_w = d_loss[s]
        if loss_input == "softmax":
            if d_next[s] is not None:
                d_f, d_w = d_f + d_next[s][0], d_w + d_next[s][1]
            dlogits_f = _softmax_backward(st.probs_f, d_f)
            dlogits_w = _softmax_backward(st.probs_w, d_w)
        else:
            dlogits_f, dlogits_w = d_f, d_w
            if d_next[s] is not None:
                dlogits_f = dlogits_f + _softmax_backward(st.probs_f, d_next[s][0])
                dlogits_w = dlogits_w + _softmax_backward(st.probs_w, d_next[s][1])
        dlogits = np.concatenate([dlogits_f.reshape(batch, -1), dlogits_w.reshape(batch, -1)], axis=1)
        sg, d_inp = _stage_backward(model.params[slices[s]], arch.stages[s], st, dlogits)
        grads[slices[s]] = sg
        if s > 0:
            prev = trace.stages[s - 1]
            d_prev = d_inp[:, arch.input_dim:]
            n_f = prev.probs_f[0].size
            d_next[s - 1] = (
                d_prev[:, :n_f].reshape(prev.probs_f.shape),
                d_prev[:, n_f:].reshape(prev.probs_w.shape),
            )
    return grads
