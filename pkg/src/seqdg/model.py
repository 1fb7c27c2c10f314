"""Sequence network for window-level action recognition.

A transformer encoder reads a window of W projected action features plus
two learnable classification tokens (verb slot, noun slot). Training adds
a reconstruction path: the center position of the visual and text streams
is zeroed, and two decoders rebuild each stream while attending across to
the other, unmasked one. Inference uses only the encoder and the two
classifier heads; nothing on the text side is ever read.

Residual wiring is post-norm throughout: the normalization wraps the sum
of the sublayer output and its input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from seqdg import tensor as T
from seqdg.tensor import ShapeError, Tensor

__all__ = [
    "ModelConfig",
    "ModelParams",
    "EncodedSequence",
    "TrainForward",
    "SeqDGModel",
    "self_attention",
    "cross_attention",
    "encoder_layer",
    "decoder_layer",
    "encode_sequence",
    "encode_text",
    "mask_center",
    "decode",
    "classify",
]

CROSS_ATTENTION_MODES = ("query_stream", "context_stream")
CLIP_AGG_MODES = ("mean", "relational")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; `validate()` reports every violation."""

    W: int = 5
    D: int = 768
    D_V: int = 1024
    D_T: int = 768
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 8
    n_verbs: int = 97
    n_nouns: int = 300
    d_ff: int | None = None
    vocab_size: int | None = None
    layer_norm_eps: float = 1e-5
    cross_attention_values: str = "query_stream"
    decoder_self_attention: bool = True
    clip_agg: str = "mean"
    relational_clips: int | None = None

    @property
    def ff_width(self) -> int:
        return self.d_ff if self.d_ff is not None else 4 * self.D

    def validate(self) -> list[str]:
        errs = []
        if self.W < 1 or self.W % 2 == 0:
            errs.append(f"W must be odd and >= 1, got {self.W}")
        if self.D < 1:
            errs.append(f"D must be >= 1, got {self.D}")
        elif self.D % self.n_heads != 0:
            errs.append(f"D={self.D} not divisible by n_heads={self.n_heads}")
        if self.D_T != self.D:
            errs.append(f"D_T must equal D after projection, got D_T={self.D_T}, D={self.D}")
        if self.D_V < 1:
            errs.append(f"D_V must be >= 1, got {self.D_V}")
        if self.n_enc_layers < 0 or self.n_dec_layers < 0:
            errs.append("layer counts must be >= 0")
        if self.n_heads < 1:
            errs.append(f"n_heads must be >= 1, got {self.n_heads}")
        if self.n_verbs < 1 or self.n_nouns < 1:
            errs.append("class counts must be >= 1")
        if self.ff_width < 1:
            errs.append(f"d_ff must be >= 1, got {self.d_ff}")
        if self.vocab_size is not None and self.vocab_size < 1:
            errs.append(f"vocab_size must be >= 1, got {self.vocab_size}")
        if self.layer_norm_eps <= 0:
            errs.append(f"layer_norm_eps must be > 0, got {self.layer_norm_eps}")
        if self.cross_attention_values not in CROSS_ATTENTION_MODES:
            errs.append(f"cross_attention_values must be one of {CROSS_ATTENTION_MODES}, "
                        f"got {self.cross_attention_values!r}")
        if self.clip_agg not in CLIP_AGG_MODES:
            errs.append(f"clip_agg must be one of {CLIP_AGG_MODES}, got {self.clip_agg!r}")
        if self.clip_agg == "relational" and (self.relational_clips is None
                                              or self.relational_clips < 1):
            errs.append("relational clip aggregation needs relational_clips >= 1")
        return errs

    def check(self) -> "ModelConfig":
        errs = self.validate()
        if errs:
            raise ValueError("invalid model config: " + "; ".join(errs))
        return self

    @property
    def center(self) -> int:
        return (self.W - 1) // 2

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d).check()


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class Affine:
    weight: Tensor  # (fan_in, fan_out)
    bias: Tensor    # (fan_out,)


@dataclass
class AttentionParams:
    q: Affine
    k: Affine
    v: Affine
    out: Affine


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor


@dataclass
class EncoderLayerParams:
    attn: AttentionParams
    ln1: LayerNormParams
    ff_in: Affine
    ff_out: Affine
    ln2: LayerNormParams


@dataclass
class DecoderLayerParams:
    cross: AttentionParams
    ln_cross: LayerNormParams
    ff_in: Affine
    ff_out: Affine
    ln_ff: LayerNormParams
    self_attn: AttentionParams | None = None
    ln_self: LayerNormParams | None = None


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _new_affine(rng, fan_in: int, fan_out: int) -> Affine:
    return Affine(weight=Tensor(_uniform(rng, fan_in, (fan_in, fan_out)), requires_grad=True),
                  bias=Tensor(np.zeros(fan_out), requires_grad=True))


def _new_ln(d: int) -> LayerNormParams:
    return LayerNormParams(gain=Tensor(np.ones(d), requires_grad=True),
                           bias=Tensor(np.zeros(d), requires_grad=True))


def _new_attention(rng, d: int) -> AttentionParams:
    return AttentionParams(q=_new_affine(rng, d, d), k=_new_affine(rng, d, d),
                           v=_new_affine(rng, d, d), out=_new_affine(rng, d, d))


def _new_encoder_layer(rng, d: int, d_ff: int) -> EncoderLayerParams:
    return EncoderLayerParams(attn=_new_attention(rng, d), ln1=_new_ln(d),
                              ff_in=_new_affine(rng, d, d_ff),
                              ff_out=_new_affine(rng, d_ff, d), ln2=_new_ln(d))


def _new_decoder_layer(rng, d: int, d_ff: int, with_self: bool) -> DecoderLayerParams:
    self_attn = _new_attention(rng, d) if with_self else None
    ln_self = _new_ln(d) if with_self else None
    return DecoderLayerParams(cross=_new_attention(rng, d), ln_cross=_new_ln(d),
                              ff_in=_new_affine(rng, d, d_ff),
                              ff_out=_new_affine(rng, d_ff, d), ln_ff=_new_ln(d),
                              self_attn=self_attn, ln_self=ln_self)


class ModelParams:
    """All learnable state, addressable by dotted names for checkpoints.

    Decoder stacks, the text output head, and the relational clip
    aggregator are optional groups: a checkpoint stripped of them still
    loads into an inference-capable model.
    """

    def __init__(self, config: ModelConfig, seed: int | None = 0, _empty: bool = False):
        self.config = config.check()
        self.proj: Affine | None = None
        self.pos: Tensor | None = None
        self.cls_verb: Tensor | None = None
        self.cls_noun: Tensor | None = None
        self.encoder: list[EncoderLayerParams] = []
        self.dec_visual: list[DecoderLayerParams] | None = None
        self.dec_text: list[DecoderLayerParams] | None = None
        self.head_verb: Affine | None = None
        self.head_noun: Affine | None = None
        self.text_head: Affine | None = None
        self.clip_agg: Affine | None = None
        if _empty:
            return
        cfg = self.config
        rng = np.random.default_rng(seed)
        d, d_ff = cfg.D, cfg.ff_width
        if cfg.clip_agg == "relational":
            k = cfg.relational_clips
            self.clip_agg = _new_affine(rng, k * cfg.D_V, cfg.D_V)
        self.proj = _new_affine(rng, cfg.D_V, d)
        # positions must be separable from feature content right away, so
        # the positional table starts at feature scale, not at weight scale
        self.pos = Tensor(rng.uniform(-1.0, 1.0, (cfg.W, d)), requires_grad=True)
        self.cls_verb = Tensor(_uniform(rng, d, (d,)), requires_grad=True)
        self.cls_noun = Tensor(_uniform(rng, d, (d,)), requires_grad=True)
        self.encoder = [_new_encoder_layer(rng, d, d_ff) for _ in range(cfg.n_enc_layers)]
        self.dec_visual = [_new_decoder_layer(rng, d, d_ff, cfg.decoder_self_attention)
                           for _ in range(cfg.n_dec_layers)]
        self.dec_text = [_new_decoder_layer(rng, d, d_ff, cfg.decoder_self_attention)
                         for _ in range(cfg.n_dec_layers)]
        self.head_verb = _new_affine(rng, d, cfg.n_verbs)
        self.head_noun = _new_affine(rng, d, cfg.n_nouns)
        if cfg.vocab_size is not None:
            self.text_head = _new_affine(rng, d, cfg.vocab_size)

    # -- naming ------------------------------------------------------------

    def named(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}

        def put_affine(prefix, aff):
            out[f"{prefix}.weight"] = aff.weight
            out[f"{prefix}.bias"] = aff.bias

        def put_ln(prefix, ln):
            out[f"{prefix}.gain"] = ln.gain
            out[f"{prefix}.bias"] = ln.bias

        def put_attn(prefix, attn):
            for part in ("q", "k", "v", "out"):
                put_affine(f"{prefix}.{part}", getattr(attn, part))

        if self.clip_agg is not None:
            put_affine("clip_agg", self.clip_agg)
        put_affine("proj", self.proj)
        out["pos"] = self.pos
        out["cls_verb"] = self.cls_verb
        out["cls_noun"] = self.cls_noun
        for i, layer in enumerate(self.encoder):
            put_attn(f"enc.{i}.attn", layer.attn)
            put_ln(f"enc.{i}.ln1", layer.ln1)
            put_affine(f"enc.{i}.ff_in", layer.ff_in)
            put_affine(f"enc.{i}.ff_out", layer.ff_out)
            put_ln(f"enc.{i}.ln2", layer.ln2)
        for tag, stack in (("dec_v", self.dec_visual), ("dec_t", self.dec_text)):
            if stack is None:
                continue
            for i, layer in enumerate(stack):
                if layer.self_attn is not None:
                    put_attn(f"{tag}.{i}.self", layer.self_attn)
                    put_ln(f"{tag}.{i}.ln_self", layer.ln_self)
                put_attn(f"{tag}.{i}.cross", layer.cross)
                put_ln(f"{tag}.{i}.ln_cross", layer.ln_cross)
                put_affine(f"{tag}.{i}.ff_in", layer.ff_in)
                put_affine(f"{tag}.{i}.ff_out", layer.ff_out)
                put_ln(f"{tag}.{i}.ln_ff", layer.ln_ff)
        put_affine("head_verb", self.head_verb)
        put_affine("head_noun", self.head_noun)
        if self.text_head is not None:
            put_affine("text_head", self.text_head)
        return out

    def tensors(self) -> list[Tensor]:
        return list(self.named().values())

    def zero_grads(self):
        for t in self.tensors():
            t.grad = None

    @classmethod
    def from_named(cls, config: ModelConfig, arrays: dict[str, np.ndarray]) -> "ModelParams":
        """Rebuild from name->array pairs; optional groups may be absent."""
        params = cls(config, _empty=True)
        remaining = dict(arrays)

        def take(name) -> Tensor:
            if name not in remaining:
                raise KeyError(f"checkpoint is missing parameter {name!r}")
            return Tensor(remaining.pop(name), requires_grad=True)

        def take_affine(prefix) -> Affine:
            return Affine(weight=take(f"{prefix}.weight"), bias=take(f"{prefix}.bias"))

        def take_ln(prefix) -> LayerNormParams:
            return LayerNormParams(gain=take(f"{prefix}.gain"), bias=take(f"{prefix}.bias"))

        def take_attn(prefix) -> AttentionParams:
            return AttentionParams(q=take_affine(f"{prefix}.q"), k=take_affine(f"{prefix}.k"),
                                   v=take_affine(f"{prefix}.v"), out=take_affine(f"{prefix}.out"))

        def group_present(prefix) -> bool:
            return any(n.startswith(prefix + ".") or n == prefix for n in remaining)

        if group_present("clip_agg"):
            params.clip_agg = take_affine("clip_agg")
        params.proj = take_affine("proj")
        params.pos = take("pos")
        params.cls_verb = take("cls_verb")
        params.cls_noun = take("cls_noun")
        params.encoder = []
        for i in range(config.n_enc_layers):
            params.encoder.append(EncoderLayerParams(
                attn=take_attn(f"enc.{i}.attn"), ln1=take_ln(f"enc.{i}.ln1"),
                ff_in=take_affine(f"enc.{i}.ff_in"), ff_out=take_affine(f"enc.{i}.ff_out"),
                ln2=take_ln(f"enc.{i}.ln2")))
        for tag in ("dec_v", "dec_t"):
            if not group_present(f"{tag}.0") and config.n_dec_layers > 0:
                stack = None  # stripped checkpoint: decoders absent
            else:
                stack = []
                for i in range(config.n_dec_layers):
                    with_self = group_present(f"{tag}.{i}.self")
                    layer = DecoderLayerParams(
                        cross=take_attn(f"{tag}.{i}.cross"),
                        ln_cross=take_ln(f"{tag}.{i}.ln_cross"),
                        ff_in=take_affine(f"{tag}.{i}.ff_in"),
                        ff_out=take_affine(f"{tag}.{i}.ff_out"),
                        ln_ff=take_ln(f"{tag}.{i}.ln_ff"),
                        self_attn=take_attn(f"{tag}.{i}.self") if with_self else None,
                        ln_self=take_ln(f"{tag}.{i}.ln_self") if with_self else None)
                    stack.append(layer)
            if tag == "dec_v":
                params.dec_visual = stack
            else:
                params.dec_text = stack
        params.head_verb = take_affine("head_verb")
        params.head_noun = take_affine("head_noun")
        if group_present("text_head"):
            params.text_head = take_affine("text_head")
        if remaining:
            raise KeyError(f"checkpoint has unexpected parameters: {sorted(remaining)[:5]}")
        return params


# ---------------------------------------------------------------------------
# activations


@dataclass
class EncodedSequence:
    """Per-position activations plus, for the visual stream, two
    classification-token slots. Text sequences pass through an identity
    encoder and have no classification slots."""

    positions: Tensor            # (..., W, D)
    cls_slots: Tensor | None     # (..., 2, D) for visual, None for text
    modality: str                # "visual" | "text"

    @property
    def total_length(self) -> int:
        n = self.positions.shape[-2]
        return n + (self.cls_slots.shape[-2] if self.cls_slots is not None else 0)


@dataclass
class TrainForward:
    """Everything the composite loss reads from one training forward."""

    verb_logits: Tensor
    noun_logits: Tensor
    encoded: EncodedSequence
    recon_v: Tensor | None = None
    target_v: Tensor | None = None
    recon_t: Tensor | None = None
    target_t: Tensor | None = None
    center_text_logits: Tensor | None = None


# ---------------------------------------------------------------------------
# forward ops


def _linear(x: Tensor, aff: Affine) -> Tensor:
    return T.add(T.matmul(x, aff.weight), aff.bias)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    *lead, length, d = x.shape
    y = T.reshape(x, tuple(lead) + (length, n_heads, d // n_heads))
    axes = tuple(range(y.ndim - 3)) + (y.ndim - 2, y.ndim - 3, y.ndim - 1)
    return T.permute(y, axes)


def _merge_heads(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 3)) + (x.ndim - 2, x.ndim - 3, x.ndim - 1)
    y = T.permute(x, axes)
    *lead, length, heads, dh = y.shape
    return T.reshape(y, tuple(lead) + (length, heads * dh))


def _attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int):
    d_head = q.shape[-1] // n_heads
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scores = T.scale(T.matmul(qh, T.transpose_last(kh)), 1.0 / math.sqrt(d_head))
    weights = T.softmax_rows(scores)
    return _merge_heads(T.matmul(weights, vh)), weights


def self_attention(h: Tensor, params: AttentionParams, n_heads: int,
                   with_weights: bool = False):
    """Multi-head scaled dot-product attention of a stream over itself."""
    ctx, weights = _attention(_linear(h, params.q), _linear(h, params.k),
                              _linear(h, params.v), n_heads)
    out = _linear(ctx, params.out)
    return (out, weights) if with_weights else out


def cross_attention(query_stream: Tensor, context: Tensor, params: AttentionParams,
                    n_heads: int, values_from: str = "query_stream",
                    with_weights: bool = False):
    """Attention with queries from one stream and keys from the other.

    `values_from="query_stream"` takes the value projection from the query
    stream, which is only shape-consistent when both streams have equal
    length (always true in this model, where both carry W positions).
    `values_from="context_stream"` is the conventional wiring and works for
    any pair of lengths.
    """
    if values_from not in CROSS_ATTENTION_MODES:
        raise ValueError(f"values_from must be one of {CROSS_ATTENTION_MODES}")
    if values_from == "query_stream" and query_stream.shape[-2] != context.shape[-2]:
        raise ShapeError(
            f"query_stream values need equal stream lengths, got "
            f"{query_stream.shape[-2]} and {context.shape[-2]}")
    value_src = query_stream if values_from == "query_stream" else context
    ctx, weights = _attention(_linear(query_stream, params.q), _linear(context, params.k),
                              _linear(value_src, params.v), n_heads)
    out = _linear(ctx, params.out)
    return (out, weights) if with_weights else out


def _feed_forward(h: Tensor, ff_in: Affine, ff_out: Affine) -> Tensor:
    return _linear(T.relu(_linear(h, ff_in)), ff_out)


def encoder_layer(h: Tensor, params: EncoderLayerParams, n_heads: int,
                  eps: float = 1e-5) -> Tensor:
    attn = self_attention(h, params.attn, n_heads)
    h = T.layer_norm(T.add(attn, h), params.ln1.gain, params.ln1.bias, eps)
    ff = _feed_forward(h, params.ff_in, params.ff_out)
    return T.layer_norm(T.add(ff, h), params.ln2.gain, params.ln2.bias, eps)


def decoder_layer(h: Tensor, context: Tensor, params: DecoderLayerParams,
                  n_heads: int, eps: float = 1e-5,
                  values_from: str = "query_stream") -> Tensor:
    if params.self_attn is not None:
        attn = self_attention(h, params.self_attn, n_heads)
        h = T.layer_norm(T.add(attn, h), params.ln_self.gain, params.ln_self.bias, eps)
    cross = cross_attention(h, context, params.cross, n_heads, values_from)
    h = T.layer_norm(T.add(cross, h), params.ln_cross.gain, params.ln_cross.bias, eps)
    ff = _feed_forward(h, params.ff_in, params.ff_out)
    return T.layer_norm(T.add(ff, h), params.ln_ff.gain, params.ln_ff.bias, eps)


def encode_sequence(x, params: ModelParams) -> EncodedSequence:
    """Project, add positional encodings, append the two classification
    tokens, and run the encoder stack. Output length is W + 2."""
    cfg = params.config
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.ndim < 2 or x.shape[-2] != cfg.W:
        raise ShapeError(f"encode_sequence: expected {cfg.W} rows, got shape {x.shape}")
    if x.shape[-1] != cfg.D_V:
        raise ShapeError(f"encode_sequence: expected width {cfg.D_V}, got shape {x.shape}")
    h = T.add(_linear(x, params.proj), params.pos)
    lead = h.shape[:-2]
    cls_v = T.reshape(params.cls_verb, (1, cfg.D))
    cls_n = T.reshape(params.cls_noun, (1, cfg.D))
    if lead:
        cls_v = T.expand_leading(cls_v, lead)
        cls_n = T.expand_leading(cls_n, lead)
    seq = T.concat([h, cls_v, cls_n], axis=-2)
    for layer in params.encoder:
        seq = encoder_layer(seq, layer, cfg.n_heads, cfg.layer_norm_eps)
    return EncodedSequence(positions=T.narrow(seq, -2, 0, cfg.W),
                           cls_slots=T.narrow(seq, -2, cfg.W, 2),
                           modality="visual")


def encode_text(x) -> EncodedSequence:
    """Text features pass through unchanged (identity encoder, no slots)."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    return EncodedSequence(positions=x, cls_slots=None, modality="text")


def mask_center(z):
    """Zero the center position; everything else is bitwise unchanged.

    Accepts an EncodedSequence (masks its positions) or a plain tensor of
    positions. Gradient never flows into the zeroed row. Idempotent.
    """
    if isinstance(z, EncodedSequence):
        return EncodedSequence(positions=mask_center(z.positions),
                               cls_slots=z.cls_slots, modality=z.modality)
    if z.ndim < 2:
        raise ShapeError(f"mask_center: need at least 2 axes, got shape {z.shape}")
    w = z.shape[-2]
    if w % 2 == 0:
        raise ShapeError(f"mask_center: window length must be odd, got {w}")
    return T.zero_rows(z, (w - 1) // 2)


def decode(masked: EncodedSequence, context: EncodedSequence, params: ModelParams,
           which: str) -> Tensor:
    """Reconstruct one masked stream guided by the other, unmasked one."""
    if which == "visual":
        want = ("visual", "text")
        stack = params.dec_visual
    elif which == "text":
        want = ("text", "visual")
        stack = params.dec_text
    else:
        raise ValueError(f"decode: which must be 'visual' or 'text', got {which!r}")
    if (masked.modality, context.modality) != want:
        raise ValueError(f"decode({which!r}): expected modalities {want}, got "
                         f"({masked.modality!r}, {context.modality!r})")
    if stack is None:
        raise ValueError(f"decode({which!r}): decoder parameters were stripped "
                         "from this model")
    cfg = params.config
    h = masked.positions
    for layer in stack:
        h = decoder_layer(h, context.positions, layer, cfg.n_heads,
                          cfg.layer_norm_eps, cfg.cross_attention_values)
    return h


def classify(cls_slots: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    """Raw verb logits from slot 0 and noun logits from slot 1."""
    if cls_slots is None or cls_slots.shape[-2] != 2:
        raise ShapeError("classify: expected two classification slots")
    lead = cls_slots.shape[:-2]
    cfg = params.config
    slot_v = T.narrow(cls_slots, -2, 0, 1)
    slot_n = T.narrow(cls_slots, -2, 1, 1)
    verb = T.reshape(_linear(slot_v, params.head_verb), lead + (cfg.n_verbs,))
    noun = T.reshape(_linear(slot_n, params.head_noun), lead + (cfg.n_nouns,))
    return verb, noun


# ---------------------------------------------------------------------------
# the bundled model


class SeqDGModel:
    """Config + parameters with the two entry points the pipeline uses:
    a training forward producing logits and reconstructions, and a
    text-free inference forward producing logits only."""

    def __init__(self, config: ModelConfig, params: ModelParams):
        self.config = config.check()
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "SeqDGModel":
        return cls(config, ModelParams(config, seed=seed))

    def _aggregate(self, visual: Tensor) -> Tensor:
        # relational mode consumes raw clip stacks (..., W, k, D_V)
        if self.config.clip_agg != "relational":
            return visual
        if visual.ndim < 3 or visual.shape[-2] != self.config.relational_clips:
            raise ShapeError(f"expected {self.config.relational_clips} clips per "
                             f"action, got shape {visual.shape}")
        *lead, w, k, d_v = visual.shape
        flat = T.reshape(visual, tuple(lead) + (w, k * d_v))
        return _linear(flat, self.params.clip_agg)

    def forward_train(self, visual, text=None, *, recon_v: bool = False,
                      recon_t: bool = False, token_text: bool = False,
                      frozen_targets: tuple | None = None) -> TrainForward:
        """Full training forward.

        `visual` is (..., W, D_V), or (..., W, k, D_V) under relational clip
        aggregation; `text` is (..., W, D_T) and is required whenever a
        reconstruction path runs (each decoder needs the other stream).
        `frozen_targets` substitutes precomputed reconstruction targets,
        which is how the gradient checker pins the stop-gradient branch.
        """
        x = visual if isinstance(visual, Tensor) else Tensor(visual)
        enc = encode_sequence(self._aggregate(x), self.params)
        verb_logits, noun_logits = classify(enc.cls_slots, self.params)
        out = TrainForward(verb_logits=verb_logits, noun_logits=noun_logits, encoded=enc)
        if not (recon_v or recon_t):
            return out
        if text is None:
            raise ValueError("reconstruction requires text features")
        z_text = encode_text(text)
        if recon_v:
            out.recon_v = decode(mask_center(enc), z_text, self.params, "visual")
            out.target_v = (Tensor(frozen_targets[0]) if frozen_targets is not None
                            else enc.positions.detach())
        if recon_t:
            out.recon_t = decode(mask_center(z_text), enc, self.params, "text")
            out.target_t = (Tensor(frozen_targets[1]) if frozen_targets is not None
                            else z_text.positions.detach())
            if token_text:
                if self.params.text_head is None:
                    raise ValueError("token-level text loss needs vocab_size in the "
                                     "model config")
                center = T.narrow(out.recon_t, -2, self.config.center, 1)
                lead = center.shape[:-2]
                logits = _linear(center, self.params.text_head)
                out.center_text_logits = T.reshape(logits, lead + (self.config.vocab_size,))
        return out

    def predict_logits(self, visual) -> tuple[np.ndarray, np.ndarray]:
        """Inference: encode and classify. No masking, no decoders, no text."""
        with T.no_grad():
            x = visual if isinstance(visual, Tensor) else Tensor(visual)
            enc = encode_sequence(self._aggregate(x), self.params)
            verb, noun = classify(enc.cls_slots, self.params)
        return verb.data, noun.data
