"""The three intent classifiers and their hand-written backward passes.

Variants
--------
``baseline2``
    acoustic frames -> GRU -> max-pool -> linear -> logits
``aln_linguistic``
    acoustic frames -> transfer layer (student frames) -> GRU head.
    The mean-pooled student frames are pulled towards the teacher embedding.
``aln``
    as ``aln_linguistic`` but the GRU head reads the cross-attention output,
    where acoustic frames are the queries and mapped student frames give the
    keys and values.

Every forward pass keeps what it needs for the backward pass, so the training
loop calls :func:`forward_backward` once per utterance and accumulates
gradients into the :class:`ModelParams` tensors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from typing import Iterator

import numpy as np

from . import numerics as nx
from .dataio import Utterance, format_floats, write_atomic
from .errors import AlignmentError, DimensionError, ParseError, UnsupportedVariantError, ValidationError

VARIANTS = ("baseline2", "aln_linguistic", "aln")
CHECKPOINT_VERSION = 1


def normalize_variant(name: str) -> str:
    v = name.strip().lower().replace("-", "_")
    if v not in VARIANTS:
        raise UnsupportedVariantError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
    return v


@dataclass
class ModelConfig:
    variant: str = "aln"
    d_acoustic: int = 256
    d_linguistic: int = 768
    d_attn: int = 256
    gru_hidden: int = 128
    num_classes: int = 15
    init_seed: int = 0

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        for f in ("d_acoustic", "d_linguistic", "d_attn", "gru_hidden", "num_classes"):
            if int(getattr(self, f)) < 1:
                raise ValidationError(f"ModelConfig.{f} must be >= 1")

    @property
    def head_input(self) -> int:
        return {"baseline2": self.d_acoustic, "aln_linguistic": self.d_linguistic, "aln": self.d_attn}[self.variant]

    @property
    def maps_acoustic(self) -> bool:
        # the acoustic stream only needs its own mapping when its width differs from d_attn
        return self.variant == "aln" and self.d_acoustic != self.d_attn

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, int]]]:
    """Parameter names and shapes, in a fixed order, for ``cfg``."""
    shapes = []
    if cfg.variant != "baseline2":
        shapes += [("transfer_w", (cfg.d_acoustic, cfg.d_linguistic)), ("transfer_b", (1, cfg.d_linguistic))]
    if cfg.variant == "aln":
        shapes += [("mapping_w", (cfg.d_linguistic, cfg.d_attn)), ("mapping_b", (1, cfg.d_attn))]
        if cfg.maps_acoustic:
            shapes += [("acoustic_mapping_w", (cfg.d_acoustic, cfg.d_attn)), ("acoustic_mapping_b", (1, cfg.d_attn))]
        for f in ("q", "k", "v"):
            shapes += [(f"attn_{f}_w", (cfg.d_attn, cfg.d_attn)), (f"attn_{f}_b", (1, cfg.d_attn))]
    d_in, h = cfg.head_input, cfg.gru_hidden
    for g in ("z", "r", "h"):
        shapes.append((f"gru_w{g}", (d_in, h)))
    for g in ("z", "r", "h"):
        shapes.append((f"gru_u{g}", (h, h)))
    for g in ("z", "r", "h"):
        shapes.append((f"gru_b{g}", (1, h)))
    shapes += [("head_w", (h, cfg.num_classes)), ("head_b", (1, cfg.num_classes))]
    return shapes


class ModelParams:
    """Named trainable tensors of one model plus its configuration."""

    def __init__(self, config: ModelConfig, tensors: dict[str, nx.ParamTensor]):
        self.config = config
        expected = param_shapes(config)
        if [n for n, _ in expected] != list(tensors):
            raise ValidationError(
                f"parameters {sorted(tensors)} do not match variant {config.variant!r}: "
                f"expected {[n for n, _ in expected]}"
            )
        for name, shape in expected:
            if tensors[name].shape != shape:
                raise DimensionError(f"parameter {name!r} has shape {tensors[name].shape}, expected {shape}")
        self.tensors = tensors

    def __getitem__(self, name: str) -> nx.ParamTensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self) -> Iterator[nx.ParamTensor]:
        return iter(self.tensors.values())

    def __len__(self) -> int:
        return len(self.tensors)

    def names(self) -> list[str]:
        return list(self.tensors)

    def gru(self) -> dict[str, nx.ParamTensor]:
        return {k: self.tensors[f"gru_{k}"] for k in nx.GRU_KEYS}

    def zero_grad(self) -> None:
        for p in self:
            p.zero_grad()

    def copy(self) -> "ModelParams":
        return ModelParams(
            ModelConfig(**self.config.to_dict()),
            {
                n: nx.ParamTensor(n, p.value.copy(), p.grad.copy(), p.adam_m.copy(), p.adam_v.copy())
                for n, p in self.tensors.items()
            },
        )

    def values_equal(self, other: "ModelParams") -> bool:
        return self.config == other.config and all(
            np.array_equal(p.value, other[n].value) for n, p in self.tensors.items()
        )


def init_model(cfg: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic in ``cfg.init_seed``."""
    rng = np.random.Generator(np.random.PCG64(cfg.init_seed))
    tensors = {}
    for name, (fan_in, fan_out) in param_shapes(cfg):
        if name.endswith("_b") or name.startswith("gru_b"):
            value = np.zeros((fan_in, fan_out))
        else:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        tensors[name] = nx.ParamTensor(name, value)
    return ModelParams(cfg, tensors)


# --- components ----------------------------------------------------------------


def _require_variant(params: ModelParams, allowed: tuple[str, ...], what: str) -> None:
    if params.config.variant not in allowed:
        raise UnsupportedVariantError(f"{what} is not available for variant {params.config.variant!r}")


def transfer_forward(acoustic: np.ndarray, params: ModelParams) -> np.ndarray:
    """Per-frame linear map from acoustic to student linguistic frames (T x D_l)."""
    _require_variant(params, ("aln_linguistic", "aln"), "transfer layer")
    return nx.linear_forward(acoustic, params["transfer_w"], params["transfer_b"])


def compute_loss_tl(student_seq: np.ndarray, teacher: np.ndarray) -> tuple[float, np.ndarray]:
    """Distillation loss: MSE between the teacher and the mean-pooled student frames."""
    teacher = teacher.reshape(1, -1)
    if student_seq.shape[1] != teacher.shape[1]:
        raise DimensionError(f"student width {student_seq.shape[1]} != teacher width {teacher.shape[1]}")
    pooled = nx.mean_pool(student_seq)
    return nx.mse(teacher, pooled), pooled


@dataclass
class _AttnCache:
    acoustic: np.ndarray
    student: np.ndarray
    query_in: np.ndarray
    mapped: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    weights: np.ndarray


def _cross_attention_cached(acoustic, student_seq, params: ModelParams):
    _require_variant(params, ("aln",), "cross attention")
    if acoustic.shape[0] != student_seq.shape[0]:
        raise AlignmentError(
            f"acoustic has {acoustic.shape[0]} frames but student sequence has {student_seq.shape[0]}"
        )
    d = params.config.d_attn
    mapped = nx.linear_forward(student_seq, params["mapping_w"], params["mapping_b"])
    if params.config.maps_acoustic:
        query_in = nx.linear_forward(acoustic, params["acoustic_mapping_w"], params["acoustic_mapping_b"])
    else:
        query_in = acoustic
    q = nx.linear_forward(query_in, params["attn_q_w"], params["attn_q_b"])
    k = nx.linear_forward(mapped, params["attn_k_w"], params["attn_k_b"])
    v = nx.linear_forward(mapped, params["attn_v_w"], params["attn_v_b"])
    weights = nx.softmax_rows(q @ k.T / math.sqrt(d))
    fused = weights @ v
    return fused, _AttnCache(acoustic, student_seq, query_in, mapped, q, k, v, weights)


def cross_attention(acoustic: np.ndarray, student_seq: np.ndarray, params: ModelParams):
    """Single-head scaled dot-product attention; returns ``(fused, weights)``.

    Queries come from the acoustic frames, keys and values from the mapped
    student frames.  ``fused`` is frame-aligned with ``acoustic``.
    """
    fused, cache = _cross_attention_cached(acoustic, student_seq, params)
    return fused, cache.weights


def _cross_attention_backward(cache: _AttnCache, d_fused, params: ModelParams, grads: dict) -> np.ndarray:
    """Accumulate attention parameter gradients; return the gradient w.r.t. the student frames."""
    scale = 1.0 / math.sqrt(params.config.d_attn)
    w = cache.weights
    d_weights = d_fused @ cache.v.T
    d_v = w.T @ d_fused
    d_scores = nx.softmax_rows_backward(w, d_weights) * scale
    d_q = d_scores @ cache.k
    d_k = d_scores.T @ cache.q

    d_query_in, gw, gb = nx.linear_backward(cache.query_in, params["attn_q_w"].value, d_q)
    grads["attn_q_w"], grads["attn_q_b"] = gw, gb
    d_mapped, gw, gb = nx.linear_backward(cache.mapped, params["attn_k_w"].value, d_k)
    grads["attn_k_w"], grads["attn_k_b"] = gw, gb
    dm2, gw, gb = nx.linear_backward(cache.mapped, params["attn_v_w"].value, d_v)
    grads["attn_v_w"], grads["attn_v_b"] = gw, gb
    d_mapped = d_mapped + dm2
    if params.config.maps_acoustic:
        _, gw, gb = nx.linear_backward(cache.acoustic, params["acoustic_mapping_w"].value, d_query_in)
        grads["acoustic_mapping_w"], grads["acoustic_mapping_b"] = gw, gb
    d_student, gw, gb = nx.linear_backward(cache.student, params["mapping_w"].value, d_mapped)
    grads["mapping_w"], grads["mapping_b"] = gw, gb
    return d_student


def intent_head(seq: np.ndarray, params: ModelParams) -> np.ndarray:
    """GRU over the frames, max-pool over time, linear layer to class logits (1 x K)."""
    return _intent_head_cached(seq, params)[0]


def _intent_head_cached(seq, params: ModelParams):
    width = params.config.head_input
    if seq.ndim != 2 or seq.shape[1] != width:
        raise DimensionError(f"intent head expects width {width}, got {seq.shape[-1]}")
    hs, gru_cache = nx.gru_forward_cached(seq, params.gru())
    pooled, argmax = nx.max_pool(hs)
    logits = nx.linear_forward(pooled, params["head_w"], params["head_b"])
    return logits, (gru_cache, pooled, argmax)


def _intent_head_backward(cache, d_logits, params: ModelParams, grads: dict) -> np.ndarray:
    gru_cache, pooled, argmax = cache
    d_pooled, grads["head_w"], grads["head_b"] = nx.linear_backward(pooled, params["head_w"].value, d_logits)
    d_hs = nx.max_pool_backward(d_pooled, argmax, gru_cache.seq.shape[0])
    d_seq, g = nx.gru_backward(gru_cache, params.gru(), d_hs)
    for k, v in g.items():
        grads[f"gru_{k}"] = v
    return d_seq


# --- full model ------------------------------------------------------------------


@dataclass
class ForwardOutput:
    logits: np.ndarray
    student_pooled: np.ndarray | None = None
    fused: np.ndarray | None = None
    attention_weights: np.ndarray | None = None


@dataclass(frozen=True)
class LossBreakdown:
    loss_tl: float
    loss_intent: float
    loss_total: float
    alpha: float


def combine_losses(loss_tl: float, loss_intent: float, alpha: float) -> LossBreakdown:
    """Joint objective ``alpha * loss_tl + (1 - alpha) * loss_intent``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return LossBreakdown(loss_tl, loss_intent, alpha * loss_tl + (1.0 - alpha) * loss_intent, alpha)


def _check_utterance(utt: Utterance, cfg: ModelConfig) -> None:
    if utt.acoustic.ndim != 2 or utt.acoustic.shape[1] != cfg.d_acoustic:
        raise DimensionError(
            f"utterance {utt.id!r}: acoustic width {utt.acoustic.shape[-1]} != model d_acoustic {cfg.d_acoustic}"
        )
    if cfg.variant != "baseline2" and utt.teacher.size != cfg.d_linguistic:
        raise DimensionError(
            f"utterance {utt.id!r}: teacher length {utt.teacher.size} != model d_linguistic {cfg.d_linguistic}"
        )


def _forward_cached(utt: Utterance, params: ModelParams, alpha: float, need_loss: bool = True):
    cfg = params.config
    _check_utterance(utt, cfg)
    out = ForwardOutput(logits=None)
    cache = {}
    loss_tl = 0.0
    if cfg.variant == "baseline2":
        head_in = utt.acoustic
    else:
        student = transfer_forward(utt.acoustic, params)
        loss_tl, out.student_pooled = compute_loss_tl(student, utt.teacher)
        cache["student"] = student
        if cfg.variant == "aln":
            out.fused, attn_cache = _cross_attention_cached(utt.acoustic, student, params)
            out.attention_weights = attn_cache.weights
            cache["attn"] = attn_cache
            head_in = out.fused
        else:
            head_in = student
    out.logits, cache["head"] = _intent_head_cached(head_in, params)
    losses = None
    if need_loss:
        losses = combine_losses(loss_tl, nx.cross_entropy(out.logits, utt.label), alpha)
    return out, losses, cache


def forward(utt: Utterance, params: ModelParams, alpha: float) -> tuple[ForwardOutput, LossBreakdown]:
    out, losses, _ = _forward_cached(utt, params, alpha)
    return out, losses


def gradients(utt: Utterance, params: ModelParams, alpha: float):
    """Loss breakdown, forward output and per-parameter gradients of ``loss_total``."""
    out, losses, cache = _forward_cached(utt, params, alpha)
    cfg = params.config
    grads: dict[str, np.ndarray] = {}
    d_logits = (1.0 - alpha) * nx.cross_entropy_grad(out.logits, utt.label)
    d_head_in = _intent_head_backward(cache["head"], d_logits, params, grads)
    if cfg.variant != "baseline2":
        student = cache["student"]
        if cfg.variant == "aln":
            d_student = _cross_attention_backward(cache["attn"], d_head_in, params, grads)
        else:
            d_student = d_head_in
        # distillation term: d/d(pooled) of mse(teacher, pooled)
        d_pooled = alpha * nx.mse_grad(out.student_pooled, utt.teacher.reshape(1, -1))
        d_student = d_student + nx.mean_pool_backward(d_pooled, student.shape[0])
        _, grads["transfer_w"], grads["transfer_b"] = nx.linear_backward(
            utt.acoustic, params["transfer_w"].value, d_student
        )
    return losses, out, grads


def forward_backward(utt: Utterance, params: ModelParams, alpha: float, scale: float = 1.0):
    """Add ``scale`` times the gradient of ``loss_total`` into ``params``' gradient buffers."""
    losses, out, grads = gradients(utt, params, alpha)
    for name, g in grads.items():
        params[name].grad += scale * g if scale != 1.0 else g
    return losses, out


def predict_logits(utt: Utterance, params: ModelParams) -> np.ndarray:
    return _forward_cached(utt, params, 0.0, need_loss=False)[0].logits


def argmax_first(logits: np.ndarray) -> int:
    """Index of the largest logit; ties go to the lowest index."""
    return int(np.argmax(np.ravel(logits)))


def predict(utt: Utterance, params: ModelParams) -> int:
    return argmax_first(predict_logits(utt, params))


# --- checkpoints -----------------------------------------------------------------


def save_checkpoint(params: ModelParams, path) -> None:
    """Header line with the config, then one line per tensor.  Adam state is not stored."""
    head = {"format_version": CHECKPOINT_VERSION, **params.config.to_dict()}
    lines = [json.dumps(head)]
    for name, p in params.tensors.items():
        r, c = p.shape
        lines.append(f'{{"name": {json.dumps(name)}, "rows": {r}, "cols": {c}, "values": {format_floats(p.value)}}}')
    write_atomic(path, lines)


def load_checkpoint(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty checkpoint", 1)
    records = []
    for lineno, line in enumerate(lines, start=1):
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed record ({exc.msg})", lineno) from None
    head = records[0]
    if head.get("format_version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint format_version {head.get('format_version')!r}", 1)
    try:
        cfg = ModelConfig(**{f.name: head[f.name] for f in fields(ModelConfig)})
    except KeyError as exc:
        raise ParseError(f"checkpoint header missing {exc.args[0]!r}", 1) from None
    tensors = {}
    for lineno, rec in enumerate(records[1:], start=2):
        try:
            name, rows, cols = rec["name"], rec["rows"], rec["cols"]
            values = np.array(rec["values"], dtype=np.float64)
        except (KeyError, TypeError, ValueError):
            raise ParseError("malformed tensor record", lineno) from None
        if values.size != rows * cols:
            raise ParseError(f"tensor {name!r} has {values.size} values, expected {rows} x {cols}", lineno)
        tensors[name] = nx.ParamTensor(name, values.reshape(rows, cols))
    return ModelParams(cfg, tensors)
