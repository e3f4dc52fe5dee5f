"""Mini-batch training with the joint distillation + intent objective."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .dataio import Dataset, Utterance
from .errors import NumericFaultError, UnsupportedVariantError, ValidationError
from .model import ModelConfig, ModelParams, argmax_first, forward_backward, init_model, predict_logits, _forward_cached

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = 0.8
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.001
    shuffle_seed: int = 0
    eval_every: int = 1
    nan_policy: str = "abort"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if not (self.learning_rate >= 0 and math.isfinite(self.learning_rate)):
            raise ValidationError(f"learning_rate must be a finite value >= 0, got {self.learning_rate}")
        if self.eval_every < 1:
            raise ValidationError("eval_every must be >= 1")
        if self.nan_policy != "abort":
            raise ValidationError("nan_policy only supports 'abort'")


@dataclass
class EpochMetrics:
    epoch: int
    mean_loss_total: float
    mean_loss_tl: float
    mean_loss_intent: float
    train_accuracy: float
    test_accuracy: float | None
    mean_student_teacher_cosine: float | None
    wall_time: float | None = None

    def to_json(self, include_wall_time: bool = True) -> str:
        rec = asdict(self)
        if not include_wall_time:
            del rec["wall_time"]
        return json.dumps(rec)


class TrainingAborted(NumericFaultError):
    def __init__(self, epoch: int, batch: int, utterance_id: str, detail: str):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}, utterance {utterance_id!r}: {detail}")
        self.epoch, self.batch, self.utterance_id = epoch, batch, utterance_id


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; a zero-norm vector gives 0."""
    a, b = np.ravel(a), np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def cosine_diagnostic(params: ModelParams, ds: Dataset) -> float:
    """Mean cosine between pooled student embeddings and teacher embeddings over ``ds``."""
    if params.config.variant == "baseline2":
        raise UnsupportedVariantError("baseline2 has no student embeddings")
    if not ds.utterances:
        return 0.0
    total = 0.0
    for u in ds:
        out = _forward_cached(u, params, 0.0, need_loss=False)[0]
        total += cosine(out.student_pooled, u.teacher)
    return total / len(ds)


def epoch_permutation(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(shuffle_seed, spawn_key=(epoch,))))
    return rng.permutation(n)


def check_compatible(ds: Dataset, cfg: ModelConfig) -> None:
    if ds.d_acoustic != cfg.d_acoustic:
        raise ValidationError(f"{ds.split} data d_acoustic {ds.d_acoustic} != model d_acoustic {cfg.d_acoustic}")
    if cfg.variant != "baseline2" and ds.d_linguistic != cfg.d_linguistic:
        raise ValidationError(
            f"{ds.split} data d_linguistic {ds.d_linguistic} != model d_linguistic {cfg.d_linguistic}"
        )
    if ds.num_classes > cfg.num_classes:
        raise ValidationError(f"{ds.split} data has {ds.num_classes} classes but model only {cfg.num_classes}")


def accumulate_batch(params: ModelParams, batch: Sequence[Utterance], alpha: float):
    """Sum per-utterance gradients into ``params`` then divide by the batch count.

    Returns the per-utterance ``(losses, output)`` pairs.
    """
    params.zero_grad()
    results = [forward_backward(u, params, alpha) for u in batch]
    for p in params:
        p.grad /= len(batch)
    return results


def _accuracy(params: ModelParams, ds: Dataset) -> float:
    if not ds.utterances:
        return 0.0
    hits = sum(argmax_first(predict_logits(u, params)) == u.label for u in ds)
    return hits / len(ds)


def train(
    train_ds: Dataset,
    test_ds: Dataset | None,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    *,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
    params: ModelParams | None = None,
) -> tuple[ModelParams, list[EpochMetrics]]:
    """Train a fresh model (or ``params``, when given) and return it with the metric history.

    Epoch ``e`` visits the training set in the order given by
    :func:`epoch_permutation`; each batch of ``batch_size`` utterances (the
    last one may be smaller) yields one Adam step on the batch-mean gradient.
    Loss, accuracy and cosine statistics are collected from the forward
    passes made during the epoch; test accuracy is measured after the epoch.
    """
    check_compatible(train_ds, mcfg)
    if test_ds is not None:
        check_compatible(test_ds, mcfg)
    if not train_ds.utterances:
        raise ValidationError("training set is empty")
    if tcfg.alpha == 1.0 and mcfg.variant == "baseline2":
        log.warning("alpha = 1 on baseline2: the objective is identically zero, nothing will be learned")
    params = params if params is not None else init_model(mcfg)
    adam = nx.AdamConfig(learning_rate=tcfg.learning_rate)
    n = len(train_ds)
    utts = train_ds.utterances
    history = []
    for epoch in range(1, tcfg.epochs + 1):
        t0 = time.perf_counter()
        order = epoch_permutation(n, tcfg.shuffle_seed, epoch)
        sums = np.zeros(3)
        hits = 0
        cos_sum = 0.0
        for b, start in enumerate(range(0, n, tcfg.batch_size)):
            batch = [utts[i] for i in order[start : start + tcfg.batch_size]]
            results = accumulate_batch(params, batch, tcfg.alpha)
            for u, (losses, out) in zip(batch, results):
                if not math.isfinite(losses.loss_total):
                    raise TrainingAborted(epoch, b, u.id, f"loss_total = {losses.loss_total}")
                sums += (losses.loss_total, losses.loss_tl, losses.loss_intent)
                hits += argmax_first(out.logits) == u.label
                if out.student_pooled is not None:
                    cos_sum += cosine(out.student_pooled, u.teacher)
            try:
                nx.adam_step(params, adam)
            except NumericFaultError as exc:
                raise TrainingAborted(epoch, b, batch[-1].id, str(exc)) from None
        test_acc = None
        if test_ds is not None and (epoch % tcfg.eval_every == 0 or epoch == tcfg.epochs):
            test_acc = _accuracy(params, test_ds)
        m = EpochMetrics(
            epoch=epoch,
            mean_loss_total=float(sums[0] / n),
            mean_loss_tl=float(sums[1] / n),
            mean_loss_intent=float(sums[2] / n),
            train_accuracy=hits / n,
            test_accuracy=test_acc,
            mean_student_teacher_cosine=None if mcfg.variant == "baseline2" else cos_sum / n,
            wall_time=time.perf_counter() - t0,
        )
        history.append(m)
        log.info(
            "epoch %d loss %.4f (tl %.4f, intent %.4f) train acc %.3f test acc %s",
            epoch, m.mean_loss_total, m.mean_loss_tl, m.mean_loss_intent, m.train_accuracy,
            "-" if test_acc is None else f"{test_acc:.3f}",
        )
        if on_epoch is not None:
            on_epoch(m)
    return params, history


class MetricsWriter:
    """Appends one JSON record per epoch and flushes it, so a crash leaves a valid prefix.

    Wall time is left out unless asked for, which keeps files from identical
    runs byte-identical.
    """

    def __init__(self, path, include_wall_time: bool = False):
        self.path = Path(path)
        self.include_wall_time = include_wall_time
        self._fh = open(self.path, "w", encoding="utf-8", newline="\n")

    def __call__(self, m: EpochMetrics) -> None:
        self._fh.write(m.to_json(self.include_wall_time) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[EpochMetrics]:
    with open(path, encoding="utf-8") as fh:
        return [EpochMetrics(**json.loads(line)) for line in fh if line.strip()]
