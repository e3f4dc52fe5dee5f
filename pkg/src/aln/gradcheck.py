"""Central finite-difference verification of the model's backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .dataio import Utterance
from .model import ModelConfig, ModelParams, forward, gradients, init_model

EPS = 1e-4
DEFAULT_SAMPLE = 200


def relative_error(analytic, numeric) -> np.ndarray:
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


@dataclass
class GradcheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def failed(self) -> list[str]:
        return [n for n, e in self.max_rel_error.items() if not e < self.tolerance]

    @property
    def ok(self) -> bool:
        return not self.failed

    def __len__(self) -> int:
        return len(self.max_rel_error)


def batch_loss(params: ModelParams, batch: Sequence[Utterance], alpha: float) -> float:
    return sum(forward(u, params, alpha)[1].loss_total for u in batch) / len(batch)


def batch_gradients(params: ModelParams, batch: Sequence[Utterance], alpha: float) -> dict[str, np.ndarray]:
    total = {n: np.zeros(p.shape) for n, p in params.tensors.items()}
    for u in batch:
        _, _, g = gradients(u, params, alpha)
        for n, v in g.items():
            total[n] += v
    return {n: v / len(batch) for n, v in total.items()}


def _sample_indices(size: int, limit: int, rng: np.random.Generator) -> np.ndarray:
    if size <= limit:
        return np.arange(size)
    return np.sort(rng.choice(size, size=limit, replace=False))


def gradcheck(
    params: ModelParams,
    batch: Sequence[Utterance],
    tolerance: float = 1e-3,
    alpha: float = 0.8,
    *,
    names: Iterable[str] | None = None,
    sample_size: int = DEFAULT_SAMPLE,
    eps: float = EPS,
    grad_fn: Callable | None = None,
    seed: int = 0,
) -> GradcheckReport:
    """Compare analytic gradients of the mean batch ``loss_total`` against central differences.

    Tensors with more than ``sample_size`` elements are checked on a
    deterministic random subset of that many elements.  ``grad_fn`` replaces
    the analytic gradient routine (same signature as :func:`batch_gradients`),
    which is how mutation tests plant a broken backward rule.
    """
    if not batch:
        raise ValueError("gradcheck needs a nonempty batch")
    grad_fn = grad_fn or batch_gradients
    names = params.names() if names is None else list(names)
    report = GradcheckReport(tolerance)
    if not names or sample_size <= 0:
        return report
    analytic = grad_fn(params, batch, alpha)
    rng = np.random.Generator(np.random.PCG64(seed))
    for name in names:
        value = params[name].value
        flat = value.reshape(-1)  # view: edits go straight into the parameter
        idx = _sample_indices(flat.size, sample_size, rng)
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = batch_loss(params, batch, alpha)
            flat[i] = orig - eps
            down = batch_loss(params, batch, alpha)
            flat[i] = orig
            numeric[j] = (up - down) / (2.0 * eps)
        err = relative_error(analytic[name].reshape(-1)[idx], numeric)
        report.max_rel_error[name] = float(err.max()) if err.size else 0.0
        report.checked[name] = int(idx.size)
    return report


TINY_PROFILE = dict(d_acoustic=4, d_linguistic=6, d_attn=4, gru_hidden=5, num_classes=3)


def tiny_instance(variant: str, seed: int = 0, n_utts: int = 2, frames: int = 3, **overrides):
    """A small random model and batch for gradient checks (T frames per utterance)."""
    dims = {**TINY_PROFILE, **overrides}
    cfg = ModelConfig(variant=variant, init_seed=seed, **dims)
    params = init_model(cfg)
    rng = np.random.Generator(np.random.PCG64(seed + 1000))
    # nonzero biases so every bias gradient path is exercised
    for p in params:
        if p.name.endswith("_b") or p.name.startswith("gru_b"):
            p.value[:] = rng.uniform(-0.5, 0.5, size=p.shape)
    batch = [
        Utterance(
            f"tiny-{i}",
            rng.normal(size=(frames, dims["d_acoustic"])),
            rng.normal(size=(1, dims["d_linguistic"])),
            int(rng.integers(0, dims["num_classes"])),
        )
        for i in range(n_utts)
    ]
    return params, batch
