"""Held-out accuracy, the alpha ablation grid and embedding exports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dataio import Dataset, format_float, write_atomic
from .errors import UnsupportedVariantError
from .model import ModelConfig, ModelParams, _forward_cached, normalize_variant, predict
from .training import TrainConfig, check_compatible, train


def evaluate(params: ModelParams, ds: Dataset) -> float:
    """Fraction of utterances whose predicted class equals the label."""
    check_compatible(ds, params.config)
    if not ds.utterances:
        return 0.0
    return sum(predict(u, params) == u.label for u in ds) / len(ds)


@dataclass
class AblationRow:
    variant: str
    alpha: float | None  # None for baseline2, which has no distillation term
    test_accuracy: float


@dataclass
class AblationReport:
    rows: list[AblationRow] = field(default_factory=list)
    fingerprint: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def accuracy(self, variant: str, alpha: float | None = None) -> float:
        variant = normalize_variant(variant)
        for r in self.rows:
            if r.variant == variant and (variant == "baseline2" or r.alpha == alpha):
                return r.test_accuracy
        raise KeyError((variant, alpha))

    def to_table(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter="\t", lineterminator="\n")
        w.writerow(["variant", "alpha", "test_accuracy"])
        for r in self.rows:
            w.writerow([r.variant, "n/a" if r.alpha is None else repr(r.alpha), repr(r.test_accuracy)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"fingerprint": self.fingerprint, "rows": [asdict(r) for r in self.rows]}, indent=2)

    def save(self, prefix) -> tuple[str, str]:
        """Write ``<prefix>.tsv`` and ``<prefix>.json``; returns both paths."""
        tsv, js = f"{prefix}.tsv", f"{prefix}.json"
        write_atomic(tsv, self.to_table().rstrip("\n").split("\n"))
        write_atomic(js, [self.to_json()])
        return tsv, js


def config_digest(tcfg: TrainConfig) -> str:
    return hashlib.sha256(json.dumps(asdict(tcfg), sort_keys=True).encode()).hexdigest()[:16]


def _variant_order(v: str) -> int:
    return ("baseline2", "aln_linguistic", "aln").index(v)


def run_ablation(
    train_ds: Dataset,
    test_ds: Dataset,
    variants: Sequence[str],
    alphas: Sequence[float],
    tcfg: TrainConfig,
    *,
    d_attn: int | None = None,
    gru_hidden: int = 128,
    init_seed: int = 0,
    data_seed: int | None = None,
) -> AblationReport:
    """Train every (variant, alpha) cell from a fresh initialisation and report test accuracy.

    ``tcfg.alpha`` is overridden per cell.  baseline2 trains once and its
    alpha is recorded as not applicable (the alpha used is the first one in
    ``alphas``, or ``tcfg.alpha`` when ``alphas`` is empty).
    """
    cells = []
    for v in dict.fromkeys(normalize_variant(v) for v in variants):
        if v == "baseline2":
            cells.append((v, None))
        else:
            cells.extend((v, float(a)) for a in dict.fromkeys(alphas))
    cells.sort(key=lambda c: (_variant_order(c[0]), -1.0 if c[1] is None else c[1]))
    rows = []
    for variant, alpha in cells:
        mcfg = ModelConfig(
            variant=variant,
            d_acoustic=train_ds.d_acoustic,
            d_linguistic=train_ds.d_linguistic,
            d_attn=d_attn or train_ds.d_acoustic,
            gru_hidden=gru_hidden,
            num_classes=train_ds.num_classes,
            init_seed=init_seed,
        )
        cell_alpha = alpha if alpha is not None else (float(alphas[0]) if len(alphas) else tcfg.alpha)
        cell_cfg = TrainConfig(**{**asdict(tcfg), "alpha": cell_alpha})
        params, _ = train(train_ds, None, mcfg, cell_cfg)
        rows.append(AblationRow(variant, alpha, evaluate(params, test_ds)))
    fingerprint = {
        "data_seed": data_seed,
        "profile": {"d_acoustic": train_ds.d_acoustic, "d_linguistic": train_ds.d_linguistic,
                    "num_classes": train_ds.num_classes, "d_attn": d_attn or train_ds.d_acoustic,
                    "gru_hidden": gru_hidden, "init_seed": init_seed},
        "train_config_digest": config_digest(tcfg),
    }
    return AblationReport(rows, fingerprint)


# --- embedding export ------------------------------------------------------------


def pca_components(x: np.ndarray, n_components: int = 2, iterations: int = 200) -> np.ndarray:
    """Leading principal directions of the rows of ``x`` by power iteration with deflation.

    Each component starts from the unit vector ``ones / sqrt(d)``.  A component
    whose remaining variance is zero comes back as the zero vector.
    Returns an ``n_components x d`` array.
    """
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / max(len(x), 1)
    d = cov.shape[0]
    # deflation leaves round-off of this order behind; treat it as zero variance
    floor = max(1e-12 * float(np.trace(cov)), 1e-300)
    comps = np.zeros((n_components, d))
    for c in range(n_components):
        v = np.full(d, 1.0 / np.sqrt(d))
        for _ in range(iterations):
            w = cov @ v
            norm = np.linalg.norm(w)
            if norm <= floor:
                v = np.zeros(d)
                break
            v = w / norm
        comps[c] = v
        if not v.any():
            continue
        lam = v @ cov @ v
        cov = cov - lam * np.outer(v, v)
    return comps


def export_embeddings(params: ModelParams, ds: Dataset, path) -> None:
    """Tab-separated rows ``id, label, source, pc1, pc2, e_0 .. e_{D-1}``.

    Two rows per utterance: the teacher embedding and the pooled student
    embedding.  The PCA basis is fitted on the union of both sets, so the
    teacher coordinates change from one checkpoint to the next even though
    the teacher embeddings themselves do not.
    """
    if params.config.variant == "baseline2":
        raise UnsupportedVariantError("baseline2 has no student embeddings to export")
    check_compatible(ds, params.config)
    rows = []
    for u in ds:
        student = _forward_cached(u, params, 0.0, need_loss=False)[0].student_pooled
        rows.append((u, "teacher", u.teacher.ravel()))
        rows.append((u, "student", student.ravel()))
    d = params.config.d_linguistic
    emb = np.array([r[2] for r in rows]).reshape(len(rows), d)
    coords = (emb - emb.mean(axis=0, keepdims=True)) @ pca_components(emb).T if rows else emb[:, :2]
    header = "\t".join(["id", "label", "source", "pc1", "pc2"] + [f"e{i}" for i in range(d)])
    lines = [header]
    for (u, source, vec), (p1, p2) in zip(rows, coords):
        vals = [format_float(v) for v in (p1, p2, *vec)]
        lines.append("\t".join([u.id, str(u.label), source, *vals]))
    write_atomic(path, lines)


def read_embeddings(path):
    """Parse an export back into ``(ids, labels, sources, coords, embeddings)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().rstrip("\n").split("\n")[1:]
    ids, labels, sources, data = [], [], [], []
    for line in lines:
        parts = line.split("\t")
        ids.append(parts[0])
        labels.append(int(parts[1]))
        sources.append(parts[2])
        data.append([float(v) for v in parts[3:]])
    arr = np.array(data, dtype=np.float64).reshape(len(lines), -1)
    return ids, labels, sources, arr[:, :2], arr[:, 2:]
