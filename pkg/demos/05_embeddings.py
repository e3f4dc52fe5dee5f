"""Export teacher and student embeddings with a two-component PCA.

Each utterance contributes two rows, its teacher embedding and the mean of
its student frames.  The PCA basis is fitted on both sets together, so the
average teacher-student distance in the plane shrinks as training pulls the
student toward the teacher.  The TSV is ready for any plotting tool.

Usage: python3 demos/05_embeddings.py [output.tsv]
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from aln.dataio import GeneratorConfig, generate
from aln.evaluation import export_embeddings, read_embeddings
from aln.model import ModelConfig, init_model
from aln.training import TrainConfig, train

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "embeddings.tsv"
train_ds, test_ds = generate(GeneratorConfig(seed=42, train_count=400, test_count=100))
mcfg = ModelConfig(variant="aln", d_acoustic=32, d_linguistic=96, d_attn=32, gru_hidden=32, num_classes=8)


def summary(path):
    ids, labels, sources, coords, emb = read_embeddings(path)
    src = np.array(sources)
    teacher, student = emb[src == "teacher"], emb[src == "student"]
    gap = np.linalg.norm(teacher - student, axis=1).mean()
    cos = np.mean([t @ s / (np.linalg.norm(t) * np.linalg.norm(s)) for t, s in zip(teacher, student)])
    spread = coords.var(axis=0)
    return f"mean distance {gap:.3f}, mean cosine {cos:.3f}, PC variances {spread[0]:.3f} / {spread[1]:.3f}"


export_embeddings(init_model(mcfg), test_ds, out)
print("untrained:", summary(out))
params, _ = train(train_ds, None, mcfg, TrainConfig(alpha=0.8, epochs=10))
export_embeddings(params, test_ds, out)
print("trained:  ", summary(out))
print(f"rows written to {out}")
