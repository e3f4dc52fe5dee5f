"""Compare the acoustic-only baseline, the linguistic branch alone, and the full model.

On the default small profile the task is easy: every variant reaches
perfect test accuracy within a few epochs, so the comparison only shows
ties.  A harder profile (noisier frames, rarer keyword frames, tighter
class centroids) separates the variants.  The numbers printed are
whatever the runs produce; nothing is tuned toward a particular order.

Usage: python3 demos/04_ablation.py [epochs]
"""

import sys

from aln.dataio import GeneratorConfig, generate
from aln.evaluation import run_ablation
from aln.training import TrainConfig

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 12
variants = ["baseline2", "aln_linguistic", "aln"]
profiles = {
    "small profile": GeneratorConfig(seed=42, train_count=400, test_count=200),
    "harder profile": GeneratorConfig(seed=42, train_count=400, test_count=200, acoustic_noise=2.0,
                                      keyword_prob=0.2, centroid_scale=0.5),
}
for title, cfg in profiles.items():
    train_ds, test_ds = generate(cfg)
    report = run_ablation(train_ds, test_ds, variants, [0.5, 0.8], TrainConfig(epochs=epochs), gru_hidden=32)
    print(f"== {title} ({epochs} epochs)")
    print(report.to_table())
