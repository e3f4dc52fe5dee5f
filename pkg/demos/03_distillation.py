"""Train the full model and watch the student drift toward the teacher.

The transfer layer maps acoustic frames into the teacher's space.  With
alpha = 0.8 most of the objective is the distillation loss, so the mean
student-teacher cosine should climb steadily while the loss falls.

Usage: python3 demos/03_distillation.py [epochs]
"""

import sys

from aln.dataio import GeneratorConfig, generate
from aln.model import ModelConfig
from aln.training import TrainConfig, train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 25
train_ds, test_ds = generate(GeneratorConfig(seed=42))
mcfg = ModelConfig(variant="aln", d_acoustic=32, d_linguistic=96, d_attn=32, gru_hidden=32, num_classes=8)

print(f"{'epoch':>5} {'loss':>8} {'loss_tl':>8} {'intent':>8} {'cosine':>7} {'train':>6} {'test':>6}")


def show(m):
    print(f"{m.epoch:>5} {m.mean_loss_total:>8.4f} {m.mean_loss_tl:>8.4f} {m.mean_loss_intent:>8.4f} "
          f"{m.mean_student_teacher_cosine:>7.3f} {m.train_accuracy:>6.3f} {m.test_accuracy:>6.3f}")


_, hist = train(train_ds, test_ds, mcfg, TrainConfig(alpha=0.8, epochs=epochs), on_epoch=show)
first, last = hist[0], hist[-1]
print(f"\ncosine gain {last.mean_student_teacher_cosine - first.mean_student_teacher_cosine:+.3f}, "
      f"loss_tl ratio {last.mean_loss_tl / first.mean_loss_tl:.3f}")
