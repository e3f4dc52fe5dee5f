"""End-to-end acceptance checks.

Each test records one ``criterion N: PASS|FAIL ...`` line, printed in the
terminal summary, and then asserts.  The slow training runs are shared
between the distillation and ablation criteria.
"""

import time

import numpy as np
import pytest

import oracles
from aln import numerics as nx
from aln.cli import main as cli_main
from aln.dataio import Dataset, GeneratorConfig, Utterance, generate, load_dataset, save_dataset
from aln.gradcheck import gradcheck, tiny_instance
from aln.model import (
    ModelConfig,
    combine_losses,
    cross_attention,
    forward,
    gradients,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from aln.training import TrainConfig, accumulate_batch, train
from conftest import ACCEPTANCE_LINES

VARIANTS = ("baseline2", "aln_linguistic", "aln")


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# --- 1. gradients ------------------------------------------------------------------


def test_gradient_correctness():
    start = time.perf_counter()
    worst, where = 0.0, None
    for variant in VARIANTS:
        for alpha in (0.0, 0.5, 0.8, 1.0):
            params, batch = tiny_instance(variant, seed=0, frames=3)
            report = gradcheck(params, batch, 1e-3, alpha=alpha, eps=1e-4)
            for name, err in report.max_rel_error.items():
                if err >= worst:
                    worst, where = err, (variant, alpha, name)
    elapsed = time.perf_counter() - start
    record(1, worst < 1e-3 and elapsed < 30.0,
           f"max relative error {worst:.2e} at {where}, {elapsed:.1f} s for 12 cells")


# --- 2. attention invariants -------------------------------------------------------


def test_attention_invariants():
    rng = np.random.default_rng(2024)
    worst_sum, bad_len, worst_collapse, n_single = 0.0, 0, 0.0, 0
    passes = 1200
    for i in range(passes):
        d_a, d_l = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        d_attn = int(rng.choice([d_a, int(rng.integers(1, 7))]))
        frames = 1 if i % 5 == 0 else int(rng.integers(2, 16))
        cfg = ModelConfig(variant="aln", d_acoustic=d_a, d_linguistic=d_l, d_attn=d_attn, gru_hidden=2,
                          num_classes=2, init_seed=i)
        p = init_model(cfg)
        for t in p:
            t.value[:] = rng.normal(size=t.shape) * rng.uniform(0.1, 3.0)
        scale = rng.uniform(0.1, 20.0)
        x, s = rng.normal(size=(frames, d_a)) * scale, rng.normal(size=(frames, d_l)) * scale
        fused, w = cross_attention(x, s, p)
        worst_sum = max(worst_sum, float(np.abs(w.sum(axis=1) - 1.0).max()))
        bad_len += fused.shape != (frames, d_attn) or w.shape != (frames, frames)
        if frames == 1:
            n_single += 1
            mapped = s @ p["mapping_w"].value + p["mapping_b"].value
            value = mapped @ p["attn_v_w"].value + p["attn_v_b"].value
            worst_collapse = max(worst_collapse, float(np.abs(fused - value).max() / max(1.0, np.abs(value).max())))
    ok = worst_sum <= 1e-9 and bad_len == 0 and worst_collapse <= 1e-12
    record(2, ok, f"{passes} passes ({n_single} single-frame): max |row sum - 1| {worst_sum:.1e}, "
                  f"length mismatches {bad_len}, single-frame deviation {worst_collapse:.1e}")


# --- 3. loss identity --------------------------------------------------------------


def test_loss_identity():
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(1000):
        tl, intent = rng.exponential(2.0), rng.exponential(2.0)
        alpha = float(rng.choice([0.0, 1.0, rng.uniform()]))
        b = combine_losses(tl, intent, alpha)
        mismatches += b.loss_total != alpha * tl + (1 - alpha) * intent
        mismatches += combine_losses(tl, intent, 0.0).loss_total != intent
        mismatches += combine_losses(tl, intent, 1.0).loss_total != tl
    # the same identity through a full forward pass
    for i in range(60):
        params, batch = tiny_instance(VARIANTS[i % 3], seed=i, n_utts=1)
        alpha = float(rng.uniform())
        _, losses = forward(batch[0], params, alpha)
        mismatches += losses.loss_total != alpha * losses.loss_tl + (1 - alpha) * losses.loss_intent
        mismatches += forward(batch[0], params, 0.0)[1].loss_total != losses.loss_intent
        mismatches += forward(batch[0], params, 1.0)[1].loss_total != losses.loss_tl
    record(3, mismatches == 0, f"1000 random triples and 60 forward passes, {mismatches} mismatches")


# --- 4 and 5. training on the small profile ----------------------------------------


SMALL_MODEL = dict(d_acoustic=32, d_linguistic=96, d_attn=32, gru_hidden=32, num_classes=8, init_seed=0)


@pytest.fixture(scope="module")
def small_runs():
    train_ds, test_ds = generate(GeneratorConfig(seed=42))
    runs = {}
    for variant, alpha in (("aln", 0.8), ("aln_linguistic", 0.8), ("aln_linguistic", 0.5), ("baseline2", 0.8)):
        start = time.perf_counter()
        _, hist = train(train_ds, test_ds, ModelConfig(variant=variant, **SMALL_MODEL),
                        TrainConfig(alpha=alpha, epochs=25, eval_every=25))
        runs[variant, alpha] = (hist, time.perf_counter() - start)
    return runs


@pytest.mark.slow
def test_distillation_convergence(small_runs):
    hist, elapsed = small_runs["aln", 0.8]
    first, last = hist[0], hist[-1]
    gain = last.mean_student_teacher_cosine - first.mean_student_teacher_cosine
    ratio = last.mean_loss_tl / first.mean_loss_tl
    ok = gain >= 0.3 and ratio < 0.25 and elapsed < 300
    record(4, ok, f"cosine {first.mean_student_teacher_cosine:.3f} -> {last.mean_student_teacher_cosine:.3f} "
                  f"(gain {gain:.3f}), loss_tl {first.mean_loss_tl:.3f} -> {last.mean_loss_tl:.3f} "
                  f"(ratio {ratio:.3f}), {elapsed:.0f} s")


@pytest.mark.slow
def test_ablation_ordering(small_runs):
    acc = {key: hist[-1].test_accuracy for key, (hist, _) in small_runs.items()}
    aln, ling8, ling5, base = acc["aln", 0.8], acc["aln_linguistic", 0.8], acc["aln_linguistic", 0.5], acc[
        "baseline2", 0.8]
    ok = aln >= ling8 and aln >= base and ling8 >= ling5
    record(5, ok, f"ALN(0.8) {aln:.4f}, ALN-linguistic(0.8) {ling8:.4f}, ALN-linguistic(0.5) {ling5:.4f}, "
                  f"Baseline-2 {base:.4f}")


# --- 6. determinism ----------------------------------------------------------------


def test_determinism(tmp_path):
    same = []
    for run in ("a", "b"):
        assert cli_main(["gen-data", "--out", str(tmp_path / run), "--seed", "42"]) == 0
    for split in ("train", "test"):
        same.append((tmp_path / "a" / f"{split}.jsonl").read_bytes() == (tmp_path / "b" / f"{split}.jsonl").read_bytes())
    small = ["--classes", "4", "--train-n", "40", "--test-n", "12", "--d-acoustic", "6", "--d-ling", "8"]
    assert cli_main(["gen-data", "--out", str(tmp_path / "d"), *small]) == 0
    for run in ("a", "b"):
        assert cli_main(["train", "--data", str(tmp_path / "d"), "--model-out", str(tmp_path / f"{run}.ckpt"),
                         "--metrics-out", str(tmp_path / f"{run}.jsonl"), "--epochs", "3", "--batch-size", "16",
                         "--gru-hidden", "6"]) == 0
    for ext in ("ckpt", "jsonl"):
        same.append((tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes())
    record(6, all(same), "gen-data train/test, train checkpoint/metrics identical: "
                         + ", ".join(str(s) for s in same))


# --- 7. oracle equivalence ---------------------------------------------------------


def test_oracle_equivalence():
    rng = np.random.default_rng(77)
    attn_err = 0.0
    for i in range(20):
        d_attn = 4 if i % 2 else 3
        p = init_model(ModelConfig(variant="aln", d_acoustic=4, d_linguistic=6, d_attn=d_attn, gru_hidden=5,
                                   num_classes=3, init_seed=i))
        v = {n: t.value for n, t in p.tensors.items()}
        frames = int(rng.integers(1, 6))
        x, s = rng.normal(size=(frames, 4)), rng.normal(size=(frames, 6))
        mapped = oracles.linear_rows(s, v["mapping_w"], v["mapping_b"])
        q_in = oracles.linear_rows(x, v["acoustic_mapping_w"], v["acoustic_mapping_b"]) if d_attn != 4 else x
        want, want_w = oracles.attention(
            oracles.linear_rows(q_in, v["attn_q_w"], v["attn_q_b"]),
            oracles.linear_rows(mapped, v["attn_k_w"], v["attn_k_b"]),
            oracles.linear_rows(mapped, v["attn_v_w"], v["attn_v_b"]),
            d_attn,
        )
        fused, w = cross_attention(x, s, p)
        attn_err = max(attn_err, float(np.abs(fused - want).max()), float(np.abs(w - want_w).max()))

    gru_err = 0.0
    for i in range(20):
        d, h = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        g = {k: rng.normal(size=(d if k[0] == "w" else h if k[0] == "u" else 1, h)) for k in nx.GRU_KEYS}
        seq = rng.normal(size=(int(rng.integers(1, 8)), d))
        h0 = rng.normal(size=(1, h)) if i % 2 else None
        gru_err = max(gru_err, float(np.abs(nx.gru_forward(seq, g, h0) - oracles.gru(seq, g, h0)).max()))

    acc_err = 0.0
    for i, variant in enumerate(VARIANTS * 3):
        params, batch = tiny_instance(variant, seed=i, n_utts=int(rng.integers(1, 6)), frames=int(rng.integers(1, 5)))
        per_utt = [gradients(u, params, 0.8)[2] for u in batch]
        accumulate_batch(params, batch, 0.8)
        for name, t in params.tensors.items():
            want = sum(g[name] for g in per_utt) / len(batch)
            acc_err = max(acc_err, float(np.abs(t.grad - want).max()))

    ok = attn_err <= 1e-10 and gru_err <= 1e-12 and acc_err <= 1e-10
    record(7, ok, f"attention {attn_err:.1e}, GRU {gru_err:.1e}, accumulation {acc_err:.1e}")


# --- 8. format roundtrips ----------------------------------------------------------


def _random_dataset(rng, i):
    k = int(rng.integers(1, 6))
    cfg = GeneratorConfig(
        seed=int(rng.integers(0, 2**31)), num_classes=k, train_count=k + int(rng.integers(0, 8)),
        test_count=k + int(rng.integers(0, 4)), d_acoustic=int(rng.integers(1, 7)), d_linguistic=int(rng.integers(1, 7)),
        min_len=1, max_len=int(rng.integers(1, 6)), teacher_noise=float(rng.uniform(0, 2)),
        acoustic_noise=float(rng.uniform(0, 2)), keyword_prob=float(rng.uniform()),
        centroid_scale=float(rng.uniform(0.01, 100)),
    )
    ds = generate(cfg)[i % 2]
    if i % 5 == 0:
        # awkward magnitudes and signed zeros
        utts = [Utterance(u.id, u.acoustic * 10.0 ** rng.integers(-300, 300), -0.0 * u.teacher, u.label)
                for u in ds.utterances]
        ds = Dataset(ds.d_acoustic, ds.d_linguistic, ds.num_classes, ds.split, utts)
    return ds


def test_format_roundtrips(tmp_path):
    rng = np.random.default_rng(8)
    ds_ok = ck_ok = 0
    n = 60
    for i in range(n):
        ds = _random_dataset(rng, i)
        save_dataset(ds, tmp_path / "a.jsonl")
        save_dataset(load_dataset(tmp_path / "a.jsonl"), tmp_path / "b.jsonl")
        ds_ok += (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

        d_a = int(rng.integers(1, 6))
        cfg = ModelConfig(variant=VARIANTS[i % 3], d_acoustic=d_a, d_linguistic=int(rng.integers(1, 6)),
                          d_attn=int(rng.choice([d_a, int(rng.integers(1, 6))])), gru_hidden=int(rng.integers(1, 6)),
                          num_classes=int(rng.integers(1, 5)), init_seed=i)
        params = init_model(cfg)
        for t in params:
            t.value[:] = rng.normal(size=t.shape) * 10.0 ** rng.integers(-20, 20)
        save_checkpoint(params, tmp_path / "a.ckpt")
        save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "b.ckpt")
        ck_ok += (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    record(8, ds_ok == n and ck_ok == n, f"{ds_ok}/{n} datasets and {ck_ok}/{n} checkpoints byte-identical")
