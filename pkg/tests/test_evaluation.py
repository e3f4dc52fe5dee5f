import json
from dataclasses import replace

import numpy as np
import pytest

from aln.dataio import Dataset, GeneratorConfig, Utterance, generate
from aln.errors import UnsupportedVariantError, ValidationError
from aln.evaluation import (
    AblationReport,
    evaluate,
    export_embeddings,
    pca_components,
    read_embeddings,
    run_ablation,
)
from aln.model import ModelConfig, init_model
from aln.training import TrainConfig, train

GEN = dict(num_classes=3, train_count=24, test_count=9, d_acoustic=4, d_linguistic=6, min_len=2, max_len=4)


@pytest.fixture(scope="module")
def data():
    return generate(GeneratorConfig(seed=21, **GEN))


def cfg(variant, **kw):
    return ModelConfig(variant=variant, d_acoustic=4, d_linguistic=6, d_attn=4, gru_hidden=4, num_classes=3, **kw)


def constant_model(variant, cls):
    """A model whose logits do not depend on the input and favour ``cls``."""
    p = init_model(cfg(variant))
    p["head_w"].value[:] = 0.0
    p["head_b"].value[:] = 0.0
    p["head_b"].value[0, cls] = 1.0
    return p


def test_evaluate_constant_models():
    utts = [Utterance(f"u{i}", np.ones((2, 4)) * i, np.zeros((1, 6)), 2) for i in range(5)]
    ds = Dataset(4, 6, 3, "test", utts)
    assert evaluate(constant_model("aln", 2), ds) == 1.0
    assert evaluate(constant_model("aln", 0), ds) == 0.0


def test_evaluate_label_oracle(data):
    # a model that reads the label from a planted one-hot acoustic feature
    _, test = data
    utts = [Utterance(u.id, np.eye(3, 4)[[u.label]].repeat(2, axis=0), u.teacher, u.label) for u in test]
    ds = Dataset(4, 6, 3, "test", utts)
    p = init_model(cfg("baseline2"))
    for n in p.names():
        p[n].value[:] = 0.0
    p["gru_wh"].value[:3, :3] = 5 * np.eye(3)
    p["gru_bz"].value[:] = 10.0  # update gate open: h follows the candidate
    p["head_w"].value[:3, :3] = np.eye(3)
    assert evaluate(p, ds) == 1.0


def test_evaluate_order_independent(data):
    _, test = data
    p = init_model(cfg("aln", init_seed=3))
    rev = replace(test, utterances=test.utterances[::-1])
    assert evaluate(p, test) == evaluate(p, rev)


def test_evaluate_dimension_mismatch(data):
    _, test = data
    with pytest.raises(ValidationError):
        evaluate(init_model(ModelConfig(variant="aln", d_acoustic=5, d_linguistic=6, d_attn=5, gru_hidden=2,
                                        num_classes=3)), test)


def test_ablation_structure(data):
    train_ds, test_ds = data
    tcfg = TrainConfig(epochs=1, batch_size=8)
    report = run_ablation(train_ds, test_ds, ["aln", "aln-linguistic"], [0.8, 0.5], tcfg, gru_hidden=4)
    assert [(r.variant, r.alpha) for r in report.rows] == [
        ("aln_linguistic", 0.5), ("aln_linguistic", 0.8), ("aln", 0.5), ("aln", 0.8)]
    assert all(0 <= r.test_accuracy <= 1 for r in report.rows)
    assert len(run_ablation(train_ds, test_ds, [], [0.5], tcfg)) == 0
    with_base = run_ablation(train_ds, test_ds, ["baseline2", "aln"], [0.5, 0.8], tcfg, gru_hidden=4)
    assert [(r.variant, r.alpha) for r in with_base.rows][0] == ("baseline2", None)
    assert len(with_base) == 3


def test_ablation_cell_equals_manual_run(data):
    train_ds, test_ds = data
    tcfg = TrainConfig(epochs=2, batch_size=8, alpha=0.3, shuffle_seed=5)
    report = run_ablation(train_ds, test_ds, ["aln"], [0.8], tcfg, gru_hidden=4, init_seed=5)
    params, _ = train(train_ds, None, cfg("aln", init_seed=5), replace(tcfg, alpha=0.8))
    assert report.rows[0].test_accuracy == evaluate(params, test_ds)


def test_ablation_serialisation(tmp_path):
    from aln.evaluation import AblationRow

    report = AblationReport([AblationRow("baseline2", None, 0.5), AblationRow("aln", 0.8, 0.75)], {"data_seed": 1})
    tsv, js = report.save(tmp_path / "abl")
    lines = open(tsv).read().splitlines()
    assert lines == ["variant\talpha\ttest_accuracy", "baseline2\tn/a\t0.5", "aln\t0.8\t0.75"]
    loaded = json.load(open(js))
    assert loaded["rows"][1] == {"variant": "aln", "alpha": 0.8, "test_accuracy": 0.75}
    assert report.accuracy("aln", 0.8) == 0.75 and report.accuracy("baseline2") == 0.5


# --- PCA and export ----------------------------------------------------------------


def test_pca_recovers_dominant_axes():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(400, 3)) * np.array([5.0, 2.0, 0.5])
    comps = pca_components(x)
    assert abs(comps[0, 0]) == pytest.approx(1.0, abs=1e-3)
    assert abs(comps[1, 1]) == pytest.approx(1.0, abs=1e-3)
    var = np.var((x - x.mean(0)) @ comps.T, axis=0)
    assert var[0] >= var[1]


def test_pca_degenerate_sets():
    same = np.tile(np.array([1.0, 2.0, 3.0]), (5, 1))
    np.testing.assert_array_equal(pca_components(same), np.zeros((2, 3)))
    line = np.outer(np.arange(5.0), [1.0, 1.0, 0.0])
    comps = pca_components(line)
    np.testing.assert_array_equal(comps[1], 0.0)


def test_export_rows(tmp_path, data):
    _, test = data
    p = init_model(cfg("aln", init_seed=2))
    export_embeddings(p, test, tmp_path / "e.tsv")
    ids, labels, sources, coords, emb = read_embeddings(tmp_path / "e.tsv")
    assert len(ids) == 2 * len(test)
    assert sources[:2] == ["teacher", "student"]
    np.testing.assert_array_equal(emb[0], test.utterances[0].teacher.ravel())
    assert coords.shape == (2 * len(test), 2)
    assert np.var(coords[:, 0]) >= np.var(coords[:, 1])


def test_export_zero_variance_second_component(tmp_path):
    # every teacher and every student embedding is the same point
    params = init_model(cfg("aln_linguistic"))
    params["transfer_w"].value[:] = 0.0
    params["transfer_b"].value[:] = 0.25
    utts = [Utterance(f"u{i}", np.ones((2, 4)) * i, np.full((1, 6), 0.25), 0) for i in range(3)]
    export_embeddings(params, Dataset(4, 6, 3, "test", utts), tmp_path / "e.tsv")
    _, _, _, coords, _ = read_embeddings(tmp_path / "e.tsv")
    np.testing.assert_array_equal(coords[:, 1], 0.0)


def test_teacher_coordinates_depend_on_checkpoint(tmp_path, data):
    # the basis is fitted jointly on teacher and student rows
    _, test = data
    export_embeddings(init_model(cfg("aln", init_seed=1)), test, tmp_path / "a.tsv")
    export_embeddings(init_model(cfg("aln", init_seed=2)), test, tmp_path / "b.tsv")
    _, _, src, ca, _ = read_embeddings(tmp_path / "a.tsv")
    _, _, _, cb, _ = read_embeddings(tmp_path / "b.tsv")
    teacher = np.array(src) == "teacher"
    assert not np.allclose(ca[teacher], cb[teacher])


def test_export_rejects_baseline(tmp_path, data):
    with pytest.raises(UnsupportedVariantError):
        export_embeddings(init_model(cfg("baseline2")), data[1], tmp_path / "x.tsv")


def test_untrained_model_is_near_chance():
    _, test = generate(GeneratorConfig(seed=42))
    for variant in ("baseline2", "aln_linguistic", "aln"):
        p = init_model(ModelConfig(variant=variant, d_acoustic=32, d_linguistic=96, d_attn=32, gru_hidden=32,
                                   num_classes=8))
        assert 0.02 <= evaluate(p, test) <= 0.35
