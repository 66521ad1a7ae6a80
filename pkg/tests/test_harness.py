"""Harness: synthetic generators, metrics against a confusion-matrix oracle,
training loop behaviour, gradient-check driver, and ablation plumbing."""

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import pointscan.tensor as PT
from pointscan.errors import ConfigError, ContractError, DomainError
from pointscan.harness import (
    AblationPlan,
    SyntheticSpec,
    ablation_base_config,
    apply_level,
    cross_entropy,
    dataset_hash,
    evaluate_metrics,
    generate,
    gradcheck,
    gradcheck_config,
    run_ablation,
    train,
    write_run_manifest,
)
from pointscan.network import (
    NetworkConfig,
    PointNetwork,
    StageConfig,
    count_params_flops,
)

RNG = np.random.default_rng(626)


def tiny_config(task="recognition", num_classes=3, width=8):
    stages = (StageConfig(blocks=1, width=width, n=4, g=2, d=2, k=4),)
    return NetworkConfig(stages=stages, task=task, num_classes=num_classes,
                         h=width)


# ---------------------------------------------------------------------------
# Synthetic generators


def test_sphere_points_stay_within_three_sigma_of_unit_norm():
    spec = SyntheticSpec("sphere", points=256, noise=0.05, samples_per_class=3)
    for cloud in generate(spec):
        dev = np.abs(np.linalg.norm(cloud.coords, axis=1) - 1.0)
        assert dev.max() < 3 * spec.noise


def test_same_seed_gives_bitwise_identical_dataset():
    spec = SyntheticSpec(("sphere", "cube", "plane"), points=64, seed=9)
    a, b = generate(spec), generate(spec)
    assert len(a) == len(b)
    for ca, cb in zip(a, b):
        assert np.array_equal(ca.coords, cb.coords)
        assert np.array_equal(ca.labels, cb.labels)
    assert dataset_hash(a) == dataset_hash(b)
    assert dataset_hash(generate(SyntheticSpec("sphere", seed=1))) != \
        dataset_hash(generate(SyntheticSpec("sphere", seed=2)))


def test_dumbbell_labels_follow_x_rule_exactly():
    for seed in range(3):
        cloud = generate(SyntheticSpec("dumbbell", points=90, seed=seed))[0]
        assert np.array_equal(cloud.labels,
                              (np.abs(cloud.coords[:, 0]) > 0.5).astype(np.int64))
        assert set(np.unique(cloud.labels)) == {0, 1}


def test_two_part_dumbbell_alias_accepted():
    spec = SyntheticSpec("two-part-dumbbell", points=30)
    assert spec.generator == ("dumbbell",)


def test_generators_are_pairwise_distinguishable():
    spec = SyntheticSpec(("sphere", "cube", "plane", "cylinder"), points=200,
                         noise=0.01, samples_per_class=1, seed=3)
    sphere, cube, plane, cyl = generate(spec)
    assert np.abs(np.linalg.norm(sphere.coords, axis=1) - 1.0).max() < 0.05
    assert np.abs(np.abs(cube.coords).max(axis=1) - 0.8).max() < 0.05
    assert np.abs(plane.coords[:, 2]).max() < 0.05
    assert np.abs(np.linalg.norm(cyl.coords[:, :2], axis=1) - 0.5).max() < 0.05


def test_class_labels_follow_generator_order():
    spec = SyntheticSpec(("cube", "sphere"), points=16, samples_per_class=2)
    labels = [int(c.labels) for c in generate(spec)]
    assert labels == [0, 0, 1, 1]


def test_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec("pyramid")
    with pytest.raises(ConfigError):
        SyntheticSpec("sphere", points=0)
    with pytest.raises(ConfigError):
        SyntheticSpec("sphere", noise=-0.1)
    with pytest.raises(ConfigError):
        SyntheticSpec("sphere", samples_per_class=0)


# ---------------------------------------------------------------------------
# Metrics


def test_perfect_predictions_score_one():
    assert evaluate_metrics([0, 1, 2], [0, 1, 2], "recognition") == {"oa": 1.0}
    m = evaluate_metrics([[0, 1, 1]], [[0, 1, 1]], "segmentation")
    assert m["oa"] == 1.0 and m["instance_miou"] == 1.0 and m["mean_iou"] == 1.0


def test_single_class_predictions_on_balanced_set_score_half():
    assert evaluate_metrics([1, 1, 1, 1], [0, 0, 1, 1], "recognition")["oa"] == 0.5


def test_hand_built_iou_example():
    # preds [0,0,1,1] vs labels [0,1,1,1]: IoU0 = 1/2, IoU1 = 2/3
    m = evaluate_metrics([[0, 0, 1, 1]], [[0, 1, 1, 1]], "segmentation")
    assert np.isclose(m["instance_miou"], (1 / 2 + 2 / 3) / 2)
    assert np.isclose(m["instance_miou"], 7 / 12)
    assert np.isclose(m["mean_iou"], 7 / 12)
    assert m["oa"] == 0.75


def test_metric_input_contracts():
    with pytest.raises(ContractError):
        evaluate_metrics([], [], "recognition")
    with pytest.raises(ContractError):
        evaluate_metrics([], [], "segmentation")
    with pytest.raises(ContractError):
        evaluate_metrics([0, 1], [0], "recognition")
    with pytest.raises(ContractError):
        evaluate_metrics([[0, 1]], [[0]], "segmentation")
    with pytest.raises(ConfigError):
        evaluate_metrics([0], [0], "detection")


def _oracle_confusion(preds, labels, c):
    m = np.zeros((c, c), dtype=np.int64)
    for p, t in zip(preds, labels):
        m[int(t), int(p)] += 1
    return m


def _oracle_iou(cm, k):
    inter = cm[k, k]
    union = cm[k, :].sum() + cm[:, k].sum() - inter
    return inter / union


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 100), st.integers(2, 5), st.integers(0, 10_000))
def test_metrics_match_confusion_matrix_oracle(points, classes, seed):
    rng = np.random.default_rng(seed)
    pieces = rng.integers(1, 4)
    preds = [rng.integers(0, classes, size=points) for _ in range(pieces)]
    labels = [rng.integers(0, classes, size=points) for _ in range(pieces)]
    got = evaluate_metrics(preds, labels, "segmentation")

    inst = []
    for p, t in zip(preds, labels):
        cm = _oracle_confusion(p, t, classes)
        present = sorted(set(p) | set(t))
        inst.append(np.mean([_oracle_iou(cm, k) for k in present]))
    flat_p, flat_t = np.concatenate(preds), np.concatenate(labels)
    cm = _oracle_confusion(flat_p, flat_t, classes)
    present = sorted(set(flat_p) | set(flat_t))
    assert np.isclose(got["instance_miou"], np.mean(inst))
    assert np.isclose(got["mean_iou"], np.mean([_oracle_iou(cm, k) for k in present]))
    assert np.isclose(got["oa"], np.trace(cm) / cm.sum())


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 100), st.integers(2, 5), st.integers(0, 10_000))
def test_recognition_oa_matches_oracle(points, classes, seed):
    rng = np.random.default_rng(seed)
    preds = rng.integers(0, classes, size=points)
    labels = rng.integers(0, classes, size=points)
    cm = _oracle_confusion(preds, labels, classes)
    got = evaluate_metrics(preds, labels, "recognition")["oa"]
    assert np.isclose(got, np.trace(cm) / cm.sum())


# ---------------------------------------------------------------------------
# Cross-entropy


def test_cross_entropy_uniform_logits():
    logits = PT.tensor(np.zeros((4, 3)))
    loss = cross_entropy(logits, np.array([0, 1, 2, 0]))
    assert np.isclose(float(loss.data), np.log(3.0))


def test_cross_entropy_label_contracts():
    logits = PT.tensor(np.zeros((2, 3)))
    with pytest.raises(ContractError):
        cross_entropy(logits, np.array([0, 3]))
    with pytest.raises(ContractError):
        cross_entropy(logits, np.array([0]))


# ---------------------------------------------------------------------------
# Training loop


def small_dataset(seed=4):
    return generate(SyntheticSpec(("sphere", "cube", "cylinder"), points=32,
                                  samples_per_class=2, seed=seed))


def test_zero_learning_rate_changes_nothing():
    net = PointNetwork(tiny_config(), seed=1)
    before = {n: p.data.copy() for n, p in net.store.params.items()}
    _, rows = train(net, small_dataset(), epochs=3, lr=0.0, batch_size=8)
    for n, p in net.store.params.items():
        assert np.array_equal(p.data, before[n]), n
    assert len({r["metric"] for r in rows}) == 1
    assert len({round(r["loss"], 12) for r in rows}) == 1


def test_single_sample_memorization():
    # overfit oracle: 200 steps on one cloud drive the loss under 0.01
    data = generate(SyntheticSpec("sphere", points=32, samples_per_class=1,
                                  seed=3))
    data[0].labels = np.int64(1)
    _, rows = train(PointNetwork(tiny_config(), seed=0), data, epochs=200,
                    lr=1e-2, batch_size=1)
    assert rows[-1]["loss"] < 0.01


def test_seeded_run_twice_identical_logs_and_params():
    data = small_dataset()
    net1, rows1 = train(PointNetwork(tiny_config(), seed=5), data, epochs=2,
                        lr=1e-3, seed=11)
    net2, rows2 = train(PointNetwork(tiny_config(), seed=5), data, epochs=2,
                        lr=1e-3, seed=11)
    assert rows1 == rows2
    for n, p in net1.store.params.items():
        assert np.array_equal(p.data, net2.store.params[n].data), n


def test_loss_decreases_over_first_twenty_steps():
    data = generate(SyntheticSpec("cube", points=32, samples_per_class=1,
                                  seed=8))
    data[0].labels = np.int64(0)
    _, rows = train(PointNetwork(tiny_config(), seed=2), data, epochs=20,
                    lr=1e-3, batch_size=1)
    assert rows[-1]["loss"] < rows[0]["loss"]


def test_nan_loss_aborts_with_gradient_diagnostics():
    net = PointNetwork(tiny_config(), seed=0)
    net.store.params["head.1.w"].data[:] = np.nan
    with pytest.raises(DomainError, match="gradient norms"):
        train(net, small_dataset(), epochs=1, lr=1e-3)


def test_metric_log_csv(tmp_path):
    path = tmp_path / "log.csv"
    _, rows = train(PointNetwork(tiny_config(), seed=0), small_dataset(),
                    epochs=2, lr=1e-3, log_path=path)
    with open(path) as f:
        got = list(csv.reader(f))
    assert got[0] == ["epoch", "loss", "metric"]
    assert len(got) == len(rows) + 1
    assert float(got[1][1]) == rows[0]["loss"]


def test_run_manifest(tmp_path):
    data = small_dataset()
    cfg = tiny_config()
    path = tmp_path / "run.json"
    write_run_manifest(path, cfg, 7, data)
    doc = json.loads(path.read_text())
    assert doc["seed"] == 7
    assert doc["dataset_sha1"] == dataset_hash(data)
    assert NetworkConfig.from_dict(doc["config"]).to_dict() == cfg.to_dict()


def test_train_contracts():
    with pytest.raises(ContractError):
        train(tiny_config(), [], epochs=1, lr=1e-3)
    with pytest.raises(ConfigError):
        train(tiny_config(), small_dataset(), epochs=-1, lr=1e-3)


def test_segmentation_training_runs_and_logs_miou():
    data = generate(SyntheticSpec("dumbbell", points=48, samples_per_class=2,
                                  seed=6))
    cfg = tiny_config(task="segmentation", num_classes=2)
    _, rows = train(PointNetwork(cfg, seed=1), data, epochs=2, lr=1e-3)
    assert all(0.0 <= r["metric"] <= 1.0 for r in rows)


# ---------------------------------------------------------------------------
# Gradient-check driver


def test_gradcheck_default_config_passes():
    report = gradcheck(points=10, entries_per_group=3)
    assert report["passed"]
    assert report["params"] < 10_000
    assert all(err < 1e-4 for err in report["groups"].values())


def test_gradcheck_pass_through_near_exact():
    # zeroed scan projections leave an affine graph; central differences
    # agree to FD noise, orders of magnitude under the tolerance
    def passthrough(net):
        for name, p in net.store.params.items():
            if "in_proj" in name or "out_proj" in name:
                p.data[:] = 0.0

    report = gradcheck(points=8, entries_per_group=3, mutate=passthrough)
    assert report["max_err"] < 1e-6


def test_gradcheck_detects_corrupted_gradient(monkeypatch):
    # negative control: a vjp scaled by 1.5 must be reported and fail
    real = PT.silu

    def bad_silu(a):
        out = real(a)
        return PT.from_op(out.data.copy(), (out,), lambda g: (1.5 * g,), "bad")

    monkeypatch.setattr(PT, "silu", bad_silu)
    report = gradcheck(points=8, entries_per_group=3)
    assert not report["passed"]
    assert report["max_err"] > 0.01


def test_gradcheck_segmentation_task():
    report = gradcheck(gradcheck_config("segmentation"), points=10,
                       entries_per_group=2)
    assert report["passed"]


# ---------------------------------------------------------------------------
# Ablations


def test_axes_plan_covers_eight_levels():
    rows = run_ablation(AblationPlan("axes", epochs=0, seed=1))
    assert [r["level"] for r in rows] == \
        ["None", "X", "Y", "Z", "XY", "XZ", "YZ", "XYZ"]
    assert all("params" in r and "metric" in r for r in rows)


def test_grouping_plan_params_strictly_decrease():
    rows = run_ablation(AblationPlan("grouping", epochs=0, seed=1))
    assert [r["level"] for r in rows] == ["1", "2", "3", "6", "9"]
    params = [r["params"] for r in rows]
    assert all(a > b for a, b in zip(params, params[1:]))


def test_grouping_params_match_closed_form_delta():
    base = ablation_base_config()
    c1 = apply_level(base, "grouping", 1)
    c9 = apply_level(base, "grouping", 9)
    from pointscan.ssm import gs6_param_count
    e = 18 * 2
    per = gs6_param_count(e, 4, 1)["total"] - gs6_param_count(e, 4, 9)["total"]
    got = count_params_flops(c1)["params"] - count_params_flops(c9)["params"]
    assert got == 3 * 2 * per  # axes * directions * one block


def test_structure_plan_param_counts_equal():
    rows = run_ablation(AblationPlan("structure", epochs=0, seed=1))
    assert {r["level"] for r in rows} == {"chained", "parallel"}
    assert rows[0]["params"] == rows[1]["params"]


def test_prompt_and_posemb_plans_shrink_params_when_off():
    for factor in ("prompt", "posemb"):
        rows = run_ablation(AblationPlan(factor, epochs=0, seed=1))
        on = next(r for r in rows if r["level"] == "True")
        off = next(r for r in rows if r["level"] == "False")
        assert on["params"] > off["params"], factor


def test_matched_seed_levels_share_bitwise_identical_parameters():
    base = ablation_base_config()
    net_x = PointNetwork(apply_level(base, "axes", "X"), seed=7)
    net_xyz = PointNetwork(apply_level(base, "axes", "XYZ"), seed=7)
    shared = set(net_x.store.params) & set(net_xyz.store.params)
    assert any(".X." in n for n in shared)
    checked = 0
    for n in shared:
        a, b = net_x.store.params[n], net_xyz.store.params[n]
        if a.shape == b.shape:
            assert np.array_equal(a.data, b.data), n
            checked += 1
    assert checked > 10


def test_ablation_csv_written(tmp_path):
    path = tmp_path / "ablate.csv"
    rows = run_ablation(AblationPlan("structure", epochs=0, seed=1),
                        csv_path=path)
    with open(path) as f:
        got = list(csv.DictReader(f))
    assert len(got) == len(rows)
    assert got[0]["factor"] == "structure"
    assert int(got[0]["params"]) == rows[0]["params"]


def test_ablation_repetitions_and_validation():
    rows = run_ablation(AblationPlan("structure", epochs=0, seed=1,
                                     repetitions=2))
    assert len(rows) == 4
    assert [r["rep"] for r in rows] == [0, 1, 0, 1]
    with pytest.raises(ConfigError):
        AblationPlan("widths")
    with pytest.raises(ConfigError):
        AblationPlan("axes", levels=())
    with pytest.raises(ConfigError):  # bad level surfaces when applied
        run_ablation(AblationPlan("axes", levels=("XQ",), epochs=0))


def test_apply_level_changes_only_the_factor():
    base = ablation_base_config()
    varied = apply_level(base, "structure", "parallel")
    a, b = base.to_dict(), varied.to_dict()
    assert b.pop("structure") == "parallel"
    a.pop("structure")
    assert a == b
