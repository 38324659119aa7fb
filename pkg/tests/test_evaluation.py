from dataclasses import asdict

import numpy as np
import pytest

from csi2q.errors import InvalidInputError
from csi2q.evaluation import (LADDER, ExperimentPlan, build_features, compute_metrics, ladder_svg, mean_report,
                              prepare_data, report_json, run_ablation, run_closed_world, run_open_world,
                              run_open_world_seed, write_ablation_report)
from csi2q.simulate import ImpairmentRanges

TINY_TRAIN = {"lr_source": 1e-3, "lr_target": 1e-3, "lr_aux": 1e-3, "epochs_source": 2, "epochs_target": 2,
              "batch_size": 16, "extractor": {"widths": [4, 4, 8, 8]}, "hidden": 16}


def test_metrics_examples():
    r = compute_metrics([0, 1, 1, 1], [0, 0, 1, 1], 2)
    assert r.accuracy == 0.75
    assert r.per_class_f1 == pytest.approx([2 / 3, 0.8])
    assert r.macro_f1 == pytest.approx(11 / 15)
    np.testing.assert_array_equal(r.confusion, [[1, 1], [0, 2]])
    r = compute_metrics([2, 0, 1], [2, 0, 1], 3)
    assert r.accuracy == 1.0 and r.macro_f1 == 1.0


def test_metrics_unsupported_class_excluded():
    r = compute_metrics([0, 1, 2], [0, 1, 1], 3)
    assert r.per_class_f1[2] == 0.0 or r.per_class_f1[2] is None
    r = compute_metrics([0, 1, 1], [0, 1, 1], 3)
    assert r.per_class_f1[2] is None and r.macro_f1 == 1.0


def test_metrics_errors():
    with pytest.raises(InvalidInputError):
        compute_metrics([0, 1], [0], 2)
    with pytest.raises(InvalidInputError):
        compute_metrics([], [], 2)
    with pytest.raises(InvalidInputError):
        compute_metrics([0, 2], [0, 1], 2)


def test_uniform_random_accuracy(rng):
    I, n = 7, 20000
    r = compute_metrics(rng.integers(I, size=n), rng.integers(I, size=n), I)
    assert abs(r.accuracy - 1 / I) <= 3 / np.sqrt(n)


def test_confusion_conservation(rng):
    t = rng.integers(5, size=1000)
    p = rng.integers(5, size=1000)
    r = compute_metrics(p, t, 5)
    assert r.confusion.sum() == 1000
    np.testing.assert_array_equal(r.confusion.sum(1), np.bincount(t, minlength=5))
    assert r.accuracy == np.trace(r.confusion) / 1000
    assert 0 <= r.macro_f1 <= 1


def test_mean_report():
    a = compute_metrics([0, 1], [0, 1], 2)
    b = compute_metrics([0, 0], [0, 1], 2)
    m = mean_report([a, b])
    assert m.accuracy == 0.75 and m.confusion.sum() == 4 and len(m.per_seed) == 2


def test_plan_validation():
    with pytest.raises(InvalidInputError):
        ExperimentPlan(mode="open")
    with pytest.raises(InvalidInputError):
        ExperimentPlan(mode="closed", unknown_devices=[1])
    with pytest.raises(InvalidInputError):
        ExperimentPlan(mode="open", unknown_devices=[12])
    with pytest.raises(InvalidInputError):
        ExperimentPlan(mode="sideways")
    plan = ExperimentPlan(mode="open", unknown_devices=[8, 9])
    assert plan.registered_devices == list(range(8))
    assert not set(plan.registered_devices) & set(plan.unknown_devices)
    assert ExperimentPlan.from_dict(plan.to_dict()) == plan


def test_build_features_modes():
    plan = ExperimentPlan(num_devices=3, frames_per_device=10, seeds=[0], source_devices=0)
    data = prepare_data(plan, 0)
    raw = build_features(data, LADDER[0][1])
    cim = build_features(data, LADDER[1][1])
    tdsg = build_features(data, LADDER[2][1])
    assert raw.mode == "raw" and raw.frames.shape == (30, 52)
    assert cim.mode == "csi" and cim.frames.shape[1] == 52 and len(cim.labels) == data.csi_kept.sum()
    assert tdsg.mode == "tdsg" and tdsg.frames.shape[1] == 320
    with pytest.raises(InvalidInputError):
        run_closed_world(plan, data, LADDER[3][1], {})


@pytest.fixture(scope="module")
def small_plan():
    return ExperimentPlan(num_devices=3, frames_per_device=20, seeds=[0, 1], source_devices=3, source_frames=10,
                          train=TINY_TRAIN)


def test_ablation_reproducible(tmp_path, small_plan):
    a = run_ablation(small_plan)
    b = run_ablation(small_plan)
    assert list(a) == [name for name, _ in LADDER]
    assert report_json(a) == report_json(b)
    for rep in a.values():
        assert rep.confusion.sum() == 2 * 3 * 6
    out = write_ablation_report(tmp_path, a, small_plan)
    assert out.exists() and (tmp_path / "ablation.svg").read_text().startswith("<svg")
    assert (tmp_path / "confusion_CIM_TDSG_ALIQ.csv").exists()
    assert ladder_svg({"x": 0.5}).count("<rect") == 1


@pytest.mark.slow
def test_identical_devices_ablation_near_chance():
    plan = ExperimentPlan(num_devices=4, frames_per_device=60, seeds=[0], source_devices=4, source_frames=20,
                          train={**TINY_TRAIN, "epochs_source": 10, "epochs_target": 10},
                          impairments=asdict(ImpairmentRanges.identical()))
    table = run_ablation(plan, ladder=(LADDER[0], LADDER[3]))
    for rep in table.values():
        assert abs(rep.accuracy - 0.25) <= 0.15


@pytest.fixture(scope="module")
def open_setup():
    plan = ExperimentPlan(mode="open", num_devices=4, unknown_devices=[3], frames_per_device=40, seeds=[1],
                          source_devices=0, tail_size=5,
                          pipeline={"CIM": True, "TDSG": False, "ALIQ": False, "OpenMax": True},
                          train={**TINY_TRAIN, "epochs_target": 30, "batch_size": 8,
                                 "extractor": {"widths": [32, 32, 64, 64]}})
    return plan, prepare_data(plan, 1)


def test_open_world_delta_one(open_setup):
    plan, data = open_setup
    res, _, _ = run_open_world_seed(plan, data, delta=1.0)
    assert res.unknown_recall == 0.0
    assert res.openmax.confusion[:, 3].sum() == 0


def test_open_world_delta_zero(open_setup):
    plan, data = open_setup
    res, _, calib = run_open_world_seed(plan, data, delta=0.0)
    assert res.openmax.confusion.shape == (4, 4)
    # every test frame has some calibration uncertainty here, so everything goes to the unknown column
    assert res.openmax.confusion[:, :3].sum() == 0
    assert res.unknown_recall == 1.0


def test_open_world_requires_open_plan():
    with pytest.raises(InvalidInputError):
        run_open_world(ExperimentPlan(seeds=[0]))
