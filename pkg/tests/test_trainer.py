import math

import numpy as np
import pytest
import torch

import pulsebench.trainer as trainer_mod
from pulsebench.errors import EmptyDataset, NonfiniteLoss, ShapeMismatch
from pulsebench.ingest import DatasetIndex
from pulsebench.model import Checkpoint, ModelConfig
from pulsebench.trainer import (GroundTruthPredictor, TrainConfig, TrainHistory, evaluate, evaluate_records,
                                load_records, split_records, train)

SMALL = dict(input_shape=(32, 3, 16, 16), stage_widths=(4, 4, 4), identity_widths=(4, 4, 4, 4))


def mc(**kw):
    return ModelConfig(**{**SMALL, "num_identities": 3, **kw})


def tc(**kw):
    return TrainConfig(**{"batch_size": 4, "lr": 1e-3, "epochs": 1, "val_every": 1, **kw})


@pytest.fixture(scope="module")
def records(tiny_dataset):
    return load_records(tiny_dataset)


def test_step_count(tiny_dataset, records, monkeypatch):
    steps = []
    orig = torch.optim.AdamW.step

    def counting(self, *a, **k):
        steps.append(1)
        return orig(self, *a, **k)

    monkeypatch.setattr(torch.optim.AdamW, "step", counting)
    four = tiny_dataset.subset(tiny_dataset.records[:2] + tiny_dataset.records[4:6])
    recs = records[:2] + records[4:6]
    _, hist = train(mc(num_identities=2), tc(batch_size=2, val_fraction=0.0), four, records=recs)
    assert len(steps) == 2
    assert len(hist) == 1


def test_zero_lr_leaves_params_unchanged(tiny_dataset, records):
    torch.manual_seed(0)
    ck, _ = train(mc(), tc(lr=0.0, epochs=2), tiny_dataset, records=records)
    torch.manual_seed(0)
    from pulsebench.model import RFaceNet

    fresh = RFaceNet(ck.config).state_dict()
    for name, p in fresh.items():
        if "running" in name or "num_batches" in name:
            continue  # batch-norm statistics are buffers, not optimized parameters
        assert torch.equal(p, ck.state_dict[name]), name


def test_training_is_bitwise_deterministic(tiny_dataset, records):
    a, ha = train(mc(), tc(epochs=2), tiny_dataset, records=records)
    b, hb = train(mc(), tc(epochs=2), tiny_dataset, records=records)
    assert a.state_dict.keys() == b.state_dict.keys()
    assert all(torch.equal(a.state_dict[k], b.state_dict[k]) for k in a.state_dict)
    strip = lambda h: [{k: v for k, v in r.items() if k != "seconds"} for r in h.rows]  # noqa: E731
    assert strip(ha) == strip(hb)


def test_history_and_checkpoint_files(tiny_dataset, records, tmp_path):
    ck, hist = train(mc(), tc(epochs=2), tiny_dataset, out_dir=tmp_path, records=records)
    assert (tmp_path / "checkpoint.pt").is_file()
    back = TrainHistory.from_csv(tmp_path / "history.csv")
    assert len(back) == 2
    np.testing.assert_allclose(back.column("loss"), hist.column("loss"))
    assert ck.info["epoch"] in (1, 2)
    assert len(ck.info["val_records"]) == 3


def test_checkpoint_roundtrip_gives_identical_report(tiny_dataset, records, tmp_path):
    ck, _ = train(mc(), tc(), tiny_dataset, records=records)
    path = ck.save(tmp_path / "ck.pt")
    assert evaluate(ck, tiny_dataset) == evaluate(Checkpoint.load(path), tiny_dataset)


def test_ground_truth_oracle_scores_zero(tiny_dataset, records):
    res = evaluate_records(GroundTruthPredictor(), records)
    assert res.report.mae == 0.0 and res.report.n == len(records)
    assert res.bland_altman.half_width == 0.0


def test_single_record_has_undefined_rho(records):
    res = evaluate_records(GroundTruthPredictor(), records[:1])
    assert res.report.mae == 0 and res.report.n == 1
    assert math.isnan(res.report.rho) and res.bland_altman is None


def test_resolution_mismatch(tiny_dataset, records):
    ck, _ = train(mc(), tc(epochs=0), tiny_dataset, records=records)
    ck.config.input_shape = (32, 3, 32, 32)
    with pytest.raises(ShapeMismatch):
        evaluate(ck, tiny_dataset)


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        train(mc(), tc(), DatasetIndex([], 0))


def test_nonfinite_loss_writes_snapshot(tiny_dataset, records, tmp_path, monkeypatch):
    real = trainer_mod.multitask_terms

    def broken(*a, **k):
        t = real(*a, **k)
        return t._replace(total=t.total * float("nan"))

    monkeypatch.setattr(trainer_mod, "multitask_terms", broken)
    with pytest.raises(NonfiniteLoss):
        train(mc(), tc(), tiny_dataset, out_dir=tmp_path, records=records)
    snap = torch.load(tmp_path / "nonfinite_snapshot.pt", weights_only=True)
    assert snap["epoch"] == 1 and snap["batch"]


def test_split_is_stratified(tiny_dataset):
    tr, va = split_records(tiny_dataset, 0.2, seed=0)
    assert len(tr) + len(va) == len(tiny_dataset)
    assert {d.identity for d in tr.records} == {0, 1, 2}
    assert {d.identity for d in va.records} == {0, 1, 2}
    assert not {d.path for d in tr.records} & {d.path for d in va.records}
    assert split_records(tiny_dataset, 0.2, seed=0) == (tr, va)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1)


def test_num_identities_follows_dataset(tiny_dataset, records):
    ck, _ = train(mc(num_identities=7), tc(epochs=0), tiny_dataset, records=records)
    assert ck.config.num_identities == 3
