import csv
import importlib
import json

import numpy as np
import pytest

from vimunet.cli import main
from vimunet.harness import (
    Adam,
    NumericError,
    ReduceLROnPlateau,
    SyntheticDatasetSpec,
    Thresholds,
    TrainConfig,
    bench,
    evaluate,
    generate_dataset,
    load_checkpoint,
    load_dataset,
    predict,
    save_checkpoint,
    select_thresholds,
    train,
)
from vimunet.harness.losses import bce_with_logits, dice_loss, segmentation_loss
from vimunet.harness.train import make_targets
from vimunet.instseg import connected_components, read_pgm
from vimunet.metrics import dataset_msa
from vimunet.models import ModelConfig
from vimunet.numerics import ConfigError, ShapeError, Tensor
from vimunet.numerics.gradcheck import check_gradients

# the package re-exports ``train`` the function, which shadows the submodule name
train_mod = importlib.import_module("vimunet.harness.train")
harness_pkg = importlib.import_module("vimunet.harness")

SMALL = SyntheticDatasetSpec(kind="blobs-small", image_size=32, n_images=20, seed=5,
                             instance_count=(2, 4))


def _cfg(**kw):
    base = dict(model=ModelConfig("unet", "desk", image_size=32), dataset=SMALL,
                iterations=6, batch_size=2, val_every=3, seed=9)
    base.update(kw)
    return TrainConfig(**base)


# -- data ------------------------------------------------------------------------------


def test_generation_is_deterministic_and_split():
    a, b = generate_dataset(SMALL), generate_dataset(SMALL)
    assert (len(a.train), len(a.val), len(a.test)) == (14, 3, 3)
    for s, t in zip(a.train + a.test, b.train + b.test):
        assert np.array_equal(s.image, t.image) and np.array_equal(s.labels, t.labels)
        assert s.image.shape == (1, 32, 32) and s.image.dtype == np.float32
    other = generate_dataset(SyntheticDatasetSpec(**{**SMALL.to_dict(), "seed": 6,
                                                     "instance_count": (2, 4)}))
    assert not np.array_equal(other.train[0].image, a.train[0].image)


@pytest.mark.parametrize("kind", ["blobs-small", "regions-large"])
def test_exact_instance_count_and_connectivity(kind):
    ds = generate_dataset(SyntheticDatasetSpec(kind=kind, n_images=5, instance_count=(5, 5)))
    for s in ds.train + ds.val + ds.test:
        ids = [i for i in np.unique(s.labels) if i]
        assert ids == [1, 2, 3, 4, 5]
        for i in ids:
            assert connected_components(s.labels == i).max() == 1


def test_blobs_default_count_ten():
    ds = generate_dataset(SyntheticDatasetSpec(n_images=3, instance_count=(10, 10)))
    assert all(s.labels.max() == 10 for s in ds.train)


def test_noiseless_image_is_piecewise_constant():
    for kind in ("blobs-small", "regions-large"):
        ds = generate_dataset(SyntheticDatasetSpec(kind=kind, n_images=2, noise=0.0))
        s = ds.train[0]
        for i in np.unique(s.labels):
            vals = np.unique(s.image[0][s.labels == i])
            # regions carry a darker membrane on their boundary pixels
            assert len(vals) <= (1 if kind == "blobs-small" or i == 0 else 2)


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticDatasetSpec(kind="stars")
    with pytest.raises(ValueError):
        SyntheticDatasetSpec(instance_count=(5, 2))
    with pytest.raises(ValueError):
        SyntheticDatasetSpec(noise=-1)


def test_dataset_save_load(tmp_path):
    ds = generate_dataset(SMALL)
    ds.save(tmp_path)
    back = load_dataset(tmp_path)
    assert back.spec == ds.spec
    for s, t in zip(ds.test, back.test):
        assert np.array_equal(s.image, t.image) and np.array_equal(s.labels, t.labels)
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nowhere")


# -- losses ----------------------------------------------------------------------------------


@pytest.mark.parametrize("pipeline", ["boundary", "distance"])
def test_loss_floor_and_non_negative(pipeline, rng):
    labels = generate_dataset(SMALL).train[0].labels
    t = make_targets(labels, pipeline)
    perfect = t.astype(np.float64).copy()
    for c in ((0, 1) if pipeline == "boundary" else (0,)):
        perfect[c] = np.where(t[c] > 0.5, 30.0, -30.0)
    assert float(segmentation_loss(Tensor(perfect), t, pipeline).data) < 1e-6
    for _ in range(10):
        out = Tensor(rng.normal(0, 3, size=t.shape))
        assert float(segmentation_loss(out, t, pipeline).data) >= 0


def test_bce_matches_log_form(rng):
    x = rng.normal(size=50)
    t = rng.integers(0, 2, size=50).astype(float)
    p = 1 / (1 + np.exp(-x))
    ref = -np.mean(t * np.log(p) + (1 - t) * np.log(1 - p))
    assert abs(float(bce_with_logits(Tensor(x), t).data) - ref) < 1e-12
    big = Tensor(np.array([800.0, -800.0]))
    assert np.isfinite(float(bce_with_logits(big, np.array([0.0, 1.0])).data))


def test_dice_bounds(rng):
    t = (rng.random(40) > 0.5).astype(float)
    d = float(dice_loss(Tensor(rng.normal(size=40)), t).data)
    assert 0 <= d <= 1
    assert float(dice_loss(Tensor(np.full(4, -50.0)), np.zeros(4)).data) < 1e-6


@pytest.mark.parametrize("pipeline", ["boundary", "distance"])
def test_loss_gradients(pipeline, rng):
    n_ch = 2 if pipeline == "boundary" else 3
    out = Tensor(rng.normal(size=(2, n_ch, 5, 5)), dtype=np.float64, requires_grad=True)
    target = rng.random((2, n_ch, 5, 5))
    target[:, 0] = target[:, 0] > 0.5
    errs = check_gradients(lambda: segmentation_loss(out, target, pipeline), [out])
    assert max(errs.values()) < 1e-5


def test_loss_shape_errors(rng):
    with pytest.raises(ShapeError):
        segmentation_loss(Tensor(rng.normal(size=(2, 4, 4))), np.zeros((3, 4, 4)), "boundary")
    with pytest.raises(ShapeError):
        segmentation_loss(Tensor(rng.normal(size=(3, 4, 4))), np.zeros((3, 4, 4)), "boundary")


# -- optimiser and schedule ----------------------------------------------------------------------


def test_adam_first_step_is_lr_sized():
    p = Tensor(np.array([1.0, -2.0]), dtype=np.float64, requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([3.0, -0.5])
    opt.step()
    # with bias correction the first update is lr * sign(g), up to eps
    assert np.allclose(p.data, [0.9, -1.9], atol=1e-7)
    assert opt.state_bytes() == 2 * 2 * 8


def test_plateau_halves_once_per_trigger():
    p = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam([p], lr=1.0)
    sched = ReduceLROnPlateau(opt, factor=0.5, patience=3)
    lrs, reduced = [], []
    for metric in [1.0] + [1.0] * 9:
        reduced.append(sched.step(metric))
        lrs.append(opt.lr)
    assert reduced == [False, False, False, True, False, False, True, False, False, True]
    assert lrs[-1] == 0.125 and all(a >= b for a, b in zip(lrs, lrs[1:]))
    sched.step(0.5)  # a clear improvement resets the wait
    assert opt.lr == 0.125 and sched.wait == 0
    for _ in range(2):
        sched.step(0.49999)  # within the relative threshold: not an improvement
    assert sched.wait == 2


# -- training ------------------------------------------------------------------------------------


def test_train_config_validation():
    with pytest.raises(ConfigError):
        _cfg(pipeline="distance")  # model has 2 output channels
    with pytest.raises(ConfigError):
        _cfg(model=ModelConfig("vimunet", "desk", image_size=64))
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"model": {"arch": "unet"}, "epochs": 3})
    cfg = _cfg()
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def test_train_is_deterministic_and_restores_best(tmp_path):
    ds = generate_dataset(SMALL)
    a, b = train(_cfg(), ds), train(_cfg(), ds)
    assert [e["loss"] for e in a.log] == [e["loss"] for e in b.log]
    assert len(a.log) == 6 and [v["iteration"] for v in a.val_log] == [3, 6]
    best = min(a.val_log, key=lambda v: v["val_loss"])
    assert a.best_iteration == best["iteration"] and a.best_val_loss == best["val_loss"]
    assert a.peak_tape_bytes > 0 and a.optimizer_state_bytes == 2 * 4 * a.model.num_parameters()
    save_checkpoint(tmp_path / "c.bin", a.model, a.config)
    model, config, _ = load_checkpoint(tmp_path / "c.bin")
    assert config == a.config
    for k, v in a.model.state_dict().items():
        assert np.array_equal(model.state_dict()[k], v)


def test_train_aborts_on_nan(monkeypatch):
    real = train_mod.segmentation_loss
    calls = {"n": 0}

    def poisoned(*args, **kw):
        calls["n"] += 1
        loss = real(*args, **kw)
        return loss * np.nan if calls["n"] == 4 else loss

    monkeypatch.setattr(train_mod, "segmentation_loss", poisoned)
    with pytest.raises(NumericError, match="iteration 4"):
        train(_cfg(val_every=10), generate_dataset(SMALL))


def test_predict_shapes_and_determinism():
    ds = generate_dataset(SMALL)
    result = train(_cfg(iterations=2), ds)
    images = np.stack([s.image for s in ds.test])
    a = predict(result.model, images, "boundary")
    b = predict(result.model, images, "boundary", Thresholds())
    assert len(a) == 3 and all(x.shape == (32, 32) for x in a)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    with pytest.raises(ShapeError):
        predict(result.model, images, "distance")


def test_select_thresholds_picks_best_seed():
    ds = generate_dataset(SMALL)
    result = train(_cfg(iterations=2), ds)
    images, labels = np.stack([s.image for s in ds.val]), [s.labels for s in ds.val]
    th, score = select_thresholds(result.model, images, labels, "boundary", seed_grid=(0.3, 0.6))
    assert th.seed in (0.3, 0.6) and 0 <= score <= 1
    for seed in (0.3, 0.6):  # the returned score is the best of the grid
        preds = predict(result.model, images, "boundary", Thresholds(seed=seed))
        assert dataset_msa(preds, labels) <= score
    with pytest.raises(ValueError):
        select_thresholds(result.model, images[:0], [], "boundary")


def test_evaluate_report(tmp_path):
    gt = np.zeros((8, 8), int)
    gt[1:4, 1:4] = 1
    report = evaluate([gt, np.zeros_like(gt)], [gt, gt], {"note": "x"})
    assert report.per_image_msa == [1.0, 0.0] and report.msa == 0.5
    report.write(tmp_path)
    assert json.loads((tmp_path / "eval.json").read_text())["msa"] == 0.5
    assert (tmp_path / "eval.csv").exists()


def test_bench_with_no_configs(tmp_path):
    report = bench([], image_size=64, runs=1, warmup=0)
    assert report.rows == []
    report.write(tmp_path)
    assert json.loads((tmp_path / "bench.json").read_text())["rows"] == []


def test_bench_small_rows():
    cfgs = [ModelConfig("unet", "desk", image_size=32), ModelConfig("vimunet", "desk", image_size=32)]
    report = bench(cfgs, image_size=32, runs=2, warmup=0)
    for row in report.rows:
        assert row.params > 0 and row.memory_estimate_bytes > 4 * row.params
        assert row.time_mean_s > 0 and row.timing


# -- CLI -------------------------------------------------------------------------------------------


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_cli_end_to_end(tmp_path):
    data_cfg = _write(tmp_path / "data.json", SMALL.to_dict())
    train_cfg = _write(tmp_path / "train.json", _cfg(iterations=3).to_dict())
    assert main(["generate", "--config", data_cfg, "--out", str(tmp_path / "data")]) == 0
    args = ["train", "--config", train_cfg, "--data", str(tmp_path / "data"),
            "--threads", "1", "--out"]
    assert main(args + [str(tmp_path / "run")]) == 0
    assert main(args + [str(tmp_path / "run2")]) == 0
    read = lambda d: (tmp_path / d / "checkpoint.bin").read_bytes()  # noqa: E731
    assert read("run") == read("run2")
    with open(tmp_path / "run" / "train_log.csv") as fh:
        assert len(list(csv.reader(fh))) == 4
    ckpt = str(tmp_path / "run" / "checkpoint.bin")
    report = json.loads((tmp_path / "run" / "train_report.json").read_text())
    assert load_checkpoint(ckpt)[2]["thresholds"] == json.dumps(report["thresholds"], sort_keys=True)
    for _ in range(2):  # idempotent re-run over existing output
        assert main(["predict", "--checkpoint", ckpt, "--data", str(tmp_path / "data"),
                     "--out", str(tmp_path / "pred")]) == 0
    preds = sorted((tmp_path / "pred").glob("*.pgm"))
    assert len(preds) == 3 and read_pgm(preds[0]).shape == (32, 32)
    assert main(["eval", "--pred", str(tmp_path / "pred"), "--checkpoint", ckpt,
                 "--data", str(tmp_path / "data"), "--out", str(tmp_path / "eval")]) == 0
    report = json.loads((tmp_path / "eval" / "eval.json").read_text())
    assert 0 <= report["msa"] <= 1 and len(report["per_image_msa"]) == 3


def test_cli_invalid_input_exit_codes(tmp_path, capsys):
    assert main([]) == 2
    assert main(["train", "--out", str(tmp_path)]) == 2  # missing --config
    bad = _write(tmp_path / "bad.json", {"model": {"arch": "resnet"}})
    assert main(["train", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["generate", "--config", str(tmp_path / "broken.json"), "--out", str(tmp_path)]) == 2
    assert main(["generate", "--seed", "-1", "--out", str(tmp_path / "g")]) == 2
    assert main(["predict", "--checkpoint", str(tmp_path / "none.bin"), "--out", str(tmp_path)]) == 2
    assert main(["eval", "--pred", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2
    assert main(["--help"]) == 0
    assert "error" in capsys.readouterr().err


def test_cli_numeric_failure_exit_code(tmp_path, monkeypatch):
    def boom(*args, **kw):
        raise NumericError("non-finite training loss nan at iteration 1")

    monkeypatch.setattr(harness_pkg, "train", boom)
    cfg = _write(tmp_path / "train.json", _cfg().to_dict())
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 3


def test_cli_bench(tmp_path):
    cfg = _write(tmp_path / "bench.json", {
        "image_size": 32, "runs": 2, "warmup": 0,
        "models": [ModelConfig("unet", "desk", image_size=32).to_dict()]})
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "b" / "bench.json").read_text())["rows"][0]["params"] > 0
    with open(tmp_path / "b" / "bench.csv") as fh:
        assert len(list(csv.reader(fh))) == 2
