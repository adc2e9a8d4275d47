import csv

import numpy as np
import pytest
from toys import ConstantGenerator, CopyGenerator, ZEchoGenerator

from pixgan import experiment, trainer
from pixgan.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, run
from pixgan.config import ExperimentConfig
from pixgan.constraints import ConstraintMap
from pixgan.data import write_constraint_file

TINY = ["--set", "dataset_size=80", "--set", "validation_size=10", "--set", "test_size=10",
        "--set", "batch_size=8", "--set", "epochs=2", "--set", "constraint_density=0.05",
        "--set", "diversity_pairs=2"]


def tiny_cfg(**kw):
    base = dict(dataset_size=80, validation_size=10, test_size=10, batch_size=8, epochs=2,
                constraint_density=0.05, diversity_pairs=2)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "run"
    assert run(["train", "--out", str(out), *TINY]) == EXIT_OK
    return out


def test_smoke_train_writes_two_records(trained):
    lines = (trained / "history.txt").read_text().splitlines()
    assert sorted({int(line.split()[0]) for line in lines}) == [1, 2]
    assert (trained / "ckpt" / "epoch_2" / "meta.json").is_file()
    assert (trained / "ckpt" / "latest").read_text().strip() == "epoch_2"
    assert "epoch " in (trained / "best_epoch.txt").read_text()


def test_rerun_reproduces_history(trained, tmp_path):
    assert run(["train", "--out", str(tmp_path / "again"), *TINY]) == EXIT_OK
    assert (tmp_path / "again" / "history.txt").read_bytes() == \
        (trained / "history.txt").read_bytes()


def test_resolved_config_reproduces_run(trained, tmp_path):
    out = tmp_path / "from_cfg"
    args = ["train", "--config", str(trained / "config.txt"), "--out", str(out)]
    assert run(args) == EXIT_OK
    assert (out / "history.txt").read_bytes() == (trained / "history.txt").read_bytes()
    assert (out / "config.txt").read_text().replace(str(out), "X") == \
        (trained / "config.txt").read_text().replace(str(trained), "X")


def test_lambda_zero_is_labelled_baseline(tmp_path):
    assert run(["train", "--out", str(tmp_path), "--lambda", "0", *TINY]) == EXIT_OK
    header = (tmp_path / "best_epoch.txt").read_text().splitlines()[0]
    assert "baseline" in header and "unregularized conditional generator" in header


def test_unknown_key_exits_with_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.txt"
    cfg.write_text("epochz = 3\n")
    assert run(["train", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "epochz" in capsys.readouterr().err


def test_numerical_abort_exit_code_and_resume(tmp_path, monkeypatch):
    out = tmp_path / "run"
    real = experiment.run_epoch

    def flaky(state, images, constraints):
        if state.epoch == 1:
            raise trainer.NumericalAbort("boom", {"epoch": 1, "iteration": 0})
        return real(state, images, constraints)

    monkeypatch.setattr(experiment, "run_epoch", flaky)
    assert run(["train", "--out", str(out), *TINY]) == EXIT_NUMERICAL
    assert (out / "abort.json").is_file()
    assert (out / "ckpt" / "latest").read_text().strip() == "epoch_1"

    monkeypatch.setattr(experiment, "run_epoch", real)
    assert run(["train", "--out", str(out), *TINY]) == EXIT_OK
    ref = tmp_path / "ref"
    assert run(["train", "--out", str(ref), *TINY]) == EXIT_OK
    assert (out / "history.txt").read_bytes() == (ref / "history.txt").read_bytes()


def test_nan_loss_maps_to_exit_three(tmp_path, monkeypatch):
    monkeypatch.setattr(trainer, "reconstruction_loss",
                        lambda values, mask, generated: generated.sum() * float("nan"))
    assert run(["train", "--out", str(tmp_path), *TINY]) == EXIT_NUMERICAL


# -- evaluate -------------------------------------------------------------------------

def test_copy_generator_scores_zero_mse(tmp_path):
    cfg = tiny_cfg()
    data = experiment.prepare_data(cfg)
    ext = experiment.make_extractor(cfg, data)
    scores = experiment.evaluate_generator(CopyGenerator((16, 16, 1)), None, cfg, data, ext,
                                           tmp_path)
    assert scores["mse"] == 0.0
    lines = (tmp_path / "report.txt").read_text().splitlines()
    assert "0 mse test 0.000000" in lines[0]


def test_evaluate_report_format_and_determinism(trained, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    ckpt = str(trained / "ckpt")
    assert run(["evaluate", "--checkpoint", ckpt, "--out", str(a), *TINY]) == EXIT_OK
    assert run(["evaluate", "--checkpoint", ckpt, "--out", str(b), *TINY]) == EXIT_OK
    assert (a / "report.txt").read_bytes() == (b / "report.txt").read_bytes()
    metrics = []
    for line in (a / "report.txt").read_text().splitlines():
        epoch, metric, split, value, backend = line.split(" ")
        assert epoch == "2" and split == "test" and backend.startswith("random-projection")
        assert len(value.split(".")[1]) == 6
        metrics.append(metric)
    assert metrics == ["mse", "mse_per_value", "fid", "hog_chi2", "lbp1_chi2", "lbp2_chi2",
                       "diversity"]
    for name in ("connectivity_real.csv", "connectivity_generated.csv"):
        header = next(csv.reader(open(a / name)))
        assert header == ["facies", "direction", "lag", "probability"]


def test_backend_mismatch_is_flagged(trained, tmp_path, capsys):
    out = tmp_path / "cnn"
    args = ["evaluate", "--checkpoint", str(trained / "ckpt"), "--out", str(out), *TINY,
            "--set", "backend=cnn"]
    assert run(args) == EXIT_OK
    assert (out / "BACKEND_MISMATCH").is_file()
    assert "backend" in capsys.readouterr().err
    assert "small-cnn" in (out / "report.txt").read_text()


# -- sweep ----------------------------------------------------------------------------

def read_csv(path):
    return list(csv.DictReader(open(path)))


def test_sweep_bookkeeping(tmp_path):
    args = ["sweep", "--out", str(tmp_path), *TINY, "--set", "epochs=1",
            "--set", "lambda_grid=0, 1", "--set", "seeds=0, 1, 2"]
    assert run(args) == EXIT_OK
    runs = read_csv(tmp_path / "runs.csv")
    summary = read_csv(tmp_path / "tradeoff.csv")
    assert len(runs) == 6 and len(summary) == 2
    assert {"lambda", "median_mse", "median_mse_per_value", "median_fid"} <= set(summary[0])
    for row in summary:
        ok = [float(r["mse"]) for r in runs if r["lambda"] == row["lambda"]]
        assert float(row["median_mse"]) == pytest.approx(np.median(ok), abs=1e-6)


def test_sweep_medians_ignore_seed_order(tmp_path):
    common = [*TINY, "--set", "epochs=1", "--set", "lambda_grid=1"]
    assert run(["sweep", "--out", str(tmp_path / "a"), *common, "--set", "seeds=0, 1, 2"]) == 0
    assert run(["sweep", "--out", str(tmp_path / "b"), *common, "--set", "seeds=2, 0, 1"]) == 0
    assert (tmp_path / "a" / "tradeoff.csv").read_text() == \
        (tmp_path / "b" / "tradeoff.csv").read_text()


def test_sweep_records_failures(tmp_path, monkeypatch):
    real = experiment.run_training

    def flaky(cfg, run_dir, resume=True):
        if cfg.seed == 1:
            raise trainer.NumericalAbort("diverged", {})
        return real(cfg, run_dir, resume)

    monkeypatch.setattr(experiment, "run_training", flaky)
    rows = experiment.sweep(tiny_cfg(epochs=1, lambda_grid=(1.0,), seeds=(0, 1, 2)), tmp_path)
    assert [r["status"] for r in rows] == ["ok", "failed: NumericalAbort", "ok"]
    summary = read_csv(tmp_path / "tradeoff.csv")[0]
    assert summary["n_success"] == "2" and summary["n_failed"] == "1"
    ok = [r["mse"] for r in rows if r["status"] == "ok"]
    assert float(summary["median_mse"]) == pytest.approx(np.median(ok), abs=1e-6)


# -- sample ---------------------------------------------------------------------------

def single_pixel_map(value=0.0, size=16):
    values = np.zeros((size, size, 1))
    mask = np.zeros((size, size), dtype=bool)
    mask[5, 7] = True
    values[5, 7] = value
    return ConstraintMap(values, mask)


def test_copy_generator_overlays_are_green(tmp_path):
    rng = np.random.default_rng(0)
    mask = rng.random((16, 16)) < 0.05
    cmap = ConstraintMap(np.where(mask[..., None], rng.uniform(-1, 1, (16, 16, 1)), 0.0), mask)
    res = experiment.sample_with_overlays(CopyGenerator((16, 16, 1)), None, cmap, 2, 0.1,
                                          tmp_path, block=1)
    assert res["fractions"] == [1.0, 1.0]
    from PIL import Image

    over = np.asarray(Image.open(tmp_path / "overlay_0.png"))
    for r, c in cmap.locations():
        assert tuple(over[r, c]) == (0, 255, 0)


def test_eps_boundary_is_red(tmp_path):
    cmap = single_pixel_map(0.0)
    G = ConstantGenerator((16, 16, 1), level=0.25)
    eps = float(np.float64(0.25) ** 2)
    res = experiment.sample_with_overlays(G, None, cmap, 1, eps, tmp_path, block=1)
    assert res["fractions"] == [0.0]
    over = experiment.render_overlay(res["samples"][0], cmap, eps, block=1)
    assert tuple(over[5, 7]) == (255, 0, 0)
    assert tuple(experiment.render_overlay(res["samples"][0], cmap, 0.07, block=3)[4, 6]) == \
        (0, 255, 0)


def test_pac_model_reports_diversity(tmp_path, capsys):
    out = tmp_path / "pac"
    assert run(["train", "--out", str(out), *TINY, "--set", "pac=2"]) == EXIT_OK
    cfile = tmp_path / "c.txt"
    write_constraint_file(single_pixel_map(0.5), cfile)
    capsys.readouterr()
    args = ["sample", "--checkpoint", str(out / "ckpt"), "--constraints", str(cfile), "-n", "2",
            "--out", str(tmp_path / "s")]
    assert run(args) == EXIT_OK
    stdout = capsys.readouterr().out
    div = float(stdout.split("diversity ")[1].split()[0])
    assert div > 0
    assert len(list((tmp_path / "s").glob("overlay_*.png"))) == 2


def test_sample_rejects_mismatched_map(trained, tmp_path, capsys):
    cfile = tmp_path / "c.txt"
    write_constraint_file(single_pixel_map(0.5, size=8), cfile)
    args = ["sample", "--checkpoint", str(trained / "ckpt"), "--constraints", str(cfile),
            "--out", str(tmp_path / "s")]
    assert run(args) == EXIT_CONFIG
    assert "does not fit" in capsys.readouterr().err


def test_generate_for_maps_is_seeded_with_distinct_latents():
    G = ZEchoGenerator((8, 8, 1))
    maps = [single_pixel_map(0.1, 8)] * 4
    a = experiment.generate_for_maps(G, G.latent, maps, seed=3)
    b = experiment.generate_for_maps(G, G.latent, maps, seed=3)
    np.testing.assert_array_equal(a, b)
    assert len({float(img[0, 0, 0]) for img in a}) == 4
