import numpy as np
import pytest

from rpflow.cli import evaluate, main
from rpflow.io import load_checkpoint, load_ensemble, save_field_csv, save_image
from rpflow.numerics import Rng
from rpflow.posterior import sample_prior
from rpflow.velocity_net import init_velocity_net

FAST = ["--iterations", "40", "--width", "16", "--depth", "2", "--n-freq", "8"]


@pytest.fixture
def field(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("RPFLOW_OUTPUT_ROOT", raising=False)
    X = np.linspace(0, 1, 24)[:, None]
    save_field_csv(tmp_path / "f.csv", X, np.sin(5 * X))
    return tmp_path


def test_train_writes_checkpoint_and_loss(field):
    assert main(["train", "--data", "f.csv", "--checkpoint", "m.rpfc", *FAST]) == 0
    assert load_checkpoint(field / "m.rpfc").meta["data"].endswith("f.csv")
    lines = (field / "m.loss.csv").read_text().splitlines()
    assert lines[0] == "step,loss" and len(lines) == 41


def test_config_file_and_flag_override(field):
    (field / "t.cfg").write_text("data = f.csv\niterations = 7\nwidth = 8\ndepth = 1\nn_freq = 4\n")
    assert main(["train", "--config", "t.cfg", "--iterations", "3"]) == 0
    assert load_checkpoint(field / "model.rpfc").config.iterations == 3


def test_zero_iterations_is_initialization(field):
    assert main(["train", "--data", "f.csv", "--iterations", "0", "--width", "8", "--depth", "1",
                 "--n-freq", "4", "--seed", "3"]) == 0
    ck = load_checkpoint(field / "model.rpfc")
    ref = init_velocity_net(Rng(3).spawn(1), ck.embedder.dim, 1, [8])
    np.testing.assert_array_equal(ck.net.mlp.flat(), ref.mlp.flat())


def test_rerun_is_byte_identical(field):
    main(["train", "--data", "f.csv", "--checkpoint", "a.rpfc", *FAST])
    main(["train", "--data", "f.csv", "--checkpoint", "b.rpfc", *FAST])
    assert (field / "a.rpfc").read_bytes() == (field / "b.rpfc").read_bytes()


def test_user_errors_exit_1(field, capsys):
    assert main(["train", "--data", "missing.csv"]) == 1
    assert "missing.csv" in capsys.readouterr().err
    assert main(["train", "--data", "f.csv", "--lr", "fast"]) == 1
    assert main(["nonsense"]) == 1
    assert main(["sample", "--checkpoint", "none.rpfc"]) == 1
    assert main(["experiment", "no-such-study"]) == 1
    assert "t0-convergence" in capsys.readouterr().err


def test_internal_errors_exit_2(field, monkeypatch):
    from rpflow import cli

    def boom(args):
        raise ArithmeticError("overflow")
    monkeypatch.setattr(cli, "cmd_inspect", boom)
    parser = cli.build_parser()
    monkeypatch.setattr(cli, "build_parser", lambda: parser)
    parser._subparsers._group_actions[0].choices["inspect"].set_defaults(func=boom)
    assert main(["inspect", "f.csv"]) == 2


def test_prior_sample_matches_library(field):
    main(["train", "--data", "f.csv", "--checkpoint", "m.rpfc", *FAST])
    assert main(["sample", "--checkpoint", "m.rpfc", "--mode", "prior", "--samples", "1", "--steps", "10",
                 "--seed", "4", "--output", "p.rpfe"]) == 0
    ck = load_checkpoint(field / "m.rpfc")
    X = np.linspace(0, 1, 24)[:, None]
    ref = sample_prior(ck.net, ck.embedder, X, 1, Rng(4), steps=10)
    np.testing.assert_array_equal(load_ensemble(field / "p.rpfe").samples, ref.samples)
    assert (field / "p.summary.csv").read_text().startswith("x0,mean0,std0")


def test_prior_ignores_posterior_lengthscale(field):
    main(["train", "--data", "f.csv", "--checkpoint", "m.rpfc", *FAST])
    with pytest.warns(UserWarning, match="ignored"):
        assert main(["sample", "--checkpoint", "m.rpfc", "--mode", "prior", "--samples", "2",
                     "--steps", "2", "--posterior-lengthscale", "0.1"]) == 0


def test_posterior_at_training_positions(field):
    main(["train", "--data", "f.csv", "--checkpoint", "m.rpfc", *FAST])
    assert main(["sample", "--checkpoint", "m.rpfc", "--query", "train", "--samples", "3", "--steps", "50",
                 "--posterior-lengthscale", "0.05", "--output", "q.rpfe"]) == 0
    e = load_ensemble(field / "q.rpfe")
    truth = np.sin(5 * np.linspace(0, 1, 24))[:, None]
    assert np.max(np.abs(e.samples - truth)) < 0.05


def test_image_workflow(field):
    img = np.random.default_rng(0).random((16, 16))
    save_image(field / "i.pgm", img)
    assert main(["train", "--data", "i.pgm", "--mask", "upsample4x", "--checkpoint", "i.rpfc", *FAST]) == 0
    assert load_checkpoint(field / "i.rpfc").meta["image_shape"] == [16, 16, 1]
    assert main(["sample", "--checkpoint", "i.rpfc", "--samples", "2", "--steps", "4", "--posterior-lengthscale",
                 "0.1", "--output", "s.rpfe", "--image-prefix", "out"]) == 0
    assert (field / "out_mean.pgm").exists() and (field / "out_std.pgm").exists()
    assert main(["eval", "--ensemble", "s.rpfe", "--truth", "i.pgm", "--metrics", "psnr,ssim"]) == 0
    assert main(["train", "--data", "f.csv", "--mask", "upsample4x"]) == 1


def test_eval_identical_files(field):
    main(["train", "--data", "f.csv", "--checkpoint", "m.rpfc", *FAST])
    main(["sample", "--checkpoint", "m.rpfc", "--mode", "prior", "--samples", "1", "--steps", "2",
          "--output", "p.rpfe"])
    assert main(["eval", "--ensemble", "p.rpfe", "--truth", "p.rpfe", "--metrics", "psnr,w1,pce",
                 "--output", "m.csv"]) == 0
    rows = dict(line.split(",") for line in (field / "m.csv").read_text().splitlines()[1:])
    assert float(rows["psnr"]) == float("inf")
    assert float(rows["w1"]) == 0.0
    assert float(rows["pce"]) == pytest.approx(0.5, abs=1 / 99)


def test_eval_ssim_identity_and_empty_metric_list(field):
    s = np.random.default_rng(1).random((1, 144, 1))
    X = np.stack(np.meshgrid(np.linspace(0, 1, 12), np.linspace(0, 1, 12), indexing="ij"), -1).reshape(-1, 2)
    assert dict(evaluate(s, X, s[0], ["ssim"]))["ssim"] == pytest.approx(1.0)
    main(["train", "--data", "f.csv", "--checkpoint", "m.rpfc", *FAST])
    main(["sample", "--checkpoint", "m.rpfc", "--mode", "prior", "--samples", "1", "--steps", "2",
          "--output", "p.rpfe"])
    assert main(["eval", "--ensemble", "p.rpfe", "--truth", "f.csv", "--metrics", "", "--output", "e.csv"]) == 0
    assert (field / "e.csv").read_text() == "metric,value\n"


def test_eval_shape_mismatch(field):
    main(["train", "--data", "f.csv", "--checkpoint", "m.rpfc", *FAST])
    main(["sample", "--checkpoint", "m.rpfc", "--mode", "prior", "--samples", "1", "--steps", "2",
          "--output", "p.rpfe"])
    save_field_csv(field / "short.csv", np.zeros((3, 1)), np.zeros((3, 1)))
    assert main(["eval", "--ensemble", "p.rpfe", "--truth", "short.csv"]) == 1


def test_output_root(field, tmp_path, monkeypatch):
    root = tmp_path / "root"
    monkeypatch.setenv("RPFLOW_OUTPUT_ROOT", str(root))
    assert main(["train", "--data", "f.csv", "--checkpoint", "m.rpfc", *FAST]) == 0
    assert (root / "m.rpfc").exists()
    # later steps find their inputs under the same root
    assert main(["sample", "--checkpoint", "m.rpfc", "--mode", "prior", "--samples", "4", "--steps", "5",
                 "--output", "s.rpfe"]) == 0
    assert main(["eval", "--ensemble", "s.rpfe", "--truth", "s.rpfe", "--metrics", "psnr", "--output", "e.csv"]) == 0
    assert main(["inspect", "s.rpfe"]) == 0
    assert (root / "e.csv").exists()


def test_experiment_list_and_run(field, capsys):
    assert main(["experiment", "--list"]) == 0
    assert "trace-interpolation" in capsys.readouterr().out
    assert main(["experiment", "euler-order", "--set", "k_grid=2,4", "--out", "eu"]) == 0
    assert (field / "eu" / "euler_order.csv").exists()
    assert main(["experiment", "euler-order", "--set", "bogus=1"]) == 1


def test_inspect(field, capsys, data_dir):
    assert main(["inspect", str(data_dir / "golden.rpfc")]) == 0
    out = capsys.readouterr().out
    assert "RffBasis" in out and "params=" in out
    assert main(["inspect", "f.csv"]) == 0
    assert "N=24" in capsys.readouterr().out
    assert main(["--threads", "0", "inspect", "f.csv"]) == 1
