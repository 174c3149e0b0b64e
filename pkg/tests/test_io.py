import numpy as np
import pytest

from rpflow.baselines import NoPosition, PosEnc
from rpflow.cfm_train import TrainConfig, train
from rpflow.errors import FormatError
from rpflow.io import (
    Checkpoint,
    convert_value,
    image_positions,
    load_checkpoint,
    load_ensemble,
    load_field_csv,
    load_image,
    parse_config,
    save_checkpoint,
    save_ensemble,
    save_field_csv,
    save_image,
)
from rpflow.posterior import Ensemble
from rpflow.rff import RffBasis, make_basis
from rpflow.velocity_net import init_velocity_net


@pytest.mark.parametrize("maxval", [255, 65535])
def test_gray_roundtrip(tmp_path, maxval):
    q = np.random.default_rng(0).integers(0, maxval + 1, (5, 7))
    save_image(tmp_path / "a.pgm", q / maxval, maxval)
    img, mv = load_image(tmp_path / "a.pgm")
    assert mv == maxval and img.shape == (5, 7)
    np.testing.assert_array_equal(np.rint(img * maxval), q)


def test_color_image(tmp_path):
    a = np.random.default_rng(1).integers(0, 256, (4, 3, 3)) / 255
    save_image(tmp_path / "c.ppm", a)
    img, _ = load_image(tmp_path / "c.ppm")
    assert img.shape == (4, 3, 3)
    np.testing.assert_allclose(img, a)


def test_image_header_comments(tmp_path):
    (tmp_path / "h.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    img, _ = load_image(tmp_path / "h.pgm")
    np.testing.assert_array_equal(img, [[0.0, 1.0]])


@pytest.mark.parametrize("raw", [b"P3\n1 1\n255\n0", b"P5\n2 2\n255\n\x00", b"P5\n2", b"P5\nx 2\n255\n"])
def test_bad_images(tmp_path, raw):
    (tmp_path / "b.pgm").write_bytes(raw)
    with pytest.raises(FormatError):
        load_image(tmp_path / "b.pgm")


def test_image_positions():
    X = image_positions(3, 5)
    assert X.shape == (15, 2)
    np.testing.assert_array_equal(X[6], [0.5, 0.25])


def test_field_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    X, V = rng.random((6, 2)), rng.standard_normal((6, 3))
    save_field_csv(tmp_path / "f.csv", X, V)
    obs = load_field_csv(tmp_path / "f.csv")
    assert (obs.n, obs.d, obs.m) == (6, 2, 3)
    np.testing.assert_array_equal(obs.positions, X)
    np.testing.assert_array_equal(obs.values, V)


def test_field_csv_single_row(tmp_path):
    (tmp_path / "one.csv").write_text("x0,v\n0.5,2\n")
    obs = load_field_csv(tmp_path / "one.csv")
    assert obs.n == 1 and obs.values[0, 0] == 2


@pytest.mark.parametrize("text", ["x0,v\n1,2\n3\n", "x0,v\n1,abc\n", "a,b\n1,2\n", "x0\n1\n"])
def test_field_csv_errors(tmp_path, text):
    (tmp_path / "bad.csv").write_text(text)
    with pytest.raises(FormatError):
        load_field_csv(tmp_path / "bad.csv")


def test_ensemble_roundtrip(tmp_path):
    s = np.random.default_rng(3).standard_normal((4, 5, 2))
    e = Ensemble(s, np.random.default_rng(4).random((5, 3)), "posterior", (11, 12))
    save_ensemble(tmp_path / "e.rpfe", e)
    back = load_ensemble(tmp_path / "e.rpfe")
    np.testing.assert_array_equal(back.samples, s)
    np.testing.assert_array_equal(back.positions, e.positions)
    assert back.provenance == "posterior" and tuple(back.seeds) == (11, 12)


def test_ensemble_rejects_wrong_magic(tmp_path):
    (tmp_path / "x.rpfe").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(FormatError):
        load_ensemble(tmp_path / "x.rpfe")


@pytest.mark.parametrize("embedder", [make_basis(1, 6, 2, 4.0), PosEnc(3, 2), NoPosition()])
def test_checkpoint_roundtrip_bitwise(tmp_path, embedder):
    from rpflow.cfm_train import FieldObservations
    obs = FieldObservations(np.random.default_rng(0).random((10, 2)), np.zeros((10, 1)))
    net = init_velocity_net(2, embedder.dim, 1, [8])
    res = train(obs, embedder, net, TrainConfig(iterations=3, ema_decay=0.5, seed=1))
    ck = Checkpoint(embedder, res.net, res.config, {"data": "x.csv"}, res.adam, res.ema)
    save_checkpoint(tmp_path / "m.rpfc", ck)
    back = load_checkpoint(tmp_path / "m.rpfc")
    np.testing.assert_array_equal(back.net.mlp.flat(), res.net.mlp.flat())
    assert back.config == res.config and back.meta == {"data": "x.csv"}
    assert back.adam.step == 3
    np.testing.assert_array_equal(back.adam.m[0], res.adam.m[0])
    np.testing.assert_array_equal(back.ema.shadow[1], res.ema.shadow[1])
    assert type(back.embedder) is type(embedder)
    save_checkpoint(tmp_path / "again.rpfc", back)
    assert (tmp_path / "again.rpfc").read_bytes() == (tmp_path / "m.rpfc").read_bytes()


def test_golden_checkpoint(data_dir):
    ck = load_checkpoint(data_dir / "golden.rpfc")
    assert isinstance(ck.embedder, RffBasis)
    np.testing.assert_array_equal(ck.embedder.B[0], [6.4383087811250945, -16.896813985431006])
    assert ck.meta == {"note": "golden"} and ck.config.seed == 3
    g = ck.embedder.embed(np.array([[0.25, 0.75]]))
    out = ck.net.forward(g, 0.5, np.array([[0.1, -0.2]]))
    np.testing.assert_allclose(out, [[0.17037379087620846, -0.01061168560888606]], rtol=1e-13)


def test_checkpoint_errors(tmp_path, data_dir):
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.rpfc")
    raw = (data_dir / "golden.rpfc").read_bytes()
    (tmp_path / "v.rpfc").write_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "v.rpfc")
    (tmp_path / "t.rpfc").write_bytes(raw + b"\x00")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "t.rpfc")
    (tmp_path / "s.rpfc").write_bytes(raw[:100])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "s.rpfc")


def test_config_parsing(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nlr = 0.01  # trailing\nname = abc\ngrid = 1, 2 3\nflag = yes\nopt = none\n")
    vals = parse_config(p, {"lr": float, "name": str, "grid": "floats", "flag": bool, "opt": "optfloat"})
    assert vals == {"lr": 0.01, "name": "abc", "grid": [1.0, 2.0, 3.0], "flag": True, "opt": None}


@pytest.mark.parametrize("text", ["lr = 1\nlr = 2\n", "bogus = 1\n", "lr 1\n", "lr = abc\n"])
def test_config_errors(tmp_path, text):
    p = tmp_path / "c.cfg"
    p.write_text(text)
    with pytest.raises(FormatError):
        parse_config(p, {"lr": float})


def test_convert_value():
    assert convert_value("ints", "1,2") == [1, 2]
    assert convert_value(bool, "False") is False
    with pytest.raises(FormatError):
        convert_value(bool, "maybe")
