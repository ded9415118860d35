import numpy as np
import pytest

from msgmrf.errors import ConfigError, MalformedRow, MissingColumn, RankDeficient
from msgmrf.io import (PointData, RunConfig, detrend, parse_config, read_points_csv, write_config,
                       write_points_csv)


def test_read_points_examples(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,y,value\n")
    assert len(read_points_csv(p)) == 0
    p.write_text("x,y,value\n0.5,0.5,1.2\n")
    d = read_points_csv(p)
    assert len(d) == 1 and d.locations.shape == (1, 2) and d.values[0] == 1.2
    p.write_text("x,y,value\n0.5,0.5,1.2\n0.1,nan,2\n0.2,0.3,4\n")
    d = read_points_csv(p)
    assert len(d) == 2 and d.dropped == 1
    p.write_text("x,value\n0.1,1\n0.2,2\n")
    assert read_points_csv(p).locations.shape == (2, 1)


def test_read_points_errors(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("x,y,value\n0.5,0.5,1.2\n0.5,oops,1\n")
    with pytest.raises(MalformedRow) as e:
        read_points_csv(p)
    assert "3" in str(e.value)
    p.write_text("x,y\n0.5,0.5\n")
    with pytest.raises(MissingColumn):
        read_points_csv(p)


def test_points_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    d = PointData(rng.uniform(size=(10, 2)), rng.standard_normal(10))
    write_points_csv(tmp_path / "d.csv", d)
    back = read_points_csv(tmp_path / "d.csv")
    np.testing.assert_array_equal(back.locations, d.locations)
    np.testing.assert_array_equal(back.values, d.values)


def test_detrend_exact_fits():
    y = np.linspace(-1, 2, 30)
    loc = np.column_stack([np.zeros(30), y])
    res, coef = detrend(PointData(loc, 2 + 3 * y - y * y))
    np.testing.assert_allclose(coef, (2, 3, -1), atol=1e-10)
    np.testing.assert_allclose(res.values, 0, atol=1e-10)
    res, coef = detrend(PointData(loc, np.full(30, 4.0)))
    np.testing.assert_allclose(res.values, 0, atol=1e-10)


def test_detrend_residuals_orthogonal():
    rng = np.random.default_rng(1)
    loc = rng.uniform(0, 5, (200, 2))
    res, _ = detrend(PointData(loc, rng.standard_normal(200) + loc[:, 1] ** 2))
    y = loc[:, 1]
    for col in (np.ones_like(y), y, y * y):
        assert abs(res.values @ col) <= 1e-8 * np.linalg.norm(res.values) * np.linalg.norm(col) + 1e-12


def test_detrend_rank_deficient():
    loc = np.column_stack([np.arange(5.0), [1, 1, 2, 2, 1]])
    with pytest.raises(RankDeficient):
        detrend(PointData(loc, np.arange(5.0)))


def test_parse_config():
    vals = parse_config("# comment\na = 1\n\nb = x y  # trailing\nc=2.5\n")
    assert vals == {"a": "1", "b": "x y", "c": "2.5"}
    with pytest.raises(ConfigError):
        parse_config("no equals here\n")


def test_run_config_typed_access_and_echo(tmp_path):
    cfg = RunConfig(parse_config("n = 5\nflag = yes\nxs = 0.1, 0.2\nbad = z\n"))
    assert cfg.get_int("n") == 5
    assert cfg.get_bool("flag") is True
    assert cfg.get_floats("xs") == [0.1, 0.2]
    assert cfg.get_float("missing", 1.5) == 1.5
    with pytest.raises(ConfigError):
        cfg.get_int("bad")
    with pytest.raises(ConfigError):
        cfg.require("absent")
    echo = cfg.echo()
    assert echo["missing"] == "1.5" and echo["xs"] == "0.1 0.2"
    write_config(tmp_path / "c.txt", echo)
    again = RunConfig.from_file(tmp_path / "c.txt")
    assert again.get_float("missing") == 1.5 and again.get_floats("xs") == [0.1, 0.2]
