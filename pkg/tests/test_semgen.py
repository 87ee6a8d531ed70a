"""Generator tests: determinism, degenerate cases, moments, presets, CSV."""

import numpy as np
import pytest

from invarcast import semgen
from invarcast.exceptions import ConfigError, IngestError
from invarcast.semgen import EnvironmentSpec, SemConfig


def test_same_config_is_bitwise_deterministic():
    cfg = SemConfig(sigma2=0.7, length=500, seed=42)
    a = semgen.generate_temporal(cfg)
    b = semgen.generate_temporal(cfg)
    np.testing.assert_array_equal(a.values, b.values)


def test_different_seeds_differ():
    a = semgen.generate_temporal(SemConfig(sigma2=0.7, length=100, seed=1))
    b = semgen.generate_temporal(SemConfig(sigma2=0.7, length=100, seed=2))
    assert not np.array_equal(a.values, b.values)


def test_shapes_and_initial_state():
    cfg = SemConfig(sigma2=1.0, length=50, seed=0, initial_state=(1.0, -2.0, 3.0))
    sample = semgen.generate_temporal(cfg)
    assert sample.values.shape == (3, 50)
    np.testing.assert_array_equal(sample.values[:, 0], [1.0, -2.0, 3.0])
    one = semgen.generate_temporal(SemConfig(sigma2=1.0, length=1, seed=0))
    assert one.values.shape == (3, 1)
    np.testing.assert_array_equal(one.values[:, 0], [0.0, 0.0, 0.0])


def test_zero_noise_collapses_x_and_y_but_z_still_walks():
    sample = semgen.generate_temporal(SemConfig(sigma2=0.0, length=5, seed=3))
    x, y, z = sample.values
    np.testing.assert_array_equal(x, np.zeros(5))
    np.testing.assert_array_equal(y, np.zeros(5))
    # Z feeds on Y (all zero) plus unit noise: a pure random walk.
    assert np.all(np.diff(z)[1:] != 0) or np.any(z != 0)
    assert z[0] == 0.0
    assert np.any(np.abs(np.diff(z)) > 1e-8)


def test_temporal_drift_corrected_increments_match_configured_variances():
    s2 = 2.0
    sample = semgen.generate_temporal(SemConfig(sigma2=s2, length=100_001, seed=11))
    x, y, z = sample.values
    eps_x = np.diff(x)
    eps_y = np.diff(y) - x[:-1]
    eps_z = np.diff(z) - y[:-1]
    assert abs(eps_x.var() / s2 - 1) < 0.05
    assert abs(eps_y.var() / s2 - 1) < 0.05
    assert abs(eps_z.var() / 1.0 - 1) < 0.05
    assert abs(eps_x.mean()) < 0.05 and abs(eps_z.mean()) < 0.05


def test_static_moments_match_wiring():
    s2 = 0.5
    sample = semgen.generate_static(SemConfig(sigma2=s2, length=200_000, seed=5, mode="static"))
    x, y, z = sample.values
    assert abs(x.var() / s2 - 1) < 0.05
    assert abs((y - x).var() / s2 - 1) < 0.05
    assert abs((z - y).var() / 1.0 - 1) < 0.05
    # Noises are mutually independent across the three substreams.
    assert abs(np.corrcoef(x, y - x)[0, 1]) < 0.02
    assert abs(np.corrcoef(y, z - y)[0, 1]) < 0.02


def test_noise_substreams_are_independent_of_sigma2():
    # The unit-variance Z noise must not move when sigma2 changes, and the
    # X noise should rescale exactly: each variable has its own substream.
    a = semgen.generate_temporal(SemConfig(sigma2=0.1, length=1000, seed=7))
    b = semgen.generate_temporal(SemConfig(sigma2=1.0, length=1000, seed=7))
    eps_z_a = np.diff(a.values[2]) - a.values[1, :-1]
    eps_z_b = np.diff(b.values[2]) - b.values[1, :-1]
    # Recovered noises carry cumsum rounding of order eps * |level|; if the
    # streams differed at all the gap would be O(1).
    np.testing.assert_allclose(eps_z_a, eps_z_b, rtol=0, atol=1e-6)
    np.testing.assert_allclose(
        np.diff(b.values[0]), np.diff(a.values[0]) * np.sqrt(10.0), rtol=1e-9
    )


def test_env_id_changes_the_stream():
    cfg = SemConfig(sigma2=1.0, length=100, seed=9)
    a = semgen.generate_temporal(cfg, env_id="one")
    b = semgen.generate_temporal(cfg, env_id="two")
    c = semgen.generate_temporal(cfg, env_id="one")
    assert not np.array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.values, c.values)
    assert a.env_id == "one"


def test_env_suite_generates_all_and_rejects_duplicates():
    specs = [
        EnvironmentSpec("e1", SemConfig(0.1, 200, 1)),
        EnvironmentSpec("e2", SemConfig(1.0, 200, 1)),
    ]
    suite = semgen.generate_env_suite(specs)
    assert set(suite) == {"e1", "e2"}
    assert suite["e1"].env_id == "e1"
    assert not np.array_equal(suite["e1"].values, suite["e2"].values)
    with pytest.raises(ConfigError):
        semgen.generate_env_suite(specs + [EnvironmentSpec("e1", SemConfig(2.0, 200, 1))])


@pytest.mark.parametrize("env_type,train,test", [
    ("2", (0.1, 1.0), (2.0,)),
    ("3-1B", (0.1, 1.0, 0.01), (2.0,)),
    ("3-2G", (0.1, 1.0, 2.0), (2.0,)),
])
def test_env_type_presets(env_type, train, test):
    specs = semgen.env_type_suite(env_type, length=100, seed=0)
    got_train = tuple(s.config.sigma2 for s in specs if s.role == "train")
    got_test = tuple(s.config.sigma2 for s in specs if s.role == "test")
    assert got_train == train and got_test == test
    assert len({s.env_id for s in specs}) == len(specs)


def test_preset_default_lengths_depend_on_mode():
    temporal = semgen.env_type_suite("2", seed=0)
    static = semgen.env_type_suite("2", seed=0, mode="static")
    assert temporal[0].config.length == semgen.DEFAULT_TEMPORAL_LENGTH
    assert static[0].config.length == semgen.DEFAULT_STATIC_LENGTH
    with pytest.raises(ConfigError):
        semgen.env_type_suite("4")


def test_config_validation():
    with pytest.raises(ConfigError):
        SemConfig(sigma2=-0.1, length=10, seed=0)
    with pytest.raises(ConfigError):
        SemConfig(sigma2=1.0, length=0, seed=0)
    with pytest.raises(ConfigError):
        SemConfig(sigma2=1.0, length=10, seed=0, mode="weird")
    with pytest.raises(ConfigError):
        SemConfig(sigma2=1.0, length=10, seed=-1)
    with pytest.raises(ConfigError):
        semgen.generate_temporal(SemConfig(1.0, 10, 0, mode="static"))
    with pytest.raises(ConfigError):
        semgen.generate_static(SemConfig(1.0, 10, 0))


def test_series_csv_round_trip(tmp_path):
    sample = semgen.generate_temporal(SemConfig(0.3, 64, 13), env_id="rt")
    path = tmp_path / "series.csv"
    semgen.write_series_csv(sample, path)
    back = semgen.read_series_csv(path)
    np.testing.assert_array_equal(back.values, sample.values)
    assert back.env_id == "rt"


def test_series_csv_errors_name_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("env_id,t,x,y,z\nrt,0,1.0,2.0,3.0\nrt,1,oops,2.0,3.0\n")
    with pytest.raises(IngestError, match="bad.csv:3"):
        semgen.read_series_csv(path)
    path.write_text("wrong,header\n")
    with pytest.raises(IngestError, match="header"):
        semgen.read_series_csv(path)
