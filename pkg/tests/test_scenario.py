import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairisac.scenario import (ChannelFileError, ChannelSet, DimensionError, Geometry,
                               GeometryError, ScenarioConfig, ScenarioError, SystemParams,
                               bistatic_gain_power, build_scenario, free_space_path_loss,
                               generate_channels, link_delay_doppler, load_channels,
                               save_channels, steering_vector)


def params(**kw):
    base = dict(n_tx=4, n_sc=8, n_sym=4, f_c=28e9, delta_f=120e3, t_sym=1 / 120e3,
                p_total=1.0, noise_power=(1e-12,))
    base.update(kw)
    return SystemParams(**base)


def test_steering_broadside():
    np.testing.assert_allclose(steering_vector(np.pi / 2, 4), np.ones(4), atol=1e-15)


def test_steering_single_element():
    assert np.array_equal(steering_vector(1.234, 1), np.array([1.0 + 0j]))


def test_steering_endfire_pair():
    np.testing.assert_allclose(steering_vector(0.0, 2), [1, -1], atol=1e-15)


@given(st.floats(-np.pi, np.pi), st.integers(1, 32))
def test_steering_unit_modulus(angle, n):
    a = steering_vector(angle, n)
    assert a.shape == (n,)
    np.testing.assert_allclose(np.abs(a), 1.0, rtol=1e-14)


def test_steering_rejects_bad_count():
    with pytest.raises(DimensionError):
        steering_vector(0.3, 0)


def test_bandwidth_derived_and_checked():
    assert params().bandwidth == pytest.approx(8 * 120e3)
    with pytest.raises(ScenarioError):
        params(bandwidth=1e6)


def test_symbol_duration_must_cover_subcarrier_spacing():
    with pytest.raises(ScenarioError):
        params(t_sym=0.5 / 120e3)


def test_dimensions_validated():
    with pytest.raises(DimensionError):
        params(n_tx=0)


def test_target_on_user_rejected():
    with pytest.raises(GeometryError):
        Geometry((0, 0), [(5, 5)], [(5, 5)], [0.0])


def _scenario(users, targets, vel, **kw):
    par = params(delta_f=kw.pop("delta_f", 120e3), t_sym=kw.pop("t_sym", 1 / 120e3))
    return build_scenario(ScenarioConfig(par, (0, 0), users, targets, vel, **kw))


def test_delay_static_target_has_no_doppler():
    sc = _scenario([(50, 20)], [(30, 40)], [0.0])
    for m in range(sc.n_nodes):
        assert link_delay_doppler(sc, 0, m)[1] == 0.0


def test_delay_arithmetic():
    # both legs 150 m
    sc = _scenario([(150, 150)], [(150, 0)], [5.0], c0=3e8)
    tau, _ = link_delay_doppler(sc, 0, 0)
    assert tau == pytest.approx(0.12, rel=1e-12)
    tau_bs, _ = link_delay_doppler(sc, 0, sc.bs_index)
    assert tau_bs == pytest.approx(0.12, rel=1e-12)


def test_doppler_vanishes_broadside():
    sc = _scenario([(0, 50)], [(0, 100)], [10.0])
    assert sc.gains.aod[0] == pytest.approx(np.pi / 2)
    assert sc.gains.aoa[0, 0] == pytest.approx(np.pi / 2)
    assert link_delay_doppler(sc, 0, 0)[1] == pytest.approx(0.0, abs=1e-12)


def test_link_index_checked():
    sc = _scenario([(0, 50)], [(0, 100)], [10.0])
    with pytest.raises(IndexError):
        link_delay_doppler(sc, 1, 0)


def test_gain_inverse_square_per_leg():
    g1 = bistatic_gain_power(30.0, 40.0, 0.01)
    g2 = bistatic_gain_power(30.0, 80.0, 0.01)
    assert g2 == pytest.approx(g1 / 4, rel=1e-14)


def test_gain_arithmetic():
    lam = 3e8 / 3e8
    g = bistatic_gain_power(10.0, 10.0, lam, gain=1.0, rcs=1.0)
    assert g == pytest.approx(1 / ((4 * np.pi) ** 3 * 1e4), rel=1e-14)
    assert g == pytest.approx(5.042e-8, rel=1e-3)


def test_gain_zero_distance():
    with pytest.raises(GeometryError):
        bistatic_gain_power(0.0, 10.0, 1.0)


def test_scenario_deterministic():
    a = _scenario([(50, 20), (20, -30)], [(30, 40)], [3.0], seed=11)
    b = _scenario([(50, 20), (20, -30)], [(30, 40)], [3.0], seed=11)
    c = _scenario([(50, 20), (20, -30)], [(30, 40)], [3.0], seed=12)
    assert np.array_equal(a.gains.a_bar, b.gains.a_bar)
    assert a.channels == b.channels
    assert a.channels != c.channels


def test_gain_magnitude_matches_radar_equation():
    sc = _scenario([(50, 20)], [(30, 40)], [0.0], seed=3)
    lam = sc.geometry.c0 / sc.params.f_c
    expect = bistatic_gain_power(sc.geometry.bs_target_distances()[:, None],
                                 sc.geometry.target_node_distances(), lam)
    np.testing.assert_allclose(np.abs(sc.gains.a_bar) ** 2, expect, rtol=1e-12)


def test_pure_los_channel():
    par = params(n_sc=6)
    geo = Geometry((0, 0), [(40, 30)], [(10, 10)], [0.0])
    ch = generate_channels(par, geo, np.random.default_rng(0), kappa=1e12)
    h = ch.h[0]
    a = steering_vector(math.atan2(30, 40), par.n_tx)
    pl = free_space_path_loss(50.0, par.f_c)
    np.testing.assert_allclose(h, np.broadcast_to(np.sqrt(pl) * a, h.shape), rtol=1e-5)


def test_channel_power_normalization():
    par = params(n_sc=10_000, n_tx=4)
    geo = Geometry((0, 0), [(40, 30)], [(10, 10)], [0.0])
    ch = generate_channels(par, geo, np.random.default_rng(1), kappa=2.0)
    pl = free_space_path_loss(50.0, par.f_c)
    mean = np.mean(np.sum(np.abs(ch.h[0]) ** 2, axis=1))
    assert mean == pytest.approx(pl * par.n_tx, rel=0.05)


def test_channel_arrays_read_only():
    sc = _scenario([(50, 20)], [(30, 40)], [0.0])
    with pytest.raises(ValueError):
        sc.channels.h[0, 0, 0] = 1.0


def test_channel_file_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    h = rng.standard_normal((3, 4, 2)) + 1j * rng.standard_normal((3, 4, 2))
    ch = ChannelSet(h)
    save_channels(ch, tmp_path / "h.csv")
    assert load_channels(tmp_path / "h.csv") == ch


def test_channel_file_missing_user(tmp_path):
    rng = np.random.default_rng(5)
    h = rng.standard_normal((2, 3, 2)) + 0j
    save_channels(ChannelSet(h), tmp_path / "h.csv")
    text = (tmp_path / "h.csv").read_text().splitlines()
    text[0] = "3,3,2"
    (tmp_path / "h.csv").write_text("\n".join(text) + "\n")
    with pytest.raises(DimensionError, match="K=3"):
        load_channels(tmp_path / "h.csv")


def test_channel_file_parse_error_has_location(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("1,1,1\n0,0,0,abc,0.0\n")
    with pytest.raises(ChannelFileError, match=r"row 2, field 're'"):
        load_channels(p)


def test_channel_file_ingested(tmp_path):
    first = _scenario([(50, 20), (20, -30)], [(30, 40)], [0.0], seed=4)
    save_channels(first.channels, tmp_path / "h.csv")
    again = _scenario([(50, 20), (20, -30)], [(30, 40)], [0.0], seed=4,
                      channel_file=str(tmp_path / "h.csv"))
    assert again.channels == first.channels
    assert again.seed == "ingested"


def test_channel_file_wrong_shape_for_scenario(tmp_path):
    save_channels(ChannelSet(np.ones((1, 8, 4))), tmp_path / "h.csv")
    with pytest.raises(DimensionError):
        _scenario([(50, 20), (20, -30)], [(30, 40)], [0.0], channel_file=str(tmp_path / "h.csv"))


@settings(max_examples=25, deadline=None)
@given(st.floats(5.0, 500.0), st.floats(5.0, 500.0))
def test_gain_positive_and_decreasing(d1, d2):
    g = bistatic_gain_power(d1, d2, 0.01)
    assert g > 0
    assert bistatic_gain_power(d1 * 1.5, d2, 0.01) < g


def test_delay_increases_with_leg_length():
    near = _scenario([(60, 0)], [(30, 40)], [1.0])
    far = _scenario([(90, 0)], [(30, 40)], [1.0])
    assert link_delay_doppler(far, 0, 0)[0] > link_delay_doppler(near, 0, 0)[0]
    assert link_delay_doppler(far, 0, 1)[0] == link_delay_doppler(near, 0, 1)[0]


def test_gain_magnitude_independent_of_seed():
    a = _scenario([(50, 20)], [(30, 40)], [0.0], seed=1)
    b = _scenario([(50, 20)], [(30, 40)], [0.0], seed=2)
    np.testing.assert_allclose(np.abs(a.gains.a_bar), np.abs(b.gains.a_bar), rtol=1e-15)
    assert not np.allclose(a.gains.a_bar, b.gains.a_bar)
