import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbm_lab.errors import ValidationError
from rbm_lab.flow import (EmpiricalMeasure, corrected_volumes, earthworm_frame, empirical_measure, evolve_ensemble,
                          init_lattice, pair_distance_histogram, trend_diagnostic, uniformity_metric,
                          write_measure_csv, write_snapshot_csv)
from rbm_lab.geometry import DomainGeometry, canonicalize
from rbm_lab.noise import NoiseStream

T2 = DomainGeometry.torus(2.0)
T4 = DomainGeometry.torus(4.0)
T8 = DomainGeometry.torus(8.0)


def test_lattice_small():
    ens = init_lattice(2, T2)
    assert len(ens) == 8
    np.testing.assert_allclose(np.abs(ens.positions), 1.0)
    with pytest.raises(ValidationError):
        init_lattice(1, T2)
    with pytest.raises(ValidationError):
        init_lattice(4, DomainGeometry.exterior())


def test_lattice_volume_fraction():
    ens = init_lattice(16, T4)
    frac = len(ens) / 16**3
    assert frac == pytest.approx(1 - (4 * math.pi / 3) / 8**3, abs=0.01)
    assert np.all(np.linalg.norm(ens.positions, axis=1) >= 1.0)


def test_snapshot_at_zero_is_initial():
    ens = init_lattice(4, T4)
    start = ens.positions.copy()
    snaps = evolve_ensemble(ens, NoiseStream(0, 0, 1e-3), [0.0, 0.01])
    np.testing.assert_array_equal(snaps[0].positions, start)
    assert snaps[1].t == pytest.approx(0.01)
    with pytest.raises(ValidationError):
        evolve_ensemble(init_lattice(4, T4), NoiseStream(0, 0, 1e-3), [1.0, 0.5])


def test_ensemble_stays_outside_ball():
    ens = init_lattice(6, T2)
    snaps = evolve_ensemble(ens, NoiseStream(5, 0, 1e-3), [0.5, 1.0])
    for s in snaps:
        assert np.all(np.linalg.norm(s.positions, axis=1) >= 1.0 - 1e-12)
        assert np.all(np.abs(s.positions) <= 2.0)
        assert np.all(s.local_time >= 0)


def test_coincident_particles_stay_together():
    ens = init_lattice(2, T4)
    ens.positions[1] = ens.positions[0]
    ens.origin = ens.positions.copy()
    snaps = evolve_ensemble(ens, NoiseStream(1, 0, 1e-3), [2.0])
    np.testing.assert_array_equal(snaps[0].positions[0], snaps[0].positions[1])


def test_permutation_invariance():
    a = init_lattice(4, T4)
    b = init_lattice(4, T4)
    perm = np.random.default_rng(0).permutation(len(b))
    b.positions = b.positions[perm]
    sa = evolve_ensemble(a, NoiseStream(2, 0, 1e-3), [1.0])[0]
    sb = evolve_ensemble(b, NoiseStream(2, 0, 1e-3), [1.0])[0]
    np.testing.assert_array_equal(sa.positions[perm], sb.positions)


def test_translation_equivariance_away_from_obstacle():
    # far from the ball and over a short horizon the flow is the shared shift
    ens = init_lattice(2, T8)
    snap = evolve_ensemble(ens, NoiseStream(3, 0, 1e-4), [0.01])[0]
    shift = snap.positions - ens.origin
    np.testing.assert_allclose(shift, np.broadcast_to(shift[0], shift.shape), atol=1e-12)
    np.testing.assert_allclose(shift[0], snap.drive, atol=1e-12)


def test_earthworm_frame():
    p = np.array([[1.5, 0.2, -3.0], [2.0, 2.0, 2.0]])
    np.testing.assert_array_equal(earthworm_frame(p, np.zeros(3), T4), canonicalize(p, T4))
    d = np.array([0.7, -9.1, 3.3])
    back = canonicalize(earthworm_frame(p, d, T4) + d, T4)
    np.testing.assert_allclose(back, p, atol=1e-12)


def test_corrected_volumes_sum():
    v = corrected_volumes(4, T2)
    assert v.sum() == pytest.approx(64 - 4 * math.pi / 3, rel=0.02)
    assert np.all(v >= 0)


def test_measure_conserves_mass(rng):
    p = rng.uniform(-4, 4, size=(500, 3))
    m = empirical_measure(p, 5, T4)
    assert m.counts.sum() == m.total == 500
    with pytest.raises(ValidationError):
        empirical_measure(p, 1, T4)


def test_uniform_sample_chi2(rng):
    from scipy import stats
    p = rng.uniform(-4, 4, size=(200000, 3))
    p = p[np.linalg.norm(p, axis=1) >= 1]
    m = empirical_measure(p, 4, T4)
    u = uniformity_metric(m)
    # midpoint volumes are approximate, so allow a loose quantile
    assert u["chi_square"] < stats.chi2.ppf(0.9999, u["dof"]) * 2
    assert u["tv_distance"] < 0.01


def test_tv_zero_for_exact_proportions():
    vol = corrected_volumes(3, T4)
    m = EmpiricalMeasure(3, vol / vol.sum() * 1e6, vol, 10**6, 4.0)
    assert uniformity_metric(m)["tv_distance"] == pytest.approx(0.0, abs=1e-12)


def test_tv_single_bin():
    vol = corrected_volumes(3, T4)
    counts = np.zeros((3, 3, 3))
    counts[0, 0, 0] = 10
    m = EmpiricalMeasure(3, counts, vol, 10, 4.0)
    assert uniformity_metric(m)["tv_distance"] == pytest.approx(1 - vol[0, 0, 0] / vol.sum())


@settings(max_examples=200)
@given(st.integers(2, 6), st.integers(0, 2**31))
def test_tv_in_unit_interval(n_bins, seed):
    p = np.random.default_rng(seed).uniform(-2, 2, size=(50, 3))
    u = uniformity_metric(empirical_measure(p, n_bins, T2))
    assert 0.0 <= u["tv_distance"] <= 1.0


def test_trend_diagnostic():
    d = trend_diagnostic([0, 1, 2, 3], [4.0, 3.0, 2.0, 1.0])
    assert d["spearman"] == pytest.approx(-1.0) and d["decreasing"]
    assert "random" in d["note"]


def test_pair_hist_identical_start():
    x = np.array([3.0, 0, 0])
    h = pair_distance_histogram(x, x, 10.0, NoiseStream(0, 0, 1e-3), T8)
    assert h.mass_below == pytest.approx(1.0)
    assert h.mass.sum() == pytest.approx(1.0)


def test_pair_hist_interior_single_bin():
    x, y = np.array([4.0, 4, 4]), np.array([4.0, 4.5, 4])
    h = pair_distance_histogram(x, y, 0.01, NoiseStream(0, 0, 1e-5), T8, burn_in=0.0)
    assert h.mass.sum() == pytest.approx(1.0)
    assert np.count_nonzero(h.mass) == 1
    assert h.mass[np.searchsorted(h.edges, 0.5) - 1] == pytest.approx(1.0)


def test_pair_hist_swap_symmetry():
    x, y = np.array([3.0, 0, 0]), np.array([3.0, 0.2, 0])
    a = pair_distance_histogram(x, y, 50.0, NoiseStream(4, 0, 1e-3), T8)
    b = pair_distance_histogram(y, x, 50.0, NoiseStream(4, 0, 1e-3), T8)
    np.testing.assert_allclose(a.mass, b.mass, atol=1e-12)


def test_pair_hist_rejects_bad_args():
    with pytest.raises(ValidationError):
        pair_distance_histogram([3.0, 0, 0], [3.0, 1, 0], 0.0, NoiseStream(0), T8)
    with pytest.raises(ValidationError):
        pair_distance_histogram([3.0, 0, 0], [3.0, 1, 0], 1.0, NoiseStream(0), T8, burn_in=1.0)


def test_csv_outputs(tmp_path):
    ens = init_lattice(2, T2)
    snap = evolve_ensemble(ens, NoiseStream(0, 0, 1e-3), [0.0])[0]
    write_snapshot_csv(tmp_path / "s.csv", snap)
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "particle_id,x,y,z,local_time" and len(rows) == 9
    write_measure_csv(tmp_path / "m.csv", empirical_measure(snap.positions, 2, T2))
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 9
