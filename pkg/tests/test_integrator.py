import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collinear_nbody.core import PhaseState, SystemSpec
from collinear_nbody.errors import CollisionConfiguration, NonRegularizableEvent
from collinear_nbody.integrator import (
    BOUNCE,
    REGULARIZED,
    IntegratorOptions,
    derivative_field,
    energy,
    extend_by_symmetry,
    integrate,
    pair_data,
    pair_series,
    periodicity_check,
    radial_fall_time,
    radial_separation,
    start_state,
)

from conftest import solved

HEAD_ON = PhaseState(0.0, [-0.5, 0.5], [0.0, 0.0])
HEAD_ON_FALL = np.pi / 4  # half the period of a radial orbit with semi-major axis 1/2, k = 2


def test_derivative_field_unit_gap():
    d = derivative_field(PhaseState(0.0, [-0.5, 0.5], [0.0, 0.0]), [1, 1])
    np.testing.assert_array_equal(d.velocities, [1.0, -1.0])


def test_derivative_field_symmetric_pull():
    d = derivative_field(PhaseState(0.0, [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]), [1, 1, 1])
    assert d.velocities[1] == 0.0


def test_derivative_field_collision():
    with pytest.raises(CollisionConfiguration):
        derivative_field(PhaseState(0.0, [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]), [1, 1, 1])


@settings(max_examples=50)
@given(st.integers(2, 7), st.integers(0, 10**6))
def test_momentum_conservation(n, seed):
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.uniform(0.1, 2.0, n))
    m = rng.uniform(0.1, 5.0, n)
    a = derivative_field(PhaseState(0.0, x, np.zeros(n)), m).velocities
    assert abs(m @ a) < 1e-12 * np.sum(m * np.abs(a))


def test_options_validation():
    with pytest.raises(ValueError):
        IntegratorOptions(collision_mode="slide")
    with pytest.raises(ValueError):
        IntegratorOptions(rel_tol=0.0)
    with pytest.raises(ValueError):
        IntegratorOptions(switch_radius=-1.0)


def test_radial_fall_time_apocentre():
    # from rest at gap 1 with k = 2: a quarter of a radial ellipse, pi * sqrt(xi**3 / (8 k))
    assert radial_fall_time(1.0, -2.0, 2.0) == pytest.approx(np.pi * np.sqrt(1.0 / 16.0), rel=1e-12)


def test_radial_fall_time_parabolic():
    # zero energy: xi = (9 k / 2)**(1/3) t**(2/3)
    k, xi = 2.0, 0.3
    assert radial_fall_time(xi, 0.0, k) == pytest.approx(np.sqrt(2 * xi**3 / (9 * k)), rel=1e-12)


def test_radial_separation_inverts_fall_time():
    e, k = -0.7, 1.5
    for xi in (1e-4, 0.01, 0.5):
        assert radial_separation(radial_fall_time(xi, e, k), e, k, 1.0) == pytest.approx(xi, rel=1e-9)


@pytest.mark.parametrize("mode", [REGULARIZED, BOUNCE])
def test_head_on_bounce_is_time_reversal(mode):
    t = [0.25, 0.5, 0.7]
    mirror = [2 * HEAD_ON_FALL - s for s in t]
    traj = integrate(HEAD_ON, 2 * HEAD_ON_FALL, [1, 1], IntegratorOptions(collision_mode=mode), sample_times=t + mirror)
    times = traj.times

    def at(s):
        i = int(np.argmin(np.abs(times - s)))
        assert abs(times[i] - s) < 1e-12
        return traj.samples[i]

    for a, b in zip(t, mirror):
        pa, pb = at(a), at(b)
        np.testing.assert_allclose(pb.positions, pa.positions, atol=1e-8)
        np.testing.assert_allclose(pb.velocities, -pa.velocities, atol=1e-7)
    assert len(traj.events) == 1
    ev = traj.events[0]
    assert ev.time == pytest.approx(HEAD_ON_FALL, abs=1e-9)
    assert abs(ev.energy_after - ev.energy_before) < 1e-9
    assert ev.pre[0].s == ev.post[0].s
    assert abs(ev.pre[0].alpha - ev.post[0].alpha) < 1e-8
    assert ev.pre[0].alpha == pytest.approx(-1.0, rel=1e-6)  # mu * e = 1/2 * (-2 / 1), the total energy


def test_head_on_modes_agree():
    out = {}
    for mode in (REGULARIZED, BOUNCE):
        out[mode] = integrate(HEAD_ON, 1.3, [1, 1], IntegratorOptions(collision_mode=mode)).final
    np.testing.assert_allclose(out[REGULARIZED].positions, out[BOUNCE].positions, atol=1e-6)
    np.testing.assert_allclose(out[REGULARIZED].velocities, out[BOUNCE].velocities, atol=1e-6)


def test_requires_ordered_bodies_and_forward_time():
    with pytest.raises(CollisionConfiguration):
        integrate(PhaseState(0.0, [1.0, 0.0], [0.0, 0.0]), 1.0, [1, 1])
    with pytest.raises(ValueError):
        integrate(HEAD_ON, 0.0, [1, 1])


def test_collision_free_energy_drift():
    m = np.ones(3)
    s0 = PhaseState(0.0, [-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0])
    traj = integrate(s0, 1.0, m, sample_times=np.linspace(0, 1, 101)[1:-1])
    assert not traj.events
    e = np.array([energy(p.positions, p.velocities, m) for p in traj.samples])
    assert np.max(np.abs(e - e[0])) < 1e-9


@pytest.mark.parametrize("mode", [REGULARIZED, BOUNCE])
def test_single_binary_collision_matching(mode):
    m = np.ones(3)
    s0 = PhaseState(0.0, [-0.5, 0.5, 10.0], [0.0, 0.0, 0.0])
    traj = integrate(s0, 1.0, m, IntegratorOptions(collision_mode=mode), sample_times=np.linspace(0, 1, 201)[1:-1])
    assert len(traj.events) == 1
    ev = traj.events[0]
    assert ev.pairs == ((1, 2),)
    assert abs(ev.energy_after - ev.energy_before) < 1e-8
    ps = pair_series(traj, (1, 2))
    (tc, a_minus, a_plus), = ps.limits
    assert abs(a_minus - a_plus) < 1e-8
    assert set(ps.s.tolist()) == {1}
    # the sample-based estimate is only as good as the sampling
    (_, s_minus, s_plus), = ps.sampled_limits
    assert abs(s_minus - a_minus) < 1e-4 and abs(s_plus - a_plus) < 1e-4


def test_isolated_pair_alpha_constant():
    traj = integrate(HEAD_ON, 1.3, [1, 1], sample_times=np.linspace(0.05, 1.25, 25))
    ps = pair_series(traj, (1, 2))
    assert np.max(np.abs(ps.alpha - ps.alpha[0])) < 1e-6
    assert set(ps.s.tolist()) == {1}


def test_pair_data_values():
    d = pair_data(np.array([0.0, 2.0]), np.array([1.0, 0.0]), np.array([1.0, 3.0]), 0)
    mu = 0.75
    assert d.xi == 2.0 and d.s == 1
    assert d.alpha == pytest.approx(mu * (0.5 * 1.0 - 4.0 / 2.0))


def test_pair_series_rejects_non_adjacent():
    traj = integrate(PhaseState(0.0, [-1.0, 0.0, 1.0], [-1.0, 0.0, 1.0]), 0.1, np.ones(3))
    with pytest.raises(ValueError):
        pair_series(traj, (1, 3))


@pytest.mark.parametrize("mode", [REGULARIZED, BOUNCE])
def test_triple_collision_not_regularizable(mode):
    with pytest.raises(NonRegularizableEvent) as info:
        integrate(PhaseState(0.0, [-1.0, 0.0, 1.0], [0.0, 0.0, 0.0]), 3.0, np.ones(3), IntegratorOptions(collision_mode=mode))
    assert info.value.bodies == (1, 2, 3)
    assert 0.9 < info.value.time < 1.0


def test_extend_by_symmetry(schubart_plain):
    _, res = schubart_plain
    table = extend_by_symmetry(res.path)
    t, x, v = table.times, table.positions, table.velocities
    T = res.path.T
    assert t[-1] == 2 * T
    np.testing.assert_allclose(t + t[::-1], 2 * T, atol=1e-15)
    np.testing.assert_array_equal(x, x[:, ::-1])
    K = res.path.M
    np.testing.assert_array_equal(v[:, K - 1], -v[:, K + 1])
    np.testing.assert_array_equal(table.at(0.3)[0], table.at(0.3 + 2 * T)[0])


def test_start_state_needs_matching_coarse(schubart_plain):
    _, res = schubart_plain
    with pytest.raises(ValueError):
        start_state(res.path, res.stage_paths[0])


def test_energy_matches_action_derivative(schubart_plain):
    # A(T) ~ T**(1/3) on the orbit family, and dA/dT = -E
    spec, res = schubart_plain
    s0 = start_state(res.path, res.coarse_path)
    E = energy(s0.positions, s0.velocities, spec.sorted_masses)
    assert E == pytest.approx(-res.action.total / (3 * spec.half_period), rel=1e-4)


def test_schubart_periodicity(schubart_plain):
    spec, res = schubart_plain
    rep = periodicity_check(res.path, spec.sorted_masses, coarse=res.coarse_path)
    assert rep.defect < 1e-4
    assert rep.events == 2
    assert rep.table_supnorm < 1e-4
    assert rep.energy_drift < 1e-6


def test_periodicity_raw_node_start_is_second_order(schubart_plain):
    spec, res = schubart_plain
    d = [periodicity_check(p, spec.sorted_masses).defect for p in res.stage_paths[1:]]
    assert 3.0 < d[0] / d[1] < 5.0
    assert 3.0 < d[1] / d[2] < 5.0


def test_periodicity_frame_independent():
    spec_a, a = solved((1, 2, 3), sigma=(2, 3, 1))
    spec_b, b = solved((2, 3, 1))
    da = periodicity_check(a.path, spec_a.sorted_masses, coarse=a.coarse_path).defect
    db = periodicity_check(b.path, spec_b.sorted_masses, coarse=b.coarse_path).defect
    assert da == pytest.approx(db, rel=1e-6)


def test_periodicity_modes_agree(four_body):
    spec, res = four_body
    d = {}
    for mode in (REGULARIZED, BOUNCE):
        rep = periodicity_check(res.path, spec.sorted_masses, IntegratorOptions(collision_mode=mode), coarse=res.coarse_path)
        d[mode] = rep
    assert abs(d[REGULARIZED].defect - d[BOUNCE].defect) < 1e-5
    np.testing.assert_allclose(d[REGULARIZED].trajectory.final.positions, d[BOUNCE].trajectory.final.positions, atol=1e-6)
