import math

import numpy as np
import pytest

from lrlab.errors import FitError, GeometryError, HorizonError, NormalizationError, ParameterError
from lrlab.metrics import (
    AveragedPoint,
    BoundGeometry,
    BoundParams,
    ScanRecord,
    TimeProfile,
    average_records,
    check_bound,
    commutator_profile,
    disorder_average,
    entanglement_entropy,
    evaluate_bound,
    fit_lightcone,
    restriction_error,
    t_max_horizon,
)
from lrlab.models import DisorderSpec, Hamiltonian, build_xxz, disordered_xxz, make_adiabatic, site_field
from lrlab.operators import Lattice, LocalOperator, SiteInterval, named_operator
from lrlab.propagation import Propagator

S = SiteInterval(0, 0)


def zz_pair():
    lat = Lattice(2)
    return Hamiltonian(lat, [named_operator("zz", 0)])


def synthetic(K, xi, beta, ds=range(1, 7), ts=(0.5, 1.0, 2.0, 4.0, 8.0), noise=None, rng=None):
    out = []
    for d in ds:
        for t in ts:
            v = K * t**beta * math.exp(-d / xi)
            if noise is not None:
                v *= rng.uniform(1 - noise, 1 + noise)
            out.append(ScanRecord("s", "commutator", 0, d, t, v, S, SiteInterval(d, d)))
    return out


def test_profile_zz_closed_form():
    times = np.linspace(0, 3, 13)
    recs = commutator_profile(zz_pair(), named_operator("x", 0), named_operator("x", 1), times)
    for r in recs:
        assert abs(r.value - 2 * abs(math.sin(2 * r.t))) <= 1e-12
        assert r.d == 1
        assert r.value <= r.cap + 1e-10
    assert recs[0].value == 0


def test_profile_quarter_period_saturates():
    (rec,) = commutator_profile(zz_pair(), named_operator("x", 0), named_operator("x", 1), [math.pi / 4])
    assert abs(rec.value - 2) <= 1e-12


def test_profile_respects_cap_and_time_zero(rng):
    lat = Lattice(6)
    h = disordered_xxz(lat, 0.5, DisorderSpec(lat.full, 1.0, 3), 0)
    a = LocalOperator(SiteInterval(0, 1), 3 * np.kron(np.eye(2), [[0, 1], [1, 0]]))
    bs = [named_operator("x", 3), named_operator("y", 5)]
    recs = commutator_profile(h, a, bs, [0.0, 0.5, 2.0, 7.0])
    assert all(r.value <= 2 * 3 * 1 + 1e-10 for r in recs)
    assert all(r.value == 0 for r in recs if r.t == 0)


def test_profile_with_driven_perturbation_matches_static_limit():
    lat = Lattice(5)
    h = disordered_xxz(lat, 0.0, DisorderSpec(lat.full, 2.0, 8), 0)
    a, b = named_operator("z", 0), named_operator("z", 4)
    static = commutator_profile(h, a, b, [1.5], [site_field("x", 2)])
    # a ramp already switched on before t behaves like the static field after it
    ramp = make_adiabatic(site_field("x", 2), 1e-9)
    driven = commutator_profile(h, a, b, [1.5], [ramp], tol=1e-10)
    assert abs(static[0].value - driven[0].value) <= 1e-7


def test_profile_free_region_guard():
    lat = Lattice(6)
    h = build_xxz(lat, 0.0)
    with pytest.raises(GeometryError):
        commutator_profile(h, named_operator("z", 0), named_operator("z", 5), [1.0], [site_field("x", 3)], free_region_n=1)
    commutator_profile(h, named_operator("z", 0), named_operator("z", 5), [1.0], [site_field("x", 3)], free_region_n=3)


def test_restriction_error_examples():
    h = zz_pair()
    prop = Propagator(h)
    a = named_operator("x", 0)
    for t in np.linspace(0, 2, 9):
        assert abs(restriction_error(prop, a, 0, t).value - abs(math.sin(2 * t))) <= 1e-12
        assert restriction_error(prop, a, 1, t).value <= 1e-14
    assert restriction_error(prop, a, 0, 0.0).value <= 1e-15


def test_restriction_error_nested_balls_within_factor_two():
    lat = Lattice(7)
    for seed in range(4):
        prop = Propagator(disordered_xxz(lat, 0.4, DisorderSpec(lat.full, 1.5, seed), 0))
        a = named_operator("x", 3)
        for t in (0.5, 2.0):
            errs = [restriction_error(prop, a, r, t).value for r in range(5)]
            assert all(e >= 0 for e in errs)
            assert all(e2 <= 2 * e1 + 1e-10 for e1, e2 in zip(errs, errs[1:]))
            assert errs[-1] <= 1e-13


def test_restriction_error_can_grow_with_radius():
    # the normalized partial trace is not contractive enough in operator norm
    # for the error to shrink with every extra site
    lat = Lattice(7)
    prop = Propagator(disordered_xxz(lat, 0.4, DisorderSpec(lat.full, 1.5, 1), 0))
    errs = [restriction_error(prop, named_operator("x", 3), r, 2.0).value for r in range(3)]
    assert errs[0] < errs[1] < errs[2]
    assert abs(errs[2] - 1.261286292843878) <= 1e-9


def test_evaluate_bound_full_example():
    p = BoundParams(1.0, 1.0, 1.0, TimeProfile("power", 1.0))
    got = evaluate_bound("full", p, BoundGeometry(d=10, n=1), 1.0, 1.0)
    assert abs(got - 10 * math.exp(-5)) <= 1e-12
    assert abs(got - 0.067379) <= 1e-6


def test_evaluate_bound_single_matches_closed_form():
    p = BoundParams(1.0, 1.0, 1.0, TimeProfile("power", 1.0))
    geo = BoundGeometry(d=5)
    single = evaluate_bound("single", p, geo, 2.0, 1.0)
    slow = evaluate_bound("single_slow", p, geo, 2.0, 1.0)
    assert abs(single - 36 * math.exp(-5)) <= 1e-12
    assert abs(slow - 36 * math.exp(-5)) <= 1e-12
    assert abs(single - 0.242566) <= 1e-6


def test_evaluate_bound_zero_time():
    p = BoundParams(2.0, 1.5, 1.0, TimeProfile("power", 0.7))
    for kind in ("slow", "full", "single", "splitting"):
        geo = BoundGeometry(d=3, n=1, half_width=2)
        assert evaluate_bound(kind, p, geo, 0.0, 1.0) == 0


def test_evaluate_bound_callable_envelope_uses_quadrature():
    p = BoundParams(1.0, 2.0, 1.0, TimeProfile("power", 0.5))
    got = evaluate_bound("splitting", p, BoundGeometry(half_width=3), 2.0, lambda s: 1 + s)
    # int_0^2 sqrt(s)(1+s) ds = (2/3) 2^1.5 + (2/5) 2^2.5
    integral = (2 / 3) * 2**1.5 + 0.4 * 2**2.5
    assert abs(got - 4 * 2.0 * math.exp(-1.5) * integral) <= 1e-11


def test_evaluate_bound_missing_geometry():
    p = BoundParams(1.0, 1.0)
    with pytest.raises(ParameterError):
        evaluate_bound("far", p, BoundGeometry(d=3), 1.0, 1.0)
    with pytest.raises(ParameterError):
        evaluate_bound("splitting", p, BoundGeometry(), 1.0, 1.0)
    with pytest.raises(ParameterError):
        evaluate_bound("nonsense", p, BoundGeometry(d=1), 1.0)


def test_bound_params_validation():
    with pytest.raises(ParameterError):
        BoundParams(0.0, 1.0)
    with pytest.raises(ParameterError):
        BoundParams(1.0, -1.0)
    with pytest.raises(ParameterError):
        BoundParams(1.0, 1.0, n=0.5)
    with pytest.raises(ParameterError):
        TimeProfile("power", -0.1)


def test_check_bound_vacuous_and_half():
    points = [AveragedPoint("commutator", d, t, 0.3, 0.01, 10) for d in (1, 2, 3) for t in (1.0, 2.0)]
    rep = check_bound(points, BoundParams(1e300, 1.0), "slow")
    assert rep.ok
    p = BoundParams(1.0, 1.0, 1.0, TimeProfile("power", 1.0))
    half = [AveragedPoint("commutator", d, t, 0.5 * t * math.exp(-d), 0.0, 10) for d in (1, 2) for t in (1.0, 3.0)]
    rep = check_bound(half, p, "slow")
    assert rep.ok
    assert abs(rep.min_relative_margin - 0.5) <= 1e-12


def test_check_bound_flags_violations_beyond_three_stderr():
    p = BoundParams(1.0, 1.0, 1.0, TimeProfile("constant"))
    rhs = math.exp(-2)
    inside = AveragedPoint("commutator", 2, 1.0, rhs + 2.9 * 0.01, 0.01, 5)
    outside = AveragedPoint("commutator", 2, 2.0, rhs + 3.1 * 0.01, 0.01, 5)
    rep = check_bound([inside, outside], p, "slow")
    assert [v["t"] for v in rep.violations] == [2.0]


def test_check_bound_uninformative_fraction():
    p = BoundParams(10.0, 1.0, 1.0, TimeProfile("constant"))
    pts = [AveragedPoint("commutator", d, 1.0, 0.0, 0.0, 2) for d in (1, 5)]
    # rhs 10 e^-1 > 2 at d=1, 10 e^-5 < 2 at d=5
    assert check_bound(pts, p, "slow").uninformative_fraction == 0.5


def test_disorder_average_examples(rng):
    single = disorder_average(lambda i: synthetic(1.0, 1.0, 0.0, ds=[1], ts=[1.0]), 1)[0]
    assert single[0].n == 1 and math.isnan(single[0].stderr)
    assert single[0].mean == math.exp(-1)
    same = disorder_average(lambda i: [ScanRecord("s", "commutator", i, 1, 1.0, 0.25, S, S)], 6)[0]
    assert same[0].stderr == 0 and same[0].mean == 0.25
    c = 0.4
    noisy = disorder_average(lambda i: [ScanRecord("s", "commutator", i, 2, 1.0, c + rng.normal(0, 0.05), S, S)], 400)[0]
    assert abs(noisy[0].mean - c) <= 3 * noisy[0].stderr
    with pytest.raises(ParameterError):
        disorder_average(lambda i: [], 0)


def test_average_is_order_independent(rng):
    recs = [ScanRecord("s", "commutator", i, 1, 1.0, float(v), S, S) for i, v in enumerate(rng.random(50))]
    a = average_records(recs)
    b = average_records(list(reversed(recs)))
    assert a == b


def test_fit_recovers_noiseless_parameters():
    fit = fit_lightcone(synthetic(0.7, 1.3, 1.0))
    assert abs(fit.K - 0.7) <= 1e-6 and abs(fit.xi - 1.3) <= 1e-6 and abs(fit.beta - 1.0) <= 1e-6
    assert fit.rms_log_residual <= 1e-10


def test_fit_flat_time_dependence():
    fit = fit_lightcone(synthetic(0.5, 2.0, 0.0))
    assert abs(fit.beta) <= 1e-9


def test_fit_with_multiplicative_noise(rng):
    fit = fit_lightcone(synthetic(0.7, 1.3, 1.0, noise=0.1, rng=rng))
    assert abs(fit.K / 0.7 - 1) <= 0.1
    assert abs(fit.xi / 1.3 - 1) <= 0.1
    assert abs(fit.beta - 1.0) <= 0.1


def test_fit_discards_noise_floor_and_needs_points():
    recs = synthetic(0.7, 1.3, 1.0)
    recs.append(ScanRecord("s", "commutator", 0, 40, 1.0, 1e-13, S, S))
    fit = fit_lightcone(recs)
    assert fit.n_discarded == 1
    with pytest.raises(FitError):
        fit_lightcone(synthetic(1.0, 1.0, 1.0, ds=[1, 2]))


def test_t_max_horizon():
    p = BoundParams(1.0, 1.0, 1.0, TimeProfile("power", 1.0))
    assert abs(t_max_horizon(p, 10, C=1.0) - math.exp(5)) <= 1e-9
    assert abs(t_max_horizon(p, 10, C=1.0) - 148.413159) <= 1e-6
    q = BoundParams(1.0, 1.0, 1.0, TimeProfile("power", 0.5))
    assert abs(t_max_horizon(q, 0, C=2.0) - 2.0 ** (-1 / 0.5)) <= 1e-15
    # doubling xi: t_max^beta goes from e^{d/2xi} to its square root
    wide = BoundParams(1.0, 2.0, 1.0, TimeProfile("power", 1.0))
    assert abs(t_max_horizon(wide, 10, C=1.0) - math.sqrt(t_max_horizon(p, 10, C=1.0))) <= 1e-9
    with pytest.raises(HorizonError):
        t_max_horizon(BoundParams(1.0, 1.0, 1.0, TimeProfile("constant")), 3)


def test_entanglement_entropy_examples():
    up = np.zeros(8)
    up[0] = 1
    assert entanglement_entropy(up, 0) == 0
    singlet = np.array([0, 1, -1, 0]) / math.sqrt(2)
    assert abs(entanglement_entropy(singlet, 0) - math.log(2)) <= 1e-12
    ghz = np.zeros(16)
    ghz[0] = ghz[15] = 1 / math.sqrt(2)
    for cut in range(3):
        assert abs(entanglement_entropy(ghz, cut) - math.log(2)) <= 1e-12
    with pytest.raises(NormalizationError):
        entanglement_entropy(2 * singlet, 0)


def test_entropy_bounded_by_smaller_factor(rng):
    psi = rng.normal(size=32) + 1j * rng.normal(size=32)
    psi /= np.linalg.norm(psi)
    for cut in range(4):
        assert 0 <= entanglement_entropy(psi, cut) <= math.log(2 ** min(cut + 1, 4 - cut)) + 1e-12


def test_scan_record_invariants():
    with pytest.raises(ValueError):
        ScanRecord("s", "commutator", 0, 1, 1.0, -0.1, S, S)
    with pytest.raises(ValueError):
        ScanRecord("s", "commutator", 0, 1, 1.0, 2.5, S, S, cap=2.0)
    with pytest.raises(ValueError):
        ScanRecord("s", "speed", 0, 1, 1.0, 0.1, S, S)
