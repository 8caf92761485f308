"""Acceptance criteria 1-11, one test each, in order.

Criteria 7-9 run the shipped scenario configs at full size and take several
minutes each. Criterion 10 checks the trivial cap over every commutator
record produced in this module, so it runs last.
"""

import copy
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import X, random_hermitian
from lrlab.errors import GeometryError
from lrlab.harness import export, run_scenario
from lrlab.metrics import (
    BoundGeometry,
    BoundParams,
    ScanRecord,
    TimeProfile,
    commutator_profile,
    evaluate_bound,
    fit_lightcone,
    restriction_error,
)
from lrlab.models import DisorderSpec, Hamiltonian, PerturbationTerm, build_dual_pair, build_xxz, site_field
from lrlab.operators import GlobalOperator, Lattice, LocalOperator, SiteInterval, named_operator, pauli_twirl, restrict
from lrlab.proofchecks import embedded_generator, verify_commuting_factorization, verify_duhamel, verify_interaction_picture
from lrlab.propagation import Propagator

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
BUDGET = 15 * 60

# every commutator record produced in this module, for criterion 10
EMITTED: list[ScanRecord] = []


def load(name):
    return json.loads((CONFIGS / f"{name}.json").read_text())


def timed_run(cfg, workers=1):
    start = time.perf_counter()
    res = run_scenario(cfg, workers=workers)
    EMITTED.extend(r for r in res.records if r.kind == "commutator")
    return res, time.perf_counter() - start


@pytest.mark.criterion(1, "two-site closed form")
def test_criterion_01_two_site_closed_form(record_property):
    start = time.perf_counter()
    h = Hamiltonian(Lattice(2), [named_operator("zz", 0)])
    times = np.linspace(0.0, 3.0, 50)
    recs = commutator_profile(h, named_operator("x", 0), named_operator("x", 1), times)
    EMITTED.extend(recs)
    comm = max(abs(r.value - 2 * abs(math.sin(2 * r.t))) for r in recs)
    prop = Propagator(h)
    restr = max(abs(restriction_error(prop, named_operator("x", 0), 0, t).value - abs(math.sin(2 * t))) for t in times)
    elapsed = time.perf_counter() - start
    record_property("detail", f"commutator err {comm:.1e}, restriction err {restr:.1e}, {elapsed:.2f}s")
    assert comm <= 1e-10 and restr <= 1e-10
    assert elapsed < 1.0


@pytest.mark.criterion(2, "interaction-picture identity")
def test_criterion_02_interaction_picture(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    lat = Lattice(4)
    h = Hamiltonian(lat, [LocalOperator(lat.full, random_hermitian(16, rng))])
    drive = PerturbationTerm(SiteInterval(0, 0), lambda s: math.sin(s) * X, lambda s: abs(math.sin(s)))
    worst = max(verify_interaction_picture(h, drive, t, 1e-8).residual for t in (0.5, 1.0, 2.0))
    elapsed = time.perf_counter() - start
    record_property("detail", f"max residual {worst:.1e}, {elapsed:.1f}s")
    assert worst <= 1e-7
    assert elapsed < 60


@pytest.mark.criterion(3, "commuting factorization")
def test_criterion_03_commuting_factorization(record_property):
    start = time.perf_counter()
    lat = Lattice(6)
    left = [PerturbationTerm(SiteInterval(0, 0), lambda s: math.sin(s) * X, lambda s: 1.0), site_field("z", 1, 0.4)]
    right = [PerturbationTerm(SiteInterval(4, 5), lambda s: math.cos(2 * s) * np.kron(X, X), lambda s: 1.0)]
    g1, g2 = embedded_generator(left, lat), embedded_generator(right, lat)
    worst = max(verify_commuting_factorization(g1, g2, t, 1e-8).residual for t in (0.5, 1.0, 2.0))
    with pytest.raises(GeometryError):
        verify_commuting_factorization(g1, embedded_generator([site_field("x", 1)], lat), 1.0)
    elapsed = time.perf_counter() - start
    record_property("detail", f"max residual {worst:.1e}, guard rejected, {elapsed:.1f}s")
    assert worst <= 1e-7
    assert elapsed < 60


@pytest.mark.criterion(4, "Duhamel inequality")
def test_criterion_04_duhamel(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(4)
    failures = 0
    for _ in range(100):
        g, e = random_hermitian(4, rng), random_hermitian(4, rng)
        failures += not verify_duhamel(lambda s: g, lambda s: e, 1.0, 1e-9).passed
    analytic = verify_duhamel(lambda s: X, lambda s: np.zeros((2, 2)), math.pi, 1e-10)
    elapsed = time.perf_counter() - start
    record_property("detail", f"{failures}/100 failures, analytic {analytic.lhs:.6f} <= {analytic.rhs:.6f}, {elapsed:.1f}s")
    assert failures == 0
    assert analytic.passed and abs(analytic.lhs - 2) <= 1e-8 and abs(analytic.rhs - math.pi) <= 1e-9
    assert elapsed < 60


@pytest.mark.criterion(5, "twirl equals partial trace")
def test_criterion_05_twirl(record_property):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for k in range(20):
        n = 1 + k % 4
        lat = Lattice(n)
        lo = int(rng.integers(0, n))
        region = SiteInterval(lo, int(rng.integers(lo, n)))
        m = rng.normal(size=(lat.dim, lat.dim)) + 1j * rng.normal(size=(lat.dim, lat.dim))
        x = GlobalOperator(m / np.linalg.norm(m, 2), lat)
        worst = max(worst, float(np.abs(pauli_twirl(x, region).matrix - restrict(x, region).matrix).max()))
    elapsed = time.perf_counter() - start
    record_property("detail", f"max entry difference {worst:.1e}, {elapsed:.2f}s")
    assert worst <= 1e-12
    assert elapsed < 10


@pytest.mark.criterion(6, "dual-pair exactness")
def test_criterion_06_dual_pair(record_property):
    start = time.perf_counter()
    lat = Lattice(8)
    spec = DisorderSpec(SiteInterval(2, 5), 5.0, 6)
    worst = max(build_dual_pair(build_xxz(lat, 1.0), spec, r).identity_residual() for r in range(10))
    elapsed = time.perf_counter() - start
    record_property("detail", f"max residual {worst:.1e}, {elapsed:.2f}s")
    assert worst <= 1e-13
    assert elapsed < 10


@pytest.mark.slow
@pytest.mark.criterion(7, "lightcone fit and slow-dynamics bound")
def test_criterion_07_lightcone(record_property):
    recs = [
        ScanRecord("s", "commutator", 0, d, t, 0.7 * t * math.exp(-d / 1.3), SiteInterval(0, 0), SiteInterval(d, d))
        for d in range(1, 9)
        for t in (0.5, 1.0, 2.0, 5.0, 10.0)
    ]
    synth = fit_lightcone(recs)
    synth_err = max(abs(synth.K - 0.7), abs(synth.xi - 1.3), abs(synth.beta - 1.0))
    res, elapsed = timed_run(load("lightcone_xx"))
    (_, fit), = [(sid, f) for sid, f in res.fits if sid == res.config.scenario_id]
    (margin,) = res.margin_reports
    record_property(
        "detail",
        f"synthetic err {synth_err:.1e}; beta={fit.beta:.3f} K={fit.K:.3f} xi={fit.xi:.3f}; "
        f"{margin['n_violations']}/{margin['n_points']} violations; {elapsed:.0f}s",
    )
    assert synth_err <= 1e-6
    assert fit.beta <= 0.2
    assert margin["n_violations"] == 0
    assert elapsed <= BUDGET


@pytest.mark.slow
@pytest.mark.criterion(8, "single-perturbation bound, GOE grain")
def test_criterion_08_avalanche(record_property):
    res, elapsed = timed_run(load("avalanche_grain"))
    (margin,) = res.margin_reports
    params = res.provenance["bound_params"]
    record_property(
        "detail",
        f"reference K={params['K']:.3f} xi={params['xi']:.3f} beta={params['beta']:.3f}; "
        f"{margin['n_violations']}/{margin['n_points']} violations, "
        f"uninformative fraction {margin['uninformative_fraction']:.2f}; {elapsed:.0f}s",
    )
    assert margin["kind"] == "single"
    assert margin["n_violations"] == 0
    assert elapsed <= BUDGET


@pytest.mark.slow
@pytest.mark.criterion(9, "splitting bound")
def test_criterion_09_splitting(record_property):
    res, elapsed = timed_run(load("splitting"))
    reports = [p for p in res.proof_reports if p["name"].startswith("splitting")]
    failed = sum(p.get("n_failed", 0) for p in reports)
    runs = sum(p["n_runs"] for p in reports)
    record_property("detail", f"{failed}/{runs} failed; {elapsed:.0f}s")
    assert reports and all(p["passed"] for p in reports)
    assert failed == 0
    assert elapsed <= BUDGET


def reduced_suites():
    lightcone = load("lightcone_xx")
    lightcone["model"]["N"] = 8
    lightcone["disorder"]["n_realizations"] = 6
    lightcone["probes"]["B"]["distances"] = [2, 3, 4, 5, 6]
    avalanche = load("avalanche_grain")
    avalanche["model"]["N"] = 8
    avalanche["disorder"]["n_realizations"] = 4
    avalanche["probes"]["B"]["distances"] = [3, 4, 5]
    avalanche["analysis"]["reference"].update(n_realizations=3)
    avalanche["analysis"]["reference"]["probes"]["B"]["distances"] = [2, 3, 4, 5]
    splitting = load("splitting")
    splitting["model"]["N"] = 8
    splitting["perturbations"][1]["support"] = [7, 7]
    splitting["analysis"].update(cut=3, half_widths=[1, 2])
    splitting["disorder"]["n_realizations"] = 2
    splitting["analysis"]["reference"].update(n_realizations=2)
    splitting["analysis"]["reference"]["probes"]["B"]["distances"] = [2, 3, 4, 5]
    dual = {
        "scenario_id": "dual",
        "mode": "dual",
        "model": {"kind": "xxz", "N": 7, "delta": 1.0},
        "disorder": {"region": [2, 4], "W": 5.0, "base_seed": 3, "n_realizations": 3},
        "probes": {"A": {"op": "z", "site": 0}, "B": {"op": "z", "distances": [3, 4, 5, 6]}},
        "schedule": {"times": [0.5, 1.0]},
        "analysis": {"fit": False},
    }
    return {
        "lightcone": lightcone,
        "avalanche": avalanche,
        "proofcheck": splitting,
        "perturbed": load("adiabatic_field"),
        "dual": dual,
        "two_site": load("two_site_zz"),
    }


@pytest.mark.slow
@pytest.mark.criterion(10, "trivial cap and worker determinism")
def test_criterion_10_cap_and_determinism(record_property, tmp_path):
    mismatched = []
    for name, cfg in reduced_suites().items():
        payloads = []
        for workers in (1, 4, 8):
            res, _ = timed_run(copy.deepcopy(cfg), workers)
            out = tmp_path / f"{name}_{workers}"
            export(res, out, ["csv"])
            payloads.append([(out / f).read_bytes() for f in ("records.csv", "fits.csv", "averages.csv")])
        if not payloads[0] == payloads[1] == payloads[2]:
            mismatched.append(name)
    over = [r for r in EMITTED if r.value > r.cap + 1e-10]
    record_property(
        "detail",
        f"{len(EMITTED)} commutator records, {len(over)} above the cap; "
        f"{len(reduced_suites())} suites x workers 1/4/8, {len(mismatched)} byte mismatches",
    )
    assert not over
    assert not mismatched


@pytest.mark.criterion(11, "bound-evaluator arithmetic")
def test_criterion_11_bound_arithmetic(record_property):
    start = time.perf_counter()
    p = BoundParams(1.0, 1.0, 1.0, TimeProfile("power", 1.0))
    full = evaluate_bound("full", p, BoundGeometry(d=10, n=1), 1.0, 1.0)
    single = evaluate_bound("single", p, BoundGeometry(d=5), 2.0, 1.0)
    slow = evaluate_bound("single_slow", p, BoundGeometry(d=5), 2.0, 1.0)
    elapsed = time.perf_counter() - start
    record_property("detail", f"full {full:.6f}, single {single:.6f}, single_slow {slow:.6f}, {elapsed:.3f}s")
    assert abs(full - 10 * math.exp(-5)) <= 1e-12
    assert abs(single - 36 * math.exp(-5)) <= 1e-12
    assert abs(slow - 36 * math.exp(-5)) <= 1e-12
    assert elapsed < 1.0
