"""Scenario execution: realizations in a process pool, reduced in index order.

Seeds: realization ``i`` draws its disorder from
``(base_seed, stream, i, site)`` and its grains from
``(base_seed, stream, i, GRAIN_SLOT + k)`` for perturbation ``k``. A sweep
runs value ``j`` on ``stream + j``. Nothing depends on which worker ran
which realization.
"""

from __future__ import annotations

import logging
import math
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Sequence

from lrlab import __version__
from lrlab.errors import ConfigError, FitError
from lrlab.harness.config import ScenarioConfig, config_hash, parse_config, set_path
from lrlab.metrics import (
    AveragedPoint,
    BoundGeometry,
    BoundParams,
    FitResult,
    ScanRecord,
    TimeProfile,
    average_records,
    check_bound,
    commutator_profile,
    fit_lightcone,
    restriction_error,
)
from lrlab.models import (
    DisorderSpec,
    Hamiltonian,
    PerturbationTerm,
    build_avalanche,
    build_dual_pair,
    build_goe_grain,
    build_xxz,
    field_operators,
    make_adiabatic,
    make_periodic,
    site_field,
)
from lrlab.operators import Lattice, LocalOperator, SiteInterval, distance, named_operator
from lrlab.proofchecks import (
    embedded_generator,
    verify_commuting_factorization,
    verify_duhamel,
    verify_interaction_picture,
    verify_restriction_equivalence,
    verify_splitting_bounds,
)
from lrlab.propagation import Propagator, classify_sides

log = logging.getLogger(__name__)

GRAIN_SLOT = 1_000_000
DUAL_TOLERANCE = 1e-13
SEED_SCHEME = (
    "disorder: SeedSequence(base_seed, stream, realization, site) -> Philox; "
    f"grain k: SeedSequence(base_seed, stream, realization, {GRAIN_SLOT} + k); "
    "sweep value j: stream + j"
)


@dataclass
class ResultSet:
    config: ScenarioConfig
    config_hash: str
    records: list[ScanRecord] = field(default_factory=list)
    averages: list[tuple[str, AveragedPoint]] = field(default_factory=list)
    fits: list[tuple[str, FitResult]] = field(default_factory=list)
    proof_reports: list[dict] = field(default_factory=list)
    margin_reports: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        margins = all(m["n_violations"] == 0 for m in self.margin_reports)
        return margins and all(p["passed"] for p in self.proof_reports)

    def records_of(self, scenario_id: str | None = None, kind: str | None = None) -> list[ScanRecord]:
        sid = self.config.scenario_id if scenario_id is None else scenario_id
        return [r for r in self.records if r.scenario_id == sid and (kind is None or r.kind == kind)]


def available_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


# --- model construction ---------------------------------------------------------


def build_model(cfg: ScenarioConfig, realization: int, region: tuple[int, int] | None = None) -> Hamiltonian:
    """Base Hamiltonian of one realization, disorder folded in."""
    m = cfg.model
    lat = Lattice(m.N, m.local_dim)
    if m.kind == "xxz":
        h = build_xxz(lat, m.delta, m.boundary, m.coupling)
    else:
        terms = []
        for op, site, coeff in m.terms:
            p = named_operator(op, site)
            terms.append(LocalOperator(p.support, coeff * p.matrix))
        h = Hamiltonian(lat, terms)
    dis = cfg.disorder
    if dis.W > 0:
        spec = DisorderSpec(SiteInterval(*(region or dis.region)), dis.W, dis.base_seed, dis.stream)
        h = h.plus(field_operators(spec, realization))
    return h


def grain_seed(cfg: ScenarioConfig, realization: int, k: int) -> list[int]:
    return [cfg.disorder.base_seed, cfg.disorder.stream, realization, GRAIN_SLOT + k]


def build_perturbations(cfg: ScenarioConfig, h_model: Hamiltonian, realization: int) -> list[PerturbationTerm]:
    out = []
    for k, p in enumerate(cfg.perturbations):
        region = SiteInterval(*p.support)

        def grain():
            g = build_goe_grain(
                region.size, seed=grain_seed(cfg, realization, k), sigma=p.sigma, normalized=p.normalized, lo=region.lo
            )
            return LocalOperator(g.support, p.strength * g.matrix)

        if p.kind == "field":
            term = site_field(p.axis, region.lo, p.strength)
        elif p.kind == "grain":
            term = PerturbationTerm.constant(grain(), label=f"grain{k}")
        elif p.kind == "avalanche":
            term = build_avalanche(h_model, region, grain())
        else:
            base = site_field(p.axis, region.lo, p.strength) if p.base == "field" else PerturbationTerm.constant(grain())
            if p.kind == "adiabatic":
                term = make_adiabatic(base, p.tau, p.ramp)
            else:
                term = make_periodic(base, p.period, p.waveform)
        out.append(term)
    return out


def _probe_a(cfg: ScenarioConfig, probes=None) -> LocalOperator:
    probes = probes or cfg.probes
    return named_operator(probes.a_op, probes.a_site)


def _probe_bs(probes) -> list[LocalOperator]:
    return [named_operator(probes.b_op, s) for s in probes.b_sites]


# --- per-realization work units ---------------------------------------------


def _reference_job(cfg: ScenarioConfig, realization: int) -> dict:
    ref = cfg.analysis.reference
    region = (0, cfg.model.N - 1) if cfg.mode == "dual" else None
    h = build_model(cfg, realization, region)
    records = commutator_profile(
        Propagator(h),
        _probe_a(cfg, ref.probes),
        _probe_bs(ref.probes),
        ref.times,
        scenario_id=f"{cfg.scenario_id}/reference",
        realization=realization,
    )
    return {"records": records}


def _main_job(cfg: ScenarioConfig, params: BoundParams | None, realization: int) -> dict:
    if cfg.mode == "proofcheck":
        return _proofcheck_job(cfg, params, realization)
    sid, times, tol = cfg.scenario_id, cfg.schedule.times, cfg.schedule.tol
    out: dict = {"records": []}
    if cfg.mode == "lightcone":
        h = build_model(cfg, realization)
        prop = Propagator(h)
        a = _probe_a(cfg)
        out["records"] = commutator_profile(prop, a, _probe_bs(cfg.probes), times, scenario_id=sid, realization=realization)
        if "restriction" in cfg.analysis.bounds:
            for t in times:
                out["records"].append(
                    restriction_error(prop, a, cfg.analysis.radius, t, scenario_id=sid, realization=realization)
                )
        return out
    if cfg.mode == "dual":
        clean = build_model(replace(cfg, disorder=replace(cfg.disorder, W=0.0)), realization)
        spec = DisorderSpec(SiteInterval(*cfg.disorder.region), cfg.disorder.W, cfg.disorder.base_seed, cfg.disorder.stream)
        pair = build_dual_pair(clean, spec, realization)
        out["dual_residual"] = pair.identity_residual()
        h, perts, a = pair.h_prime, list(pair.undo_terms), _probe_a(cfg)
    else:
        h = build_model(cfg, realization)
        perts = build_perturbations(cfg, h, realization)
        pr = cfg.probes
        a = perts[pr.a_perturbation] if pr.a_perturbation is not None else _probe_a(cfg)
    n_free = cfg.analysis.n if {"full", "far"} & set(cfg.analysis.bounds) else None
    out["records"] = commutator_profile(
        h,
        a,
        _probe_bs(cfg.probes),
        times,
        perts,
        scenario_id=sid,
        realization=realization,
        tol=tol,
        free_region_n=n_free,
    )
    return out


def _report_dict(report, realization: int) -> dict:
    d = report.to_dict()
    d["metadata"]["realization"] = realization
    return d


def _proofcheck_job(cfg: ScenarioConfig, params: BoundParams | None, realization: int) -> dict:
    an, sid, tol = cfg.analysis, cfg.scenario_id, cfg.schedule.tol
    h = build_model(cfg, realization)
    perts = build_perturbations(cfg, h, realization)
    prop = Propagator(h)
    lat = h.lattice
    reports, records = [], []
    times = list(cfg.schedule.times)
    split_reports = []
    if "splitting" in an.checks:
        flat = verify_splitting_bounds(prop, perts, an.cut, an.half_widths, times, params, tol, safety=an.safety)
        k = len(an.half_widths)
        split_reports = [flat[i * k : (i + 1) * k] for i in range(len(times))]
    for i, t in enumerate(times):
        if "interaction_picture" in an.checks and perts:
            reports.append(_report_dict(verify_interaction_picture(h, perts, t, tol), realization))
        if {"commuting_factorization", "duhamel"} & set(an.checks) and an.cut is not None:
            left, right = classify_sides(perts, an.cut, an.half_widths[0] if an.half_widths else 0)
            if left and right:
                g1, g2 = embedded_generator(left, lat), embedded_generator(right, lat)
                if "commuting_factorization" in an.checks:
                    reports.append(_report_dict(verify_commuting_factorization(g1, g2, t, tol), realization))
                if "duhamel" in an.checks:
                    rep = verify_duhamel(lambda s: g1(s) + g2(s), g1, t, tol)
                    reports.append(_report_dict(rep, realization))
        if "splitting" in an.checks:
            for w, rep in zip(an.half_widths, split_reports[i]):
                reports.append(_report_dict(rep, realization))
                free = SiteInterval(max(an.cut - w, 0), min(an.cut + w, lat.num_sites - 1))
                records.append(ScanRecord(sid, "splitting_error", realization, w, float(t), rep.lhs, free, free))
        if "restriction" in an.checks:
            a = _probe_a(cfg)
            rep = verify_restriction_equivalence(prop, a, an.radius, t, params, safety=an.safety)
            reports.append(_report_dict(rep, realization))
            part = rep.parts[0]
            region = SiteInterval(max(a.support.lo - an.radius, 0), min(a.support.hi + an.radius, lat.num_sites - 1))
            records.append(ScanRecord(sid, "restriction_error", realization, an.radius, float(t), part.lhs, a.support, region))
    return {"records": records, "reports": reports}


# --- orchestration -------------------------------------------------------------


def _map(fn: Callable, items: Sequence[int], workers: int) -> list:
    """``[fn(i) for i in items]``, possibly in worker processes; order is preserved."""
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    ctx = multiprocessing.get_context("forkserver")
    with ProcessPoolExecutor(max_workers=min(workers, len(items)), mp_context=ctx) as pool:
        return list(pool.map(fn, items))


def _params_from_config(cfg: ScenarioConfig) -> BoundParams | None:
    if cfg.analysis.params is None:
        return None
    K, xi, beta = cfg.analysis.params
    return BoundParams(K, xi, cfg.analysis.n, TimeProfile("power", beta))


def _fit(points: Sequence[AveragedPoint]) -> FitResult:
    return fit_lightcone([p for p in points if p.kind == "commutator"])


def _envelope(all_perts: Sequence[Sequence[PerturbationTerm]]):
    """Envelope dominating every perturbation of every realization."""
    flat = [p for perts in all_perts for p in perts]
    if not flat:
        return 0.0
    if all(p.static for p in flat):
        return max(p.envelope(0.0) for p in flat)
    return lambda s: max(p.envelope(s) for p in flat)


def _check_margins(cfg: ScenarioConfig, points, params: BoundParams, all_perts) -> list[dict]:
    an = cfg.analysis
    probes = cfg.probes
    scaled = params.with_safety(an.safety)
    out = []
    comm = [p for p in points if p.kind == "commutator"]
    if cfg.mode in ("lightcone", "dual"):
        for kind in an.bounds:
            if kind in ("base", "slow"):
                rep = check_bound(comm, scaled, kind, BoundGeometry())
            elif kind == "restriction":
                restr = [p for p in points if p.kind == "restriction_error"]
                rep = check_bound(restr, scaled, kind, BoundGeometry(), cap=2.0)
            else:
                continue
            out.append(rep)
    h_env = _envelope(all_perts)
    a_support = None
    if probes.a_site is not None:
        a_support = named_operator(probes.a_op, probes.a_site).support
    b_supports = [named_operator(probes.b_op, s).support for s in probes.b_sites]
    supports = {p.support for perts in all_perts for p in perts}

    def geometry_of(point: AveragedPoint) -> BoundGeometry:
        bs = [b for b in b_supports if a_support is None or distance(a_support, b) == point.d] or b_supports
        d_min = min((distance(s, b) for s in supports for b in bs), default=point.d)
        return BoundGeometry(d=point.d, n=an.n, d_min=d_min)

    for kind in an.bounds:
        if kind in ("full", "far"):
            out.append(check_bound(comm, scaled, kind, geometry_of, h_envelope=h_env))
        elif kind in ("single", "single_slow"):
            cap = 2 * h_env if not callable(h_env) else None
            out.append(check_bound(comm, scaled, kind, geometry_of, h_envelope=h_env, cap=cap))
    return [r.to_dict() for r in out]


def _validate_for_run(cfg: ScenarioConfig) -> None:
    an = cfg.analysis
    if {"single", "single_slow"} & set(an.bounds):
        if len(cfg.perturbations) != 1 or cfg.probes.a_perturbation is None:
            raise ConfigError("analysis.bounds", "the single-perturbation bound needs exactly one perturbation as probe A")
        if "single_slow" in an.bounds and cfg.perturbations[0].kind in ("adiabatic", "periodic"):
            raise ConfigError("analysis.bounds", "'single_slow' needs a static perturbation")
    if {"full", "far"} & set(an.bounds) and cfg.probes.a_perturbation is not None:
        raise ConfigError("probes.A", "the full and far bounds need a Pauli probe A")
    if "restriction" in an.bounds and an.radius is None:
        raise ConfigError("analysis.radius", "the restriction bound needs a radius")


def _aggregate_reports(reports: Sequence[dict]) -> list[dict]:
    by_name: dict[str, list[dict]] = {}
    for r in reports:
        by_name.setdefault(r["name"], []).append(r)
    out = []
    for name, group in by_name.items():

        def severity(r):
            if r.get("residual") is not None:
                return r["residual"] / r["tolerance"] if r["tolerance"] else r["residual"]
            if r.get("parts"):
                return max(severity(p) for p in r["parts"])
            rhs = r.get("rhs") or 0.0
            return (r["lhs"] / rhs) if rhs > 0 else (math.inf if r["lhs"] > 0 else 0.0)

        failures = [r for r in group if not r["passed"]]
        out.append(
            {
                "name": name,
                "passed": not failures,
                "n_runs": len(group),
                "n_failed": len(failures),
                "worst": max(group, key=severity),
                "failures": failures[:20],
            }
        )
    return out


def run_scenario(config: ScenarioConfig | dict, workers: int | None = None) -> ResultSet:
    """Run every realization of a scenario, then average, fit and check bounds."""
    cfg = config if isinstance(config, ScenarioConfig) else parse_config(config)
    if cfg.probes is not None:
        _validate_for_run(cfg)
    workers = available_workers() if workers is None else max(1, int(workers))
    start = time.perf_counter()
    h = config_hash(cfg)
    res = ResultSet(cfg, h)
    an = cfg.analysis
    n_real = cfg.disorder.n_realizations
    res.provenance = {
        "config_hash": h,
        "tool_version": __version__,
        "base_seed": cfg.disorder.base_seed,
        "stream": cfg.disorder.stream,
        "n_realizations": n_real,
        "seed_scheme": SEED_SCHEME,
    }

    params = _params_from_config(cfg)
    source = "config" if params is not None else None
    if an.reference is not None:
        ref_sid = f"{cfg.scenario_id}/reference"
        ref_out = _map(partial(_reference_job, cfg), range(an.reference.n_realizations), workers)
        ref_records = [r for o in ref_out for r in o["records"]]
        ref_points = average_records(ref_records)
        res.records.extend(ref_records)
        res.averages.extend((ref_sid, p) for p in ref_points)
        ref_fit = _fit(ref_points)
        res.fits.append((ref_sid, ref_fit))
        if params is None:
            params, source = ref_fit.to_params(an.n, an.fixed_beta), "reference"

    log.info("running %s: %d realizations on %d workers", cfg.scenario_id, n_real, workers)
    outs = _map(partial(_main_job, cfg, params), range(n_real), workers)
    records = [r for o in outs for r in o["records"]]
    points = average_records(records)
    res.records = records + res.records
    res.averages = [(cfg.scenario_id, p) for p in points] + res.averages

    if cfg.mode == "lightcone" and an.fit:
        try:
            fit = _fit(points)
        except FitError as exc:
            if params is None and an.bounds:
                raise
            res.provenance["fit_error"] = str(exc)
        else:
            res.fits.insert(0, (cfg.scenario_id, fit))
            if params is None:
                params, source = fit.to_params(an.n, an.fixed_beta), "fit"
    if an.bounds and params is None:
        raise ConfigError("analysis.params", "bounds were requested but no parameters are available")
    if params is not None:
        res.provenance["bound_params"] = {"K": params.K, "xi": params.xi, "beta": params.beta, "n": params.n, "source": source}

    if cfg.mode == "proofcheck":
        res.proof_reports = _aggregate_reports([r for o in outs for r in o["reports"]])
    else:
        if cfg.mode == "dual":
            worst = max(o["dual_residual"] for o in outs)
            res.proof_reports.append(
                {"name": "dual_identity", "passed": worst <= DUAL_TOLERANCE, "n_runs": n_real, "residual": worst,
                 "tolerance": DUAL_TOLERANCE}
            )
        if an.bounds:
            if cfg.mode == "dual":
                all_perts = [_dual_undo_terms(cfg, i) for i in range(n_real)]
            elif cfg.mode == "lightcone":
                all_perts = []
            else:
                all_perts = [build_perturbations(cfg, m, i) for i, m in ((i, build_model(cfg, i)) for i in range(n_real))]
            res.margin_reports = _check_margins(cfg, points, params, all_perts)
    res.wall_time = time.perf_counter() - start
    return res


def _dual_undo_terms(cfg: ScenarioConfig, realization: int) -> list[PerturbationTerm]:
    lo, hi = cfg.disorder.region
    spec = DisorderSpec(SiteInterval(lo, hi), cfg.disorder.W, cfg.disorder.base_seed, cfg.disorder.stream)
    outside = [j for j in range(cfg.model.N) if not lo <= j <= hi]
    return [PerturbationTerm.constant(-op) for op in field_operators(spec, realization, outside)]


def run_sweep(raw: dict, axis: str, values: Sequence, workers: int | None = None) -> list[ResultSet]:
    """One result set per value of the scalar at ``axis``; value ``j`` runs on disorder stream ``stream + j``."""
    values = list(values)
    if not values:
        return []
    set_path(raw, axis, values[0])
    base_stream = (raw.get("disorder") or {}).get("stream", 0)
    out = []
    for j, value in enumerate(values):
        variant = set_path(raw, axis, value)
        variant.setdefault("disorder", {})
        if variant["disorder"] is None:
            variant["disorder"] = {}
        variant["disorder"]["stream"] = base_stream + j
        res = run_scenario(parse_config(variant), workers)
        res.provenance["sweep"] = {"axis": axis, "value": value, "index": j, "stream": base_stream + j}
        out.append(res)
    return out
