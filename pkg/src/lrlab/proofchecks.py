"""Numerical checks of the individual steps behind the perturbed lightcone bound.

Each check returns a :class:`ProofCheckReport`. Identity checks compare a
residual with ``10 * tol``; inequality checks compare ``lhs`` with ``rhs``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from lrlab.errors import GeometryError, SizeError
from lrlab.metrics import BoundGeometry, BoundParams, evaluate_bound, restriction_error
from lrlab.models import Hamiltonian, PerturbationTerm
from lrlab.operators import (
    GlobalOperator,
    Lattice,
    LocalOperator,
    commutator_norm,
    distance,
    embed,
    named_operator,
    spectral_norm,
)
from lrlab.propagation import (
    DEFAULT_TOL,
    EvolvedOperator,
    Propagator,
    TimeOrderedEvolution,
    classify_sides,
    evolve_exact,
    evolve_time_ordered,
    interaction_factor,
    split_factors_many,
)

PROOF_MAX_SITES = 10
COMMUTE_THRESHOLD = 1e-12
SAFETY = 2.0


@dataclass(frozen=True)
class ProofCheckReport:
    name: str
    passed: bool
    tolerance: float
    residual: float | None = None
    lhs: float | None = None
    rhs: float | None = None
    metadata: dict = field(default_factory=dict)
    parts: tuple[ProofCheckReport, ...] = ()

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "passed": self.passed,
            "tolerance": self.tolerance,
            "residual": self.residual,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "metadata": dict(self.metadata),
        }
        if self.parts:
            out["parts"] = [p.to_dict() for p in self.parts]
        return out


def _identity_report(name, residual, tol, **meta) -> ProofCheckReport:
    return ProofCheckReport(name, bool(residual <= tol), tol, residual=float(residual), metadata=meta)


def _inequality_report(name, lhs, rhs, tol, **meta) -> ProofCheckReport:
    return ProofCheckReport(name, bool(lhs <= rhs + tol), tol, lhs=float(lhs), rhs=float(rhs), metadata=meta)


def _propagator(model) -> Propagator:
    return model if isinstance(model, Propagator) else Propagator(model)


def _guard_size(lattice: Lattice, max_sites: int) -> None:
    if lattice.num_sites > max_sites:
        raise SizeError(f"proof checks are limited to {max_sites} sites, got {lattice.num_sites}")


def _as_array(x) -> np.ndarray:
    return x.matrix if isinstance(x, GlobalOperator) else np.asarray(x)


def verify_interaction_picture(
    h_model: Hamiltonian,
    perturbations: PerturbationTerm | Sequence[PerturbationTerm],
    t: float,
    tol: float = DEFAULT_TOL,
    *,
    max_sites: int = PROOF_MAX_SITES,
) -> ProofCheckReport:
    """``|| V(t) - exp(-iHt) T ||`` with both sides integrated independently."""
    perts = [perturbations] if isinstance(perturbations, PerturbationTerm) else list(perturbations)
    _guard_size(h_model.lattice, max_sites)
    prop = Propagator(h_model)
    v = evolve_time_ordered(TimeOrderedEvolution.for_hamiltonian(h_model, perts), t, tol)
    factor = interaction_factor(prop, perts, t, tol)
    residual = spectral_norm(v - evolve_exact(prop, t) @ factor)
    return _identity_report("interaction_picture", residual, 10 * tol, t=t, n_perturbations=len(perts))


def commutation_defect(g1: Callable, g2: Callable, times: Sequence[float]) -> float:
    """``max ||[g1(s1), g2(s2)]||`` over all pairs of sample times."""
    a = [_as_array(g1(s)) for s in times]
    b = [_as_array(g2(s)) for s in times]
    worst = 0.0
    for x in a:
        for y in b:
            worst = max(worst, spectral_norm(x @ y - y @ x))
    return worst


def verify_commuting_factorization(
    g1: Callable,
    g2: Callable,
    t: float,
    tol: float = DEFAULT_TOL,
    *,
    sample_times: Sequence[float] | None = None,
) -> ProofCheckReport:
    """``|| T_{g1+g2}(t) - T_{g1}(t) T_{g2}(t) ||`` for generators that commute at all time pairs.

    Mutual commutation is checked first on ``sample_times`` (default: 9
    points on ``[0, t]``); a defect above 1e-12 raises ``GeometryError``.
    """
    times = np.linspace(0.0, t, 9) if sample_times is None else sample_times
    defect = commutation_defect(g1, g2, times)
    if defect > COMMUTE_THRESHOLD:
        raise GeometryError(f"generators do not commute on the sample grid (defect {defect:.3e})")

    def both(s):
        return _as_array(g1(s)) + _as_array(g2(s))

    def run(g):
        return evolve_time_ordered(TimeOrderedEvolution(lambda s: _as_array(g(s))), t, tol)

    t_sum = run(both)
    residual = spectral_norm(t_sum - run(g1) @ run(g2))
    return _identity_report("commuting_factorization", residual, 10 * tol, t=t, precondition_defect=defect)


def _simpson_integral(fn: Callable[[float], float], t: float, tol: float, max_level: int = 12) -> tuple[float, float]:
    """Composite Simpson on ``2**k + 1`` points, doubled until two levels agree to ``tol``."""
    if t == 0:
        return 0.0, 0.0
    n = 8
    xs = np.linspace(0.0, t, n + 1)
    ys = np.array([fn(x) for x in xs])
    prev = simpson(ys, x=xs)
    err = math.inf
    for _ in range(max_level):
        n *= 2
        xs = np.linspace(0.0, t, n + 1)
        new = np.array([fn(x) for x in xs[1::2]])
        full = np.empty(n + 1)
        full[0::2], full[1::2] = ys, new
        ys = full
        cur = simpson(ys, x=xs)
        err = abs(cur - prev)
        prev = cur
        if err <= tol:
            break
    return float(prev), float(err)


def verify_duhamel(g: Callable, e: Callable, t: float, tol: float = DEFAULT_TOL) -> ProofCheckReport:
    """``|| T_g(t) - T_e(t) || <= int_0^t || g(s) - e(s) || ds``.

    The allowance covers the integrator error of both factors and the
    Simpson quadrature error estimate.
    """
    tg = evolve_time_ordered(TimeOrderedEvolution(lambda s: _as_array(g(s))), t, tol)
    te = evolve_time_ordered(TimeOrderedEvolution(lambda s: _as_array(e(s))), t, tol)
    lhs = spectral_norm(_as_array(tg) - _as_array(te))
    rhs, quad_err = _simpson_integral(lambda s: spectral_norm(_as_array(g(s)) - _as_array(e(s))), t, tol)
    return _inequality_report("duhamel", lhs, rhs, 2 * tol + quad_err, t=t, quadrature_error=quad_err)


def max_envelope(perturbations: Sequence[PerturbationTerm]) -> Callable[[float], float]:
    """``s -> max_j h_max,j(s)``."""
    perts = list(perturbations)
    return lambda s: max((p.envelope(s) for p in perts), default=0.0)


def verify_splitting_bound(
    h_model: Hamiltonian | Propagator,
    perturbations: Sequence[PerturbationTerm],
    cut: int,
    half_width: int,
    t: float,
    fitted: BoundParams,
    tol: float = DEFAULT_TOL,
    *,
    safety: float = SAFETY,
    max_sites: int = PROOF_MAX_SITES,
) -> ProofCheckReport:
    """``|| T - T_hat T_bar || <= 4 (safety K) xi exp(-w/xi) int_0^t f h_max``.

    ``T`` is exact for static perturbations and integrated otherwise;
    ``T_hat``/``T_bar`` come from :func:`split_factors`.
    """
    return verify_splitting_bounds(
        h_model, perturbations, cut, [half_width], [t], fitted, tol, safety=safety, max_sites=max_sites
    )[0]


def verify_splitting_bounds(
    h_model: Hamiltonian | Propagator,
    perturbations: Sequence[PerturbationTerm],
    cut: int,
    half_widths: Sequence[int],
    times: Sequence[float],
    fitted: BoundParams,
    tol: float = DEFAULT_TOL,
    *,
    safety: float = SAFETY,
    max_sites: int = PROOF_MAX_SITES,
) -> list[ProofCheckReport]:
    """:func:`verify_splitting_bound` over a grid, ordered by time then half width.

    Half widths that sort the perturbations into the same two groups share
    their factors, and the factors for all times come from one integration.
    """
    prop = _propagator(h_model)
    _guard_size(prop.lattice, max_sites)
    perts = list(perturbations)
    times = [float(t) for t in times]
    groups: dict[tuple, list[int]] = {}
    for w in half_widths:
        left, right = classify_sides(perts, cut, w)
        groups.setdefault((tuple(map(id, left)), tuple(map(id, right))), []).append(w)
    full = [interaction_factor(prop, perts, t, tol, method="auto") for t in times] if perts else None
    lhs: dict[tuple[int, int], tuple[float, float]] = {}
    for ws in groups.values():
        factors = split_factors_many(prop, perts, cut, ws[0], times, tol)
        for i, (t_hat, t_bar) in enumerate(factors):
            product = t_hat @ t_bar
            # Frobenius norm bounds the spectral one; the factors commute by construction
            commute = float(np.linalg.norm((product - t_bar @ t_hat).matrix))
            if commute > COMMUTE_THRESHOLD:
                raise GeometryError(f"split factors do not commute (defect {commute:.3e})")
            value = spectral_norm(full[i] - product) if perts else 0.0
            for w in ws:
                lhs[i, w] = (value, commute)
    env = max_envelope(perts)
    scaled = fitted.with_safety(safety)
    reports = []
    for i, t in enumerate(times):
        for w in half_widths:
            value, commute = lhs[i, w]
            rhs = evaluate_bound("splitting", scaled, BoundGeometry(half_width=w), t, env)
            reports.append(
                _inequality_report(
                    "splitting_bound", value, rhs, 0.0, t=t, cut=cut, half_width=w, split_commutator=commute, safety=safety
                )
            )
    return reports


def verify_restriction_equivalence(
    h_model: Hamiltonian | Propagator,
    a: LocalOperator,
    radius: int,
    t: float,
    fitted: BoundParams,
    b: LocalOperator | None = None,
    *,
    safety: float = SAFETY,
    max_sites: int = PROOF_MAX_SITES,
) -> ProofCheckReport:
    """Both directions linking restriction errors and commutator bounds.

    (i) ``||A(t) - A(t)_ball|| <= safety K |A| f(t) exp(-radius/xi)``.
    (ii) for ``B`` outside the ball, ``||[A(t), B]|| <= 2 |B| ||A(t) - A(t)_ball||``,
    since the restricted part commutes with ``B``. The default ``B`` is
    ``Z`` on the first site right of the ball (left if that falls off the chain).
    """
    prop = _propagator(h_model)
    lat = prop.lattice
    _guard_size(lat, max_sites)
    at = EvolvedOperator(prop, embed(a, lat))(t)
    err = restriction_error(prop, a, radius, t, evolved=at).value
    rhs_i = evaluate_bound("restriction", fitted.with_safety(safety), BoundGeometry(d=radius, norm_a=a.norm), t)
    part_i = _inequality_report("restriction_bound", err, rhs_i, 0.0, radius=radius, t=t)
    parts = [part_i]
    if b is None:
        right, left = a.support.hi + radius + 1, a.support.lo - radius - 1
        if right < lat.num_sites:
            b = named_operator("z", right)
        elif left >= 0:
            b = named_operator("z", left)
    if b is not None:
        if distance(a.support, b.support) <= radius:
            raise GeometryError(f"B on {b.support} lies inside the radius-{radius} ball around {a.support}")
        comm = commutator_norm(at, embed(b, lat))
        parts.append(
            _inequality_report(
                "commutator_from_restriction", comm, 2 * b.norm * err, 1e-12, d=distance(a.support, b.support), t=t
            )
        )
    return ProofCheckReport(
        "restriction_equivalence",
        all(p.passed for p in parts),
        0.0,
        metadata={"radius": radius, "t": t, "safety": safety},
        parts=tuple(parts),
    )


def run_all_checks(
    h_model: Hamiltonian,
    perturbations: Sequence[PerturbationTerm],
    *,
    a: LocalOperator,
    cut: int,
    half_width: int,
    radius: int,
    t: float,
    fitted: BoundParams,
    tol: float = DEFAULT_TOL,
) -> list[ProofCheckReport]:
    """The model-level checks on one scenario, in a fixed order."""
    prop = Propagator(h_model)
    reports = [verify_interaction_picture(h_model, perturbations, t, tol)]
    lat = h_model.lattice
    left = [p for p in perturbations if p.support.hi < cut - half_width]
    right = [p for p in perturbations if p.support.lo > cut + half_width]
    if left and right:
        g1 = embedded_generator(left, lat)
        g2 = embedded_generator(right, lat)
        reports.append(verify_commuting_factorization(g1, g2, t, tol))
        reports.append(verify_duhamel(lambda s: g1(s) + g2(s), g1, t, tol))
    reports.append(verify_splitting_bound(prop, perturbations, cut, half_width, t, fitted, tol))
    reports.append(verify_restriction_equivalence(prop, a, radius, t, fitted))
    return reports


def embedded_generator(perturbations: Sequence[PerturbationTerm], lattice: Lattice) -> Callable:
    """``s -> sum_j h_j(s)`` as a dense matrix on the whole chain."""

    def gen(s):
        return sum(embed(p.at(s), lattice).matrix for p in perturbations)

    return gen
