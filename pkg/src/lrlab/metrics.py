"""Lightcone measurements, bound evaluators and lightcone fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.integrate import quad

from lrlab.errors import FitError, GeometryError, HorizonError, NormalizationError, ParameterError
from lrlab.models import Hamiltonian, PerturbationTerm
from lrlab.operators import (
    GlobalOperator,
    LocalOperator,
    SiteInterval,
    ball,
    commutator_norm,
    diagonal_commutator_norms,
    distance,
    embed,
    embedded_diagonal,
    restrict,
    spectral_norm,
)
from lrlab.propagation import (
    DEFAULT_TOL,
    EvolvedOperator,
    Propagator,
    TimeOrderedEvolution,
    evolve_time_ordered,
)

NOISE_FLOOR = 1e-12
CAP_SLACK = 1e-10
RECORD_KINDS = ("commutator", "restriction_error", "splitting_error", "entropy")


@dataclass(frozen=True)
class TimeProfile:
    """The non-decreasing time factor ``f(t)`` of a lightcone bound.

    ``power``: ``t**beta``; ``exponential``: ``exp(v t / xi)``;
    ``constant``: ``1``.
    """

    kind: str = "power"
    beta: float = 1.0
    v: float = 0.0

    def __post_init__(self):
        if self.kind not in ("power", "exponential", "constant"):
            raise ParameterError(f"unknown time profile {self.kind!r}")
        if self.kind == "power" and self.beta < 0:
            raise ParameterError("a power-law profile needs beta >= 0 to be non-decreasing")
        if self.kind == "exponential" and self.v < 0:
            raise ParameterError("an exponential profile needs v >= 0 to be non-decreasing")

    def __call__(self, t: float, xi: float = 1.0) -> float:
        if self.kind == "power":
            return 1.0 if self.beta == 0 else float(t) ** self.beta
        if self.kind == "exponential":
            return math.exp(self.v * t / xi)
        return 1.0


@dataclass(frozen=True)
class BoundParams:
    K: float
    xi: float
    n: float = 1.0
    f_shape: TimeProfile = field(default_factory=TimeProfile)

    def __post_init__(self):
        if not self.K > 0:
            raise ParameterError(f"K must be positive, got {self.K}")
        if not self.xi > 0:
            raise ParameterError(f"xi must be positive, got {self.xi}")
        if self.n < 1:
            raise ParameterError(f"n must be >= 1, got {self.n}")

    def f(self, t: float) -> float:
        return self.f_shape(t, self.xi)

    def with_safety(self, factor: float) -> BoundParams:
        return replace(self, K=self.K * factor)

    @property
    def beta(self) -> float:
        if self.f_shape.kind == "power":
            return self.f_shape.beta
        if self.f_shape.kind == "constant":
            return 0.0
        raise HorizonError("beta is only defined for power-law or constant profiles")


@dataclass(frozen=True)
class ScanRecord:
    scenario_id: str
    kind: str
    realization: int
    d: int
    t: float
    value: float
    a_support: SiteInterval
    b_support: SiteInterval
    cap: float = math.inf

    def __post_init__(self):
        if self.kind not in RECORD_KINDS:
            raise ValueError(f"unknown record kind {self.kind!r}")
        if not self.value >= 0:
            raise ValueError(f"record value must be >= 0, got {self.value}")
        if self.kind == "commutator" and self.value > self.cap + CAP_SLACK:
            raise ValueError(f"commutator {self.value} exceeds the trivial cap {self.cap}")


@dataclass(frozen=True)
class AveragedPoint:
    kind: str
    d: int
    t: float
    mean: float
    stderr: float
    n: int

    @property
    def value(self) -> float:
        return self.mean


@dataclass(frozen=True)
class FitResult:
    K: float
    xi: float
    beta: float
    rms_log_residual: float
    n_points: int
    n_discarded: int

    def to_params(self, n: float = 1.0, fixed_beta: float | None = None) -> BoundParams:
        beta = self.beta if fixed_beta is None else fixed_beta
        return BoundParams(self.K, self.xi, n, TimeProfile("power", max(beta, 0.0)))


@dataclass(frozen=True)
class BoundGeometry:
    """Geometric inputs of the bound right-hand sides.

    ``d`` is ``dist(A, B)`` (or ``dist(h, B)``, or the restriction radius);
    ``d_min`` is the smallest perturbation-to-B distance; ``half_width`` the
    half width of the free region for the splitting estimate.
    """

    d: float | None = None
    norm_a: float = 1.0
    norm_b: float = 1.0
    n: float | None = None
    d_min: float | None = None
    half_width: float | None = None


def _as_envelope(h) -> Callable[[float], float] | None:
    if h is None or callable(h):
        return h
    value = float(h)
    return lambda s: value


def envelope_integral(params: BoundParams, h_envelope, t: float) -> float:
    """``int_0^t f(s) h_max(s) ds``."""
    if t <= 0:
        return 0.0
    if not callable(h_envelope):
        h = float(h_envelope)
        shape = params.f_shape
        if shape.kind == "constant" or (shape.kind == "power" and shape.beta == 0):
            return h * t
        if shape.kind == "power":
            return h * t ** (shape.beta + 1) / (shape.beta + 1)
        v = shape.v / params.xi
        return h * t if v == 0 else h * math.expm1(v * t) / v
    value, _ = quad(lambda s: params.f(s) * h_envelope(s), 0.0, t, epsabs=1e-15, epsrel=1e-13, limit=200)
    return float(value)


def _need(geometry: BoundGeometry, name: str, kind: str):
    value = getattr(geometry, name)
    if value is None:
        raise ParameterError(f"bound kind {kind!r} needs geometry.{name}")
    return value


BOUND_KINDS = ("base", "slow", "restriction", "full", "far", "single", "single_slow", "splitting")


def evaluate_bound(kind: str, params: BoundParams, geometry: BoundGeometry, t: float, h_envelope=None) -> float:
    """Right-hand side of one of the lightcone inequalities at time ``t``.

    kinds
    -----
    ``base``/``slow``
        ``K |A| |B| f(t) exp(-d/xi)`` (``slow`` is the power-law case).
    ``restriction``
        ``K |A| f(t) exp(-d/xi)`` with ``d`` the restriction radius.
    ``full``
        ``2K|A||B| exp(-(1-1/2n) d/xi) f(t) + 16 K|A||B| xi exp(-d/(2n xi)) I(t)``.
    ``far``
        ``2K|A||B| exp(-d/xi) f(t) + 16 K|A||B| xi exp(-d_min/xi) I(t)``.
    ``single``
        ``2K h(t)|B| exp(-d/xi) f(t) + 16 K h(t)|B| exp(-d/xi) I(t)``.
    ``single_slow``
        ``2K h|B| exp(-d/xi) (t^beta + 8 h t^(beta+1)/(beta+1))`` for constant ``h``.
    ``splitting``
        ``4 K xi exp(-w/xi) I(t)``.

    Here ``I(t) = int_0^t f(s) h_max(s) ds``.
    """
    if kind not in BOUND_KINDS:
        raise ParameterError(f"unknown bound kind {kind!r}")
    K, xi = params.K, params.xi
    a, b = geometry.norm_a, geometry.norm_b
    if kind == "splitting":
        w = _need(geometry, "half_width", kind)
        if h_envelope is None:
            raise ParameterError("bound kind 'splitting' needs h_envelope")
        return 4 * K * xi * math.exp(-w / xi) * envelope_integral(params, h_envelope, t)
    d = _need(geometry, "d", kind)
    if kind in ("base", "slow"):
        return K * a * b * params.f(t) * math.exp(-d / xi)
    if kind == "restriction":
        return K * a * params.f(t) * math.exp(-d / xi)
    if h_envelope is None:
        raise ParameterError(f"bound kind {kind!r} needs h_envelope")
    if kind == "single_slow":
        if callable(h_envelope):
            raise ParameterError("'single_slow' is the closed form for a constant h_max")
        h = float(h_envelope)
        beta = params.beta
        return 2 * K * h * b * math.exp(-d / xi) * (t**beta + 8 * h * t ** (beta + 1) / (beta + 1))
    integral = envelope_integral(params, h_envelope, t)
    if kind == "full":
        n = geometry.n if geometry.n is not None else params.n
        first = 2 * K * a * b * math.exp(-(1 - 1 / (2 * n)) * d / xi) * params.f(t)
        return first + 16 * K * a * b * xi * math.exp(-d / (2 * n * xi)) * integral
    if kind == "far":
        d_min = _need(geometry, "d_min", kind)
        return 2 * K * a * b * math.exp(-d / xi) * params.f(t) + 16 * K * a * b * xi * math.exp(-d_min / xi) * integral
    # single
    h_t = _as_envelope(h_envelope)(t)
    return 2 * K * h_t * b * math.exp(-d / xi) * (params.f(t) + 8 * integral)


@dataclass(frozen=True)
class MarginReport:
    kind: str
    n_points: int
    violations: tuple[dict, ...]
    min_relative_margin: float
    uninformative_fraction: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n_points": self.n_points,
            "n_violations": len(self.violations),
            "violations": list(self.violations),
            "min_relative_margin": self.min_relative_margin,
            "uninformative_fraction": self.uninformative_fraction,
        }


def check_bound(
    points: Sequence[AveragedPoint],
    params: BoundParams,
    kind: str,
    geometry: BoundGeometry | Callable[[AveragedPoint], BoundGeometry] | None = None,
    *,
    h_envelope=None,
    cap: float | None = None,
) -> MarginReport:
    """Compare averaged measurements with a bound, cell by cell.

    A cell violates the bound when ``rhs - mean < -3 stderr`` (a missing
    stderr counts as zero). ``cap`` is the trivial ceiling ``2|A||B|``;
    cells where the bound exceeds it are reported as uninformative.
    ``geometry`` may be a callable returning the geometry of each point;
    otherwise its ``d`` is replaced by the point's distance.
    """
    geometry = geometry or BoundGeometry()
    violations = []
    rel = []
    above_cap = 0
    for p in points:
        geo = geometry(p) if callable(geometry) else replace(geometry, d=p.d)
        ceiling = 2 * geo.norm_a * geo.norm_b if cap is None else cap
        rhs = evaluate_bound(kind, params, geo, p.t, h_envelope)
        se = 0.0 if not np.isfinite(p.stderr) else p.stderr
        margin = rhs - p.mean
        if margin < -3 * se:
            violations.append({"d": p.d, "t": p.t, "mean": p.mean, "stderr": p.stderr, "rhs": rhs})
        if rhs > 0:
            rel.append(margin / rhs)
        if rhs > ceiling:
            above_cap += 1
    n = len(points)
    return MarginReport(
        kind=kind,
        n_points=n,
        violations=tuple(violations),
        min_relative_margin=min(rel) if rel else math.nan,
        uninformative_fraction=above_cap / n if n else math.nan,
    )


def commutator_profile(
    model: Hamiltonian | Propagator,
    a: LocalOperator | PerturbationTerm,
    b: LocalOperator | Sequence[LocalOperator],
    times: Iterable[float],
    perturbations: Sequence[PerturbationTerm] | None = None,
    *,
    scenario_id: str = "",
    realization: int = 0,
    tol: float = DEFAULT_TOL,
    free_region_n: float | None = None,
) -> list[ScanRecord]:
    """``|| [W(t)^dag A W(t), B] ||`` for every time and every probe ``B``.

    ``W`` is ``exp(-iHt)`` without perturbations, the exact propagator of
    ``H + sum h`` for static perturbations, and the time-ordered evolution
    otherwise. ``a`` may itself be a perturbation term (evaluated at ``t``).
    With ``free_region_n`` the perturbations must leave a free stretch of
    at least ``dist(A, B) / n`` between every pair ``A, B``.
    """
    bs = [b] if isinstance(b, LocalOperator) else list(b)
    perturbations = list(perturbations or [])
    if isinstance(model, Propagator):
        if perturbations:
            raise ValueError("pass a Hamiltonian, not a Propagator, when perturbations are present")
        prop, lattice, base = model, model.lattice, None
    else:
        prop, lattice, base = None, model.lattice, model
    if free_region_n is not None:
        for bo in bs:
            check_free_region(a.support, bo.support, perturbations, free_region_n)
    probes = [(bo, embedded_diagonal(bo, lattice), bo.norm) for bo in bs]
    dense_b: dict[int, GlobalOperator] = {}

    def b_global(k):
        if k not in dense_b:
            dense_b[k] = embed(bs[k], lattice)
        return dense_b[k]

    if prop is None and all(p.static for p in perturbations):
        prop = Propagator(base.plus([p.at(0.0) for p in perturbations]) if perturbations else base)
    frozen_a = isinstance(a, LocalOperator) or a.static
    evolved = EvolvedOperator(prop, a if isinstance(a, LocalOperator) else a.at(0.0)) if prop and frozen_a else None
    records = []
    for t in times:
        a_now = a if isinstance(a, LocalOperator) else a.at(t)
        a_norm = a_now.norm if isinstance(a, LocalOperator) else a.envelope(t)
        blocks = at = None
        if evolved is not None:
            blocks = evolved.blocks_at(t)
        elif prop is not None:
            at = EvolvedOperator(prop, a_now)(t)
        else:
            v = evolve_time_ordered(TimeOrderedEvolution.for_hamiltonian(base, perturbations), t, tol)
            at = v.dagger() @ embed(a_now, lattice) @ v
        fast = [k for k, (_, diag, _) in enumerate(probes) if blocks is not None and diag is not None]
        fast_values = dict(zip(fast, diagonal_commutator_norms(blocks, [probes[k][1] for k in fast]) if fast else []))
        for k, (bo, diag, b_norm) in enumerate(probes):
            if t == 0 and distance(a.support, bo.support) > 0:
                # A(0) = A; skip the round-off of a reconstructed evolution
                value = 0.0
            elif k in fast_values:
                value = fast_values[k]
            else:
                if at is None:
                    at = evolved(t)
                value = commutator_norm(at, b_global(k))
            records.append(
                ScanRecord(
                    scenario_id,
                    "commutator",
                    realization,
                    distance(a.support, bo.support),
                    float(t),
                    value,
                    a.support,
                    bo.support,
                    cap=2 * a_norm * b_norm,
                )
            )
    return records


def free_region_size(a: SiteInterval, b: SiteInterval, perturbations: Sequence[PerturbationTerm]) -> int:
    """Length of the longest perturbation-free stretch between ``a`` and ``b``.

    Measured like ``distance``: with nothing in between it equals
    ``dist(a, b)``.
    """
    left, right = (a, b) if a.lo <= b.lo else (b, a)
    walls = [left.hi, right.lo]
    for p in perturbations:
        lo, hi = max(p.support.lo, left.hi), min(p.support.hi, right.lo)
        if lo <= hi:
            walls.extend([lo, hi])
    walls.sort()
    return max((hi - lo for lo, hi in zip(walls, walls[1:])), default=0)


def check_free_region(a: SiteInterval, b: SiteInterval, perturbations: Sequence[PerturbationTerm], n: float) -> int:
    size = free_region_size(a, b, perturbations)
    if size < distance(a, b) / n:
        raise GeometryError(f"free region of size {size} between {a} and {b} is smaller than dist/n = {distance(a, b) / n:g}")
    return size


def restriction_error(
    prop: Propagator,
    a: LocalOperator,
    radius: int,
    t: float,
    *,
    scenario_id: str = "",
    realization: int = 0,
    evolved: GlobalOperator | None = None,
) -> ScanRecord:
    """``|| A(t) - (A(t))_{B_radius(A)} ||`` with the ball clipped to the chain."""
    lat = prop.lattice
    region = ball(a.support, radius, lat)
    at = evolved if evolved is not None else EvolvedOperator(prop, embed(a, lat))(t)
    value = spectral_norm(at - restrict(at, region))
    return ScanRecord(scenario_id, "restriction_error", realization, radius, float(t), value, a.support, region)


def average_records(records: Iterable[ScanRecord]) -> list[AveragedPoint]:
    """Sample mean and standard error per ``(kind, d, t)`` cell.

    Values are reduced in realization order, so the result does not depend
    on the order in which records were produced. A single sample has an
    undefined (NaN) standard error.
    """
    cells: dict[tuple, list[tuple[int, float]]] = {}
    for r in records:
        cells.setdefault((r.kind, r.d, r.t), []).append((r.realization, r.value))
    out = []
    for (kind, d, t) in sorted(cells):
        vals = np.array([v for _, v in sorted(cells[(kind, d, t)])])
        n = vals.size
        mean = math.fsum(vals) / n
        if n > 1:
            var = math.fsum((vals - mean) ** 2) / (n - 1)
            se = math.sqrt(var / n)
        else:
            se = math.nan
        out.append(AveragedPoint(kind, d, t, mean, se, n))
    return out


def disorder_average(
    scenario: Callable[[int], list[ScanRecord]],
    n_realizations: int,
    statistic: str = "mean",
) -> tuple[list[AveragedPoint], list[ScanRecord]]:
    """Run ``scenario(realization)`` for each realization and average the records."""
    if n_realizations < 1:
        raise ParameterError("n_realizations must be >= 1")
    if statistic != "mean":
        raise ParameterError(f"unsupported statistic {statistic!r}")
    records = [r for i in range(n_realizations) for r in scenario(i)]
    return average_records(records), records


def fit_lightcone(records: Sequence[ScanRecord | AveragedPoint]) -> FitResult:
    """Least squares of ``log value = log K + beta log t - d / xi``.

    Points below the noise floor (1e-12) or at ``t <= 0`` are discarded.
    """
    used = [(r.d, r.t, r.value) for r in records if r.value >= NOISE_FLOOR and r.t > 0]
    discarded = len(records) - len(used)
    if len({d for d, _, _ in used}) < 3 or len({t for _, t, _ in used}) < 3:
        raise FitError("a lightcone fit needs at least 3 distances and 3 times above the noise floor")
    arr = np.array(used, dtype=float)
    design = np.column_stack([np.ones(len(arr)), np.log(arr[:, 1]), -arr[:, 0]])
    y = np.log(arr[:, 2])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    log_k, beta, inv_xi = coef
    if not inv_xi > 0:
        raise FitError(f"fitted decay rate {inv_xi:g} is not positive; no lightcone")
    resid = y - design @ coef
    return FitResult(
        K=float(math.exp(log_k)),
        xi=float(1.0 / inv_xi),
        beta=float(beta),
        rms_log_residual=float(np.sqrt(np.mean(resid**2))),
        n_points=len(used),
        n_discarded=discarded,
    )


def t_max_horizon(params: BoundParams, d: float, C: float | None = None) -> float:
    """Time at which ``C t^beta = exp(d / (2 xi))``; ``C`` defaults to ``K``."""
    beta = params.beta
    if beta <= 0:
        raise HorizonError("a time profile without growth (beta <= 0) has no finite horizon")
    C = params.K if C is None else C
    if not C > 0:
        raise ParameterError("C must be positive")
    log_t = (d / (2 * params.xi) - math.log(C)) / beta
    # beyond float range the horizon is effectively infinite
    return math.exp(log_t) if log_t < 709.0 else math.inf


def entanglement_entropy(state: np.ndarray, cut: int, local_dim: int = 2, atol: float = 1e-10) -> float:
    """Von Neumann entropy (natural log) of sites ``0..cut`` of a pure state."""
    psi = np.asarray(state, dtype=complex).ravel()
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > atol:
        raise NormalizationError(f"state norm is {norm}, expected 1")
    n_sites = round(math.log(psi.size, local_dim))
    if local_dim**n_sites != psi.size:
        raise ValueError(f"state size {psi.size} is not a power of {local_dim}")
    if not 0 <= cut < n_sites:
        raise ValueError(f"cut {cut} outside a {n_sites}-site chain")
    left = local_dim ** (cut + 1)
    s = np.linalg.svd(psi.reshape(left, -1), compute_uv=False)
    p = s**2
    p = p[p > 1e-300]
    return float(max(0.0, -np.sum(p * np.log(p))))
