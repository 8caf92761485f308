"""Hamiltonians, perturbations, disorder ensembles and drive schedules."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from lrlab.errors import BudgetError, ParameterError, RangeError, ShapeError, SizeError
from lrlab.operators import (
    DENSE_DIM_LIMIT,
    PAULI,
    GlobalOperator,
    Lattice,
    LocalOperator,
    SiteInterval,
    embed_sparse,
    spectral_norm,
)


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """Sum of Hermitian local terms on an open chain."""

    lattice: Lattice
    terms: tuple[LocalOperator, ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        for term in self.terms:
            self.lattice.check(term.support)
            if not term.is_hermitian():
                raise ValueError(f"term on {term.support} is not Hermitian")

    @cached_property
    def sparse(self) -> sp.csr_matrix:
        d = self.lattice.dim
        acc = sp.csr_matrix((d, d), dtype=complex)
        for term in self.terms:
            acc = acc + embed_sparse(term, self.lattice)
        return acc

    @cached_property
    def matrix(self) -> GlobalOperator:
        return GlobalOperator(self.sparse.toarray(), self.lattice)

    def plus(self, extra: Sequence[LocalOperator]) -> Hamiltonian:
        return Hamiltonian(self.lattice, self.terms + tuple(extra))

    def terms_within(self, region: SiteInterval) -> list[LocalOperator]:
        return [t for t in self.terms if region.contains(t.support)]


class PerturbationTerm:
    """A local, possibly time-dependent, Hermitian generator ``h(t)``.

    ``envelope(t)`` must dominate ``||h(t)||``; :meth:`check` verifies this on
    a set of sample times. The support never changes with time.
    """

    def __init__(
        self,
        support: SiteInterval,
        generator: Callable[[float], np.ndarray],
        envelope: Callable[[float], float],
        *,
        static: bool = False,
        local_dim: int = 2,
        label: str = "",
    ):
        self.support = support
        self.generator = generator
        self.envelope = envelope
        self.static = static
        self.local_dim = local_dim
        self.label = label

    @classmethod
    def constant(cls, op: LocalOperator, label: str = "") -> PerturbationTerm:
        m = np.array(op.matrix)
        m.flags.writeable = False
        norm = op.norm
        return cls(op.support, lambda t: m, lambda t: norm, static=True, local_dim=op.local_dim, label=label)

    def at(self, t: float) -> LocalOperator:
        return LocalOperator(self.support, self.generator(t), self.local_dim)

    def check(self, times: Sequence[float], atol: float = 1e-12) -> None:
        for t in times:
            op = self.at(t)
            if not op.is_hermitian(atol):
                raise ValueError(f"perturbation {self.label or self.support} is not Hermitian at t={t}")
            if op.norm > self.envelope(t) * (1 + 1e-12) + atol:
                raise ValueError(f"envelope violated at t={t}: {op.norm} > {self.envelope(t)}")

    def __repr__(self):
        kind = "static" if self.static else "driven"
        return f"PerturbationTerm({self.label or 'h'} on {self.support}, {kind})"


@dataclass(frozen=True)
class DisorderSpec:
    """Uniform on-site disorder ``w_j in [-width, width]`` over ``region``.

    Each value is a pure function of ``(base_seed, stream, realization, site)``,
    so realizations can be generated in any order or in parallel.
    """

    region: SiteInterval
    width: float
    base_seed: int
    stream: int = 0

    def __post_init__(self):
        if self.width < 0:
            raise ParameterError(f"disorder width must be >= 0, got {self.width}")

    def value(self, realization: int, site: int) -> float:
        seq = np.random.SeedSequence([self.base_seed, self.stream, realization, site])
        return float(np.random.Generator(np.random.Philox(seq)).uniform(-self.width, self.width))

    def sample(self, realization: int, sites: Sequence[int] | None = None) -> np.ndarray:
        sites = self.region.sites() if sites is None else sites
        return np.array([self.value(realization, j) for j in sites])


@dataclass(frozen=True, eq=False)
class DualPair:
    """Two decompositions of one total Hamiltonian.

    ``clean + sum(disorder_terms)`` (disorder only on the region) equals
    ``h_prime + sum(undo_terms)`` (disorder everywhere, removed again off
    the region).
    """

    clean: Hamiltonian
    disorder_terms: tuple[PerturbationTerm, ...]
    h_prime: Hamiltonian
    undo_terms: tuple[PerturbationTerm, ...]

    def original_total(self) -> GlobalOperator:
        return _total(self.clean, self.disorder_terms)

    def dual_total(self) -> GlobalOperator:
        return _total(self.h_prime, self.undo_terms)

    def identity_residual(self) -> float:
        return spectral_norm(self.original_total() - self.dual_total())


def _total(h: Hamiltonian, perturbations: Sequence[PerturbationTerm], t: float = 0.0) -> GlobalOperator:
    return h.plus([p.at(t) for p in perturbations]).matrix


def total_hamiltonian(h: Hamiltonian, perturbations: Sequence[PerturbationTerm], t: float = 0.0) -> GlobalOperator:
    """Matrix of ``H + sum_j h_j(t)``."""
    return _total(h, perturbations, t)


def xxz_bond(delta: float, coupling: float = 1.0) -> np.ndarray:
    x, y, z = PAULI["x"], PAULI["y"], PAULI["z"]
    return coupling * (np.kron(x, x) + np.kron(y, y) + delta * np.kron(z, z))


def build_xxz(lattice: Lattice, delta: float, boundary: str = "open", coupling: float = 1.0) -> Hamiltonian:
    """Nearest-neighbour XXZ chain ``sum_j XX + YY + delta ZZ`` with open ends."""
    if lattice.num_sites < 2:
        raise SizeError("the XXZ chain needs at least two sites")
    if boundary != "open":
        raise ParameterError(f"only open boundaries are supported, got {boundary!r}")
    if lattice.local_dim != 2:
        raise ShapeError("the XXZ chain is defined for spin-1/2 (local_dim == 2)")
    bond = xxz_bond(delta, coupling)
    terms = [LocalOperator(SiteInterval(j, j + 1), bond) for j in range(lattice.num_sites - 1)]
    return Hamiltonian(lattice, terms)


def field_operators(spec: DisorderSpec, realization: int, sites: Sequence[int] | None = None) -> list[LocalOperator]:
    sites = list(spec.region.sites()) if sites is None else list(sites)
    omega = spec.sample(realization, sites)
    return [LocalOperator(SiteInterval.site(j), w * PAULI["z"]) for j, w in zip(sites, omega)]


def build_disorder_field(spec: DisorderSpec, realization: int) -> list[PerturbationTerm]:
    """One static term ``w_j Z_j`` per site of ``spec.region``."""
    return [PerturbationTerm.constant(op, label=f"field{op.support.lo}") for op in field_operators(spec, realization)]


def disordered_xxz(lattice: Lattice, delta: float, spec: DisorderSpec, realization: int) -> Hamiltonian:
    """XXZ chain with the disorder field of ``spec`` folded into the Hamiltonian."""
    lattice.check(spec.region)
    return build_xxz(lattice, delta).plus(field_operators(spec, realization))


def build_goe_grain(
    n_sites: int,
    r: int = 2,
    seed=0,
    *,
    sigma: float | None = None,
    normalized: bool = True,
    lo: int = 0,
) -> LocalOperator:
    """Real symmetric Gaussian random matrix on ``n_sites`` consecutive sites.

    Off-diagonal entries have variance ``sigma**2`` and diagonal entries
    ``2 sigma**2``. With ``normalized`` (default) and no explicit ``sigma``,
    ``sigma = 1/sqrt(r**n_sites)`` so the norm stays of order one; with
    ``normalized=False`` the entries have unit off-diagonal variance.
    """
    dim = r**n_sites
    if n_sites < 1:
        raise SizeError("a grain needs at least one site")
    if dim > DENSE_DIM_LIMIT:
        raise BudgetError(f"grain dimension {dim} exceeds the dense budget")
    if sigma is None:
        sigma = 1.0 / np.sqrt(dim) if normalized else 1.0
    if isinstance(seed, (list, tuple)):
        seed = np.random.SeedSequence(list(seed))
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim, dim))
    m = sigma * (g + g.T) / np.sqrt(2.0)
    return LocalOperator(SiteInterval(lo, lo + n_sites - 1), m, r)


def build_avalanche(h_model: Hamiltonian, region: SiteInterval, grain: LocalOperator) -> PerturbationTerm:
    """Perturbation that replaces the model on ``region`` by ``grain``.

    Every Hamiltonian term supported inside ``region`` is subtracted and the
    grain is added, so ``H + h`` carries no model terms there.
    """
    if grain.support != region:
        raise ShapeError(f"grain support {grain.support} differs from region {region}")
    h_model.lattice.check(region)
    m = np.array(grain.matrix)
    for term in h_model.terms_within(region):
        m = m - term.widen(region).matrix
    return PerturbationTerm.constant(LocalOperator(region, m, grain.local_dim), label="avalanche")


def build_dual_pair(clean: Hamiltonian, spec: DisorderSpec, realization: int) -> DualPair:
    lat = clean.lattice
    lat.check(spec.region)
    all_sites = list(range(lat.num_sites))
    everywhere = field_operators(spec, realization, all_sites)
    h_prime = clean.plus(everywhere)
    inside = [PerturbationTerm.constant(op, label=f"field{op.support.lo}") for op in everywhere if spec.region.contains(op.support)]
    undo = [
        PerturbationTerm.constant(-op, label=f"undo{op.support.lo}")
        for op in everywhere
        if not spec.region.contains(op.support)
    ]
    return DualPair(clean, tuple(inside), h_prime, tuple(undo))


# --- schedules ------------------------------------------------------------


class LinearRamp:
    """``s -> clip(s, 0, 1)``: switched on linearly, then held."""

    def __call__(self, s: float) -> float:
        return float(min(max(s, 0.0), 1.0))

    def maximum(self) -> float:
        return 1.0


class CosineWave:
    """``phase -> cos(2 pi phase)`` for a phase in ``[0, 1)``."""

    def __call__(self, phase: float) -> float:
        return float(np.cos(2.0 * np.pi * phase))

    def maximum(self) -> float:
        return 1.0


@dataclass(frozen=True)
class TableShape:
    """User shape sampled at ``xs`` and linearly interpolated (held constant outside)."""

    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __post_init__(self):
        if len(self.xs) != len(self.ys) or len(self.xs) < 2:
            raise ParameterError("a table shape needs matching xs/ys with at least two points")
        if np.any(np.diff(self.xs) <= 0):
            raise ParameterError("table xs must be strictly increasing")

    def __call__(self, s: float) -> float:
        return float(np.interp(s, self.xs, self.ys))

    def maximum(self) -> float:
        return float(np.max(np.abs(self.ys)))


def _shape(spec, named: dict) -> Callable[[float], float]:
    if isinstance(spec, str):
        try:
            return named[spec]()
        except KeyError as exc:
            raise ParameterError(f"unknown shape {spec!r}; expected one of {sorted(named)}") from exc
    if isinstance(spec, tuple) and len(spec) == 2:
        return TableShape(tuple(spec[0]), tuple(spec[1]))
    if callable(spec):
        return spec
    raise ParameterError(f"cannot interpret shape {spec!r}")


def make_adiabatic(h0: PerturbationTerm, tau: float, ramp="linear") -> PerturbationTerm:
    """``h(t) = ramp(t / tau) * h0(t)``.

    ``ramp`` is ``"linear"``, a ``(xs, ys)`` table in units of ``t/tau``, or
    any callable.
    """
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    shape = _shape(ramp, {"linear": LinearRamp})

    def generator(t):
        return shape(t / tau) * h0.generator(t)

    def envelope(t):
        return abs(shape(t / tau)) * h0.envelope(t)

    return PerturbationTerm(h0.support, generator, envelope, local_dim=h0.local_dim, label=f"{h0.label or 'h'}~adiabatic")


def make_periodic(h0: PerturbationTerm, period: float, waveform="cosine") -> PerturbationTerm:
    """``h(t) = waveform((t mod T) / T) * h0(t)``.

    The envelope is the maximum of ``|waveform|`` over one period times the
    envelope of ``h0``.
    """
    if not period > 0:
        raise ParameterError(f"period must be positive, got {period}")
    shape = _shape(waveform, {"cosine": CosineWave})
    if hasattr(shape, "maximum"):
        peak = shape.maximum()
    else:
        peak = float(np.max(np.abs([shape(p) for p in np.linspace(0.0, 1.0, 1025)])))

    def generator(t):
        return shape(np.fmod(t, period) / period) * h0.generator(t)

    def envelope(t):
        return peak * h0.envelope(t)

    return PerturbationTerm(h0.support, generator, envelope, local_dim=h0.local_dim, label=f"{h0.label or 'h'}~periodic")


def site_field(op_name: str, site: int, strength: float = 1.0) -> PerturbationTerm:
    """Static single-site Pauli field ``strength * P_site``."""
    if op_name not in ("x", "y", "z"):
        raise ParameterError(f"unknown field direction {op_name!r}")
    return PerturbationTerm.constant(LocalOperator(SiteInterval.site(site), strength * PAULI[op_name]), label=f"{op_name}{site}")


def check_within(lattice: Lattice, perturbations: Sequence[PerturbationTerm]) -> None:
    for p in perturbations:
        if p.support.hi >= lattice.num_sites:
            raise RangeError(f"perturbation {p} lies outside the chain")
