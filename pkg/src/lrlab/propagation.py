"""Exact and time-ordered propagators.

Conventions: ``V(t) = T exp(-i int_0^t (H + sum_j h_j(s)) ds)`` with later
times to the left, and the interaction-picture factor

    V(t) = exp(-iHt) T exp(-i int_0^t exp(iHs) h(s) exp(-iHs) ds).

The time-ordered integrator is the exponential midpoint product
``prod_k exp(-i dt G(t_k + dt/2))``. That rule is time-symmetric, so its
global error expands in even powers of ``dt``; successive step halvings are
combined in a Richardson (Romberg) tableau and the iteration stops once two
successive extrapolants agree to ``tol`` in spectral norm.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from lrlab.errors import ConvergenceError, GeometryError, ShapeError
from lrlab.models import Hamiltonian, PerturbationTerm
from lrlab.operators import (
    GlobalOperator,
    Lattice,
    LocalOperator,
    SiteInterval,
    block_partition,
    embed,
    embed_sparse,
    is_hermitian_matrix,
    spectral_norm,
    split_dims,
)

DEFAULT_TOL = 1e-8


def _mul(u: np.ndarray, m: np.ndarray) -> np.ndarray:
    """``u @ m`` that keeps real ``u`` on the real BLAS path."""
    if np.isrealobj(u) and np.iscomplexobj(m):
        re = u @ np.ascontiguousarray(m.real)
        if not np.any(m.imag):
            return re.astype(complex)
        return re + 1j * (u @ np.ascontiguousarray(m.imag))
    return u @ m


def _mul_right(m: np.ndarray, u: np.ndarray) -> np.ndarray:
    if np.isrealobj(u) and np.iscomplexobj(m):
        re = np.ascontiguousarray(m.real) @ u
        if not np.any(m.imag):
            return re.astype(complex)
        return re + 1j * (np.ascontiguousarray(m.imag) @ u)
    return m @ u


class Propagator:
    """Eigendecomposition of a Hermitian Hamiltonian, block by block.

    The blocks are the connected components of the Hamiltonian's nonzero
    pattern; a real Hamiltonian is diagonalized in real arithmetic. A
    :class:`Hamiltonian` is read through its sparse form, so the dense
    matrix is only built if :attr:`hamiltonian` is asked for.
    """

    def __init__(self, hamiltonian: Hamiltonian | GlobalOperator):
        if isinstance(hamiltonian, Hamiltonian):
            self._source = hamiltonian
            self.lattice = hamiltonian.lattice
            m = hamiltonian.sparse
            real = not np.any(m.data.imag)
            self.blocks = block_partition(m)
            subs = (m[b][:, b].toarray() for b in self.blocks)
        else:
            self._source = hamiltonian
            self.lattice = hamiltonian.lattice
            m = hamiltonian.matrix
            real = not np.any(m.imag)
            self.blocks = block_partition(m)
            subs = (m[np.ix_(b, b)] for b in self.blocks)
        self.eigvals: list[np.ndarray] = []
        self.eigvecs: list[np.ndarray] = []
        for sub in subs:
            if not is_hermitian_matrix(sub, 1e-12):
                raise ValueError("Propagator needs a Hermitian Hamiltonian")
            if real:
                sub = np.ascontiguousarray(sub.real)
            lam, vec = np.linalg.eigh(sub)
            self.eigvals.append(lam)
            self.eigvecs.append(vec)
        self.label = np.empty(self.lattice.dim, dtype=np.intp)
        for k, b in enumerate(self.blocks):
            self.label[b] = k

    @property
    def hamiltonian(self) -> GlobalOperator:
        src = self._source
        return src.matrix if isinstance(src, Hamiltonian) else src

    @property
    def dim(self) -> int:
        return self.lattice.dim

    def reconstruction_error(self) -> float:
        """``||U diag(lambda) U^dag - H|| / ||H||``."""
        rec = np.zeros((self.dim, self.dim), dtype=complex)
        for b, lam, u in zip(self.blocks, self.eigvals, self.eigvecs):
            rec[np.ix_(b, b)] = (u * lam) @ u.conj().T
        h = self.hamiltonian
        scale = max(spectral_norm(h), 1e-300)
        return spectral_norm(rec - h.matrix) / scale

    def unitarity_defect(self) -> float:
        return max(spectral_norm(u.conj().T @ u - np.eye(u.shape[0])) for u in self.eigvecs)


def evolve_exact(prop: Propagator, t: float) -> GlobalOperator:
    """``exp(-iHt)``."""
    out = np.zeros((prop.dim, prop.dim), dtype=complex)
    for b, lam, u in zip(prop.blocks, prop.eigvals, prop.eigvecs):
        out[np.ix_(b, b)] = _mul(u, np.exp(-1j * lam * t)[:, None] * u.conj().T)
    return GlobalOperator(out, prop.lattice)


class EvolvedOperator:
    """``t -> exp(iHt) a exp(-iHt)`` with the eigenbasis transform done once.

    Only the Hamiltonian-block pairs on which ``a`` has nonzero entries are
    kept, so diagonal probes of a magnetization-conserving chain stay
    block diagonal. ``a`` may be a :class:`LocalOperator`, in which case it
    is embedded sparsely.
    """

    def __init__(self, prop: Propagator, a: GlobalOperator | LocalOperator):
        self.prop = prop
        self.lattice = prop.lattice
        if isinstance(a, LocalOperator):
            m = embed_sparse(a, self.lattice).tocoo()
            keep = m.data != 0
            rows, cols = m.row[keep], m.col[keep]
            m = m.tocsr()
        else:
            if a.dim != prop.dim:
                raise ShapeError(f"operator dimension {a.dim} != propagator dimension {prop.dim}")
            m = a.matrix
            rows, cols = np.nonzero(m)
        # a Hermitian input gives Hermitian blocks; they are symmetrized exactly
        self.hermitian = a.is_hermitian(0.0)
        touched = sorted(set(zip(prop.label[rows].tolist(), prop.label[cols].tolist())))
        self.pairs: list[tuple[int, int, np.ndarray]] = []
        for i, j in touched:
            bi, bj = prop.blocks[i], prop.blocks[j]
            sub = m[bi][:, bj].toarray() if not isinstance(m, np.ndarray) else m[np.ix_(bi, bj)]
            sub = np.asarray(sub, dtype=complex)
            rotated = _mul_right(_mul(prop.eigvecs[i].conj().T, sub), prop.eigvecs[j])
            self.pairs.append((i, j, rotated))
        self._groups = None

    @property
    def groups(self) -> list[list[int]]:
        """Hamiltonian blocks grouped so that every evolved operator is block diagonal."""
        if self._groups is None:
            parent = list(range(len(self.prop.blocks)))

            def find(k):
                while parent[k] != k:
                    parent[k] = parent[parent[k]]
                    k = parent[k]
                return k

            for i, j, _ in self.pairs:
                parent[find(i)] = find(j)
            groups: dict[int, list[int]] = {}
            for k in range(len(self.prop.blocks)):
                groups.setdefault(find(k), []).append(k)
            self._groups = list(groups.values())
        return self._groups

    @property
    def result_blocks(self) -> list[np.ndarray]:
        return [np.concatenate([self.prop.blocks[k] for k in ks]) for ks in self.groups]

    def blocks_at(self, t: float) -> list[tuple[np.ndarray, np.ndarray]]:
        """The evolved operator as ``(indices, submatrix)`` diagonal blocks."""
        prop = self.prop
        phases = [np.exp(1j * lam * t) for lam in prop.eigvals]
        pieces: dict[tuple[int, int], np.ndarray] = {}
        for i, j, rot in self.pairs:
            ui, uj = prop.eigvecs[i], prop.eigvecs[j]
            framed = phases[i][:, None] * rot * phases[j].conj()[None, :]
            pieces[(i, j)] = _mul_right(_mul(ui, framed), uj.conj().T)
        if self.hermitian:
            for (i, j), piece in pieces.items():
                if i == j:
                    pieces[(i, j)] = 0.5 * (piece + piece.conj().T)
                elif i < j and (j, i) in pieces:
                    pieces[(j, i)] = piece.conj().T.copy()
        out = []
        for ks in self.groups:
            idx = np.concatenate([prop.blocks[k] for k in ks])
            if len(ks) == 1:
                k = ks[0]
                sub = pieces.get((k, k))
                out.append((idx, sub if sub is not None else np.zeros((idx.size, idx.size), dtype=complex)))
                continue
            offsets = np.cumsum([0] + [prop.blocks[k].size for k in ks])
            where = {k: (offsets[n], offsets[n + 1]) for n, k in enumerate(ks)}
            sub = np.zeros((idx.size, idx.size), dtype=complex)
            for (i, j), piece in pieces.items():
                if i in where and j in where:
                    (r0, r1), (c0, c1) = where[i], where[j]
                    sub[r0:r1, c0:c1] = piece
            out.append((idx, sub))
        return out

    def reduced_at(self, t: float, region: SiteInterval) -> LocalOperator:
        """``reduce_to(self(t), region)`` without building the full matrix.

        Each block pair ``U_i F U_j^dag`` is formed in its own small block
        and only the entries that survive the partial trace are summed, via
        a precomputed gather. For Hermitian operators the mirrored pair is
        the conjugate transpose and is not recomputed.
        """
        lat = self.lattice
        lat.check(region)
        prop = self.prop
        dl, da, dq = split_dims(lat, region)
        plan = self._reduction_plan(region)
        phases = [np.exp(1j * lam * t) for lam in prop.eigvals]
        red = np.zeros(da * da, dtype=complex)
        for (i, j, rot), (mirror, src, dst) in zip(self.pairs, plan):
            if mirror is None or src.size == 0:
                continue
            framed = phases[i][:, None] * rot * phases[j].conj()[None, :]
            piece = _mul_right(_mul(prop.eigvecs[i], framed), prop.eigvecs[j].conj().T).ravel()[src]
            part = np.bincount(dst, piece.real, da * da) + 1j * np.bincount(dst, piece.imag, da * da)
            red += part
            if mirror:
                red += part.reshape(da, da).conj().T.ravel()
        red = red.reshape(da, da)
        if self.hermitian:
            red = 0.5 * (red + red.conj().T)
        return LocalOperator(region, red / (dl * dq), lat.local_dim)

    def _reduction_plan(self, region: SiteInterval) -> list:
        """Per pair ``(mirror, src, dst)``: flat entries of the pair block that share
        their traced-out index, and where they land in the reduced matrix.
        ``mirror`` is None for pairs covered by their mirror image."""
        cache = self.__dict__.setdefault("_plans", {})
        if region in cache:
            return cache[region]
        prop = self.prop
        dl, da, dq = split_dims(self.lattice, region)

        def split(idx):
            return (idx // dq) % da, (idx // (da * dq)) * dq + idx % dq

        present = {(i, j) for i, j, _ in self.pairs}
        plan = []
        for i, j, _ in self.pairs:
            mirror = self.hermitian and i != j and (j, i) in present
            if mirror and i > j:
                plan.append((None, None, None))
                continue
            row_kept, row_traced = split(prop.blocks[i])
            col_kept, col_traced = split(prop.blocks[j])
            r, c = np.nonzero(row_traced[:, None] == col_traced[None, :])
            src = r * prop.blocks[j].size + c
            dst = row_kept[r] * da + col_kept[c]
            plan.append((mirror, src, dst))
        cache[region] = plan
        return plan

    def __call__(self, t: float) -> GlobalOperator:
        out = np.zeros((self.prop.dim, self.prop.dim), dtype=complex)
        for idx, sub in self.blocks_at(t):
            out[np.ix_(idx, idx)] = sub
        return GlobalOperator(out, self.lattice)


def heisenberg(prop: Propagator, a: GlobalOperator, t: float) -> GlobalOperator:
    """``exp(iHt) a exp(-iHt)``."""
    return EvolvedOperator(prop, a)(t)


def _expm_hermitian(g: np.ndarray, dt: float) -> np.ndarray:
    """``exp(-i dt g)`` for Hermitian ``g``."""
    w, v = np.linalg.eigh(0.5 * (g + g.conj().T))
    return (v * np.exp(-1j * dt * w)) @ v.conj().T


@dataclass
class TimeOrderedEvolution:
    """Time-ordered exponential of a Hermitian generator ``s -> G(s)``.

    ``generator`` returns a square array. If ``support`` is given the array
    acts on that interval only and the result is embedded into ``lattice``.

    ``scheme="midpoint"`` multiplies ``exp(-i dt G(s_k + dt/2))``;
    ``scheme="split"`` uses ``exp(-i dt/2 G(s_k+1)) exp(-i dt/2 G(s_k))``,
    which is also symmetric and second order but samples the generator on
    grid points that survive step halving, so each point is evaluated once.
    """

    generator: Callable[[float], np.ndarray]
    lattice: Lattice | None = None
    support: SiteInterval | None = None
    initial_step: float = 0.25
    max_depth: int = 14
    min_depth: int = 2
    scheme: str = "midpoint"

    def __post_init__(self):
        if self.scheme not in ("midpoint", "split"):
            raise ValueError(f"unknown scheme {self.scheme!r}; use 'midpoint' or 'split'")

    @classmethod
    def for_hamiltonian(cls, h: Hamiltonian | GlobalOperator, perturbations: Sequence[PerturbationTerm] = (), **kw):
        """Generator ``H + sum_j h_j(s)`` on the full chain."""
        hm = h.matrix if isinstance(h, Hamiltonian) else h
        lat = hm.lattice
        static = [p for p in perturbations if p.static]
        driven = [p for p in perturbations if not p.static]
        base = hm.matrix.copy()
        for p in static:
            base = base + embed(p.at(0.0), lat).matrix

        def generator(s):
            g = base
            for p in driven:
                g = g + embed(p.at(s), lat).matrix
            return g

        return cls(generator, lattice=lat, **kw)

    def _wrap(self, m: np.ndarray):
        if self.lattice is None:
            return m
        if self.support is None:
            return GlobalOperator(m, self.lattice)
        return embed(LocalOperator(self.support, m, self.lattice.local_dim), self.lattice)

    def midpoint_product(self, t: float, steps: int) -> np.ndarray:
        return _midpoint_prefixes(self, t, steps, {t: steps})[t]

    def split_product(self, t: float, steps: int) -> np.ndarray:
        return _split_prefixes(self, t, steps, {t: steps}, {})[t]


def evolve_time_ordered(gen: TimeOrderedEvolution, t: float, tol: float = DEFAULT_TOL):
    """``T exp(-i int_0^t G(s) ds)`` to spectral-norm accuracy ``tol``."""
    return evolve_time_ordered_many(gen, [t], tol)[0]


def evolve_time_ordered_many(gen: TimeOrderedEvolution, times: Sequence[float], tol: float = DEFAULT_TOL) -> list:
    """:func:`evolve_time_ordered` at several times.

    When every time is a whole number of base steps of the largest one,
    all of them are read off the same step sequence: the product up to an
    earlier time is a prefix of the product up to a later one.
    """
    times = [float(t) for t in times]
    if any(t < 0 for t in times):
        raise ValueError("time-ordered evolution is defined for t >= 0")
    positive = sorted({t for t in times if t > 0})
    done: dict[float, np.ndarray] = {}
    if positive:
        t_max = positive[-1]
        base = max(1, math.ceil(t_max / gen.initial_step))
        marks = {t: t / t_max * base for t in positive}
        if all(round(m) >= 1 and abs(m - round(m)) <= 1e-12 * m for m in marks.values()):
            done = _romberg(gen, t_max, base, {t: round(m) for t, m in marks.items()}, tol)
        else:
            for t in positive:
                done.update(_romberg(gen, t, max(1, math.ceil(t / gen.initial_step)), None, tol))
    out = []
    for t in times:
        if t == 0:
            probe = np.asarray(gen.generator(0.0))
            out.append(gen._wrap(np.eye(probe.shape[0], dtype=complex)))
        else:
            out.append(gen._wrap(done[t]))
    return out


def _romberg(gen: TimeOrderedEvolution, t_max: float, base: int, marks: dict | None, tol: float) -> dict:
    """Romberg tableaux of the step product, one per time in ``marks`` (time -> base steps)."""
    marks = {t_max: base} if marks is None else marks
    cache: dict = {}

    def prefixes(steps, wanted):
        if gen.scheme == "split":
            return _split_prefixes(gen, t_max, steps, wanted, cache)
        return _midpoint_prefixes(gen, t_max, steps, wanted)

    prev = {t: [u] for t, u in prefixes(base, marks).items()}
    done: dict[float, np.ndarray] = {}
    last = {t: math.inf for t in marks}
    for level in range(1, gen.max_depth + 1):
        active = {t: k << level for t, k in marks.items() if t not in done}
        steps = base << level
        firsts = prefixes(steps, active)
        for t, first in firsts.items():
            row = [first]
            for j in range(1, level + 1):
                row.append(row[j - 1] + (row[j - 1] - prev[t][j - 1]) / (4**j - 1))
            last[t] = spectral_norm(row[-1] - prev[t][-1])
            prev[t] = row
            if level >= gen.min_depth and last[t] <= tol:
                done[t] = row[-1]
        if len(done) == len(marks):
            return done
    worst = max((t for t in marks if t not in done), key=lambda t: last[t])
    raise ConvergenceError(
        f"time-ordered evolution to t={worst} did not reach tol={tol} after {gen.max_depth} halvings", last[worst]
    )


def _midpoint_prefixes(gen: TimeOrderedEvolution, t_max: float, steps: int, marks: dict) -> dict:
    """Midpoint products with step ``t_max / steps``, read off after ``marks[t]`` steps."""
    dt = t_max / steps
    wanted = {k: t for t, k in marks.items()}
    out = {}
    u = None
    for k in range(max(wanted)):
        step = _expm_hermitian(np.asarray(gen.generator((k + 0.5) * dt)), dt)
        u = step if u is None else step @ u
        if k + 1 in wanted:
            out[wanted[k + 1]] = u
    return out


# eigendecompositions kept across halvings, per integration
_CACHE_BYTES = 256 * 2**20


def _split_prefixes(gen: TimeOrderedEvolution, t_max: float, steps: int, marks: dict, cache: dict) -> dict:
    """Split-step products with step ``t_max / steps``, read off after ``marks[t]`` steps.

    Adjacent half steps at a shared grid point merge into one full step, so
    each grid point costs one eigendecomposition. ``cache`` maps grid points
    (as exact fractions of ``t_max``) to decompositions and is reused by
    finer grids, whose points include the coarser ones.
    """
    dt = t_max / steps
    wanted = {k: t for t, k in marks.items()}

    def decomp(k):
        key = Fraction(k, steps)
        if key in cache:
            return cache[key]
        g = np.asarray(gen.generator(k * t_max / steps))
        w, v = np.linalg.eigh(0.5 * (g + g.conj().T))
        if cache.get("bytes", 0) + v.nbytes <= _CACHE_BYTES:
            cache[key] = (w, v)
            cache["bytes"] = cache.get("bytes", 0) + v.nbytes + w.nbytes
        return w, v

    def expm(wv, h):
        w, v = wv
        return (v * np.exp(-1j * h * w)) @ v.conj().T

    out = {}
    u = expm(decomp(0), dt / 2)
    for k in range(1, max(wanted) + 1):
        wv = decomp(k)
        if k in wanted:
            out[wanted[k]] = expm(wv, dt / 2) @ u
        if k < max(wanted):
            u = expm(wv, dt) @ u
    return out


def _frame_generator(prop: Propagator, perturbations: Sequence[PerturbationTerm]):
    """``s -> [exp(iHs) h_j(s) exp(-iHs) for each j]`` with static terms pre-rotated."""
    lat = prop.lattice
    cached = {id(p): EvolvedOperator(prop, embed(p.at(0.0), lat)) for p in perturbations if p.static}

    def frames(s):
        out = []
        for p in perturbations:
            if p.static:
                out.append(cached[id(p)](s))
            else:
                out.append(heisenberg(prop, embed(p.at(s), lat), s))
        return out

    return frames


def interaction_generator(prop: Propagator, h: PerturbationTerm, s: float) -> GlobalOperator:
    """``exp(iHs) h(s) exp(-iHs)``."""
    return heisenberg(prop, embed(h.at(s), prop.lattice), s)


def interaction_factor(
    prop: Propagator,
    perturbations: Sequence[PerturbationTerm],
    t: float,
    tol: float = DEFAULT_TOL,
    *,
    method: str = "integrate",
    initial_step: float = 0.25,
) -> GlobalOperator:
    """The factor ``T`` with ``V(t) = exp(-iHt) T``.

    ``method="integrate"`` runs the time-ordered integrator on the frame
    generator. ``method="exact"`` (static perturbations only) uses
    ``T = exp(iHt) exp(-i(H + sum h)t)``; ``"auto"`` picks ``exact`` when
    every perturbation is static.
    """
    lat = prop.lattice
    if not perturbations:
        return GlobalOperator.identity(lat)
    all_static = all(p.static for p in perturbations)
    if method == "auto":
        method = "exact" if all_static else "integrate"
    if method == "exact":
        if not all_static:
            raise ValueError("the exact interaction factor needs static perturbations")
        total = prop.hamiltonian
        for p in perturbations:
            total = total + embed(p.at(0.0), lat)
        return evolve_exact(prop, -t) @ evolve_exact(Propagator(total), t)
    if method != "integrate":
        raise ValueError(f"unknown method {method!r}")
    frames = _frame_generator(prop, perturbations)

    def generator(s):
        return sum(f.matrix for f in frames(s))

    return evolve_time_ordered(TimeOrderedEvolution(generator, lattice=lat, initial_step=initial_step), t, tol)


def classify_sides(perturbations: Sequence[PerturbationTerm], cut: int, half_width: int):
    """Split perturbations into those left of ``cut - w`` and right of ``cut + w``."""
    left, right = [], []
    for p in perturbations:
        if p.support.hi < cut - half_width:
            left.append(p)
        elif p.support.lo > cut + half_width:
            right.append(p)
        else:
            raise GeometryError(
                f"perturbation on {p.support} intersects the free region [{cut - half_width}, {cut + half_width}]"
            )
    return left, right


def split_factors(
    prop: Propagator,
    perturbations: Sequence[PerturbationTerm],
    cut: int,
    half_width: int,
    t: float,
    tol: float = DEFAULT_TOL,
    *,
    initial_step: float = 0.25,
) -> tuple[GlobalOperator, GlobalOperator]:
    """``(T_hat, T_bar)``: time-ordered factors of the frame generators restricted left/right of ``cut``.

    Left perturbations have their frame generators traced down to
    ``[0, cut]``, right ones to ``[cut + 1, N - 1]``. Each factor is
    integrated on its own half of the chain and then embedded, so the two
    commute exactly.
    """
    return split_factors_many(prop, perturbations, cut, half_width, [t], tol, initial_step=initial_step)[0]


def split_factors_many(
    prop: Propagator,
    perturbations: Sequence[PerturbationTerm],
    cut: int,
    half_width: int,
    times: Sequence[float],
    tol: float = DEFAULT_TOL,
    *,
    initial_step: float = 0.25,
) -> list[tuple[GlobalOperator, GlobalOperator]]:
    """:func:`split_factors` at several times, sharing the integration."""
    lat = prop.lattice
    if not 0 <= cut < lat.num_sites - 1:
        raise GeometryError(f"cut {cut} must leave sites on both sides of a {lat.num_sites}-site chain")
    left, right = classify_sides(perturbations, cut, half_width)
    halves = (SiteInterval(0, cut), SiteInterval(cut + 1, lat.num_sites - 1))
    sides = []
    for group, region in zip((left, right), halves):
        if not group:
            sides.append([GlobalOperator.identity(lat)] * len(times))
            continue
        generator = _reduced_frame_generator(prop, group, region)
        evo = TimeOrderedEvolution(generator, lattice=lat, support=region, initial_step=initial_step, scheme="split")
        sides.append(evolve_time_ordered_many(evo, times, tol))
    return list(zip(sides[0], sides[1]))


def _reduced_frame_generator(prop: Propagator, perturbations: Sequence[PerturbationTerm], region: SiteInterval):
    """``s -> sum_j reduce_to(exp(iHs) h_j(s) exp(-iHs), region)`` as a matrix on ``region``."""
    cached = {id(p): EvolvedOperator(prop, p.at(0.0)) for p in perturbations if p.static}

    def generator(s):
        total = None
        for p in perturbations:
            evolved = cached[id(p)] if p.static else EvolvedOperator(prop, p.at(s))
            m = evolved.reduced_at(s, region).matrix
            total = m if total is None else total + m
        return total

    return generator
