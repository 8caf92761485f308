"""Dense operator algebra on a one-dimensional chain.

Sites are labelled ``0 .. N-1`` and the tensor ordering is big-endian: site 0
is the most significant factor of the computational-basis index. All
matrices are dense ``complex128`` arrays; nothing is truncated.

Several routines look at the zero pattern of their inputs and split the work
into connected blocks (for example magnetization sectors of an XXZ chain with
longitudinal fields). This is exact: a matrix whose nonzero pattern is block
diagonal has its spectrum, its products and its commutators confined to those
blocks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigsh

from lrlab.errors import BudgetError, NumericError, RangeError, ShapeError

DENSE_DIM_LIMIT = 2**14
TWIRL_MAX_SITES = 8

# Below this size a dense SVD is cheaper than Lanczos.
_LANCZOS_MIN_DIM = 128
_LANCZOS_TOL = 1e-13
_LANCZOS_MAXITER = 10
# Block detection costs O(dim^2); skip it for tiny matrices.
_BLOCK_MIN_DIM = 64

PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}


@dataclass(frozen=True)
class Lattice:
    """Open chain of ``num_sites`` sites with local dimension ``local_dim``."""

    num_sites: int
    local_dim: int = 2
    max_dim: int = DENSE_DIM_LIMIT

    def __post_init__(self):
        if self.num_sites < 1:
            raise ShapeError(f"num_sites must be >= 1, got {self.num_sites}")
        if self.local_dim < 2:
            raise ShapeError(f"local_dim must be >= 2, got {self.local_dim}")
        if self.local_dim**self.num_sites > self.max_dim:
            raise BudgetError(
                f"Hilbert dimension {self.local_dim}^{self.num_sites} exceeds the dense budget {self.max_dim}"
            )

    @property
    def dim(self) -> int:
        return self.local_dim**self.num_sites

    @property
    def full(self) -> SiteInterval:
        return SiteInterval(0, self.num_sites - 1)

    def check(self, region: SiteInterval) -> None:
        if region.hi >= self.num_sites:
            raise RangeError(f"{region} lies outside a chain of {self.num_sites} sites")


@dataclass(frozen=True, order=True)
class SiteInterval:
    """Inclusive, simply connected range of sites ``[lo, hi]``."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo < 0 or self.hi < self.lo:
            raise RangeError(f"invalid interval [{self.lo}, {self.hi}]")

    @classmethod
    def site(cls, i: int) -> SiteInterval:
        return cls(i, i)

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    def sites(self) -> range:
        return range(self.lo, self.hi + 1)

    def contains(self, other: SiteInterval) -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def __str__(self):
        return f"[{self.lo}, {self.hi}]"


def _readonly(a: np.ndarray) -> np.ndarray:
    v = a.view()
    v.flags.writeable = False
    return v


@dataclass(frozen=True, eq=False)
class LocalOperator:
    """A matrix acting on the sites of ``support`` (and as identity elsewhere)."""

    support: SiteInterval
    matrix: np.ndarray
    local_dim: int = 2

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        d = self.local_dim**self.support.size
        if m.shape != (d, d):
            raise ShapeError(f"matrix shape {m.shape} does not match support {self.support} (expected {d}x{d})")
        if not np.all(np.isfinite(m)):
            raise NumericError("LocalOperator has non-finite entries")
        object.__setattr__(self, "matrix", _readonly(m))

    @property
    def norm(self) -> float:
        return _dense_norm(self.matrix)

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        return is_hermitian_matrix(self.matrix, atol)

    def __mul__(self, c) -> LocalOperator:
        return LocalOperator(self.support, c * self.matrix, self.local_dim)

    __rmul__ = __mul__

    def __add__(self, other: LocalOperator) -> LocalOperator:
        if other.support != self.support:
            raise ShapeError(f"cannot add operators on {self.support} and {other.support}")
        return LocalOperator(self.support, self.matrix + other.matrix, self.local_dim)

    def __neg__(self) -> LocalOperator:
        return self * -1

    def widen(self, region: SiteInterval) -> LocalOperator:
        """The same operator written on a larger interval ``region``."""
        if not region.contains(self.support):
            raise RangeError(f"{region} does not contain {self.support}")
        r = self.local_dim
        left = np.eye(r ** (self.support.lo - region.lo))
        right = np.eye(r ** (region.hi - self.support.hi))
        return LocalOperator(region, np.kron(np.kron(left, self.matrix), right), r)


@dataclass(frozen=True, eq=False)
class GlobalOperator:
    """A dense ``r^N x r^N`` matrix on the whole chain."""

    matrix: np.ndarray
    lattice: Lattice = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.matrix)
        if not np.iscomplexobj(m):
            m = m.astype(complex)
        d = self.lattice.dim
        if m.shape != (d, d):
            raise ShapeError(f"matrix shape {m.shape} does not match lattice dimension {d}")
        object.__setattr__(self, "matrix", _readonly(m))

    @classmethod
    def identity(cls, lattice: Lattice) -> GlobalOperator:
        return cls(np.eye(lattice.dim, dtype=complex), lattice)

    @classmethod
    def zeros(cls, lattice: Lattice) -> GlobalOperator:
        return cls(np.zeros((lattice.dim, lattice.dim), dtype=complex), lattice)

    @property
    def dim(self) -> int:
        return self.lattice.dim

    def dagger(self) -> GlobalOperator:
        return GlobalOperator(self.matrix.conj().T, self.lattice)

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        return is_hermitian_matrix(self.matrix, atol)

    @cached_property
    def diagonal_entries(self) -> np.ndarray | None:
        """The diagonal if the matrix is diagonal, else ``None``."""
        return _diagonal_or_none(self.matrix)

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, GlobalOperator):
            _check_same_lattice(self, other)
            return other.matrix
        raise TypeError(f"expected GlobalOperator, got {type(other).__name__}")

    def __matmul__(self, other) -> GlobalOperator:
        return GlobalOperator(self.matrix @ self._coerce(other), self.lattice)

    def __add__(self, other) -> GlobalOperator:
        return GlobalOperator(self.matrix + self._coerce(other), self.lattice)

    def __sub__(self, other) -> GlobalOperator:
        return GlobalOperator(self.matrix - self._coerce(other), self.lattice)

    def __neg__(self) -> GlobalOperator:
        return GlobalOperator(-self.matrix, self.lattice)

    def __mul__(self, c) -> GlobalOperator:
        return GlobalOperator(c * self.matrix, self.lattice)

    __rmul__ = __mul__


def _check_same_lattice(x: GlobalOperator, y: GlobalOperator) -> None:
    if x.matrix.shape != y.matrix.shape or x.lattice.local_dim != y.lattice.local_dim:
        raise ShapeError(f"operators live on different lattices ({x.lattice} vs {y.lattice})")


def named_operator(name: str, site: int, local_dim: int = 2) -> LocalOperator:
    """Pauli string such as ``"z"`` or ``"xx"`` starting at ``site``."""
    if local_dim != 2:
        raise ShapeError("named Pauli operators require local_dim == 2")
    name = name.lower()
    try:
        factors = [PAULI[c] for c in name]
    except KeyError as exc:
        raise ValueError(f"unknown Pauli label in {name!r}") from exc
    m = factors[0]
    for f in factors[1:]:
        m = np.kron(m, f)
    return LocalOperator(SiteInterval(site, site + len(name) - 1), m)


def embed(op: LocalOperator, lattice: Lattice) -> GlobalOperator:
    """Tensor ``op`` with the identity on every site outside its support."""
    lattice.check(op.support)
    if op.local_dim != lattice.local_dim:
        raise ShapeError(f"local dimension {op.local_dim} != lattice local dimension {lattice.local_dim}")
    r = lattice.local_dim
    left = r**op.support.lo
    right = r ** (lattice.num_sites - 1 - op.support.hi)
    m = op.matrix
    if right > 1:
        m = np.kron(m, np.eye(right))
    if left > 1:
        m = np.kron(np.eye(left), m)
    return GlobalOperator(m, lattice)


def embed_sparse(op: LocalOperator, lattice: Lattice) -> sp.csr_matrix:
    """:func:`embed` as a sparse matrix (no dense ``r^N x r^N`` array is formed)."""
    lattice.check(op.support)
    r = lattice.local_dim
    left = sp.identity(r**op.support.lo, format="csr")
    right = sp.identity(r ** (lattice.num_sites - 1 - op.support.hi), format="csr")
    return sp.kron(sp.kron(left, sp.csr_matrix(op.matrix)), right, format="csr")


def embedded_diagonal(op: LocalOperator, lattice: Lattice) -> np.ndarray | None:
    """Diagonal of ``embed(op, lattice)`` when ``op`` is diagonal, else ``None``."""
    lattice.check(op.support)
    m = op.matrix
    d = np.diagonal(m)
    if np.count_nonzero(m) != np.count_nonzero(d):
        return None
    r = lattice.local_dim
    left = np.ones(r**op.support.lo)
    right = np.ones(r ** (lattice.num_sites - 1 - op.support.hi))
    return np.kron(np.kron(left, d), right).astype(complex)


def block_partition(*matrices: np.ndarray) -> list[np.ndarray]:
    """Index sets of the connected blocks of the union of nonzero patterns.

    All ``matrices`` are block diagonal with respect to the returned
    partition (up to a permutation of the basis).
    """
    n = matrices[0].shape[0]
    if n < _BLOCK_MIN_DIM:
        return [np.arange(n)]
    if all(sp.issparse(m) for m in matrices):
        coo = [m.tocoo() for m in matrices]
        rows = np.concatenate([c.row[c.data != 0] for c in coo])
        cols = np.concatenate([c.col[c.data != 0] for c in coo])
    else:
        mask = np.asarray(matrices[0] != 0)
        for m in matrices[1:]:
            mask |= np.asarray(m != 0)
        rows, cols = np.nonzero(mask)
    graph = coo_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
    count, labels = connected_components(graph, directed=False)
    if count == 1:
        return [np.arange(n)]
    order = np.argsort(labels, kind="stable")
    bounds = np.searchsorted(labels[order], np.arange(count + 1))
    return [order[bounds[k]:bounds[k + 1]] for k in range(count)]


def is_hermitian_matrix(m: np.ndarray, atol: float = 1e-12) -> bool:
    if m.size == 0:
        return True
    scale = max(1.0, float(np.max(np.abs(m))))
    return float(np.max(np.abs(m - m.conj().T))) <= atol * scale


def _dense_norm(m: np.ndarray) -> float:
    if m.size == 0 or not np.any(m):
        return 0.0
    if is_hermitian_matrix(m, 1e-14):
        w = sla.eigvalsh(0.5 * (m + m.conj().T), check_finite=False)
        return float(max(abs(w[0]), abs(w[-1])))
    if is_hermitian_matrix(1j * m, 1e-14):
        h = 0.5j * (m - m.conj().T)
        w = sla.eigvalsh(h, check_finite=False)
        return float(max(abs(w[0]), abs(w[-1])))
    return float(sla.svdvals(m, check_finite=False)[0])


def _top_singular_value(m: np.ndarray) -> float:
    if m.size == 0 or not np.any(m):
        return 0.0
    if not np.any(m.imag):
        m = np.ascontiguousarray(m.real)
    k = min(m.shape)
    if k < _LANCZOS_MIN_DIM:
        return float(sla.svdvals(m, check_finite=False)[0])
    # Lanczos on the smaller Gram matrix, applied as two matvecs; its top
    # eigenvalue is sigma_max^2 to full relative precision.
    tall = m.shape[0] >= m.shape[1]
    mh = m.conj().T
    gram_op = LinearOperator((k, k), matvec=(lambda x: mh @ (m @ x)) if tall else (lambda x: m @ (mh @ x)), dtype=m.dtype)
    # fixed generic start vector: deterministic, and not orthogonal to symmetric subspaces
    v0 = np.random.default_rng(12345).standard_normal(k)
    try:
        w = eigsh(gram_op, k=1, v0=v0, tol=_LANCZOS_TOL, maxiter=_LANCZOS_MAXITER, return_eigenvectors=False)
        top = w[0].real
    except (ArpackNoConvergence, ArpackError):
        # clustered top of the spectrum: a dense solve is cheaper than more restarts
        gram = mh @ m if tall else m @ mh
        top = sla.eigh(gram, eigvals_only=True, subset_by_index=[k - 1, k - 1], check_finite=False)[0]
    return float(np.sqrt(max(top, 0.0)))


def spectral_norm(x: GlobalOperator | LocalOperator | np.ndarray) -> float:
    """Largest singular value."""
    m = x.matrix if isinstance(x, (GlobalOperator, LocalOperator)) else np.asarray(x)
    if not np.all(np.isfinite(m)):
        raise NumericError("spectral_norm of a matrix with non-finite entries")
    best = 0.0
    for b in block_partition(m):
        sub = m if b.size == m.shape[0] else m[np.ix_(b, b)]
        best = max(best, _dense_norm(sub))
    return best


def _diagonal_or_none(m: np.ndarray) -> np.ndarray | None:
    d = np.diagonal(m)
    if np.count_nonzero(m) == np.count_nonzero(d):
        return d.copy()
    return None


def diagonal_commutator_norms(
    blocks: Sequence[tuple[np.ndarray, np.ndarray]], diagonals: Sequence[np.ndarray]
) -> list[float]:
    """``|| [x, diag(yd)] ||`` for each ``yd``, with ``x`` given as ``(indices, submatrix)`` diagonal blocks.

    Uses ``[x, y]_ij = x_ij (y_j - y_i)``. When ``yd`` takes two values the
    commutator is ``[[0, a x_PQ], [-a x_QP, 0]]`` on each block, so its norm
    is ``|a|`` times the larger top singular value of the two off-diagonal
    pieces (one piece suffices when the block is Hermitian).
    """
    values = [np.unique(yd) for yd in diagonals]
    best = [0.0] * len(diagonals)
    for b, sub in blocks:
        hermitian = None
        for k, (yd, vals) in enumerate(zip(diagonals, values)):
            if vals.size == 1:
                continue
            yb = yd[b]
            if vals.size > 2:
                best[k] = max(best[k], _dense_norm(sub * (yb[None, :] - yb[:, None])))
                continue
            p = np.flatnonzero(yb == vals[0])
            q = np.flatnonzero(yb == vals[1])
            if p.size == 0 or q.size == 0:
                continue
            if hermitian is None:
                hermitian = bool(np.array_equal(sub, sub.conj().T))
            s = _top_singular_value(sub[np.ix_(p, q)])
            if not hermitian:
                s = max(s, _top_singular_value(sub[np.ix_(q, p)]))
            best[k] = max(best[k], abs(vals[1] - vals[0]) * s)
    return best


def diagonal_commutator_norm(blocks: Sequence[tuple[np.ndarray, np.ndarray]], yd: np.ndarray) -> float:
    return diagonal_commutator_norms(blocks, [yd])[0]


def _commutator_norm_with_diagonal(x: np.ndarray, yd: np.ndarray, blocks=None) -> float:
    if blocks is None:
        blocks = block_partition(x)
    return diagonal_commutator_norm([(b, x[np.ix_(b, b)]) for b in blocks], yd)


def commutator_norm(x: GlobalOperator, y: GlobalOperator, *, blocks: list[np.ndarray] | None = None) -> float:
    """Spectral norm of ``xy - yx``.

    ``blocks`` may carry a precomputed :func:`block_partition` of ``x`` (only
    consulted when ``y`` is diagonal); pass it when the same ``x`` is
    commuted with many diagonal probes.
    """
    _check_same_lattice(x, y)
    xm, ym = x.matrix, y.matrix
    yd = y.diagonal_entries
    if yd is not None:
        return _commutator_norm_with_diagonal(xm, yd, blocks)
    xd = x.diagonal_entries
    if xd is not None:
        return _commutator_norm_with_diagonal(ym, xd)
    best = 0.0
    for b in block_partition(xm, ym):
        if b.size == xm.shape[0]:
            xb, yb = xm, ym
        else:
            idx = np.ix_(b, b)
            xb, yb = xm[idx], ym[idx]
        best = max(best, _dense_norm(xb @ yb - yb @ xb))
    return best


def split_dims(lattice: Lattice, region: SiteInterval) -> tuple[int, int, int]:
    """Dimensions of the sites left of, inside and right of ``region``."""
    r = lattice.local_dim
    return r**region.lo, r**region.size, r ** (lattice.num_sites - 1 - region.hi)


def reduce_to(x: GlobalOperator, region: SiteInterval) -> LocalOperator:
    """Normalized partial trace of ``x`` over the complement of ``region``."""
    x.lattice.check(region)
    dl, dr, dq = split_dims(x.lattice, region)
    t = x.matrix.reshape(dl, dr, dq, dl, dr, dq)
    red = np.einsum("aibajb->ij", t) / (dl * dq)
    return LocalOperator(region, red, x.lattice.local_dim)


def restrict(x: GlobalOperator, region: SiteInterval) -> GlobalOperator:
    """Best approximation of ``x`` supported on ``region``.

    ``(Tr_complement x) / r^|complement|``, tensored back with the identity.
    """
    if region == x.lattice.full:
        x.lattice.check(region)
        return x
    return embed(reduce_to(x, region), x.lattice)


def _weyl_site(r: int, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
    """X^a Z^b as (perm, phase) with ``W|k> = phase[k] |perm[k]>``."""
    k = np.arange(r)
    return (k + a) % r, np.exp(2j * np.pi * b * k / r)


def pauli_twirl(x: GlobalOperator, region: SiteInterval) -> GlobalOperator:
    """Uniform average of ``W x W^dagger`` over every Pauli (Weyl) string ``W`` on the complement.

    For ``r = 2`` these are the ordinary Pauli strings. The average is
    enumerated term by term, which makes this an independent route to
    :func:`restrict`.
    """
    lat = x.lattice
    lat.check(region)
    comp = [s for s in range(lat.num_sites) if not region.lo <= s <= region.hi]
    if len(comp) > TWIRL_MAX_SITES:
        raise BudgetError(f"twirl over {len(comp)} sites exceeds the enumeration budget of {TWIRL_MAX_SITES}")
    r = lat.local_dim
    ident = (np.arange(r), np.ones(r, dtype=complex))
    labels = list(itertools.product(range(r), repeat=2))
    acc = np.zeros_like(x.matrix)
    m = x.matrix
    for choice in itertools.product(labels, repeat=len(comp)):
        per_site = [ident] * lat.num_sites
        for s, (a, b) in zip(comp, choice):
            per_site[s] = _weyl_site(r, a, b)
        perm, phase = per_site[0]
        for p2, ph2 in per_site[1:]:
            perm = (perm[:, None] * r + p2[None, :]).ravel()
            phase = np.outer(phase, ph2).ravel()
        # (W x W^dag)[perm_i, perm_j] = phase_i x_ij conj(phase_j)
        conj = phase[:, None] * m * phase.conj()[None, :]
        acc[np.ix_(perm, perm)] += conj
    return GlobalOperator(acc / len(labels) ** len(comp), lat)


def distance(a: SiteInterval, b: SiteInterval) -> int:
    """``min |i - j|`` over ``i`` in ``a`` and ``j`` in ``b``; zero on overlap."""
    return max(0, max(a.lo, b.lo) - min(a.hi, b.hi))


def ball(region: SiteInterval, radius: int, lattice: Lattice) -> SiteInterval:
    """Sites within ``radius`` of ``region``, clipped to the chain."""
    if radius < 0:
        raise RangeError(f"negative radius {radius}")
    return SiteInterval(max(0, region.lo - radius), min(lattice.num_sites - 1, region.hi + radius))
