"""Scenario configuration: a single JSON document, validated into dataclasses.

Every validation failure raises :class:`ConfigError` with the dotted path of
the offending field (``perturbations[1].support`` and so on). The config
hash covers everything except the ``output`` block, after defaults have been
filled in, so spelling out a default does not change it.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from lrlab.errors import ConfigError
from lrlab.operators import DENSE_DIM_LIMIT, PAULI

MODES = ("lightcone", "perturbed", "dual", "avalanche", "proofcheck")
PERTURBATION_KINDS = ("field", "grain", "avalanche", "adiabatic", "periodic")
BOUND_KINDS_BY_MODE = {
    "lightcone": {"base", "slow", "restriction"},
    "perturbed": {"full", "far", "single", "single_slow"},
    "avalanche": {"full", "far", "single", "single_slow"},
    "dual": {"base", "slow", "full", "far"},
    "proofcheck": set(),
}
PROOF_CHECKS = ("interaction_picture", "commuting_factorization", "duhamel", "splitting", "restriction")


def _get(d: dict, key: str, path: str, kind, default=..., *, allow_none=False):
    if key not in d:
        if default is ...:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    value = d[key]
    if value is None and allow_none:
        return None
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{path}.{key}", "expected an integer")
    if not isinstance(value, kind):
        name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise ConfigError(f"{path}.{key}", f"expected {name}, got {type(value).__name__}")
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"{path}.{key}", "must be finite")
    return value


def _interval(value, path: str, n_sites: int) -> tuple[int, int]:
    if not (isinstance(value, list) and len(value) == 2 and all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
        raise ConfigError(path, "expected [lo, hi] with integer sites")
    lo, hi = value
    if not 0 <= lo <= hi < n_sites:
        raise ConfigError(path, f"interval [{lo}, {hi}] outside a {n_sites}-site chain")
    return lo, hi


def _unknown(d: dict, allowed: set[str], path: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{path}.{extra[0]}", "unknown field")


def _pauli_label(value, path: str) -> str:
    if not isinstance(value, str) or not value or any(c not in PAULI for c in value.lower()):
        raise ConfigError(path, f"expected a Pauli label such as 'z' or 'xx', got {value!r}")
    return value.lower()


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "xxz"
    N: int = 2
    delta: float = 0.0
    boundary: str = "open"
    coupling: float = 1.0
    local_dim: int = 2
    terms: tuple[tuple[str, int, float], ...] = ()

    @classmethod
    def parse(cls, d: Any, path: str = "model") -> ModelConfig:
        if not isinstance(d, dict):
            raise ConfigError(path, "expected an object")
        _unknown(d, {"kind", "N", "delta", "boundary", "coupling", "local_dim", "terms"}, path)
        kind = _get(d, "kind", path, str, "xxz")
        if kind not in ("xxz", "custom"):
            raise ConfigError(f"{path}.kind", f"expected 'xxz' or 'custom', got {kind!r}")
        n = _get(d, "N", path, int)
        local_dim = _get(d, "local_dim", path, int, 2)
        if local_dim != 2:
            raise ConfigError(f"{path}.local_dim", "only spin-1/2 chains (local_dim 2) can be configured")
        if n < 1:
            raise ConfigError(f"{path}.N", "must be >= 1")
        if local_dim**n > DENSE_DIM_LIMIT:
            raise ConfigError(f"{path}.N", f"{n} sites exceed the dense budget of dimension {DENSE_DIM_LIMIT}")
        boundary = _get(d, "boundary", path, str, "open")
        if boundary != "open":
            raise ConfigError(f"{path}.boundary", "only 'open' boundaries are supported")
        terms = []
        if kind == "custom":
            raw = _get(d, "terms", path, list)
            for k, t in enumerate(raw):
                tp = f"{path}.terms[{k}]"
                if not isinstance(t, dict):
                    raise ConfigError(tp, "expected an object")
                _unknown(t, {"op", "site", "coeff"}, tp)
                op = _pauli_label(t.get("op"), f"{tp}.op")
                site = _get(t, "site", tp, int)
                if not 0 <= site <= n - len(op):
                    raise ConfigError(f"{tp}.site", f"{op!r} at site {site} does not fit in {n} sites")
                terms.append((op, site, _get(t, "coeff", tp, float, 1.0)))
        elif n < 2:
            raise ConfigError(f"{path}.N", "the XXZ chain needs N >= 2")
        return cls(
            kind=kind,
            N=n,
            delta=_get(d, "delta", path, float, 0.0),
            boundary=boundary,
            coupling=_get(d, "coupling", path, float, 1.0),
            local_dim=local_dim,
            terms=tuple(terms),
        )


@dataclass(frozen=True)
class DisorderConfig:
    region: tuple[int, int]
    W: float = 0.0
    base_seed: int = 0
    n_realizations: int = 1
    stream: int = 0

    @classmethod
    def parse(cls, d: Any, n_sites: int, path: str = "disorder") -> DisorderConfig:
        if d is None:
            d = {}
        if not isinstance(d, dict):
            raise ConfigError(path, "expected an object")
        _unknown(d, {"region", "W", "base_seed", "n_realizations", "stream"}, path)
        region = d.get("region")
        region = (0, n_sites - 1) if region is None else _interval(region, f"{path}.region", n_sites)
        w = _get(d, "W", path, float, 0.0)
        if w < 0:
            raise ConfigError(f"{path}.W", "must be >= 0")
        seed = _get(d, "base_seed", path, int, 0)
        if not 0 <= seed < 2**64:
            raise ConfigError(f"{path}.base_seed", "must be an unsigned 64-bit integer")
        n = _get(d, "n_realizations", path, int, 1)
        if n < 1:
            raise ConfigError(f"{path}.n_realizations", "must be >= 1")
        stream = _get(d, "stream", path, int, 0)
        if stream < 0:
            raise ConfigError(f"{path}.stream", "must be >= 0")
        return cls(region, w, seed, n, stream)


@dataclass(frozen=True)
class PerturbationConfig:
    kind: str
    support: tuple[int, int]
    axis: str = "z"
    strength: float = 1.0
    sigma: float | None = None
    normalized: bool = True
    tau: float | None = None
    ramp: str = "linear"
    period: float | None = None
    waveform: str = "cosine"
    base: str = "field"

    @classmethod
    def parse(cls, d: Any, n_sites: int, path: str) -> PerturbationConfig:
        if not isinstance(d, dict):
            raise ConfigError(path, "expected an object")
        allowed = {"kind", "support", "axis", "strength", "sigma", "normalized", "tau", "ramp", "period", "waveform", "base"}
        _unknown(d, allowed, path)
        kind = _get(d, "kind", path, str)
        if kind not in PERTURBATION_KINDS:
            raise ConfigError(f"{path}.kind", f"expected one of {list(PERTURBATION_KINDS)}, got {kind!r}")
        support = _interval(d.get("support"), f"{path}.support", n_sites)
        axis = _get(d, "axis", path, str, "z")
        if axis not in ("x", "y", "z"):
            raise ConfigError(f"{path}.axis", f"expected x, y or z, got {axis!r}")
        base = _get(d, "base", path, str, "field")
        uses_field = kind == "field" or (kind in ("adiabatic", "periodic") and base == "field")
        if uses_field and support[0] != support[1]:
            raise ConfigError(f"{path}.support", "a field acts on a single site")
        if kind in ("adiabatic", "periodic") and base not in ("field", "grain"):
            raise ConfigError(f"{path}.base", "expected 'field' or 'grain'")
        sigma = _get(d, "sigma", path, float, None, allow_none=True)
        if sigma is not None and sigma <= 0:
            raise ConfigError(f"{path}.sigma", "must be positive")
        tau = period = None
        if kind == "adiabatic":
            tau = _get(d, "tau", path, float)
            if tau <= 0:
                raise ConfigError(f"{path}.tau", "must be positive")
        if kind == "periodic":
            period = _get(d, "period", path, float)
            if period <= 0:
                raise ConfigError(f"{path}.period", "must be positive")
        ramp = _get(d, "ramp", path, str, "linear")
        if ramp != "linear":
            raise ConfigError(f"{path}.ramp", "only the 'linear' ramp can be configured")
        waveform = _get(d, "waveform", path, str, "cosine")
        if waveform != "cosine":
            raise ConfigError(f"{path}.waveform", "only the 'cosine' waveform can be configured")
        return cls(
            kind=kind,
            support=support,
            axis=axis,
            strength=_get(d, "strength", path, float, 1.0),
            sigma=sigma,
            normalized=_get(d, "normalized", path, bool, True),
            tau=tau,
            ramp=ramp,
            period=period,
            waveform=waveform,
            base=base,
        )


@dataclass(frozen=True)
class ProbeConfig:
    """``A``: a Pauli label at a site, or ``perturbation: k`` for the k-th perturbation.

    ``B``: a Pauli label at explicit ``sites`` or at ``distances`` to the right of ``A``.
    """

    a_op: str | None
    a_site: int | None
    a_perturbation: int | None
    b_op: str
    b_sites: tuple[int, ...]

    @classmethod
    def parse(cls, d: Any, n_sites: int, n_perturbations: int, perturbations, path: str = "probes") -> ProbeConfig:
        if not isinstance(d, dict):
            raise ConfigError(path, "expected an object")
        _unknown(d, {"A", "B"}, path)
        a = d.get("A")
        if not isinstance(a, dict):
            raise ConfigError(f"{path}.A", "expected an object")
        _unknown(a, {"op", "site", "perturbation"}, f"{path}.A")
        if "perturbation" in a:
            idx = _get(a, "perturbation", f"{path}.A", int)
            if not 0 <= idx < n_perturbations:
                raise ConfigError(f"{path}.A.perturbation", f"no perturbation with index {idx}")
            a_op, a_site, a_hi = None, None, perturbations[idx].support[1]
        else:
            a_op = _pauli_label(a.get("op"), f"{path}.A.op")
            a_site = _get(a, "site", f"{path}.A", int)
            if not 0 <= a_site <= n_sites - len(a_op):
                raise ConfigError(f"{path}.A.site", f"{a_op!r} at {a_site} does not fit in {n_sites} sites")
            idx, a_hi = None, a_site + len(a_op) - 1
        b = d.get("B")
        if not isinstance(b, dict):
            raise ConfigError(f"{path}.B", "expected an object")
        _unknown(b, {"op", "sites", "distances"}, f"{path}.B")
        b_op = _pauli_label(b.get("op"), f"{path}.B.op")
        if ("sites" in b) == ("distances" in b):
            raise ConfigError(f"{path}.B", "give exactly one of 'sites' or 'distances'")
        key = "sites" if "sites" in b else "distances"
        raw = b[key]
        if not isinstance(raw, list) or not raw or not all(isinstance(v, int) and not isinstance(v, bool) for v in raw):
            raise ConfigError(f"{path}.B.{key}", "expected a non-empty list of integers")
        sites = tuple(raw) if key == "sites" else tuple(a_hi + v for v in raw)
        for k, s in enumerate(sites):
            if not 0 <= s <= n_sites - len(b_op):
                raise ConfigError(f"{path}.B.{key}[{k}]", f"site {s} outside the chain")
        return cls(a_op, a_site, idx, b_op, sites)


@dataclass(frozen=True)
class ScheduleConfig:
    times: tuple[float, ...] = (1.0,)
    tol: float = 1e-8

    @classmethod
    def parse(cls, d: Any, path: str = "schedule") -> ScheduleConfig:
        if not isinstance(d, dict):
            raise ConfigError(path, "expected an object")
        _unknown(d, {"times", "tol"}, path)
        raw = d.get("times")
        if not isinstance(raw, list) or not raw:
            raise ConfigError(f"{path}.times", "expected a non-empty list of times")
        times = []
        for k, t in enumerate(raw):
            if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t) or t < 0:
                raise ConfigError(f"{path}.times[{k}]", "times must be finite and >= 0")
            times.append(float(t))
        tol = _get(d, "tol", path, float, 1e-8)
        if not tol > 0:
            raise ConfigError(f"{path}.tol", "must be positive")
        return cls(tuple(times), tol)


@dataclass(frozen=True)
class ReferenceConfig:
    """Unperturbed run whose lightcone fit supplies ``K, xi, beta``."""

    probes: ProbeConfig
    times: tuple[float, ...]
    n_realizations: int


@dataclass(frozen=True)
class AnalysisConfig:
    fit: bool = True
    bounds: tuple[str, ...] = ()
    safety: float = 2.0
    n: float = 1.0
    params: tuple[float, float, float] | None = None
    fixed_beta: float | None = None
    reference: ReferenceConfig | None = None
    checks: tuple[str, ...] = ()
    cut: int | None = None
    half_widths: tuple[int, ...] = ()
    radius: int | None = None


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "results"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_id: str
    mode: str
    model: ModelConfig
    disorder: DisorderConfig
    perturbations: tuple[PerturbationConfig, ...]
    probes: ProbeConfig | None
    schedule: ScheduleConfig
    analysis: AnalysisConfig
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def hash(self) -> str:
        return config_hash(self)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _parse_analysis(d: Any, mode: str, model: ModelConfig, disorder: DisorderConfig, perts, path="analysis"):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ConfigError(path, "expected an object")
    allowed = {"fit", "bounds", "safety", "n", "params", "fixed_beta", "reference", "checks", "cut", "half_widths", "radius"}
    _unknown(d, allowed, path)
    bounds = d.get("bounds", [])
    if not isinstance(bounds, list) or not all(isinstance(b, str) for b in bounds):
        raise ConfigError(f"{path}.bounds", "expected a list of bound kinds")
    for k, b in enumerate(bounds):
        if b not in BOUND_KINDS_BY_MODE[mode]:
            raise ConfigError(f"{path}.bounds[{k}]", f"bound {b!r} does not apply to mode {mode!r}")
    safety = _get(d, "safety", path, float, 2.0)
    if safety < 1:
        raise ConfigError(f"{path}.safety", "must be >= 1")
    n = _get(d, "n", path, float, 1.0)
    if n < 1:
        raise ConfigError(f"{path}.n", "must be >= 1")
    params = d.get("params")
    if params is not None:
        if not isinstance(params, dict):
            raise ConfigError(f"{path}.params", "expected an object with K, xi, beta")
        _unknown(params, {"K", "xi", "beta"}, f"{path}.params")
        K = _get(params, "K", f"{path}.params", float)
        xi = _get(params, "xi", f"{path}.params", float)
        beta = _get(params, "beta", f"{path}.params", float, 1.0)
        if K <= 0:
            raise ConfigError(f"{path}.params.K", "must be positive")
        if xi <= 0:
            raise ConfigError(f"{path}.params.xi", "must be positive")
        if beta < 0:
            raise ConfigError(f"{path}.params.beta", "must be >= 0")
        params = (K, xi, beta)
    fixed_beta = _get(d, "fixed_beta", path, float, None, allow_none=True)
    if fixed_beta is not None and fixed_beta < 0:
        raise ConfigError(f"{path}.fixed_beta", "must be >= 0")
    reference = None
    if d.get("reference") is not None:
        rp = f"{path}.reference"
        r = d["reference"]
        if not isinstance(r, dict):
            raise ConfigError(rp, "expected an object")
        _unknown(r, {"probes", "times", "n_realizations"}, rp)
        probes = ProbeConfig.parse(r.get("probes"), model.N, 0, (), f"{rp}.probes")
        times = ScheduleConfig.parse({"times": r.get("times")}, rp).times
        n_ref = _get(r, "n_realizations", rp, int, disorder.n_realizations)
        if n_ref < 1:
            raise ConfigError(f"{rp}.n_realizations", "must be >= 1")
        reference = ReferenceConfig(probes, times, n_ref)
    checks = d.get("checks", list(PROOF_CHECKS) if mode == "proofcheck" else [])
    if not isinstance(checks, list) or not all(isinstance(c, str) for c in checks):
        raise ConfigError(f"{path}.checks", "expected a list of check names")
    for k, c in enumerate(checks):
        if c not in PROOF_CHECKS:
            raise ConfigError(f"{path}.checks[{k}]", f"unknown check {c!r}")
    cut = _get(d, "cut", path, int, None, allow_none=True)
    if cut is not None and not 0 <= cut < model.N - 1:
        raise ConfigError(f"{path}.cut", "must leave sites on both sides")
    hw = d.get("half_widths", [])
    if not isinstance(hw, list) or not all(isinstance(w, int) and not isinstance(w, bool) and w >= 0 for w in hw):
        raise ConfigError(f"{path}.half_widths", "expected a list of non-negative integers")
    radius = _get(d, "radius", path, int, None, allow_none=True)
    if radius is not None and radius < 0:
        raise ConfigError(f"{path}.radius", "must be >= 0")
    if mode == "proofcheck":
        if "splitting" in checks:
            if cut is None:
                raise ConfigError(f"{path}.cut", "the splitting check needs a cut")
            if not hw:
                raise ConfigError(f"{path}.half_widths", "the splitting check needs at least one half width")
            for k, w in enumerate(hw):
                for j, p in enumerate(perts):
                    if not (p.support[1] < cut - w or p.support[0] > cut + w):
                        raise ConfigError(
                            f"perturbations[{j}].support",
                            f"intersects the free region [{cut - w}, {cut + w}] of half_widths[{k}]",
                        )
        if "restriction" in checks and radius is None:
            raise ConfigError(f"{path}.radius", "the restriction check needs a radius")
        needs_params = any(c in ("splitting", "restriction") for c in checks)
        if needs_params and params is None and reference is None:
            raise ConfigError(f"{path}.reference", "bound checks need params or a reference fit")
    if bounds and mode != "lightcone" and params is None and reference is None:
        raise ConfigError(f"{path}.reference", "perturbed bounds need params or a reference fit")
    return AnalysisConfig(
        fit=_get(d, "fit", path, bool, mode == "lightcone"),
        bounds=tuple(bounds),
        safety=safety,
        n=n,
        params=params,
        fixed_beta=fixed_beta,
        reference=reference,
        checks=tuple(checks),
        cut=cut,
        half_widths=tuple(hw),
        radius=radius,
    )


def _check_free_region(mode: str, analysis: AnalysisConfig, probes: ProbeConfig | None, supports, n: float) -> None:
    """Pre-validate the free-region requirement of the perturbed bounds."""
    if not ({"full", "far"} & set(analysis.bounds)) or probes is None or probes.a_site is None:
        return
    a_lo, a_hi = probes.a_site, probes.a_site + len(probes.a_op) - 1
    for k, b in enumerate(probes.b_sites):
        b_lo, b_hi = b, b + len(probes.b_op) - 1
        left_hi, right_lo = (a_hi, b_lo) if a_lo <= b_lo else (b_hi, a_lo)
        d = max(0, right_lo - left_hi)
        walls = [left_hi, right_lo]
        for p_lo, p_hi in supports:
            lo, hi = max(p_lo, left_hi), min(p_hi, right_lo)
            if lo <= hi:
                walls += [lo, hi]
        walls.sort()
        free = max((hi - lo for lo, hi in zip(walls, walls[1:])), default=0)
        if free < d / n:
            raise ConfigError(f"probes.B.sites[{k}]", f"free region {free} is smaller than dist/n = {d / n:g}")


def parse_config(raw: Any) -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ConfigError("$", "the configuration must be a JSON object")
    _unknown(raw, {"scenario_id", "mode", "model", "disorder", "perturbations", "probes", "schedule", "analysis", "output"}, "$")
    scenario_id = _get(raw, "scenario_id", "$", str, "scenario")
    mode = _get(raw, "mode", "$", str, "lightcone")
    if mode not in MODES:
        raise ConfigError("mode", f"expected one of {list(MODES)}, got {mode!r}")
    model = ModelConfig.parse(raw.get("model"))
    disorder = DisorderConfig.parse(raw.get("disorder"), model.N)
    raw_perts = raw.get("perturbations", [])
    if not isinstance(raw_perts, list):
        raise ConfigError("perturbations", "expected a list")
    perts = tuple(PerturbationConfig.parse(p, model.N, f"perturbations[{k}]") for k, p in enumerate(raw_perts))
    if mode == "avalanche" and not any(p.kind == "avalanche" for p in perts):
        raise ConfigError("perturbations", "avalanche mode needs an 'avalanche' perturbation")
    if mode in ("perturbed", "avalanche") and not perts:
        raise ConfigError("perturbations", f"mode {mode!r} needs at least one perturbation")
    probes = None
    if raw.get("probes") is not None:
        probes = ProbeConfig.parse(raw["probes"], model.N, len(perts), perts)
    elif mode != "proofcheck":
        raise ConfigError("probes", "missing required field")
    if mode == "lightcone" and perts:
        raise ConfigError("perturbations", "lightcone mode runs the unperturbed model; remove the perturbations")
    if probes is not None and probes.a_perturbation is not None and mode in ("lightcone", "dual"):
        raise ConfigError("probes.A.perturbation", f"mode {mode!r} needs a Pauli probe A")
    schedule = ScheduleConfig.parse(raw.get("schedule"))
    analysis = _parse_analysis(raw.get("analysis"), mode, model, disorder, perts)
    if mode == "dual":
        # the dual picture removes the disorder again outside its region
        lo, hi = disorder.region
        supports = [(j, j) for j in range(model.N) if not lo <= j <= hi]
    else:
        supports = [p.support for p in perts]
    _check_free_region(mode, analysis, probes, supports, analysis.n)
    if mode == "proofcheck" and "restriction" in analysis.checks and (probes is None or probes.a_site is None):
        raise ConfigError("probes.A", "the restriction check needs a Pauli probe A")
    out = raw.get("output", {}) or {}
    if not isinstance(out, dict):
        raise ConfigError("output", "expected an object")
    _unknown(out, {"directory", "formats"}, "output")
    formats = out.get("formats", ["csv", "json"])
    if not isinstance(formats, list) or not set(formats) <= {"csv", "json"}:
        raise ConfigError("output.formats", "expected a subset of ['csv', 'json']")
    output = OutputConfig(_get(out, "directory", "output", str, "results"), tuple(formats))
    return ScenarioConfig(scenario_id, mode, model, disorder, perts, probes, schedule, analysis, output)


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError("$", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"{path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: ScenarioConfig) -> str:
    """sha256 of the normalized config without its ``output`` block."""
    d = cfg.to_dict()
    d.pop("output", None)
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()


def with_overrides(raw: dict, *, seed: int | None = None, tol: float | None = None, mode: str | None = None) -> dict:
    """Copy of a raw config dict with CLI overrides applied."""
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw.setdefault("disorder", {})["base_seed"] = seed
    if tol is not None:
        raw.setdefault("schedule", {})["tol"] = tol
    if mode is not None:
        raw["mode"] = mode
    return raw


def set_path(raw: dict, axis: str, value) -> dict:
    """Copy of ``raw`` with the scalar at dotted ``axis`` (``perturbations[0].tau``) replaced."""
    raw = copy.deepcopy(raw)
    node = raw
    parts = _split_axis(axis)
    for part in parts[:-1]:
        try:
            node = node[part]
        except (KeyError, IndexError, TypeError) as exc:
            raise ConfigError(axis, "unknown axis path") from exc
    last = parts[-1]
    try:
        current = node[last]
    except (KeyError, IndexError, TypeError) as exc:
        raise ConfigError(axis, "unknown axis path") from exc
    if isinstance(current, (dict, list)):
        raise ConfigError(axis, "axis must point at a scalar field")
    node[last] = value
    return raw


def _split_axis(axis: str) -> list:
    parts: list = []
    for piece in axis.split("."):
        if not piece:
            raise ConfigError(axis, "empty path component")
        name, *indices = piece.replace("]", "").split("[")
        if name:
            parts.append(name)
        for idx in indices:
            if not idx.isdigit():
                raise ConfigError(axis, f"bad index {idx!r}")
            parts.append(int(idx))
    return parts
