"""Problem specification: JSON schema, parsing with line-located errors, and a
canonical serialization used for hashing and golden-file round trips."""
from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cell import DissipationPotential
from .convex import ConvexPotential
from .fields import Constitutive, MatrixField, Mode, OscillatoryField, SlowProfile

DEFAULT_TOLERANCES = {
    "cg_rtol": 1e-10,
    "newton_tol": 1e-8,
    "max_nl_iter": 500,
    "newton_free_steps": 20,
    "max_halvings": 5,
    "psi0_gtol": 1e-8,
    "fenchel_gap": 1e-8,
    "l1_slack": 0.1,
    "apriori_slack": 1e-6,
    "contraction_slack": 1e-8,
    "relaxation": 1.0,
}

CATALOG = ("identity", "constant", "power", "saturating", "holder")


class ConfigError(ValueError):
    """Schema violations, each as (line, message)."""

    def __init__(self, errors: list[tuple[int, str]]):
        self.errors = errors
        super().__init__("; ".join(f"line {ln}: {msg}" for ln, msg in errors))


# --------------------------------------------------------------------------
# spec dataclasses


@dataclass(frozen=True)
class DomainSpec:
    dim: int = 1
    N: int = 64
    points_per_eps: float | None = None
    T: float = 0.1
    dt: float = 1e-3
    N_ref: int | None = None

    def grid_size(self, eps: float | None) -> int:
        """Grid rule N(eps); the homogenized run (eps None) uses N."""
        if eps is None or self.points_per_eps is None:
            return self.N
        return int(math.ceil(self.points_per_eps / eps - 1e-9))


@dataclass(frozen=True)
class FluxSpec:
    kind: str = "linear"
    K: MatrixField | None = None
    psi: DissipationPotential | None = None
    bounds: tuple[float, float] = (1.0, 1.0)
    c_alpha: float | None = None
    h_alpha: float = 0.0
    eta_max: float = 10.0
    table_size: int = 81

    @property
    def h(self) -> Constitutive | None:
        return self.K.modulation if self.K is not None else None

    @property
    def coercivity(self) -> float:
        return self.bounds[0] if self.c_alpha is None else self.c_alpha


@dataclass(frozen=True)
class SourceSpec:
    oscillation: OscillatoryField = OscillatoryField(0.0)
    nonlinearity: Constitutive | None = None
    h_f: float = 0.0
    c_f: float | None = None

    def growth(self) -> tuple[float, float]:
        """(c_f, sigma) of |f| <= c_f |u|^sigma + |h_f|."""
        sig = 0.0
        if self.nonlinearity is not None:
            sig = min(max(self.nonlinearity.growth_exponent, 0.0), 1.0)
        amp = self.oscillation.bound()
        if self.nonlinearity is None:
            c = 0.0
        elif self.nonlinearity.name == "constant":
            c = amp * abs(self.nonlinearity.param)
        elif self.nonlinearity.name == "power":
            c = amp * abs(self.nonlinearity.param)
        else:
            c = amp
        return (c if self.c_f is None else self.c_f), sig


@dataclass(frozen=True)
class InitialSpec:
    oscillation: OscillatoryField = OscillatoryField(1.0)
    profile: SlowProfile = SlowProfile("constant", {"offset": 0.0})


@dataclass(frozen=True)
class CellSpec:
    M: int = 256
    Q: int = 64


@dataclass(frozen=True)
class WeakTests:
    """Test family sin(k pi x) (t/T)^j, k = 1..modes, j = 0..powers-1."""

    modes: int = 4
    powers: int = 3


@dataclass(frozen=True)
class ProblemSpec:
    name: str = "problem"
    domain: DomainSpec = DomainSpec()
    potential: ConvexPotential = ConvexPotential("quadratic")
    flux: FluxSpec = FluxSpec()
    source: SourceSpec = SourceSpec()
    initial: InitialSpec = InitialSpec()
    eps: tuple[float, ...] = ()
    cell: CellSpec = CellSpec()
    tolerances: dict = field(default_factory=dict, compare=False, hash=False)
    seed: int = 0
    weak_tests: WeakTests = WeakTests()

    def tol(self, key: str):
        return self.tolerances.get(key, DEFAULT_TOLERANCES[key])

    @property
    def dim(self) -> int:
        return self.domain.dim


# --------------------------------------------------------------------------
# locating keys in the source text


def _locate(text: str, path: tuple) -> int:
    """Line of the last key of ``path`` found by scanning keys in order (1-based)."""
    pos = 0
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1


class _Reader:
    def __init__(self, text: str):
        self.text = text
        self.errors: list[tuple[int, str]] = []

    def error(self, path: tuple, msg: str):
        where = ".".join(str(p) for p in path) or "<root>"
        self.errors.append((_locate(self.text, path), f"{where}: {msg}"))

    def get(self, obj: dict, key: str, path: tuple, kind=None, default=..., required=False):
        if key not in obj:
            if required:
                self.error(path, f"missing required key {key!r}")
            return None if default is ... else default
        v = obj[key]
        wrong = kind is not None and (not isinstance(v, kind) or isinstance(v, bool))
        if wrong:
            self.error(path + (key,), f"expected {getattr(kind, '__name__', kind)}")
            return None if default is ... else default
        return v

    def unknown(self, obj: dict, allowed, path: tuple):
        for k in obj:
            if k not in allowed:
                self.error(path + (k,), "unknown key")


_NUM = (int, float)


def _parse_field(r: _Reader, obj, path: tuple, dim: int, default: float = 0.0):
    if obj is None:
        return OscillatoryField.constant_field(default, dim)
    if isinstance(obj, _NUM) and not isinstance(obj, bool):
        return OscillatoryField.constant_field(float(obj), dim)
    if not isinstance(obj, dict):
        r.error(path, "field must be a number or an object")
        return OscillatoryField.constant_field(default, dim)
    r.unknown(obj, ("constant", "modes"), path)
    const = r.get(obj, "constant", path, _NUM, 0.0)
    modes = []
    for j, m in enumerate(r.get(obj, "modes", path, list, [])):
        mp = path + ("modes", j)
        if not isinstance(m, dict):
            r.error(mp, "mode must be an object")
            continue
        r.unknown(m, ("amplitude", "frequency", "cycles", "phase", "waveform"), mp)
        if ("frequency" in m) == ("cycles" in m):
            r.error(mp, "give exactly one of 'frequency' (angular) or 'cycles'")
            continue
        raw = m.get("frequency", m.get("cycles"))
        freq = np.atleast_1d(np.asarray(raw, dtype=float))
        if "cycles" in m:
            freq = 2.0 * math.pi * freq
        if freq.size != dim:
            r.error(mp, f"frequency has {freq.size} components, expected {dim}")
            continue
        if not np.any(freq):
            r.error(mp, f"mode {j} has zero frequency")
            continue
        wf = r.get(m, "waveform", mp, str, "sine")
        if wf not in ("sine", "cosine"):
            r.error(mp + ("waveform",), f"unknown waveform {wf!r}")
            continue
        modes.append(Mode(float(r.get(m, "amplitude", mp, _NUM, 1.0)), tuple(freq),
                          float(r.get(m, "phase", mp, _NUM, 0.0)), wf))
    return OscillatoryField(float(const), tuple(modes), dim)


def _parse_constitutive(r: _Reader, obj, path: tuple):
    if obj is None:
        return None
    if isinstance(obj, str):
        obj = {"name": obj}
    if not isinstance(obj, dict):
        r.error(path, "catalog entry must be a name or an object")
        return None
    r.unknown(obj, ("name", "param"), path)
    name = r.get(obj, "name", path, str, required=True)
    if name is None:
        return None
    if name not in CATALOG:
        r.error(path + ("name",), f"unknown catalog name {name!r}")
        return None
    try:
        return Constitutive(name, obj.get("param"))
    except ValueError as exc:
        r.error(path, str(exc))
        return None


def _parse_matrix(r: _Reader, obj, path: tuple, dim: int, modulation):
    if obj is None:
        return MatrixField.constant_matrix(np.eye(dim), modulation)
    if isinstance(obj, list):
        if len(obj) != dim or any(not isinstance(row, list) or len(row) != dim for row in obj):
            r.error(path, f"matrix must be {dim}x{dim}")
            return MatrixField.constant_matrix(np.eye(dim), modulation)
        ent = tuple(tuple(_parse_field(r, e, path + (i, j), dim) for j, e in enumerate(row))
                    for i, row in enumerate(obj))
        return MatrixField(ent, modulation)
    return MatrixField.scalar(_parse_field(r, obj, path, dim), modulation)


def _parse_potential(r: _Reader, obj, path: tuple, dim: int):
    if not isinstance(obj, dict):
        r.error(path, "potential must be an object")
        return ConvexPotential("quadratic")
    r.unknown(obj, ("kind", "a", "L", "h", "base", "breakpoints", "values", "curvature",
                    "oscillation", "constants"), path)
    kind = r.get(obj, "kind", path, str, required=True)
    if kind is None:
        return ConvexPotential("quadratic")
    if kind not in ConvexPotential.KINDS:
        r.error(path + ("kind",), f"unknown potential kind {kind!r}")
        return ConvexPotential("quadratic")
    kw = {}
    for key in ("a", "L", "curvature"):
        if key in obj:
            kw[key] = float(r.get(obj, key, path, _NUM, 1.0))
    if kind == "kirchhoff":
        kw["h"] = _parse_constitutive(r, obj.get("h"), path + ("h",))
        if "base" in obj:
            kw["base"] = _parse_potential(r, obj["base"], path + ("base",), dim)
    if kind == "tabulated":
        kw["breakpoints"] = tuple(r.get(obj, "breakpoints", path, list, [], True))
        kw["values"] = tuple(r.get(obj, "values", path, list, [], True))
    if "oscillation" in obj:
        kw["oscillation"] = _parse_field(r, obj["oscillation"], path + ("oscillation",), dim, 1.0)
    if "constants" in obj:
        kw["constants"] = dict(r.get(obj, "constants", path, dict, {}))
    try:
        return ConvexPotential(kind, **kw)
    except (ValueError, TypeError) as exc:
        r.error(path, str(exc))
        return ConvexPotential("quadratic")


def _parse_psi(r: _Reader, obj, path: tuple, dim: int, modulation):
    if not isinstance(obj, dict):
        r.error(path, "psi must be an object")
        return None
    r.unknown(obj, ("kind", "K", "coefficient", "mu"), path)
    kind = r.get(obj, "kind", path, str, required=True)
    if kind is None:
        return None
    try:
        if kind == "quadratic":
            return DissipationPotential("quadratic", K=_parse_matrix(r, obj.get("K"), path + ("K",),
                                                                     dim, None),
                                        modulation=modulation)
        return DissipationPotential(
            kind, coefficient=_parse_field(r, obj.get("coefficient"), path + ("coefficient",),
                                           dim, 1.0),
            mu=float(r.get(obj, "mu", path, _NUM, 0.0)), modulation=modulation)
    except ValueError as exc:
        r.error(path, str(exc))
        return None


def _sampled_bounds(K: MatrixField, dim: int) -> tuple[float, float]:
    """Extreme eigenvalues of K on a lattice over one base period."""
    freqs = [abs(c) for f in K.frequencies() for c in f if c != 0.0]
    span = 2.0 * math.pi / min(freqs) if freqs else 1.0
    s = np.linspace(0.0, span, 41)
    pts = s if dim == 1 else np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1).reshape(-1, 2)
    mats = np.asarray(K(pts)).reshape(-1, dim, dim)
    ev = np.linalg.eigvalsh(0.5 * (mats + np.swapaxes(mats, -1, -2)))
    return float(ev.min()), float(ev.max())


def _parse_flux(r: _Reader, obj, path: tuple, dim: int):
    if obj is None:
        obj = {}
    if not isinstance(obj, dict):
        r.error(path, "flux must be an object")
        return FluxSpec(K=MatrixField.constant_matrix(np.eye(dim)))
    r.unknown(obj, ("kind", "K", "h", "psi", "bounds", "c_alpha", "h_alpha", "eta_max",
                    "table_size"), path)
    kind = r.get(obj, "kind", path, str, "linear")
    h = _parse_constitutive(r, obj.get("h"), path + ("h",))
    if h is not None and not h.kirchhoff_admissible:
        r.error(path + ("h",), f"modulation {h.name!r} is not positive almost everywhere")
    bounds = r.get(obj, "bounds", path, list, None)
    extra = dict(c_alpha=obj.get("c_alpha"), h_alpha=float(obj.get("h_alpha", 0.0)),
                 eta_max=float(obj.get("eta_max", 10.0)), table_size=int(obj.get("table_size", 81)))
    if kind == "linear":
        K = _parse_matrix(r, obj.get("K"), path + ("K",), dim, h)
        lo, hi = _sampled_bounds(K, dim)
        if bounds is None:
            bounds = [lo, hi]
        b0, b1 = float(bounds[0]), float(bounds[1])
        if not (0 < b0 <= b1):
            r.error(path + ("bounds",), "ellipticity bounds need 0 < k0 <= k1")
        elif lo < b0 - 1e-12 or hi > b1 + 1e-12:
            r.error(path + ("bounds",), f"sampled eigenvalues [{lo:.6g}, {hi:.6g}] leave the "
                                        f"declared bounds [{b0:.6g}, {b1:.6g}]")
        if not K.is_symmetric:
            r.error(path + ("K",), "coefficient matrix must be symmetric")
        return FluxSpec("linear", K=K, bounds=(b0, b1), **extra)
    if kind == "nonlinear":
        psi = _parse_psi(r, obj.get("psi"), path + ("psi",), dim, h)
        if psi is not None and bounds is None:
            bounds = list(psi.coefficient_bounds())
        b0, b1 = (float(bounds[0]), float(bounds[1])) if bounds else (1.0, 1.0)
        if not (0 < b0 <= b1):
            r.error(path + ("bounds",), "ellipticity bounds need 0 < k0 <= k1")
        return FluxSpec("nonlinear", psi=psi, bounds=(b0, b1), **extra)
    r.error(path + ("kind",), f"unknown flux kind {kind!r}")
    return FluxSpec(K=MatrixField.constant_matrix(np.eye(dim)))


def _parse_profile(r: _Reader, obj, path: tuple):
    if obj is None:
        return SlowProfile("constant", {"offset": 0.0})
    if not isinstance(obj, dict):
        r.error(path, "profile must be an object")
        return SlowProfile()
    kind = r.get(obj, "kind", path, str, "constant")
    params = {k: v for k, v in obj.items() if k != "kind"}
    try:
        return SlowProfile(kind, params)
    except ValueError as exc:
        r.error(path + ("kind",), str(exc))
        return SlowProfile()


def parse_config_text(text: str) -> ProblemSpec:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([(exc.lineno, f"invalid JSON: {exc.msg}")]) from exc
    r = _Reader(text)
    if not isinstance(raw, dict):
        raise ConfigError([(1, "top level must be an object")])
    r.unknown(raw, ("name", "domain", "potential", "flux", "source", "initial", "eps", "cell",
                    "tolerances", "seed", "weak_tests"), ())
    dom = r.get(raw, "domain", (), dict, {})
    r.unknown(dom, ("dim", "N", "points_per_eps", "T", "dt", "N_ref"), ("domain",))
    dim = int(r.get(dom, "dim", ("domain",), int, 1))
    if dim not in (1, 2):
        r.error(("domain", "dim"), "dimension must be 1 or 2")
        dim = 1
    domain = DomainSpec(dim=dim, N=int(r.get(dom, "N", ("domain",), int, 64)),
                        points_per_eps=dom.get("points_per_eps"),
                        T=float(r.get(dom, "T", ("domain",), _NUM, 0.1)),
                        dt=float(r.get(dom, "dt", ("domain",), _NUM, 1e-3)),
                        N_ref=dom.get("N_ref"))
    if domain.N < 4:
        r.error(("domain", "N"), "need N >= 4")
    if not (domain.T > 0 and domain.dt > 0):
        r.error(("domain", "dt"), "T and dt must be positive")
    potential = _parse_potential(r, raw.get("potential", {"kind": "quadratic"}), ("potential",), dim)
    flux = _parse_flux(r, raw.get("flux"), ("flux",), dim)
    so = r.get(raw, "source", (), dict, {})
    r.unknown(so, ("oscillation", "nonlinearity", "h_f", "c_f"), ("source",))
    source = SourceSpec(_parse_field(r, so.get("oscillation"), ("source", "oscillation"), dim, 0.0),
                        _parse_constitutive(r, so.get("nonlinearity"), ("source", "nonlinearity")),
                        float(r.get(so, "h_f", ("source",), _NUM, 0.0)), so.get("c_f"))
    ini = r.get(raw, "initial", (), dict, {})
    r.unknown(ini, ("oscillation", "profile"), ("initial",))
    initial = InitialSpec(_parse_field(r, ini.get("oscillation"), ("initial", "oscillation"), dim, 1.0),
                          _parse_profile(r, ini.get("profile"), ("initial", "profile")))
    eps = tuple(float(e) for e in r.get(raw, "eps", (), list, []))
    if any(e <= 0 for e in eps):
        r.error(("eps",), "eps values must be positive")
    if list(eps) != sorted(eps, reverse=True) or len(set(eps)) != len(eps):
        r.error(("eps",), "eps values must be strictly decreasing")
    ce = r.get(raw, "cell", (), dict, {})
    r.unknown(ce, ("M", "Q"), ("cell",))
    cell = CellSpec(int(r.get(ce, "M", ("cell",), int, 256)), int(r.get(ce, "Q", ("cell",), int, 64)))
    if cell.M < 8:
        r.error(("cell", "M"), "need M >= 8")
    tol = dict(r.get(raw, "tolerances", (), dict, {}))
    for k, v in tol.items():
        if k not in DEFAULT_TOLERANCES:
            r.error(("tolerances", k), "unknown tolerance")
        elif not isinstance(v, _NUM) or not v > 0:
            r.error(("tolerances", k), "tolerance overrides must be positive")
    wt = r.get(raw, "weak_tests", (), dict, {})
    weak = WeakTests(int(wt.get("modes", 4)), int(wt.get("powers", 3)))
    if r.errors:
        raise ConfigError(r.errors)
    return ProblemSpec(name=str(raw.get("name", "problem")), domain=domain, potential=potential,
                       flux=flux, source=source, initial=initial, eps=eps, cell=cell,
                       tolerances={**DEFAULT_TOLERANCES, **tol}, seed=int(raw.get("seed", 0)), weak_tests=weak)


def parse_config(path) -> ProblemSpec:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# canonical form


def _field_dict(f: OscillatoryField):
    if not f.modes:
        return f.constant
    return {"constant": f.constant,
            "modes": [{"amplitude": m.amplitude,
                       "frequency": list(m.frequency) if len(m.frequency) > 1 else m.frequency[0],
                       "phase": m.phase, "waveform": m.waveform} for m in f.modes]}


def _matrix_dict(K: MatrixField):
    n = K.dim
    if n == 1:
        return _field_dict(K.entry(0, 0))
    return [[_field_dict(K.entry(i, j)) for j in range(n)] for i in range(n)]


def _potential_dict(P: ConvexPotential) -> dict:
    d: dict = {"kind": P.kind}
    if P.kind == "quadratic":
        d["a"] = P.a
    elif P.kind == "stefan":
        d["L"] = P.L
    elif P.kind == "kirchhoff":
        d["h"] = P.h.describe()
        d["base"] = _potential_dict(P.base)
    else:
        d.update(breakpoints=list(P.breakpoints), values=list(P.values), curvature=P.curvature)
    if P.oscillation is not None:
        d["oscillation"] = _field_dict(P.oscillation)
    if P.constants:
        d["constants"] = dict(P.constants)
    return d


def to_canonical_dict(spec: ProblemSpec) -> dict:
    dom = spec.domain
    dd = {"dim": dom.dim, "N": dom.N, "T": dom.T, "dt": dom.dt}
    if dom.points_per_eps is not None:
        dd["points_per_eps"] = dom.points_per_eps
    if dom.N_ref is not None:
        dd["N_ref"] = dom.N_ref
    fl = spec.flux
    fd: dict = {"kind": fl.kind, "bounds": list(fl.bounds), "h_alpha": fl.h_alpha}
    if fl.c_alpha is not None:
        fd["c_alpha"] = fl.c_alpha
    if fl.kind == "linear":
        fd["K"] = _matrix_dict(fl.K)
        if fl.K.modulation is not None:
            fd["h"] = fl.K.modulation.describe()
    else:
        psi = fl.psi
        pd: dict = {"kind": psi.kind}
        if psi.kind == "quadratic":
            pd["K"] = _matrix_dict(psi.K)
        else:
            pd.update(coefficient=_field_dict(psi.coefficient), mu=psi.mu)
        fd["psi"] = pd
        fd.update(eta_max=fl.eta_max, table_size=fl.table_size)
        if psi.modulation is not None:
            fd["h"] = psi.modulation.describe()
    so = spec.source
    sd: dict = {"oscillation": _field_dict(so.oscillation), "h_f": so.h_f}
    if so.nonlinearity is not None:
        sd["nonlinearity"] = so.nonlinearity.describe()
    if so.c_f is not None:
        sd["c_f"] = so.c_f
    prof = {"kind": spec.initial.profile.kind, **spec.initial.profile.params}
    return {
        "name": spec.name, "domain": dd, "potential": _potential_dict(spec.potential),
        "flux": fd, "source": sd,
        "initial": {"oscillation": _field_dict(spec.initial.oscillation), "profile": prof},
        "eps": list(spec.eps), "cell": {"M": spec.cell.M, "Q": spec.cell.Q},
        "tolerances": dict(spec.tolerances), "seed": spec.seed,
        "weak_tests": {"modes": spec.weak_tests.modes, "powers": spec.weak_tests.powers},
    }


def canonical_json(spec: ProblemSpec) -> str:
    return json.dumps(to_canonical_dict(spec), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def config_hash(spec: ProblemSpec) -> str:
    return hashlib.sha256(canonical_json(spec).encode("utf-8")).hexdigest()


def with_overrides(spec: ProblemSpec, eps=None, N: int | None = None) -> ProblemSpec:
    """Apply CLI overrides of the eps list and the base grid size."""
    from dataclasses import replace
    out = spec
    if eps is not None:
        out = replace(out, eps=tuple(eps))
    if N is not None:
        out = replace(out, domain=replace(out.domain, N=int(N)))
    return out
