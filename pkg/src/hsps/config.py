"""Run configuration: a TOML file whose sections map onto the parameter types.

    seed = 1
    n_pulses = 10_000_000
    output_dir = "out"          # optional, --out wins

    [source]        SourceParams, plus pump selectors mu / herald_rate_hz and
                    mode selectors K_target / n_modes
    [detector]      DetectorParams, plus dark_cps as an alternative to dark_prob
    [pump_sweep]    pump_levels, n_pulses                   (optional)
    [pulse_shape]   PulseShapeParams
    [homodyne]      eta_total or mixture, n_records, cutoff, phase
    [analysis]      n_bins, eta_h, eta_hd, eta_t

Unknown keys are errors, reported with their dotted path.
"""

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .counting import DetectorParams, dark_prob_from_rate, mu_for_herald_probability
from .homodyne import FockMixture, PulseShapeParams
from .pair_source import SourceParams, schmidt_weights_for_target_K


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PumpSweep:
    pump_levels: tuple
    n_pulses: int


@dataclass(frozen=True)
class HomodyneSettings:
    eta_total: float = None
    mixture: tuple = None
    n_records: int = 17500
    cutoff: int = 12
    phase: float = 0.0


@dataclass(frozen=True)
class AnalysisSettings:
    n_bins: int = 80
    eta_h: float = None
    eta_hd: float = None
    eta_t: float = None


@dataclass(frozen=True)
class RunConfig:
    seed: int
    n_pulses: int
    source: SourceParams
    detector: DetectorParams
    pulse_shape: PulseShapeParams = field(default_factory=PulseShapeParams)
    homodyne: HomodyneSettings = field(default_factory=HomodyneSettings)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    pump_sweep: PumpSweep = None
    output_dir: str = None
    raw: dict = field(default=None, compare=False, repr=False)

    def config_hash(self):
        doc = {
            "seed": self.seed,
            "n_pulses": self.n_pulses,
            "source": {k: v for k, v in asdict(self.source).items() if k != "metadata"},
            "detector": asdict(self.detector),
            "pulse_shape": asdict(self.pulse_shape),
            "homodyne": asdict(self.homodyne),
            "analysis": asdict(self.analysis),
            "pump_sweep": asdict(self.pump_sweep) if self.pump_sweep else None,
        }
        blob = json.dumps(doc, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()


_TOP = {"seed", "n_pulses", "output_dir", "source", "detector", "pump_sweep",
        "pulse_shape", "homodyne", "analysis"}


def _join(path, key):
    return f"{path}.{key}" if path else key


def _check_keys(section, allowed, path):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"{_join(path, unknown[0])}: unknown key")


def _field_names(cls):
    return [f.name for f in fields(cls)]


def _build(cls, kwargs, path):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _number(section, key, path, kind=float):
    v = section[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{_join(path, key)}: expected a number, got {v!r}")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(f"{_join(path, key)}: expected an integer, got {v!r}")
        return int(v)
    return float(v)


def _detector(sec):
    path = "detector"
    names = _field_names(DetectorParams)
    _check_keys(sec, names + ["dark_cps", "f_p"], path)
    kw = {k: _number(sec, k, path) for k in names if k in sec}
    if "dark_cps" in sec:
        if "dark_prob" in sec:
            raise ConfigError(f"{path}.dark_cps: give dark_cps or dark_prob, not both")
        f_p = _number(sec, "f_p", path) if "f_p" in sec else 37e6
        kw["dark_prob"] = dark_prob_from_rate(_number(sec, "dark_cps", path), f_p)
    return _build(DetectorParams, kw, path)


def _source(sec, det):
    path = "source"
    _check_keys(sec, ["s1", "P_a", "mu", "herald_rate_hz", "schmidt_weights", "K_target", "n_modes",
                      "raman_mean_s", "raman_mean_i", "f_p", "metadata"], path)
    kw = {k: _number(sec, k, path) for k in ("s1", "raman_mean_s", "raman_mean_i", "f_p") if k in sec}
    kw.setdefault("s1", 2.5e-3)
    if "metadata" in sec:
        if not isinstance(sec["metadata"], dict):
            raise ConfigError(f"{path}.metadata: expected a table")
        kw["metadata"] = dict(sec["metadata"])
    if "schmidt_weights" in sec:
        if "K_target" in sec:
            raise ConfigError(f"{path}.K_target: give schmidt_weights or K_target, not both")
        kw["schmidt_weights"] = tuple(sec["schmidt_weights"])
    elif "K_target" in sec:
        n_modes = _number(sec, "n_modes", path, int) if "n_modes" in sec else 4
        try:
            kw["schmidt_weights"] = schmidt_weights_for_target_K(_number(sec, "K_target", path), n_modes)
        except ValueError as exc:
            raise ConfigError(f"{path}.K_target: {exc}") from None
    pump_keys = [k for k in ("P_a", "mu", "herald_rate_hz") if k in sec]
    if len(pump_keys) != 1:
        raise ConfigError(f"{path}: give exactly one of P_a, mu, herald_rate_hz")
    key = pump_keys[0]
    val = _number(sec, key, path)
    if val < 0:
        raise ConfigError(f"{path}.{key}: must be >= 0")
    if key == "P_a":
        kw["P_a"] = val
        return _build(SourceParams, kw, path)
    kw["P_a"] = 0.0
    proto = _build(SourceParams, kw, path)
    if key == "herald_rate_hz":
        try:
            mu = mu_for_herald_probability(val / proto.f_p, proto, det)
        except ValueError as exc:
            raise ConfigError(f"{path}.herald_rate_hz: {exc}") from None
    else:
        mu = val
    kw["P_a"] = math.sqrt(mu / kw["s1"]) if mu > 0 else 0.0
    return _build(SourceParams, kw, path)


def _pulse_shape(sec):
    names = _field_names(PulseShapeParams)
    _check_keys(sec, names, "pulse_shape")
    return _build(PulseShapeParams, {k: _number(sec, k, "pulse_shape") for k in sec}, "pulse_shape")


def _homodyne(sec):
    path = "homodyne"
    _check_keys(sec, _field_names(HomodyneSettings), path)
    kw = {}
    if "eta_total" in sec and "mixture" in sec:
        raise ConfigError(f"{path}.mixture: give eta_total or mixture, not both")
    if "eta_total" in sec:
        kw["eta_total"] = _number(sec, "eta_total", path)
        if not 0 <= kw["eta_total"] <= 1:
            raise ConfigError(f"{path}.eta_total: must lie in [0, 1]")
    if "mixture" in sec:
        try:
            kw["mixture"] = FockMixture(tuple(float(v) for v in sec["mixture"])).probs
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.mixture: {exc}") from None
    for k in ("n_records", "cutoff"):
        if k in sec:
            kw[k] = _number(sec, k, path, int)
    if "phase" in sec:
        kw["phase"] = _number(sec, "phase", path)
    if kw.get("n_records", 17500) < 100:
        raise ConfigError(f"{path}.n_records: need at least 100 records")
    return HomodyneSettings(**kw)


def _analysis(sec):
    path = "analysis"
    _check_keys(sec, _field_names(AnalysisSettings), path)
    kw = {}
    if "n_bins" in sec:
        kw["n_bins"] = _number(sec, "n_bins", path, int)
        if kw["n_bins"] < 2:
            raise ConfigError(f"{path}.n_bins: need at least 2 bins")
    for k in ("eta_h", "eta_hd", "eta_t"):
        if k in sec:
            kw[k] = _number(sec, k, path)
            if not 0 < kw[k] <= 1:
                raise ConfigError(f"{path}.{k}: must lie in (0, 1]")
    return AnalysisSettings(**kw)


def _sweep(sec):
    path = "pump_sweep"
    _check_keys(sec, ["pump_levels", "n_pulses"], path)
    if "pump_levels" not in sec or "n_pulses" not in sec:
        raise ConfigError(f"{path}: needs pump_levels and n_pulses")
    levels = sec["pump_levels"]
    if not isinstance(levels, list) or len(levels) < 2:
        raise ConfigError(f"{path}.pump_levels: need a list of at least two levels")
    if any(isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0 for v in levels):
        raise ConfigError(f"{path}.pump_levels: levels must be non-negative numbers")
    n = _number(sec, "n_pulses", path, int)
    if n < 1:
        raise ConfigError(f"{path}.n_pulses: must be >= 1")
    return PumpSweep(tuple(float(v) for v in levels), n)


def _section(doc, key):
    sec = doc.get(key, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"{key}: expected a table")
    return sec


def parse_config(doc, seed=None, n_pulses=None):
    """Validate a decoded TOML document; `seed` / `n_pulses` override it."""
    _check_keys(doc, _TOP, "")
    doc = dict(doc)
    if seed is not None:
        doc["seed"] = seed
    if n_pulses is not None:
        doc["n_pulses"] = n_pulses
    for key in ("seed", "n_pulses"):
        if key not in doc:
            raise ConfigError(f"{key}: required")
    seed_v = _number(doc, "seed", "", int)
    if not 0 <= seed_v < 2**64:
        raise ConfigError("seed: must lie in [0, 2**64)")
    n_v = _number(doc, "n_pulses", "", int)
    if n_v < 1:
        raise ConfigError("n_pulses: must be >= 1")
    if "source" not in doc:
        raise ConfigError("source: required")
    det = _detector(_section(doc, "detector"))
    src = _source(_section(doc, "source"), det)
    out_dir = doc.get("output_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigError("output_dir: expected a string")
    return RunConfig(
        seed=seed_v,
        n_pulses=n_v,
        source=src,
        detector=det,
        pulse_shape=_pulse_shape(_section(doc, "pulse_shape")),
        homodyne=_homodyne(_section(doc, "homodyne")),
        analysis=_analysis(_section(doc, "analysis")),
        pump_sweep=_sweep(_section(doc, "pump_sweep")) if "pump_sweep" in doc else None,
        output_dir=out_dir,
        raw=doc,
    )


def load_config(path, seed=None, n_pulses=None):
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(doc, seed=seed, n_pulses=n_pulses)
