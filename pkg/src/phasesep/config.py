"""Pipeline configuration stored as a sectioned key-value (INI) file."""

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .pipeline import SeparationOptions
from .signal_io import SOURCE_KINDS, MixingParams


@dataclass
class SourceSpec:
    kind: str = "ar2-noise"
    n_channels: int = 2
    n_samples: int = 500_000
    rate: float = 16_000.0
    seed: int = 7
    coupling: float = 0.8


@dataclass
class PipelineConfig:
    source: SourceSpec = field(default_factory=SourceSpec)
    mixing: MixingParams = field(default_factory=MixingParams)
    options: SeparationOptions = field(default_factory=SeparationOptions)
    output_dir: str = "phasesep-out"

    def validate(self):
        s, o = self.source, self.options
        if s.kind not in SOURCE_KINDS:
            raise ConfigError(f"source.kind must be one of {SOURCE_KINDS}, got {s.kind!r}")
        if s.n_samples < 3 or s.rate <= 0 or s.n_channels < 1:
            raise ConfigError("source.n_samples must be >= 3, source.rate > 0, source.n_channels >= 1")
        positive = {
            "grid.margin": o.margin, "frames.degeneracy_tol": o.degeneracy_tol,
            "weights.partition_threshold": o.partition_threshold,
            "separability.threshold": o.separability_threshold,
        }
        for opt in ("step", "cross_tol"):
            if getattr(o, opt) is not None:
                positive[f"map.{opt}"] = getattr(o, opt)
        bad = [k for k, v in positive.items() if not v > 0]
        if bad:
            raise ConfigError(f"tolerances must be positive: {', '.join(bad)}")
        if o.bins_per_dim < 2 or o.min_count < 1 or o.refine < 1 or o.threads < 1:
            raise ConfigError("grid.bins_per_dim >= 2, grid.min_count >= 1, "
                              "map.refine >= 1 and threads >= 1 are required")
        return self

    def to_ini(self):
        cp = configparser.ConfigParser()
        cp["source"] = {k: str(v) for k, v in asdict(self.source).items()}
        mix = self.mixing.to_dict()
        mix["lo"] = ", ".join(repr(v) for v in mix["lo"])
        mix["hi"] = ", ".join(repr(v) for v in mix["hi"])
        cp["mixing"] = {k: str(v) for k, v in mix.items()}
        o = self.options
        opt = lambda v: "auto" if v is None else str(v)  # noqa: E731
        cp["grid"] = {"bins_per_dim": str(o.bins_per_dim), "min_count": str(o.min_count),
                      "margin": str(o.margin)}
        cp["frames"] = {"degeneracy_tol": str(o.degeneracy_tol)}
        cp["weights"] = {"partition_threshold": str(o.partition_threshold)}
        cp["map"] = {"step": opt(o.step), "cross_tol": opt(o.cross_tol), "refine": str(o.refine)}
        cp["separability"] = {"threshold": str(o.separability_threshold)}
        cp["run"] = {"output_dir": self.output_dir, "threads": str(o.threads)}
        return cp

    def write(self, path):
        with open(path, "w") as fh:
            self.to_ini().write(fh)


_OPTION_KEYS = {
    ("grid", "bins_per_dim"): ("bins_per_dim", int),
    ("grid", "min_count"): ("min_count", int),
    ("grid", "margin"): ("margin", float),
    ("frames", "degeneracy_tol"): ("degeneracy_tol", float),
    ("weights", "partition_threshold"): ("partition_threshold", float),
    ("map", "step"): ("step", "auto-float"),
    ("map", "cross_tol"): ("cross_tol", "auto-float"),
    ("map", "refine"): ("refine", int),
    ("separability", "threshold"): ("separability_threshold", float),
    ("run", "threads"): ("threads", int),
}


def _convert(raw, kind, where):
    try:
        if kind == "auto-float":
            return None if raw.strip().lower() in ("auto", "none", "") else float(raw)
        if kind is int:
            return int(float(raw)) if float(raw).is_integer() else int(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc


def load_config(path=None, overrides=None):
    """Read a config file (missing keys take defaults) and apply overrides.

    ``overrides`` maps "section.key" to string values.
    """
    cp = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for key, val in (overrides or {}).items():
        sec, _, name = key.partition(".")
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp[sec][name] = str(val)

    cfg = PipelineConfig()
    known = {"source", "mixing", "grid", "frames", "weights", "map", "separability", "run"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")

    if cp.has_section("source"):
        types = {f.name: f.type for f in fields(SourceSpec)}
        vals = {}
        for k, raw in cp["source"].items():
            if k not in types:
                raise ConfigError(f"unknown key source.{k}")
            vals[k] = _convert(raw, types[k], f"source.{k}")
        cfg.source = SourceSpec(**{**asdict(cfg.source), **vals})
    if cp.has_section("mixing"):
        vals = cfg.mixing.to_dict()
        for k, raw in cp["mixing"].items():
            if k not in vals:
                raise ConfigError(f"unknown key mixing.{k}")
            if k in ("lo", "hi"):
                vals[k] = tuple(_convert(p, float, f"mixing.{k}") for p in raw.split(","))
            else:
                vals[k] = _convert(raw, float, f"mixing.{k}")
        try:
            cfg.mixing = MixingParams(**vals)
        except ValueError as exc:
            raise ConfigError(f"mixing: {exc}") from exc
    opts = asdict(cfg.options)
    for sec in ("grid", "frames", "weights", "map", "separability", "run"):
        if not cp.has_section(sec):
            continue
        for k, raw in cp[sec].items():
            if sec == "run" and k == "output_dir":
                cfg.output_dir = raw
                continue
            if (sec, k) not in _OPTION_KEYS:
                raise ConfigError(f"unknown key {sec}.{k}")
            name, kind = _OPTION_KEYS[(sec, k)]
            opts[name] = _convert(raw, kind, f"{sec}.{k}")
    cfg.options = SeparationOptions(**opts)
    return cfg.validate()
