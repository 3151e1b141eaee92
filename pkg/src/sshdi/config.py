"""Scenario/run configuration files.

A config is a TOML file with up to four sections::

    [scenario]   n, p, covariance, rho, sparsity, coef_low, coef_high, noise_sd
    [selection]  selector, max_selected
    [inference]  b, alpha, adjust, log_transform
    [run]        replicates, seed, workers

Every key is typed; unknown sections or keys are errors. Values resolve as
command line > file > defaults, and the source of each value is kept.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .core import ADJUSTMENTS, Scenario
from .datagen import COVARIANCE_KINDS, CovarianceKind
from .errors import ConfigError
from .selection import SelectorConfig

DEFAULT_SELECTOR = "lasso_cv(folds=10, grid_size=100, grid_ratio=0.001)"

# section -> key -> (type, default); None defaults mean "derived at run time"
SCHEMA: dict[str, dict[str, tuple[type, Any]]] = {
    "scenario": {
        "n": (int, 200),
        "p": (int, 500),
        "covariance": (str, "identity"),
        "rho": (float, 0.0),
        "sparsity": (int, 5),
        "coef_low": (float, 0.5),
        "coef_high": (float, 2.0),
        "noise_sd": (float, 1.0),
    },
    "selection": {
        "selector": (str, DEFAULT_SELECTOR),
        "max_selected": (int, None),
    },
    "inference": {
        "b": (int, None),
        "alpha": (float, 0.05),
        "adjust": (str, "bonferroni"),
        "log_transform": (bool, False),
    },
    "run": {
        "replicates": (int, 200),
        "seed": (int, 0),
        "workers": (int, 1),
    },
}

# execution-only settings: they never change results and stay out of reports
EXECUTION_KEYS = {("run", "workers")}


def _check_type(section, key, value):
    typ = SCHEMA[section][key][0]
    if typ is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if typ is int and isinstance(value, bool):
        raise ConfigError(f"{section}.{key}: expected integer, got boolean")
    if not isinstance(value, typ):
        raise ConfigError(f"{section}.{key}: expected {typ.__name__}, got {type(value).__name__} {value!r}")
    return value


@dataclass
class ScenarioConfig:
    """Resolved configuration with per-key provenance (``default``/``file``/``cli``)."""

    values: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)

    def __getitem__(self, dotted):
        section, key = dotted.split(".")
        return self.values[section][key]

    @classmethod
    def defaults(cls):
        values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
        sources = {f"{s}.{k}": "default" for s, keys in SCHEMA.items() for k in keys}
        return cls(values, sources)

    @classmethod
    def from_mapping(cls, data: dict, source="file"):
        cfg = cls.defaults()
        problems = []
        for section, entries in data.items():
            if section not in SCHEMA:
                problems.append(f"unknown section [{section}]")
                continue
            if not isinstance(entries, dict):
                problems.append(f"[{section}] must be a table")
                continue
            for key, value in entries.items():
                if key not in SCHEMA[section]:
                    problems.append(f"{section}.{key}: unknown key")
                    continue
                if value is None:
                    continue
                try:
                    cfg.values[section][key] = _check_type(section, key, value)
                    cfg.sources[f"{section}.{key}"] = source
                except ConfigError as exc:
                    problems.extend(exc.problems)
        if problems:
            raise ConfigError(problems)
        cfg.validate()
        return cfg

    def override(self, **dotted_values):
        """Apply command-line overrides given as ``{"run.seed": 3, ...}``; ``None`` skips."""
        problems = []
        for dotted, value in dotted_values.items():
            if value is None:
                continue
            section, key = dotted.split(".")
            try:
                self.values[section][key] = _check_type(section, key, value)
                self.sources[dotted] = "cli"
            except ConfigError as exc:
                problems.extend(exc.problems)
        if problems:
            raise ConfigError(problems)
        self.validate()
        return self

    def validate(self):
        v = self.values
        problems = []
        for dotted in ("scenario.n", "scenario.p", "run.replicates", "run.workers"):
            if self[dotted] < 1:
                problems.append(f"{dotted}: must be positive")
        if v["scenario"]["sparsity"] < 0 or v["scenario"]["sparsity"] > v["scenario"]["p"]:
            problems.append("scenario.sparsity: must be between 0 and p")
        if v["scenario"]["coef_low"] > v["scenario"]["coef_high"]:
            problems.append("scenario.coef_low: exceeds coef_high")
        if v["scenario"]["noise_sd"] < 0:
            problems.append("scenario.noise_sd: must be nonnegative")
        if v["scenario"]["covariance"] not in COVARIANCE_KINDS:
            problems.append(f"scenario.covariance: must be one of {COVARIANCE_KINDS}")
        else:
            try:
                self.covariance_kind()
            except ValueError as exc:
                problems.append(f"scenario.rho: {exc}")
        if not 0 < v["inference"]["alpha"] < 1:
            problems.append("inference.alpha: must be in (0, 1)")
        if v["inference"]["adjust"] not in ADJUSTMENTS:
            problems.append(f"inference.adjust: must be one of {ADJUSTMENTS}")
        if v["inference"]["b"] is not None and v["inference"]["b"] < 1:
            problems.append("inference.b: must be positive")
        if v["selection"]["max_selected"] is not None and v["selection"]["max_selected"] < 1:
            problems.append("selection.max_selected: must be positive")
        try:
            self.selector_config()
        except ValueError as exc:
            problems.append(f"selection.selector: {exc}")
        if problems:
            raise ConfigError(problems)

    def covariance_kind(self) -> CovarianceKind:
        s = self.values["scenario"]
        if s["covariance"] == "identity":
            return CovarianceKind.identity()
        return CovarianceKind(s["covariance"], s["rho"])

    def selector_config(self) -> SelectorConfig:
        sel = self.values["selection"]
        return SelectorConfig.parse(sel["selector"], max_selected=sel["max_selected"])

    def scenario(self) -> Scenario:
        s = self.values["scenario"]
        inf = self.values["inference"]
        return Scenario(n=s["n"], p=s["p"], covariance=self.covariance_kind(), sparsity=s["sparsity"],
                        coef_low=s["coef_low"], coef_high=s["coef_high"], noise_sd=s["noise_sd"],
                        selector=self.selector_config(), b=inf["b"], alpha=inf["alpha"],
                        adjustment=inf["adjust"])

    def echo(self, sections=None) -> dict:
        """Resolved values for reports, without execution-only settings."""
        out = {}
        for section, keys in self.values.items():
            if sections is not None and section not in sections:
                continue
            out[section] = {k: v for k, v in keys.items() if (section, k) not in EXECUTION_KEYS}
        return out

    def source_echo(self, sections=None) -> dict:
        return {k: v for k, v in sorted(self.sources.items())
                if tuple(k.split(".")) not in EXECUTION_KEYS
                and (sections is None or k.split(".")[0] in sections)}


def shipped_scenarios() -> list[str]:
    return sorted(p.name for p in resources.files("sshdi").joinpath("scenarios").iterdir()
                  if p.name.endswith(".toml"))


def resolve_path(path) -> Path:
    """A filesystem path, or the name of a scenario shipped with the package."""
    p = Path(path)
    if p.exists():
        return p
    for name in (p.name, p.name + ".toml"):
        shipped = resources.files("sshdi").joinpath("scenarios", name)
        if shipped.is_file():
            return Path(str(shipped))
    raise ConfigError(f"config file {path} not found (shipped scenarios: {', '.join(shipped_scenarios())})")


def load_config(path: Optional[str]) -> ScenarioConfig:
    """Load a TOML config, or the ``config`` block embedded in a report.json.

    A report's recorded value sources are restored too, so re-running from a
    report reproduces it byte for byte.
    """
    if path is None:
        return ScenarioConfig.defaults()
    p = resolve_path(path)
    if p.suffix == ".json":
        try:
            report = json.loads(p.read_text(encoding="utf-8"))
            data = report["config"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"{p}: not a report with an embedded config ({exc})")
        cfg = ScenarioConfig.from_mapping(data)
        for dotted, source in (report.get("config_sources") or {}).items():
            if dotted in cfg.sources and source in ("default", "file", "cli", "derived"):
                cfg.sources[dotted] = source
        return cfg
    else:
        try:
            data = tomllib.loads(p.read_text(encoding="utf-8"))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{p}: {exc}")
    return ScenarioConfig.from_mapping(data)
