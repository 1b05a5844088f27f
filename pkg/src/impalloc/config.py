"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored. Recognized keys (defaults in
parentheses)::

    bank            filter bank JSON path, or "default"      (default)
    layer           feature layer for the importance map     (3)
    cu_size         coding block size, 8 or 16               (16)
    input_size      long side fed to the feature stack       (416)
    model           "fit" (per-picture a, b) or "fixed"      (fit)
    a, b, c1, c2    R-lambda model constants                 (3.2003, -1.367, 4.2005, 13.7122)
    sw              sliding window in blocks                 (4)
    prelim_band     preliminary QP band half-width           (3)
    actual_band     actual QP band half-width                (2)
    shift_trigger   QP_p - QP_s that shifts the band         (3)
    shift_low       shifted band lower offset                (0)
    shift_high      shifted band upper offset                (4)
    budget_tolerance  allowed |bits - target| / target       (0.10)
    corpus          sweep corpus directory                   (bundled corpus)
    out             output directory                         (.)
    jobs            parallel sweep workers                   (1)
    bd_method       "cubic" or "pchip"                       (cubic)
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .evaluation import BD_METHODS
from .features import load_bank
from .pipeline import MODEL_SOURCES, Settings
from .rate_control import RCParams, RLambdaModel


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    bank: str = "default"
    layer: int = 3
    cu_size: int = 16
    input_size: int = 416
    model: str = "fit"
    a: float = 3.2003
    b: float = -1.367
    c1: float = 4.2005
    c2: float = 13.7122
    sw: int = 4
    prelim_band: int = 3
    actual_band: int = 2
    shift_trigger: int = 3
    shift_low: int = 0
    shift_high: int = 4
    budget_tolerance: float = 0.10
    corpus: str = ""
    out: str = "."
    jobs: int = 1
    bd_method: str = "cubic"

    def update(self, values: dict) -> None:
        types = {f.name: f.type for f in fields(self)}
        for key, raw in values.items():
            if raw is None:
                continue
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kind = {"int": int, "float": float}.get(types[key], str)
            try:
                setattr(self, key, kind(raw))
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc

    def settings(self) -> Settings:
        """Validate and build pipeline settings (loads the filter bank)."""
        if self.model not in MODEL_SOURCES:
            raise ConfigError(f"model must be one of {MODEL_SOURCES}")
        if self.bd_method not in BD_METHODS:
            raise ConfigError(f"bd_method must be one of {BD_METHODS}")
        if self.cu_size not in (8, 16):
            raise ConfigError("cu_size must be 8 or 16")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        bank = None
        if self.bank != "default":
            if not os.path.isfile(self.bank):
                raise ConfigError(f"filter bank {self.bank} not found")
            try:
                bank = load_bank(self.bank)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        try:
            settings = Settings(
                layer=self.layer,
                cu_size=self.cu_size,
                input_size=self.input_size,
                model=RLambdaModel(self.a, self.b, self.c1, self.c2),
                model_source=self.model,
                params=RCParams(self.sw, self.prelim_band, self.actual_band, self.shift_trigger,
                                (self.shift_low, self.shift_high)),
                bank=bank,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        depth = len(settings.filter_bank())
        if not 1 <= self.layer <= depth:
            raise ConfigError(f"layer {self.layer} outside the filter bank depth 1..{depth}")
        return settings


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path:
        try:
            with open(path) as fh:
                cfg.update(parse_config_text(fh.read()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg.update(overrides or {})
    return cfg
