"""Experiment configuration: sectioned ``key = value`` files.

Units are part of every numeric key name.  Example::

    [experiment]
    kind = hedge
    seed = 7

    [market]
    sigma_per_sqrt_year = 0.2
    gamma_currency_per_share2 = 0.05

    [hedge]
    strike_currency = 100
    n_paths = 2000

Unknown sections or keys, duplicate keys, unparsable values and values out of
range are all reported together, each with its line number.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

KINDS = ("simulate", "ledger", "cost_process", "hedge", "convergence", "diagnostics")
GRID_KINDS = ("dyadic", "uniform", "random")
FAMILIES = ("piecewise_constant_random", "brownian_sampled", "mollified", "single_jump", "buy_and_hold")

DEFAULT_CELLS = 1024


def _positive(x):
    return x > 0


def _nonneg(x):
    return x >= 0


def _finite(x):
    return math.isfinite(x)


def _one_of(options):
    def check(x):
        return x in options
    check.describe = "one of " + ", ".join(options)
    return check


def _float_list(text: str) -> tuple:
    parts = [p for p in re.split(r"[,\s]+", text.strip()) if p]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# section -> key -> (parser, default, check, range text)
SCHEMA: dict = {
    "experiment": {
        "kind": (str, "hedge", _one_of(KINDS), "one of " + ", ".join(KINDS)),
        "seed": (int, 0, _nonneg, ">= 0"),
        "output_dir": (str, None, None, ""),
        "workers": (int, 1, _positive, ">= 1"),
    },
    "market": {
        "mu_per_year": (float, 0.0, _finite, "finite"),
        "sigma_per_sqrt_year": (float, 0.2, _nonneg, ">= 0"),
        "m0_currency": (float, 100.0, _positive, "> 0"),
        "gamma_currency_per_share2": (float, 0.0, _finite, "finite"),
        "delta_currency_per_share2": (float, 0.0, _finite, "finite"),
        "gamma_ramp_currency_per_share2": (float, 0.0, _finite, "finite"),
        "delta_ramp_currency_per_share2": (float, 0.0, _finite, "finite"),
    },
    "grid": {
        "kind": (str, "dyadic", _one_of(GRID_KINDS), "one of " + ", ".join(GRID_KINDS)),
        "horizon_years": (float, 1.0, _positive, "> 0"),
        "cells": (int, DEFAULT_CELLS, _positive, ">= 1"),
        "levels": (int, 4, lambda x: x >= 2, ">= 2"),
    },
    "strategy": {
        "family": (str, "piecewise_constant_random", _one_of(FAMILIES), "one of " + ", ".join(FAMILIES)),
        "seed": (int, 1, _nonneg, ">= 0"),
        "n_jumps": (int, 8, _positive, ">= 1"),
        "scale_shares": (float, 1.0, _nonneg, ">= 0"),
        "jump_time_years": (float, 0.5, _positive, "> 0"),
        "jump_shares": (float, 1.0, _finite, "finite"),
        "level_shares": (float, 1.0, _finite, "finite"),
        "mollify_n_per_year": (float, 8.0, lambda x: x >= 1, ">= 1"),
        "liquidate": (_bool, False, None, ""),
        "initial_value_currency": (float, 0.0, _finite, "finite"),
    },
    "hedge": {
        "strike_currency": (float, 100.0, _positive, "> 0"),
        "n_paths": (int, 2000, _positive, ">= 1"),
        "mollify_n_per_year": (float, 0.0, lambda x: x == 0 or x >= 1, "0 (off) or >= 1"),
    },
    "convergence": {
        "mollify_ns_per_year": (_float_list, (2.0, 8.0, 32.0, 128.0), lambda xs: all(x >= 1 for x in xs), "all >= 1"),
    },
    "diagnostics": {
        "n_paths": (int, 200, lambda x: x >= 2, ">= 2"),
        "n_candidates": (int, 100, _positive, ">= 1"),
        "alpha_currency": (float, 1e6, _nonneg, ">= 0"),
        "initial_value_currency": (float, 0.0, _finite, "finite"),
    },
}


@dataclass(frozen=True)
class ConfigIssue:
    key: str
    reason: str
    line: Optional[int] = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.key}: {self.reason}"


class ConfigError(ValueError):
    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    text: str = ""

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    @property
    def kind(self) -> str:
        return self.values["experiment"]["kind"]

    @property
    def seed(self) -> int:
        return self.values["experiment"]["seed"]

    def replace(self, section: str, **kw) -> "ExperimentConfig":
        vals = {s: dict(v) for s, v in self.values.items()}
        vals[section].update(kw)
        return ExperimentConfig(vals, self.text)


def _line_index(text: str) -> dict:
    where: dict = {}
    section = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), n)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", line)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip().lower()), n)
    return where


def parse_config(text: str) -> ExperimentConfig:
    """Validate ``text`` against :data:`SCHEMA`; raise :class:`ConfigError`."""
    parser = configparser.ConfigParser(strict=True, interpolation=None,
                                       inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ConfigError([ConfigIssue(f"{e.section}.{e.option}", "duplicate key", e.lineno)])
    except configparser.DuplicateSectionError as e:
        raise ConfigError([ConfigIssue(e.section, "duplicate section", e.lineno)])
    except configparser.Error as e:
        raise ConfigError([ConfigIssue("<file>", str(e).splitlines()[0], getattr(e, "lineno", None))])

    lines = _line_index(text)
    issues = []
    values: dict = {}
    for section in parser.sections():
        if section not in SCHEMA:
            issues.append(ConfigIssue(section, "unknown section", lines.get((section, None))))
    for section, keys in SCHEMA.items():
        got = parser[section] if parser.has_section(section) else {}
        out = {}
        for key in got:
            if key not in keys:
                issues.append(ConfigIssue(f"{section}.{key}", "unknown key", lines.get((section, key))))
        for key, (conv, default, check, rng) in keys.items():
            if key not in got:
                out[key] = default
                continue
            raw = got[key]
            line = lines.get((section, key))
            try:
                val = conv(raw)
            except (TypeError, ValueError):
                issues.append(ConfigIssue(f"{section}.{key}", f"cannot parse {raw!r} as {getattr(conv, '__name__', 'value')}", line))
                continue
            if check is not None and not check(val):
                issues.append(ConfigIssue(f"{section}.{key}", f"value {raw!r} out of range (expected {rng})", line))
                continue
            out[key] = val
        values[section] = out
    if issues:
        raise ConfigError(issues)
    return ExperimentConfig(values, text)
