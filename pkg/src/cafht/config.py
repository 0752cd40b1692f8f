"""INI-style experiment configuration.

Example::

    [ar]
    profile = dynamic
    delta = 0.1
    T = 100

    [experiment]
    n = 2000
    reps = 20
    methods = cafht:multiplicative:aci:split, nctp, cfrnn
    sweep = n
    values = 500, 1000, 2000

Unknown sections or keys are rejected with a close-match suggestion.
"""

from __future__ import annotations

import configparser
import difflib
import os
from dataclasses import replace
from typing import Dict, Optional

from .experiments import ExperimentConfig
from .simdata import ArConfig
from .tuning import gamma_grid


class ConfigError(ValueError):
    pass


def _floats(s):
    return tuple(float(x) for x in s.replace(",", " ").split())


def _ints(s):
    return tuple(int(x) for x in s.replace(",", " ").split())


def _opt_float(s):
    return None if s.strip() == "" else float(s)


def _grid(s):
    s = s.strip()
    if s in ("offset", "aligned"):
        return gamma_grid(s)
    return _floats(s)


def _values(s):
    out = []
    for x in s.replace(",", " ").split():
        f = float(x)
        out.append(int(f) if f.is_integer() and "." not in x else f)
    return tuple(out)


AR_KEYS = {
    "profile": str,
    "delta": float,
    "k": float,
    "T": int,
    "d": int,
    "seed": int,
    "delta_test": _opt_float,
    "noise": float,
}
EXPERIMENT_KEYS = {
    "n": int,
    "n_test": int,
    "reps": int,
    "alpha": float,
    "methods": lambda s: tuple(m.strip() for m in s.split(",") if m.strip()),
    "sweep": str,
    "values": _values,
    "steps_ahead": int,
    "grid": _grid,
    "alpha_aci": _opt_float,
    "warm_count": int,
    "order": int,
    "split": lambda s: _ints(s) if s.strip() else None,
    "seed": int,
    "sample_trajectories": int,
}
OUTPUT_KEYS = {"dir": str}
SCHEMA = {"ar": AR_KEYS, "experiment": EXPERIMENT_KEYS, "output": OUTPUT_KEYS}


def _suggest(word, options) -> str:
    close = difflib.get_close_matches(word, list(options), n=1, cutoff=0.5)
    if not close:
        low = {o.lower(): o for o in options}
        if word.lower() in low:
            close = [low[word.lower()]]
    return f" (did you mean {close[0]!r}?)" if close else ""


def parse_sections(text: str, source: str = "<config>") -> Dict[str, Dict[str, str]]:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    out = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"{source}: unknown section [{sec}]{_suggest(sec, SCHEMA)}")
        for key in cp[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"{source}: unknown key {sec}.{key}{_suggest(key, SCHEMA[sec])}")
        out[sec] = dict(cp[sec])
    return out


def apply_overrides(sections, overrides) -> Dict[str, Dict[str, str]]:
    """Apply ``section.key=value`` strings on top of parsed sections."""
    sections = {k: dict(v) for k, v in sections.items()}
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        path, value = item.split("=", 1)
        if "." not in path:
            raise ConfigError(f"override {item!r} must name a section, e.g. experiment.reps=5")
        sec, key = path.strip().split(".", 1)
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section {sec!r}{_suggest(sec, SCHEMA)}")
        if key not in SCHEMA[sec]:
            raise ConfigError(f"unknown key {sec}.{key}{_suggest(key, SCHEMA[sec])}")
        sections.setdefault(sec, {})[key] = value.strip()
    return sections


def build_config(sections) -> ExperimentConfig:
    def conv(sec, key, raw):
        try:
            return SCHEMA[sec][key](raw)
        except ValueError as exc:
            raise ConfigError(f"{sec}.{key}: cannot parse {raw!r} ({exc})") from None

    ar = {k: conv("ar", k, v) for k, v in sections.get("ar", {}).items()}
    ex = {k: conv("experiment", k, v) for k, v in sections.get("experiment", {}).items()}
    if "seed" not in ex and "seed" in ar:
        ex["seed"] = ar["seed"]
    try:
        data = ArConfig(**ar)
        return ExperimentConfig(data=data, **ex)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides=(), seed: Optional[int] = None):
    """Returns ``(ExperimentConfig, output_dir_or_None)``."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as fh:
        sections = parse_sections(fh.read(), str(path))
    sections = apply_overrides(sections, overrides)
    cfg = build_config(sections)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    return cfg, sections.get("output", {}).get("dir")
