"""Scenario configuration: sectioned ``key = value`` files with shipped defaults."""
from __future__ import annotations

import configparser
import io
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

DEFAULTS: dict[str, dict[str, str]] = {
    "model": {"kind": "reactor"},
    "reactor": {"D": "0.1", "v": "0.4", "psi": "2.8", "a1": "-1", "a2": "2", "R": "3",
                "n": "100", "modes": "100", "nonlinear": "true"},
    "certificate": {"lipschitz": "1", "alpha": "0.5", "epsilon": "auto", "delta": "auto"},
    "funnel": {"kind": "exponential", "phi": "1"},
    "reference": {"kind": "cosine", "amplitude": "0.5", "frequency": "1"},
    "simulation": {"T": "10", "backend": "finite-difference", "x0": "1", "x_F0": "1",
                   "rtol": "1e-6", "atol": "1e-9", "output_dt": "0.01"},
    "heat": {"n": "100", "epsilon": "1", "eta": "1", "b": "1", "u": "1", "x0": "0", "T": "5",
             "seminorm": "gradient"},
    "crossval": {"modes": "100", "cells": "200", "times": "0.5, 1, 2", "x0": "1", "dt": "0.01",
                 "tolerance": "1e-3"},
    "diagonal": {"eigenvalues": "", "b": "", "c": "", "b_eta": "0", "c_eta": "0",
                 "complete": "true"},
    "output": {"csv": "true", "svg": "true", "certificate": "true"},
}

MODEL_KINDS = ("reactor", "heat", "custom-diagonal")


class ConfigError(ValueError):
    """Invalid configuration; ``where`` is ``file:line:column`` when known."""

    def __init__(self, message: str, where: str | None = None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


def _locate(text: str) -> dict[tuple[str, str], tuple[int, int]]:
    """Map (section, key) to the 1-based line and column of the value."""
    out = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"(\s*)([^=:\s][^=:]*?)\s*[=:]\s*", line)
        if m and section is not None:
            out[(section, m.group(2).strip().lower())] = (lineno, m.end() + 1)
    return out


@dataclass
class Config:
    """Merged defaults + file + overrides, with source positions for error messages."""

    parser: configparser.ConfigParser
    source: str = "<defaults>"
    positions: dict | None = None

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict[str, dict[str, str]] | None = None) -> "Config":
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp.read_dict(DEFAULTS)
        positions: dict = {}
        source = "<defaults>"
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            text = p.read_text()
            source = str(p)
            fresh = configparser.ConfigParser(interpolation=None)
            fresh.optionxform = str
            try:
                fresh.read_string(text, source=source)
            except configparser.MissingSectionHeaderError as exc:
                raise ConfigError("key outside any section", f"{source}:{exc.lineno}:1") from exc
            except configparser.ParsingError as exc:
                lineno = exc.errors[0][0] if exc.errors else 0
                raise ConfigError("malformed line", f"{source}:{lineno}:1") from exc
            except configparser.DuplicateOptionError as exc:
                raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]",
                                  f"{source}:{exc.lineno}:1") from exc
            except configparser.DuplicateSectionError as exc:
                raise ConfigError(f"duplicate section [{exc.section}]", f"{source}:{exc.lineno}:1") from exc
            positions = _locate(text)
            for section in fresh.sections():
                if section not in DEFAULTS:
                    raise ConfigError(f"unknown section [{section}]", f"{source}")
                for key, value in fresh.items(section):
                    if key not in DEFAULTS[section]:
                        line, col = positions.get((section, key.lower()), (0, 0))
                        raise ConfigError(f"unknown key {key!r} in [{section}]", f"{source}:{line}:{col}")
                    cp.set(section, key, value)
        for section, items in (overrides or {}).items():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown section [{section}] in override")
            for key, value in items.items():
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key {key!r} in [{section}] override")
                cp.set(section, key, str(value))
        cfg = cls(cp, source, positions)
        cfg.validate()
        return cfg

    # -- typed access -----------------------------------------------------

    def _where(self, section: str, key: str) -> str:
        pos = (self.positions or {}).get((section, key.lower()))
        if pos is None:
            return f"{self.source} [{section}] {key}"
        return f"{self.source}:{pos[0]}:{pos[1]}"

    def raw(self, section: str, key: str) -> str:
        return self.parser.get(section, key)

    def float(self, section: str, key: str, *, positive: bool = False, nonneg: bool = False) -> float:
        text = self.raw(section, key)
        try:
            value = float(text)
        except ValueError:
            raise ConfigError(f"expected a number for {key}, got {text!r}", self._where(section, key)) from None
        if not math.isfinite(value):
            raise ConfigError(f"{key} must be finite", self._where(section, key))
        if positive and value <= 0:
            raise ConfigError(f"{key} must be positive", self._where(section, key))
        if nonneg and value < 0:
            raise ConfigError(f"{key} must be non-negative", self._where(section, key))
        return value

    def optional_float(self, section: str, key: str) -> float | None:
        if self.raw(section, key).strip().lower() in ("auto", ""):
            return None
        return self.float(section, key, positive=True)

    def int(self, section: str, key: str, minimum: int = 1) -> int:
        text = self.raw(section, key)
        try:
            value = int(text)
        except ValueError:
            raise ConfigError(f"expected an integer for {key}, got {text!r}", self._where(section, key)) from None
        if value < minimum:
            raise ConfigError(f"{key} must be at least {minimum}", self._where(section, key))
        return value

    def bool(self, section: str, key: str) -> bool:
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise ConfigError(f"expected true/false for {key}", self._where(section, key)) from None

    def floats(self, section: str, key: str) -> list[float]:
        text = self.raw(section, key)
        try:
            return [float(tok) for tok in re.split(r"[,\s]+", text.strip()) if tok]
        except ValueError:
            raise ConfigError(f"expected a list of numbers for {key}", self._where(section, key)) from None

    def choice(self, section: str, key: str, options) -> str:
        value = self.raw(section, key).strip()
        if value not in options:
            raise ConfigError(f"{key} must be one of {', '.join(options)}; got {value!r}",
                              self._where(section, key))
        return value

    def validate(self) -> None:
        self.choice("model", "kind", MODEL_KINDS)
        for key in ("D", "v", "psi"):
            self.float("reactor", key, positive=True)
        self.float("reactor", "R", nonneg=True)
        self.float("reactor", "a1")
        self.float("reactor", "a2")
        self.int("reactor", "n", 2)
        self.int("reactor", "modes", 16)
        self.bool("reactor", "nonlinear")
        self.float("certificate", "lipschitz", nonneg=True)
        self.optional_float("certificate", "epsilon")
        self.optional_float("certificate", "delta")
        self.choice("funnel", "kind", ("exponential", "constant"))
        self.float("funnel", "phi", positive=True)
        self.choice("reference", "kind", ("cosine", "constant"))
        self.float("simulation", "T", positive=True)
        self.choice("simulation", "backend", ("finite-difference", "spectral"))
        for key in ("rtol", "atol", "output_dt"):
            self.float("simulation", key, positive=True)
        self.choice("heat", "seminorm", ("gradient", "h1"))
        for key in ("epsilon", "eta", "T"):
            self.float("heat", key, positive=True)
        for key in ("b", "u", "x0"):
            self.float("heat", key)
        self.float("crossval", "tolerance", positive=True)
        self.bool("diagonal", "complete")
        if self.raw("model", "kind") == "custom-diagonal":
            eigs = self.floats("diagonal", "eigenvalues")
            b, c = self.floats("diagonal", "b"), self.floats("diagonal", "c")
            if not eigs or len(b) != len(eigs) or len(c) != len(eigs):
                raise ConfigError("[diagonal] eigenvalues, b and c must be non-empty lists of equal length",
                                  self._where("diagonal", "eigenvalues"))

    def reference(self) -> Callable[[float], float]:
        amp = self.float("reference", "amplitude")
        if self.raw("reference", "kind").strip() == "constant":
            return lambda t: amp
        w = self.float("reference", "frequency")
        return lambda t: amp * math.cos(w * t)

    def resolved_text(self) -> str:
        """Every effective value, defaults included, as a config file."""
        buf = io.StringIO()
        buf.write(f"# resolved configuration (source: {self.source})\n")
        self.parser.write(buf)
        return buf.getvalue()
