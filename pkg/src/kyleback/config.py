"""Config documents: schema validation and compilation into run objects.

A run is described by a YAML document with five parts: the pricing rule
(catalog name or inline closed forms), the signal model, the strategy
block, the time grid, and run plumbing (path count, seed, output
directory).  Inline rule functions come from a small whitelist of closed
forms whose partial derivatives are known symbolically, so the admissibility
checks never fall back to finite differences for user-supplied rules.
"""

from __future__ import annotations

import copy
import math
from typing import Optional

import jsonschema
import numpy as np
import yaml
from numpy.polynomial import polynomial as npoly

from .engine import SimConfig
from .errors import SchemaError
from .market import CATALOG, Law, PricingRule, SignalModel, catalog_rule
from .mathcore import Func2
from .strategies import KINDS, StrategyConfig

PAYOFFS = {
    "identity": lambda z: z + 0.0,
    "exp": np.exp,
}

DEFAULT_WINDOW = (-4.0, 4.0)
DEFAULT_OUT = "results"

_COEFFS = {"type": "array", "items": {"type": "number"},
           "minItems": 1, "maxItems": 9}

_DESCRIPTOR = {"oneOf": [
    {
        "type": "object",
        "properties": {
            "form": {"const": "polynomial"},
            "coefficients": _COEFFS,
        },
        "required": ["form", "coefficients"],
        "additionalProperties": False,
    },
    {
        "type": "object",
        "properties": {
            "form": {"const": "exponential"},
            "scale": {"type": "number"},
            "x_rate": {"type": "number"},
            "t_rate": {"type": "number"},
        },
        "required": ["form", "scale", "x_rate"],
        "additionalProperties": False,
    },
    {
        "type": "object",
        "properties": {
            "form": {"const": "affine-in-t"},
            "base": _COEFFS,
            "slope": _COEFFS,
        },
        "required": ["form", "base", "slope"],
        "additionalProperties": False,
    },
]}

_WINDOW = {"type": "array", "items": {"type": "number"},
           "minItems": 2, "maxItems": 2}

_RULE = {"oneOf": [
    {
        "type": "object",
        "properties": {
            "catalog": {"enum": sorted(CATALOG)},
            "c0": {"type": "number"},
            "j_lambda": {"type": "number"},
            "window": _WINDOW,
        },
        "required": ["catalog"],
        "additionalProperties": False,
    },
    {
        "type": "object",
        "properties": {
            "name": {"type": "string", "minLength": 1},
            "H": _DESCRIPTOR,
            "w": _DESCRIPTOR,
            "c": _DESCRIPTOR,
            "g": _DESCRIPTOR,
            "j": {
                "type": "object",
                "properties": {
                    "form": {"const": "proportional"},
                    "rate": {"type": "number"},
                },
                "required": ["form", "rate"],
                "additionalProperties": False,
            },
            "window": _WINDOW,
        },
        "required": ["name", "H", "w"],
        "additionalProperties": False,
    },
]}

_SIGNAL = {
    "type": "object",
    "properties": {
        "z": {"type": "number"},
        "payoff": {"enum": sorted(PAYOFFS)},
        "static": {"type": "boolean"},
        "z0_law": {
            "type": "object",
            "properties": {
                "kind": {"const": "normal"},
                "mean": {"type": "number"},
                "std": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

_STRATEGY = {
    "type": "object",
    "properties": {
        "kind": {"enum": list(KINDS)},
        "band_n": {"type": "number"},
        "target": {"type": "number"},
        "delta": {"type": "number"},
        "t1": {"type": "number"},
        "t2": {"type": "number"},
        "x1": {"type": "number"},
        "x2": {"type": "number"},
        "b": {"type": "number"},
        "n_jumps": {"type": "integer"},
        "kappa1": {"type": "number"},
        "theta0": {"type": "number"},
        "s_drift": {"type": "number"},
        "s_load": {"type": "number"},
        "s_jumps": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "number"},
                      "minItems": 2, "maxItems": 2},
        },
    },
    "required": ["kind"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "rule": _RULE,
        "signal": _SIGNAL,
        "strategy": _STRATEGY,
        "dt": {"type": "number", "exclusiveMinimum": 0, "maximum": 0.5},
        "n_paths": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string", "minLength": 1},
    },
    "required": ["rule", "signal", "strategy", "dt", "n_paths"],
    "additionalProperties": False,
}


def _check_finite(node, path: str) -> None:
    if isinstance(node, bool):
        return
    if isinstance(node, (int, float)):
        if not math.isfinite(node):
            raise SchemaError(f"config: non-finite number at {path}")
        return
    if isinstance(node, dict):
        for key, value in node.items():
            _check_finite(value, f"{path}/{key}")
    elif isinstance(node, list):
        for i, value in enumerate(node):
            _check_finite(value, f"{path}/{i}")


def validate_document(doc) -> None:
    """Raise SchemaError unless ``doc`` is a well-formed run document."""
    if not isinstance(doc, dict):
        raise SchemaError("config: top level must be a mapping")
    try:
        jsonschema.validate(instance=doc, schema=CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "top level"
        raise SchemaError(f"config: {exc.message} (at {where})") from None
    _check_finite(doc, "")
    signal = doc["signal"]
    if signal.get("z0_law") is not None and signal.get("static", True):
        raise SchemaError(
            "config: a signal drawn from z0_law cannot be static")


def normalize(doc: dict) -> dict:
    """Return a copy of a valid document with scalar defaults filled in.

    The result validates against the schema again and reproduces the same
    run, so it can serve as the config echo in summaries.
    """
    out = copy.deepcopy(doc)
    rule = out["rule"]
    if "catalog" in rule:
        rule.setdefault("c0", 0.0)
        rule.setdefault("j_lambda", 0.0)
    rule.setdefault("window", list(DEFAULT_WINDOW))
    signal = out["signal"]
    signal.setdefault("z", 0.0)
    signal.setdefault("payoff", "identity")
    signal.setdefault("static", signal.get("z0_law") is None)
    out.setdefault("seed", 0)
    out.setdefault("out", DEFAULT_OUT)
    return out


def load_config(path: str) -> dict:
    """Read, validate, and normalize a YAML run document."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise SchemaError(f"config: cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise SchemaError(f"config: invalid YAML in {path}: {exc}") from None
    validate_document(doc)
    return normalize(doc)


# ---------------------------------------------------------------------------
# Inline closed forms


def _shaped(x, values):
    arr = np.asarray(values, dtype=float)
    return arr if np.ndim(x) else float(arr)


def _poly_funcs(coeffs):
    c0 = np.asarray(coeffs, dtype=float)
    c1 = npoly.polyder(c0) if c0.size > 1 else np.zeros(1)
    c2 = npoly.polyder(c1) if c1.size > 1 else np.zeros(1)
    return c0, c1, c2


def _compile_descriptor(doc: dict, label: str) -> Func2:
    form = doc["form"]
    if form == "polynomial":
        c0, c1, c2 = _poly_funcs(doc["coefficients"])
        return Func2(
            fn=lambda t, x: _shaped(x, npoly.polyval(np.asarray(x, float), c0)),
            fn_x=lambda t, x: _shaped(x, npoly.polyval(np.asarray(x, float), c1)),
            fn_t=lambda t, x: _shaped(x, 0.0 * np.asarray(x, float)),
            fn_xx=lambda t, x: _shaped(x, npoly.polyval(np.asarray(x, float), c2)),
            name=f"{label}:polynomial",
        )
    if form == "exponential":
        scale = float(doc["scale"])
        rx = float(doc["x_rate"])
        rt = float(doc.get("t_rate", 0.0))
        fn = lambda t, x: _shaped(
            x, scale * np.exp(rx * np.asarray(x, float) + rt * t))
        return Func2(
            fn=fn,
            fn_x=lambda t, x: _shaped(x, rx * np.asarray(fn(t, x))),
            fn_t=lambda t, x: _shaped(x, rt * np.asarray(fn(t, x))),
            fn_xx=lambda t, x: _shaped(x, rx * rx * np.asarray(fn(t, x))),
            name=f"{label}:exponential",
        )
    if form == "affine-in-t":
        b0, b1, b2 = _poly_funcs(doc["base"])
        s0, s1, s2 = _poly_funcs(doc["slope"])

        def at(cb, cs):
            return lambda t, x: _shaped(
                x, npoly.polyval(np.asarray(x, float), cb)
                + t * npoly.polyval(np.asarray(x, float), cs))

        return Func2(
            fn=at(b0, s0),
            fn_x=at(b1, s1),
            fn_t=lambda t, x: _shaped(x, npoly.polyval(np.asarray(x, float), s0)),
            fn_xx=at(b2, s2),
            name=f"{label}:affine-in-t",
        )
    raise SchemaError(f"config: unknown closed form {form!r} for {label}")


# ---------------------------------------------------------------------------
# Builders


def build_rule(rule_doc: dict) -> PricingRule:
    if "catalog" in rule_doc:
        return catalog_rule(rule_doc["catalog"],
                            c0=float(rule_doc.get("c0", 0.0)),
                            j_lambda=float(rule_doc.get("j_lambda", 0.0)))
    h = _compile_descriptor(rule_doc["H"], "H")
    w = _compile_descriptor(rule_doc["w"], "w")
    c = (_compile_descriptor(rule_doc["c"], "c") if "c" in rule_doc
         else Func2.const(0.0, name="0"))
    g = (_compile_descriptor(rule_doc["g"], "g") if "g" in rule_doc
         else Func2.const(0.0, name="0"))
    if "j" in rule_doc:
        rate = float(rule_doc["j"]["rate"])
        j = lambda t, x, k: rate * k
    else:
        j = lambda t, x, k: 0.0 * k
    return PricingRule(name=rule_doc["name"], H=h, w=w, c=c, g=g, j=j)


def build_signal(signal_doc: dict) -> SignalModel:
    law: Optional[Law] = None
    if signal_doc.get("z0_law") is not None:
        ldoc = signal_doc["z0_law"]
        law = Law(kind=ldoc["kind"], mean=float(ldoc.get("mean", 0.0)),
                  std=float(ldoc.get("std", 1.0)))
    payoff_name = signal_doc.get("payoff", "identity")
    return SignalModel(
        z=float(signal_doc.get("z", 0.0)),
        payoff=PAYOFFS[payoff_name],
        payoff_name=payoff_name,
        static=bool(signal_doc.get("static", law is None)),
        z0_law=law,
    )


def build_strategy(strategy_doc: dict) -> StrategyConfig:
    fields = dict(strategy_doc)
    if "s_jumps" in fields:
        fields["s_jumps"] = tuple(
            (float(tj), float(kj)) for tj, kj in fields["s_jumps"])
    return StrategyConfig(**fields)


def build_sim(doc: dict, seed: Optional[int] = None) -> SimConfig:
    """Compile a normalized document into an executable simulation config."""
    return SimConfig(
        rule=build_rule(doc["rule"]),
        signal=build_signal(doc["signal"]),
        strategy=build_strategy(doc["strategy"]),
        dt=float(doc["dt"]),
        seed=int(doc["seed"] if seed is None else seed),
    )


def rule_window(doc: dict) -> tuple:
    return tuple(float(v) for v in doc["rule"].get("window", DEFAULT_WINDOW))


def is_penalty_free(rule_doc: dict) -> bool:
    """True when the document declares no c, g, or jump penalty.

    The no-free-lunch bound on mean wealth only applies to such rules, so
    run summaries mark the bound check not-applicable otherwise.
    """
    if "catalog" in rule_doc:
        no_pen = (float(rule_doc.get("c0", 0.0)) == 0.0
                  and float(rule_doc.get("j_lambda", 0.0)) == 0.0)
        return no_pen and rule_doc["catalog"] != "g-positive"
    return not any(key in rule_doc for key in ("c", "g", "j"))
