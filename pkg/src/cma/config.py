"""``key = value`` run configurations and the closed descriptor language for ``f`` and ``g``.

Descriptors::

    2.5                              constant
    constant(c)
    radial(c0, c1, ...; rate=r)      (c0 + c1 s + ...) e^{r s},  s = |z|^2
    power(c0, c1, alpha)             c0 + c1 |z|^alpha
    expu(<spatial>)                  phi(z) e^t
    product(<spatial>; t:v, ...)     phi(z) psi(t), psi piecewise linear
"""
from __future__ import annotations

import re
from dataclasses import dataclass, fields
from fractions import Fraction

import numpy as np

from .errors import ConfigError
from .rhs import Constant, ExpU, Product, Radial, RadialPoly, RadialPower

COMMANDS = ("solve", "check-sub", "check-super", "compare", "envelope", "abp", "regularize", "modulus")
SHAPES = ("ball", "box")
INITS = ("over", "under")


@dataclass(frozen=True)
class ConfigIssue:
    line: int
    kind: str
    key: str
    message: str

    def __str__(self):
        where = f"line {self.line}: " if self.line else ""
        return f"{where}{self.kind} [{self.key}] {self.message}"


# -- descriptors ------------------------------------------------------------------

_CALL = re.compile(r"^\s*([a-z]+)\s*\((.*)\)\s*$", re.S)


def _split_top(text: str, sep: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return [s.strip() for s in out]


def _num(text: str) -> float:
    return float(Fraction(text.strip())) if "/" in text else float(text)


def parse_spatial(text: str):
    """Spatial factor: ``constant``/number, ``radial`` or ``power``."""
    text = text.strip()
    m = _CALL.match(text)
    if m is None:
        return RadialPoly((_num(text),))
    name, body = m.groups()
    parts = _split_top(body, ";")
    args = [_num(a) for a in _split_top(parts[0], ",") if a]
    if name == "constant" and len(args) == 1 and len(parts) == 1:
        return RadialPoly((args[0],))
    if name == "radial" and args:
        rate = 0.0
        for opt in parts[1:]:
            key, _, val = opt.partition("=")
            if key.strip() != "rate":
                raise ValueError(f"unknown radial option {key.strip()!r}")
            rate = _num(val)
        return RadialPoly(tuple(args), rate)
    if name == "power" and len(args) == 3 and len(parts) == 1:
        return RadialPower(*args)
    raise ValueError(f"bad spatial descriptor {text!r}")


def parse_rhs(text: str):
    text = text.strip()
    m = _CALL.match(text)
    if m is None:
        return Constant(_num(text))
    name, body = m.groups()
    if name == "constant":
        return Constant(_num(body))
    if name in ("radial", "power"):
        return Radial(parse_spatial(text))
    if name == "expu":
        return ExpU(parse_spatial(body))
    if name == "product":
        parts = _split_top(body, ";")
        if len(parts) != 2:
            raise ValueError("product needs '<spatial>; t:v, ...'")
        pairs = [p.split(":") for p in _split_top(parts[1], ",")]
        if any(len(p) != 2 for p in pairs):
            raise ValueError("psi table entries must be t:v")
        return Product(parse_spatial(parts[0]), tuple(_num(a) for a, _ in pairs), tuple(_num(b) for _, b in pairs))
    raise ValueError(f"unknown right-hand side {name!r}")


def describe_spatial(phi) -> str:
    if isinstance(phi, RadialPoly) and len(phi.coeffs) == 1 and not phi.exp_rate:
        return f"constant({float(phi.coeffs[0])!r})"
    return phi.describe()


def spatial_callable(text: str):
    phi = parse_spatial(text)
    return phi.spatial


# -- run configuration ---------------------------------------------------------------

def _positive(x):
    return x > 0


@dataclass
class RunConfig:
    command: str
    entry: str | None = None
    n: int | None = None
    h: float = 1.0 / 16
    shape: str = "ball"
    R: float = 1.0
    rhs: str | None = None
    g: str | None = None
    u: str | None = None
    v: str | None = None
    u_csv: str | None = None
    tol: float | None = None
    tol_cmp: float | None = None
    tol_err: float | None = None
    out: str = "out"
    perron_refine: bool = False
    init: str = "over"
    max_iters: int = 20000
    eps: float = 0.125
    delta: float | None = None
    seed: int = 0
    margin: float = 0.0

    def with_overrides(self, **kw) -> "RunConfig":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig(**data)


# key -> (kind, validator or choices)
_SCHEMA = {
    "command": ("choice", COMMANDS),
    "entry": ("str", None),
    "n": ("int", lambda x: x in (1, 2)),
    "h": ("float", _positive),
    "shape": ("choice", SHAPES),
    "R": ("float", _positive),
    "rhs": ("rhs", None),
    "g": ("spatial", None),
    "u": ("spatial", None),
    "v": ("spatial", None),
    "u_csv": ("str", None),
    "tol": ("float", _positive),
    "tol_cmp": ("float", _positive),
    "tol_err": ("float", _positive),
    "out": ("str", None),
    "perron_refine": ("bool", None),
    "init": ("choice", INITS),
    "max_iters": ("int", _positive),
    "eps": ("float", _positive),
    "delta": ("float", _positive),
    "seed": ("int", lambda x: x >= 0),
    "margin": ("float", lambda x: x >= 0),
}

_BOOLS = {"on": True, "true": True, "yes": True, "1": True, "off": False, "false": False, "no": False, "0": False}


def _convert(key: str, raw: str):
    kind, check = _SCHEMA[key]
    if kind == "int":
        val = int(raw)
    elif kind == "float":
        val = _num(raw)
        if not np.isfinite(val):
            raise ValueError("not finite")
    elif kind == "bool":
        if raw.lower() not in _BOOLS:
            raise ValueError(f"expected on/off, got {raw!r}")
        return _BOOLS[raw.lower()]
    elif kind == "choice":
        if raw not in check:
            raise ValueError(f"expected one of {', '.join(check)}")
        return raw
    elif kind == "rhs":
        return parse_rhs(raw).describe()
    elif kind == "spatial":
        return describe_spatial(parse_spatial(raw))
    else:
        return raw
    if check is not None and not check(val):
        raise ValueError(f"value {raw!r} out of range")
    return val


def parse_config(text: str) -> RunConfig:
    """Parse ``key = value`` lines (``#`` starts a comment); raises :class:`ConfigError` with every issue."""
    issues = []
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        key, sep, raw = body.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            issues.append(ConfigIssue(lineno, "TypeMismatch", key or "?", "expected 'key = value'"))
            continue
        if key not in _SCHEMA:
            issues.append(ConfigIssue(lineno, "UnknownKey", key, "not a configuration key"))
            continue
        try:
            values[key] = _convert(key, raw)
        except (ValueError, ZeroDivisionError, TypeError) as exc:
            issues.append(ConfigIssue(lineno, "TypeMismatch", key, str(exc)))
    issues.extend(_missing(values))
    if issues:
        raise ConfigError(issues)
    return RunConfig(**values)


def _missing(values: dict) -> list[ConfigIssue]:
    out = []
    if "command" not in values:
        out.append(ConfigIssue(0, "MissingRequired", "command", "no command given"))
    if "entry" not in values:
        for key in ("n", "rhs", "g"):
            if key not in values:
                out.append(ConfigIssue(0, "MissingRequired", key, "required without a catalog entry"))
    return out


def _format(val) -> str:
    if isinstance(val, bool):
        return "on" if val else "off"
    if isinstance(val, float):
        return repr(val)
    return str(val)


def serialize_config(cfg: RunConfig) -> str:
    """Canonical text: sorted keys, unset optional keys omitted."""
    lines = []
    for key in sorted(_SCHEMA):
        val = getattr(cfg, key)
        if val is None:
            continue
        lines.append(f"{key} = {_format(val)}")
    return "\n".join(lines) + "\n"


def validate_config(cfg: RunConfig) -> RunConfig:
    """Re-check a programmatically built configuration by a serialize/parse round trip."""
    return parse_config(serialize_config(cfg))
