"""Run configuration: YAML parsing and validation.

Every violation is collected before anything runs, so a bad file reports all
of its problems at once, each tagged with the key and source line.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any

import yaml

from .scalars import to_q
from .symbols import Frame, PolySymbol

COMMANDS = ("normal-form", "spectrum", "diophantine", "verify-lemmas", "prop-a1")
MODES = ("classical", "quantum")
# largest basis (levels per mode ** l) the spectrum command will diagonalize;
# the drift check doubles the cutoff, so 2N is what is limited
MAX_BASIS = 4096


class ConfigError(ValueError):
    """Raised with the full list of violations found in a configuration."""

    def __init__(self, violations: list):
        self.violations = list(violations)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {v}" for v in self.violations))


@dataclass(frozen=True)
class RunConfig:
    """Validated run description shared by all subcommands.

    Rational-valued fields (``omega``, ``epsilon``, ``hbar``) are kept as strings
    so they round-trip exactly; use the ``*_q`` helpers for ``gmpy2.mpq`` values.
    """

    command: str
    omega: tuple
    q0: Any = None  # expression string or list of serialized term records
    gamma: float = 0.1
    tau: float = 1.5
    K: int = 5
    P: int = 2
    D: int = 10
    mode: str = "classical"
    epsilon: tuple = ("1/1000",)
    hbar: tuple = ("1/20",)
    eta: float = 1.0
    N: int = 128
    seed: int = 0
    output_dir: str = "out"
    rho: float = 1.0
    sigma: float = 1.0
    overflow_fraction: float | None = None
    # diophantine
    K_max: int = 20
    zone_alpha: tuple = (0.1, 0.01)
    excision_K: tuple = (5, 10, 20)
    K_big: int = 40
    n_samples: int = 100_000
    # verify-lemmas
    n_examples: int = 20
    # spectrum / prop-a1
    max_alpha: int = 12
    alphas: tuple = (8, 16, 32, 64, 128)

    @property
    def l(self) -> int:
        return len(self.omega)

    @property
    def frame(self) -> Frame:
        return Frame(tuple(to_q(w) for w in self.omega))

    @property
    def epsilon_q(self) -> list:
        return [to_q(e) for e in self.epsilon]

    @property
    def hbar_q(self) -> list:
        return [to_q(h) for h in self.hbar]

    def perturbation(self) -> PolySymbol:
        """The perturbation as a symbol on this frame with degree cap ``D``."""
        return build_q0(self.q0, self.frame, self.D)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TUPLE_FIELDS = {"omega", "epsilon", "hbar", "zone_alpha", "excision_K", "alphas"}


def build_q0(q0, frame: Frame, cap: int) -> PolySymbol:
    if q0 is None:
        return PolySymbol.zero(frame, cap)
    if isinstance(q0, str):
        return PolySymbol.from_expression(q0, frame, cap)
    if isinstance(q0, (list, tuple)):
        return PolySymbol.from_records(q0, frame, cap)
    raise TypeError("q0 must be an expression string or a list of term records")


def _key_lines(text: str) -> dict:
    """Top-level key -> 1-based line number, from the YAML node tree."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    if not isinstance(node, yaml.MappingNode):
        return {}
    return {k.value: k.start_mark.line + 1 for k, _ in node.value if isinstance(k, yaml.ScalarNode)}


def _rational_ok(v) -> bool:
    try:
        to_q(v if not isinstance(v, float) else repr(v))
        return True
    except (TypeError, ValueError, ZeroDivisionError):
        return False


def _as_rational_str(v) -> str:
    return str(v) if not isinstance(v, float) else repr(v)


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse and validate a YAML run configuration.

    Parameters
    ----------
    text
        YAML mapping of the ``RunConfig`` fields.
    command
        Subcommand from the command line; fills or must agree with ``command``.

    Raises
    ------
    ConfigError
        Listing every violation with its key and line.
    """
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError([f"{where}malformed YAML ({getattr(exc, 'problem', exc)})"]) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a mapping of keys to values"])
    return validate_config(data, command, _key_lines(text))


def validate_config(data: dict, command: str | None = None, lines: dict | None = None) -> RunConfig:
    lines = lines or {}
    errs: list = []

    def err(key, msg):
        ln = lines.get(key)
        errs.append(f"{key} (line {ln}): {msg}" if ln else f"{key}: {msg}")

    data = dict(data)
    # l is implied by omega; accepted only as a consistency check
    l_given = data.pop("l", None)
    if l_given is not None and isinstance(data.get("omega"), (list, tuple)) and l_given != len(data["omega"]):
        err("l", f"is {l_given} but omega lists {len(data['omega'])} frequencies")
    for key in sorted(k for k in data if k not in _FIELDS):
        err(key, "unknown key")
        del data[key]
    if command is not None:
        if "command" in data and data["command"] != command:
            err("command", f"file says {data['command']!r} but {command!r} was requested")
        data["command"] = command
    if data.get("command") not in COMMANDS:
        err("command", f"must be one of {', '.join(COMMANDS)}")
    if "omega" not in data:
        err("omega", "required (list of positive rationals, one per mode)")

    kw: dict = {}
    for key, val in data.items():
        if key in _TUPLE_FIELDS:
            if not isinstance(val, (list, tuple)):
                val = [val]
            kw[key] = tuple(val)
        else:
            kw[key] = val

    def check_int(key, lo):
        if key in kw:
            v = kw[key]
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                err(key, f"must be an integer >= {lo}")

    def check_real(key, positive=True):
        if key in kw:
            v = kw[key]
            if isinstance(v, str):
                # YAML 1.1 reads exponents without a dot, such as 1e-12, as strings
                try:
                    v = kw[key] = float(v)
                except ValueError:
                    pass
            if isinstance(v, bool) or not isinstance(v, (int, float)) or (positive and not v > 0):
                err(key, "must be a positive number" if positive else "must be a number")

    for key, lo in (("K", 1), ("P", 0), ("D", 2), ("N", 1), ("seed", 0), ("K_max", 1), ("K_big", 1),
                    ("n_samples", 0), ("n_examples", 0), ("max_alpha", 0)):
        check_int(key, lo)
    for key in ("gamma", "tau", "eta", "rho", "sigma"):
        check_real(key)
    if kw.get("overflow_fraction") is not None:
        check_real("overflow_fraction")
    if "mode" in kw and kw["mode"] not in MODES:
        err("mode", f"must be one of {', '.join(MODES)}")
    if "output_dir" in kw and not isinstance(kw["output_dir"], str):
        err("output_dir", "must be a path string")

    omega_ok = False
    if "omega" in kw:
        om = kw["omega"]
        if not om:
            err("omega", "needs at least one frequency")
        elif not all(_rational_ok(w) for w in om):
            err("omega", "entries must be rationals such as 1, 0.5 or '514229/832040'")
        elif not all(to_q(_as_rational_str(w)) > 0 for w in om):
            err("omega", "frequencies must be positive")
        else:
            kw["omega"] = tuple(_as_rational_str(w) for w in om)
            omega_ok = True
    for key, strict in (("epsilon", False), ("hbar", True)):
        if key in kw:
            vals = kw[key]
            if not all(_rational_ok(v) for v in vals):
                err(key, "entries must be rationals")
            elif not all((to_q(_as_rational_str(v)) > 0) if strict else (to_q(_as_rational_str(v)) >= 0)
                         for v in vals):
                err(key, "entries must be positive" if strict else "entries must be non-negative")
            else:
                kw[key] = tuple(_as_rational_str(v) for v in vals)
    for key in ("zone_alpha",):
        if key in kw and not all(isinstance(v, (int, float)) and 0 < v <= 1 for v in kw[key]):
            err(key, "entries must lie in (0, 1]")
    for key in ("excision_K", "alphas"):
        if key in kw and not all(isinstance(v, int) and not isinstance(v, bool) and v >= 1 for v in kw[key]):
            err(key, "entries must be positive integers")

    l = len(kw["omega"]) if omega_ok else None
    tau = kw.get("tau", _FIELDS["tau"].default)
    if l is not None and isinstance(tau, (int, float)) and not tau > l - 1:
        err("tau", f"the nonresonance exponent must satisfy tau > l - 1 = {l - 1} (got {tau})")
    cmd = kw.get("command")
    if cmd == "diophantine" and omega_ok and not all(to_q(w) <= 1 for w in kw["omega"]):
        err("omega", "frequency scans work on the unit cube; entries must lie in (0, 1]")
    if cmd == "spectrum" and l is not None:
        N = kw.get("N", _FIELDS["N"].default)
        if isinstance(N, int) and (2 * N) ** l > MAX_BASIS:
            err("N", f"the drift check at 2N = {2 * N} levels per mode needs {(2 * N) ** l} > {MAX_BASIS} "
                     f"states for l = {l}")

    if omega_ok and kw.get("q0") is not None:
        D = kw.get("D", _FIELDS["D"].default)
        try:
            q0 = build_q0(kw["q0"], Frame(tuple(to_q(w) for w in kw["omega"])), max(int(D), 2))
        except Exception as exc:  # noqa: BLE001 - any parse failure is a config violation
            err("q0", f"cannot be parsed: {exc}")
        else:
            if not q0.is_real():
                err("q0", "must be a real symbol")
            if q0.hbar_degree() > 0:
                err("q0", "must not depend on hbar")
            low = sorted({sum(k[: 2 * l]) for k in q0.terms if sum(k[: 2 * l]) < 2})
            if low:
                err("q0", "the perturbation must vanish to second order at the origin, q0(z) = O(|z|^2); "
                          f"found terms of degree {', '.join(map(str, low))}")
            if q0.truncation.flag:
                err("q0", f"has terms above the degree cap D = {D}")
    elif cmd in ("normal-form", "spectrum"):
        err("q0", "required for this command")

    if errs:
        raise ConfigError(errs)
    return RunConfig(**kw)


def load_config(path, command: str | None = None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), command)
