"""Experiment configuration: ``[section]`` headers with ``key = value`` lines.

Grammar (also in the README)::

    [model]       kind, a, g1, sigma0, gamma0, c_scale, jump_rate, mark, tau, unchecked
    [sim]         dt, horizon, master_seed, n_paths
    [coupling]    alpha, lambda (auto or a number), lambda_max
    [experiment]  kind, times, xi, eta, plus kind-specific keys
    [output]      directory, formats

Lists are comma or whitespace separated.  Segments are written
``const <v>`` or ``step <at> <before> <after>``.  Unknown sections and keys
are errors.
"""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError

EXPERIMENT_KINDS = ("simulate", "decay", "c1", "c2", "support", "wasserstein", "report")

# key -> (parser, default); a default of ... marks a required key
_float = float
_int = int


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return [float(x) for x in s.replace(",", " ").split()]


def _words(s):
    return [x for x in s.replace(",", " ").split()]


def _lambda(s):
    return None if s.strip().lower() == "auto" else float(s)


SCHEMA = {
    "model": {
        "kind": (str, "ou_jump"), "a": (_float, 1.0), "g1": (_float, 0.0), "sigma0": (_float, 1.0),
        "gamma0": (_float, 1.0), "c_scale": (_float, 0.5), "jump_rate": (_float, 1.0),
        "mark": (str, "atom 1"), "tau": (_float, 1.0), "unchecked": (_bool, False),
    },
    "sim": {
        "dt": (_float, 0.01), "horizon": (_float, 10.0), "master_seed": (_int, 0), "n_paths": (_int, 1),
    },
    "coupling": {
        "alpha": (_float, 0.5), "lambda": (_lambda, None), "lambda_max": (_float, 2.0 ** 10),
    },
    "experiment": {
        "kind": (str, ...), "times": (_floats, None), "xi": (str, "const 1"), "eta": (str, "const 0"),
        "probes": (_floats, None), "R": (_float, 2.0), "delta": (_float, 0.5), "t": (_float, None),
        "M": (_float, 4.0), "epsilon": (_float, 2.0), "t0": (_float, 5.0), "case": (str, "i"),
        "n_samples": (_int, 256), "n_boot": (_int, 200), "reference": (str, "pair"),
        "metric": (str, "sup_capped"), "reference_horizon": (_float, None),
    },
    "output": {
        "directory": (str, "out"), "formats": (_words, ["csv", "json"]),
    },
}


@dataclass
class ExperimentConfig:
    model: dict
    sim: dict
    coupling: dict
    experiment: dict
    output: dict
    digest: str
    source: str = ""
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return dict(model=self.model, sim=self.sim, coupling=self.coupling, experiment=self.experiment,
                    output=self.output)


def parse_segment(text, tau):
    from .segment import Segment

    parts = text.split()
    try:
        if parts[0] == "const" and len(parts) == 2:
            return Segment.constant(tau, float(parts[1]))
        if parts[0] == "step" and len(parts) == 4:
            return Segment.step(tau, float(parts[1]), float(parts[2]), float(parts[3]))
    except (ValueError, IndexError) as e:
        raise ConfigError(f"bad segment {text!r}: {e}") from None
    raise ConfigError(f"bad segment {text!r}; use 'const <v>' or 'step <at> <before> <after>'")


def canonical_digest(sections):
    h = hashlib.sha256()
    for name in sorted(sections):
        for key in sorted(sections[name]):
            h.update(f"{name}.{key}={sections[name][key]!r}\n".encode())
    return h.hexdigest()


def loads(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unreadable config: {e}") from None
    unknown = [s for s in cp.sections() if s not in SCHEMA]
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    out = {}
    for name, keys in SCHEMA.items():
        given = dict(cp.items(name)) if cp.has_section(name) else {}
        bad = [k for k in given if k not in keys]
        if bad:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(bad)}")
        sec = {}
        for key, (conv, default) in keys.items():
            if key in given:
                try:
                    sec[key] = conv(given[key])
                except ValueError as e:
                    raise ConfigError(f"[{name}] {key}: {e}") from None
            elif default is ...:
                raise ConfigError(f"[{name}] {key} is required")
            else:
                sec[key] = default
        out[name] = sec
    _validate(out)
    return ExperimentConfig(**out, digest=canonical_digest(out), source=text)


def load(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    return loads(text)


def _validate(c):
    from .model import BUILTIN_KINDS, MarkLaw

    m, s, e, o = c["model"], c["sim"], c["experiment"], c["output"]
    if m["kind"] not in BUILTIN_KINDS:
        raise ConfigError(f"[model] kind must be one of {BUILTIN_KINDS}")
    try:
        MarkLaw.parse(m["mark"])
    except Exception as err:
        raise ConfigError(f"[model] mark: {err}") from None
    if e["kind"] not in EXPERIMENT_KINDS:
        raise ConfigError(f"[experiment] kind must be one of {EXPERIMENT_KINDS}")
    if s["n_paths"] < 1:
        raise ConfigError("[sim] n_paths must be positive")
    if not s["dt"] > 0 or s["horizon"] < 0:
        raise ConfigError("[sim] dt must be positive and horizon nonnegative")
    if e["case"] not in ("i", "ii"):
        raise ConfigError("[experiment] case must be i or ii")
    if e["reference"] not in ("pair", "reference"):
        raise ConfigError("[experiment] reference must be pair or reference")
    if e["metric"] not in ("sup_capped", "skorohod_upper_capped"):
        raise ConfigError("[experiment] metric must be sup_capped or skorohod_upper_capped")
    bad = [f for f in o["formats"] if f not in ("csv", "json")]
    if bad or not o["formats"]:
        raise ConfigError("[output] formats must be a nonempty subset of csv, json")
    if e["times"] is not None and any(t <= 0 for t in e["times"]):
        raise ConfigError("[experiment] times must be positive")
    for key in ("xi", "eta"):
        parse_segment(e[key], m["tau"])
