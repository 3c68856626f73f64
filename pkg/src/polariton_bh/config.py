"""Scenario configuration files.

Scenarios are TOML documents. The grammar is described in
``docs/config.md``; this module turns a document (plus command-line
overrides) into a validated :class:`ScenarioConfig`. Every validation
error carries the line of the offending key when it can be located.
"""
from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .dynamics import RAMP_KINDS, Ramp, Schedule
from .model import AtomCavityParams, ModelError

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "load_config",
    "parse_config",
    "preset_names",
    "preset_path",
    "apply_override",
    "params_from_table",
    "params_to_table",
]

MODELS = ("full", "bh", "both")
NAMED_STATES = ("occupations", "unit-filling", "w-state", "ground-state")
OBSERVABLES = ("n", "delta", "o_gs", "o_w", "decay_prob")
PARAM_KEYS = tuple(f.name for f in fields(AtomCavityParams))
EFFECTIVE_KEYS = ("kappa", "j_hop", "chem_pot", "gamma_pol")
PRESET_PACKAGE = "polariton_bh.presets"

_TOP_SECTIONS = ("scenario", "lattice", "basis", "params", "effective", "schedule",
                 "initial", "time", "output", "derive")


class ConfigError(ValueError):
    """Invalid scenario; ``line`` is 1-based or ``None`` when unknown."""

    def __init__(self, message, line=None, source=None, key=None):
        self.line = line
        self.key = key
        self.source = source
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line else f"{source}: "
        elif line:
            where = f"line {line}: "
        super().__init__(where + message)
        self.bare_message = message


_HEADER = re.compile(r"^\s*(\[\[?)\s*([^\]]+?)\s*\]\]?\s*(#.*)?$")
_KEY = re.compile(r'^\s*"?([A-Za-z0-9_\-]+)"?\s*=')


def _locate(text: str, path) -> Optional[int]:
    """Line of a key given as ``(section, [array index,] key)``."""
    if not text or not path:
        return None
    section, rest = path[0], list(path[1:])
    index = rest.pop(0) if rest and isinstance(rest[0], int) else None
    key = rest[0] if rest else None
    current, seen, header_line = None, -1, None
    for no, line in enumerate(text.splitlines(), start=1):
        m = _HEADER.match(line)
        if m:
            name = ".".join(part.strip().strip('"') for part in m.group(2).split("."))
            is_array = m.group(1) == "[["
            if name == section:
                if is_array:
                    seen += 1
                    current = seen == index
                else:
                    current = index is None
                if current and key is None and header_line is None:
                    header_line = no
                if current and key is None:
                    return no
            else:
                current = False
            continue
        if current and key is not None:
            k = _KEY.match(line)
            if k and k.group(1) == key:
                return no
    return header_line


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario; see ``docs/config.md`` for the file format."""

    name: str
    model: str
    num_sites: int
    periodic: bool
    edges: tuple
    params: Optional[tuple]
    effective: Optional[dict]
    schedule: Schedule
    initial: dict
    t_start: float
    t_end: float
    points: int
    max_step: Optional[float]
    jumps: bool
    seed: int
    observables: tuple
    output_dir: str
    per_site_cutoff: Optional[int]
    max_total: Optional[int]
    fixed_sector: Optional[bool]
    compare_omega_l: tuple
    raw: dict = field(repr=False, compare=False)

    @property
    def microscopic(self) -> bool:
        return self.params is not None

    @property
    def particles(self) -> int:
        """Total number of excitations put in by the initial state."""
        init = self.initial
        if init["state"] == "occupations":
            return int(sum(init["occupations"].values()))
        if init["state"] == "unit-filling":
            return self.num_sites
        return int(init["particles"])

    def occupation_list(self):
        if self.initial["state"] == "unit-filling":
            return [1] * self.num_sites
        occ = [0] * self.num_sites
        for site, n in self.initial["occupations"].items():
            occ[site] = n
        return occ

    def time_grid(self):
        import numpy as np

        return np.linspace(self.t_start, self.t_end, self.points)


def preset_names():
    files = resources.files(PRESET_PACKAGE).iterdir()
    return sorted(p.name[:-5] for p in files if p.name.endswith(".toml"))


def preset_path(name: str):
    res = resources.files(PRESET_PACKAGE) / f"{name}.toml"
    if not res.is_file():
        raise ConfigError(f"no preset named {name!r}; available: {', '.join(preset_names())}")
    return res


def params_from_table(table: dict, base: Optional[AtomCavityParams] = None) -> AtomCavityParams:
    unknown = set(table) - set(PARAM_KEYS)
    if unknown:
        raise ConfigError(f"unknown parameter(s) {sorted(unknown)}")
    values = base.as_dict() if base is not None else {}
    values.update(table)
    missing = [k for k in ("g13", "g24", "omega_l", "delta", "big_delta") if k not in values]
    if missing:
        raise ConfigError(f"missing parameter(s) {missing}")
    for k, v in values.items():
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"parameter {k} must be a number, got {v!r}", key=k)
    try:
        return AtomCavityParams(**values)
    except ModelError as exc:
        # the model names the offending field first
        first = str(exc).split()[0]
        raise ConfigError(str(exc), key=first if first in table else None) from None


def params_to_table(p: AtomCavityParams) -> str:
    """TOML body for a ``[params]`` section; floats survive the round trip."""
    lines = []
    for k, v in p.as_dict().items():
        lines.append(f"{k} = {v!r}" if isinstance(v, int) else f"{k} = {float(v)!r}")
    return "\n".join(lines) + "\n"


def apply_override(doc: dict, spec: str) -> dict:
    """Set ``section.key=value`` in a parsed document; the value is read as TOML."""
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} is not of the form key=value", source="--override")
    key, value = spec.split("=", 1)
    parts = [p.strip() for p in key.strip().split(".")]
    if len(parts) < 2 or not all(parts):
        raise ConfigError(f"override key {key!r} must be section.key", source="--override")
    if parts[0] not in _TOP_SECTIONS:
        raise ConfigError(f"unknown section {parts[0]!r} in override", source="--override")
    try:
        parsed = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    doc = copy.deepcopy(doc)
    node = doc
    for p in parts[:-1]:
        if isinstance(node, list):
            try:
                node = node[int(p)]
            except (ValueError, IndexError):
                raise ConfigError(f"override index {p!r} is out of range", source="--override") from None
            continue
        node = node.setdefault(p, {})
        if not isinstance(node, (dict, list)):
            raise ConfigError(f"override path {key!r} crosses a value", source="--override")
    if isinstance(node, list):
        raise ConfigError(f"override {key!r} must end in a key", source="--override")
    node[parts[-1]] = parsed
    return doc


def load_config(source, overrides=()) -> ScenarioConfig:
    """Read a config file, or a preset when ``source`` names one."""
    path = Path(str(source))
    if path.is_file():
        text, label = path.read_text(encoding="utf-8"), str(path)
    elif not path.suffix and str(source) in preset_names():
        text, label = preset_path(str(source)).read_text(encoding="utf-8"), f"preset:{source}"
    else:
        raise ConfigError(f"config file {source} not found and is not a preset name")
    return parse_config(text, overrides, source=label)


def parse_config(text: str, overrides=(), source=None) -> ScenarioConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", int(m.group(1)) if m else None, source) from None
    for spec in overrides:
        doc = apply_override(doc, spec)
    try:
        return _Validator(doc, text, source).build()
    except ConfigError as exc:
        if exc.source is None and source is not None:
            raise ConfigError(exc.bare_message, exc.line, source) from None
        raise


class _Validator:
    def __init__(self, doc, text, source):
        self.doc = doc
        self.text = text
        self.source = source

    def fail(self, message, *path):
        raise ConfigError(message, _locate(self.text, path), self.source)

    def table(self, name, required=False):
        t = self.doc.get(name)
        if t is None:
            if required:
                raise ConfigError(f"missing section [{name}]", None, self.source)
            return {}
        if not isinstance(t, dict):
            self.fail(f"[{name}] must be a table", name)
        return t

    def number(self, section, key, value, positive=False, integer=False):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(f"{section}.{key} must be a number, got {value!r}", section, key)
        if not math.isfinite(value):
            self.fail(f"{section}.{key} must be finite", section, key)
        if integer and int(value) != value:
            self.fail(f"{section}.{key} must be an integer, got {value!r}", section, key)
        if positive and value <= 0:
            self.fail(f"{section}.{key} must be positive, got {value!r}", section, key)
        return int(value) if integer else float(value)

    def check_keys(self, section, table, allowed):
        for k in table:
            if k not in allowed:
                self.fail(f"unknown key {k!r} in [{section}]", section, k)

    def build(self) -> ScenarioConfig:
        for k in self.doc:
            if k not in _TOP_SECTIONS:
                self.fail(f"unknown section [{k}]", k)

        sc = self.table("scenario", required=True)
        self.check_keys("scenario", sc, ("name", "model", "seed", "jumps", "observables", "description"))
        model = sc.get("model", "bh")
        if model not in MODELS:
            self.fail(f"scenario.model must be one of {MODELS}, got {model!r}", "scenario", "model")
        seed = self.number("scenario", "seed", sc.get("seed", 0), integer=True)
        if seed < 0:
            self.fail("scenario.seed must be non-negative", "scenario", "seed")
        jumps = sc.get("jumps", True)
        if not isinstance(jumps, bool):
            self.fail("scenario.jumps must be true or false", "scenario", "jumps")
        obs = sc.get("observables", ["n", "delta", "decay_prob"])
        if not isinstance(obs, list) or any(o not in OBSERVABLES for o in obs):
            self.fail(f"scenario.observables must be a list drawn from {OBSERVABLES}", "scenario", "observables")
        if len(set(obs)) != len(obs):
            self.fail("scenario.observables has duplicates", "scenario", "observables")

        lat = self.table("lattice", required=True)
        self.check_keys("lattice", lat, ("num_sites", "periodic", "edges"))
        num_sites = self.number("lattice", "num_sites", lat.get("num_sites", 0), positive=True, integer=True)
        periodic = lat.get("periodic", False)
        if not isinstance(periodic, bool):
            self.fail("lattice.periodic must be true or false", "lattice", "periodic")
        edges = lat.get("edges")
        if edges is not None:
            if periodic:
                self.fail("give either lattice.edges or lattice.periodic, not both", "lattice", "edges")
            ok = isinstance(edges, list) and all(
                isinstance(e, list) and len(e) == 2 and all(isinstance(i, int) and not isinstance(i, bool) for i in e)
                for e in edges)
            if not ok:
                self.fail("lattice.edges must be a list of [i, j] site pairs", "lattice", "edges")
            for i, j in edges:
                if not (1 <= i <= num_sites and 1 <= j <= num_sites) or i == j:
                    self.fail(f"edge [{i}, {j}] references a missing site or loops", "lattice", "edges")
            pairs = [tuple(sorted((i - 1, j - 1))) for i, j in edges]
            if len(set(pairs)) != len(pairs):
                self.fail("lattice.edges has duplicates", "lattice", "edges")
            edges = tuple(sorted(pairs))

        params, effective = self.parameter_path(num_sites)
        if model in ("full", "both") and params is None:
            self.fail(f"model {model!r} needs microscopic [params]", "scenario", "model")

        schedule = self.schedule(params is not None)
        initial = self.initial(num_sites, model)
        for o in ("o_gs", "o_w"):
            if o in obs and model != "bh":
                self.fail(f"observable {o} is only defined for model 'bh'", "scenario", "observables")
        if initial["state"] in ("w-state", "ground-state") and model != "bh":
            self.fail(f"initial state {initial['state']!r} needs model 'bh'", "initial", "state")

        tm = self.table("time", required=True)
        self.check_keys("time", tm, ("t_start", "t_end", "points", "max_step"))
        t_start = self.number("time", "t_start", tm.get("t_start", 0.0))
        if "t_end" not in tm:
            self.fail("time.t_end is required", "time")
        t_end = self.number("time", "t_end", tm["t_end"])
        if not t_end > t_start:
            self.fail(f"time window must be positive, got [{t_start}, {t_end}]", "time", "t_end")
        points = self.number("time", "points", tm.get("points", 101), integer=True)
        if points < 2:
            self.fail("time.points must be at least 2", "time", "points")
        max_step = tm.get("max_step")
        if max_step is not None:
            max_step = self.number("time", "max_step", max_step, positive=True)
        try:
            schedule.validate_window(t_start, t_end)
        except ValueError as exc:
            self.fail(str(exc), "schedule")

        basis = self.table("basis")
        self.check_keys("basis", basis, ("per_site_cutoff", "max_total", "fixed_sector"))
        cutoff = basis.get("per_site_cutoff")
        if cutoff is not None:
            cutoff = self.number("basis", "per_site_cutoff", cutoff, positive=True, integer=True)
        max_total = basis.get("max_total")
        if max_total is not None:
            max_total = self.number("basis", "max_total", max_total, positive=True, integer=True)
        fixed = basis.get("fixed_sector")
        if fixed is not None and not isinstance(fixed, bool):
            self.fail("basis.fixed_sector must be true or false", "basis", "fixed_sector")
        if fixed and jumps:
            self.fail("basis.fixed_sector cannot hold the states reached by jumps", "basis", "fixed_sector")

        out = self.table("output")
        self.check_keys("output", out, ("directory",))
        out_dir = out.get("directory", "out")
        if not isinstance(out_dir, str) or not out_dir:
            self.fail("output.directory must be a non-empty string", "output", "directory")

        der = self.table("derive")
        self.check_keys("derive", der, ("compare_omega_l",))
        comp = der.get("compare_omega_l", [])
        if not isinstance(comp, list):
            self.fail("derive.compare_omega_l must be a list", "derive", "compare_omega_l")
        comp = tuple(self.number("derive", "compare_omega_l", v, positive=True) for v in comp)

        name = sc.get("name", "scenario")
        if not isinstance(name, str):
            self.fail("scenario.name must be a string", "scenario", "name")
        cfg = ScenarioConfig(
            name=name, model=model, num_sites=num_sites, periodic=periodic, edges=edges,
            params=params, effective=effective, schedule=schedule, initial=initial,
            t_start=t_start, t_end=t_end, points=points, max_step=max_step, jumps=jumps,
            seed=seed, observables=tuple(obs), output_dir=out_dir, per_site_cutoff=cutoff,
            max_total=max_total, fixed_sector=fixed, compare_omega_l=comp, raw=self.doc,
        )
        if cutoff is not None and initial["state"] != "ground-state":
            need = cfg.particles if initial["state"] == "w-state" else max(cfg.occupation_list())
            if cutoff < need:
                self.fail("basis.per_site_cutoff is below the initial occupation", "basis", "per_site_cutoff")
        if max_total is not None and max_total < cfg.particles:
            self.fail("basis.max_total is below the initial excitation number", "basis", "max_total")
        return cfg

    def parameter_path(self, num_sites):
        has_params = "params" in self.doc
        has_eff = "effective" in self.doc
        if has_params == has_eff:
            self.fail("give exactly one of [params] (microscopic) or [effective] (direct kappa, J)",
                      "params" if has_params else "scenario")
        if has_eff:
            eff = self.table("effective")
            self.check_keys("effective", eff, EFFECTIVE_KEYS)
            for k in ("kappa", "j_hop"):
                if k not in eff:
                    self.fail(f"effective.{k} is required", "effective")
            vals = {k: self.number("effective", k, eff.get(k, 0.0)) for k in EFFECTIVE_KEYS}
            if vals["gamma_pol"] < 0:
                self.fail("effective.gamma_pol must be non-negative", "effective", "gamma_pol")
            return None, vals

        raw = dict(self.table("params"))
        sites = raw.pop("site", {})
        if not isinstance(sites, dict):
            self.fail("params.site must be a table of per-site tables", "params", "site")
        for k in raw:
            if k not in PARAM_KEYS:
                self.fail(f"unknown parameter {k!r} in [params]", "params", k)
        try:
            base = params_from_table(raw)
        except ConfigError as exc:
            self.fail(exc.bare_message, "params", *([exc.key] if exc.key else []))
        per_site = [base] * num_sites
        for key, table in sites.items():
            if not key.isdigit() or not 1 <= int(key) <= num_sites:
                self.fail(f"params.site.{key} does not name a site in 1..{num_sites}", "params")
            if not isinstance(table, dict):
                self.fail(f"params.site.{key} must be a table", "params")
            try:
                per_site[int(key) - 1] = params_from_table(table, base)
            except ConfigError as exc:
                self.fail(f"params.site.{key}: {exc.bare_message}", f"params.site.{key}",
                          *([exc.key] if exc.key else []))
        return tuple(per_site), None

    def schedule(self, microscopic):
        segs = self.doc.get("schedule", [])
        if not isinstance(segs, list):
            self.fail("schedule must be an array of [[schedule]] tables", "schedule")
        allowed = PARAM_KEYS if microscopic else ("kappa", "j_hop", "chem_pot")
        ramps = {}
        for i, s in enumerate(segs):
            if not isinstance(s, dict):
                self.fail("schedule entries must be tables", "schedule", i)
            self.check_keys("schedule", s, ("parameter", "kind", "t_start", "t_end", "start", "end"))
            name = s.get("parameter")
            if name not in allowed:
                self.fail(f"schedule parameter must be one of {allowed}, got {name!r}", "schedule", i, "parameter")
            if name == "n_atoms":
                self.fail("n_atoms cannot be ramped", "schedule", i, "parameter")
            kind = s.get("kind", "linear")
            if kind not in RAMP_KINDS:
                self.fail(f"schedule kind must be one of {RAMP_KINDS}", "schedule", i, "kind")
            vals = {}
            for k in ("t_start", "t_end", "start", "end"):
                if k not in s:
                    self.fail(f"schedule entry lacks {k!r}", "schedule", i)
                vals[k] = self.number("schedule", k, s[k])
            try:
                ramps.setdefault(name, []).append(Ramp(kind, vals["t_start"], vals["t_end"], vals["start"], vals["end"]))
            except ValueError as exc:
                self.fail(str(exc), "schedule", i)
        try:
            return Schedule({k: tuple(v) for k, v in ramps.items()})
        except ValueError as exc:
            self.fail(str(exc), "schedule")

    def initial(self, num_sites, model):
        init = self.table("initial", required=True)
        self.check_keys("initial", init, ("state", "occupations", "particles"))
        state = init.get("state", "occupations")
        if state not in NAMED_STATES:
            self.fail(f"initial.state must be one of {NAMED_STATES}", "initial", "state")
        out = {"state": state}
        if state == "occupations":
            occ = init.get("occupations")
            if not isinstance(occ, dict) or not occ:
                self.fail("initial.occupations must map site numbers to occupations", "initial", "occupations")
            parsed = {}
            for k, v in occ.items():
                if not k.isdigit() or not 1 <= int(k) <= num_sites:
                    self.fail(f"initial.occupations references missing site {k!r}", "initial", "occupations")
                if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                    self.fail(f"occupation of site {k} must be a non-negative integer", "initial", "occupations")
                parsed[int(k) - 1] = v
            if sum(parsed.values()) == 0:
                self.fail("initial.occupations puts no excitation in the lattice", "initial", "occupations")
            out["occupations"] = parsed
        elif state in ("w-state", "ground-state"):
            if "particles" not in init:
                self.fail(f"initial state {state!r} needs initial.particles", "initial")
            out["particles"] = self.number("initial", "particles", init["particles"], positive=True, integer=True)
        elif "occupations" in init or "particles" in init:
            self.fail("unit-filling takes no occupations or particles", "initial", "state")
        return out
