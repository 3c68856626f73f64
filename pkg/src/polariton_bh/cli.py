"""Command-line front end: run scenarios, derive parameters, list presets.

Usage::

    polariton-bh run <config|preset> [--seed N] [--out DIR] [--override key=value ...]
    polariton-bh derive <config|preset> [--csv]
    polariton-bh presets list

Exit codes are 0 on success, 2 for configuration errors and 3 for
failures during a simulation.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import model as mdl
from .config import ConfigError, ScenarioConfig, load_config, preset_names, preset_path
from .dynamics import (IntegratorOptions, JumpOperator, bh_model_hamiltonian, build_jump_operators,
                       full_model_hamiltonian, quantum_jump_trajectory)
from .hilbert import FULL_MODES, BasisError, CouplingGraph, build_basis, mode_operator

__all__ = ["main", "run_scenario", "derive_rows", "write_csv", "read_csv", "EXIT_OK", "EXIT_CONFIG", "EXIT_RUNTIME"]

log = logging.getLogger("polariton_bh")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
NUMBER_FORMAT = "%.12e"
PARAMS_HEADER = ["case", "time_s", "site", "quantity", "value", "status"]


# ---------------------------------------------------------------- CSV

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return NUMBER_FORMAT % v
    return str(v)


def write_csv(path, header, rows):
    """UTF-8 CSV with a header row; floats as ``%.12e``, ints verbatim."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    text = buf.getvalue()
    if path is None:
        return text
    Path(path).write_text(text, encoding="utf-8")
    return text


def _parse_cell(s):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


def read_csv(path):
    """Inverse of :func:`write_csv`: header plus typed rows."""
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], [[_parse_cell(c) for c in r] for r in rows[1:]]


# ---------------------------------------------------------------- derive

def _param_rows(case, t, site, p: mdl.AtomCavityParams):
    e = mdl.effective_parameters(p)
    rows = [(case, t, site, k, float(v), "") for k, v in e.as_dict().items()]
    ratio = e.kappa / e.j_hop if e.j_hop else math.inf
    rows.append((case, t, site, "kappa_over_j", ratio, ""))
    rep = mdl.validity_report(p)
    for k, v, _ok, status in rep.rows():
        rows.append((case, t, site, f"validity_{k}", float(v), status))
    return rows


def _times_of_interest(cfg: ScenarioConfig):
    return (cfg.t_start, cfg.t_end) if cfg.schedule.names else (cfg.t_start,)


def derive_rows(cfg: ScenarioConfig):
    """Rows of ``params.csv``: closed-form parameters and validity ratios.

    With a schedule, values are reported at both ends of the time window.
    """
    rows = []
    for t in _times_of_interest(cfg):
        case = "start" if t == cfg.t_start else "end"
        if cfg.microscopic:
            for s, p in enumerate(cfg.params):
                rows += _param_rows(case, t, s + 1, cfg.schedule.apply(p, t))
        else:
            vals = {k: cfg.schedule.value(k, t) if k in cfg.schedule else v for k, v in cfg.effective.items()}
            vals["kappa_over_j"] = vals["kappa"] / vals["j_hop"] if vals["j_hop"] else math.inf
            for s in range(cfg.num_sites):
                rows += [(case, t, s + 1, k, float(v), "") for k, v in vals.items()]
    if cfg.microscopic:
        for om in cfg.compare_omega_l:
            for s, p in enumerate(cfg.params):
                rows += _param_rows(f"omega_l={NUMBER_FORMAT % om}", cfg.t_start, s + 1, p.with_values(omega_l=om))
    return rows


def _print_derived(cfg, rows, stream):
    print(f"scenario: {cfg.name}", file=stream)
    by_case = {}
    for case, t, site, q, v, status in rows:
        by_case.setdefault((case, t), {}).setdefault(q, {})[site] = (v, status)
    for (case, t), table in by_case.items():
        print(f"\n[{case}] t = {t:.6e} s", file=stream)
        for q, per_site in table.items():
            vals = list(per_site.values())
            uniform = all(x == vals[0] for x in vals)
            shown = [vals[0]] if uniform else vals
            text = "  ".join(f"{v:.6e}" + (f" ({s})" if s else "") for v, s in shown)
            print(f"  {q:<28s} {text}", file=stream)
    if cfg.compare_omega_l:
        print("\nnote: omega_l=... blocks re-evaluate the closed forms at alternative drive "
              "strengths for comparison; the scenario itself uses the [params] value.", file=stream)


# ---------------------------------------------------------------- run

def _graph(cfg):
    if cfg.edges is not None:
        return CouplingGraph(cfg.num_sites, cfg.edges)
    return CouplingGraph.chain(cfg.num_sites, periodic=cfg.periodic)


def _fixed(cfg):
    return (not cfg.jumps) if cfg.fixed_sector is None else cfg.fixed_sector


def _full_setup(cfg, graph):
    n = cfg.particles
    fixed = _fixed(cfg)
    basis = build_basis(cfg.num_sites, FULL_MODES, cfg.per_site_cutoff or 2,
                        n if fixed else None, max_total=None if fixed else (cfg.max_total or n))
    H = full_model_hamiltonian(cfg.params, graph, basis, cfg.schedule)
    jumps = build_jump_operators(cfg.params, basis, graph, cfg.schedule) if cfg.jumps else []
    start = [cfg.schedule.apply(p, cfg.t_start) for p in cfg.params]
    psi0 = an.dark_polariton_state(start, basis, cfg.occupation_list())
    return basis, H, jumps, psi0, an.FullModelContext(cfg.params, basis, cfg.schedule)


def _bh_setup(cfg, graph):
    n = cfg.particles
    basis = mdl.bh_basis(cfg.num_sites, n, cutoff=cfg.per_site_cutoff, fixed_sector=_fixed(cfg))
    if cfg.max_total is not None and not _fixed(cfg):
        basis = build_basis(cfg.num_sites, basis.modes, basis.per_site_cutoff, max_total=cfg.max_total)
    if cfg.microscopic:
        H = bh_model_hamiltonian(graph, basis, params=cfg.params, schedule=cfg.schedule)
        jumps = build_jump_operators(cfg.params, basis, schedule=cfg.schedule) if cfg.jumps else []
    else:
        eff = cfg.effective
        H = bh_model_hamiltonian(graph, basis, kappa=eff["kappa"], j_hop=eff["j_hop"],
                                 chem_pot=eff["chem_pot"], schedule=cfg.schedule)
        jumps = []
        if cfg.jumps and eff["gamma_pol"] > 0:
            jumps = [JumpOperator(mode_operator(basis, s, "p", "lower"), eff["gamma_pol"], f"p_{s + 1}")
                     for s in range(cfg.num_sites)]
    state = cfg.initial["state"]
    if state == "w-state":
        psi0 = an.w_state(cfg.num_sites, n, basis)
    elif state == "ground-state":
        vecs = an.ground_subspace(H.at(cfg.t_start))
        if vecs.shape[1] > 1:
            log.warning("initial ground state is %d-fold degenerate; using the first vector", vecs.shape[1])
        psi0 = vecs[:, 0]
    else:
        psi0 = an.fock_state(basis, cfg.occupation_list())
    return basis, H, jumps, psi0, an.BHContext(basis)


def _columns(cfg, traj, H, ctx, basis, prefix=""):
    cols = {}
    obs = cfg.observables
    for s in range(cfg.num_sites):
        if "n" in obs:
            cols[f"{prefix}n_{s + 1}"] = an.polariton_number_series(traj, s, ctx).values
        if "delta" in obs:
            cols[f"{prefix}delta_{s + 1}"] = an.number_fluctuation_series(traj, s, ctx).values
    if "o_gs" in obs:
        cols[f"{prefix}o_gs"] = an.ground_state_overlap_series(traj, H).values
    if "o_w" in obs:
        cols[f"{prefix}o_w"] = an.overlap_series(traj, an.w_state(cfg.num_sites, cfg.particles, basis)).values
    if "decay_prob" in obs:
        cols[f"{prefix}decay_prob"] = traj.decay_prob
    return cols


def run_scenario(cfg: ScenarioConfig, out_dir=None):
    """Run one scenario and write ``series.csv``, ``params.csv`` and ``meta.json``.

    Returns the exit status. Configuration problems found while
    assembling the models give :data:`EXIT_CONFIG`; failures during
    integration give :data:`EXIT_RUNTIME` and a meta file flagged as
    partial.
    """
    t0 = time.perf_counter()
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "name": cfg.name,
        "config": cfg.raw,
        "seed": cfg.seed,
        "version": __version__,
        "status": "ok",
        "partial": False,
        "files": [],
        "models": {},
    }

    def finish(code, error=None):
        if error is not None:
            meta["status"] = "failed"
            meta["error"] = error
            meta["partial"] = True
        meta["wall_time_s"] = round(time.perf_counter() - t0, 3)
        (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n",
                                       encoding="utf-8")
        return code

    try:
        write_csv(out / "params.csv", PARAMS_HEADER, derive_rows(cfg))
    except mdl.ModelError as exc:
        return finish(EXIT_CONFIG, f"config: {exc}")
    meta["files"].append("params.csv")
    if not cfg.observables:
        return finish(EXIT_OK)

    graph = _graph(cfg)
    models = ("full", "bh") if cfg.model == "both" else (cfg.model,)
    setups = {}
    try:
        for m in models:
            setups[m] = (_full_setup if m == "full" else _bh_setup)(cfg, graph)
    except (BasisError, mdl.ModelError, ValueError, KeyError) as exc:
        return finish(EXIT_CONFIG, f"config: cannot assemble model: {exc}")

    grid = cfg.time_grid()
    options = IntegratorOptions(max_step=cfg.max_step)
    columns = {}
    trajs = {}
    try:
        for m in models:
            basis, H, jumps, psi0, ctx = setups[m]
            log.info("%s model: dim %d, %d jump channels", m, basis.dim, len(jumps))
            tm = time.perf_counter()
            traj = quantum_jump_trajectory(H, jumps, psi0, grid, cfg.seed, options)
            trajs[m] = traj
            meta["models"][m] = {
                "dim": basis.dim,
                "jump_channels": [j.label for j in jumps],
                "jumps": [[t, jumps[k].label] for t, k in traj.jumps],
                "final_decay_prob": float(traj.decay_prob[-1]),
            }
            log.info("%s model done in %.1f s, %d jumps", m, time.perf_counter() - tm, len(traj.jumps))
            prefix = f"{m}_" if cfg.model == "both" else ""
            columns.update(_columns(cfg, traj, H, ctx, basis, prefix))
        if cfg.model == "both":
            for s in range(cfg.num_sites):
                if "n" in cfg.observables:
                    columns[f"dn_{s + 1}"] = columns[f"full_n_{s + 1}"] - columns[f"bh_n_{s + 1}"]
                if "delta" in cfg.observables:
                    columns[f"ddelta_{s + 1}"] = columns[f"full_delta_{s + 1}"] - columns[f"bh_delta_{s + 1}"]
    except Exception as exc:  # noqa: BLE001 - reported through the exit status
        log.debug("simulation failed", exc_info=True)
        return finish(EXIT_RUNTIME, f"runtime: {type(exc).__name__}: {exc}")

    header = ["time_s"] + list(columns)
    rows = [[t] + [float(columns[c][i]) for c in columns] for i, t in enumerate(grid)]
    write_csv(out / "series.csv", header, rows)
    meta["files"].insert(0, "series.csv")
    return finish(EXIT_OK)


# ---------------------------------------------------------------- argparse

def _parser():
    p = argparse.ArgumentParser(prog="polariton-bh",
                                description="Coupled-cavity polariton Bose-Hubbard simulations.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write series.csv, params.csv, meta.json")
    r.add_argument("config", help="TOML scenario file or preset name")
    r.add_argument("--seed", type=int, default=None, help="override scenario.seed")
    r.add_argument("--out", default=None, help="output directory (overrides output.directory)")
    r.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set section.key to a TOML value, e.g. params.omega_l=3e11")

    d = sub.add_parser("derive", help="print effective parameters and validity ratios")
    d.add_argument("config", help="TOML scenario file or preset name")
    d.add_argument("--csv", action="store_true", help="emit CSV instead of a table")
    d.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")

    pr = sub.add_parser("presets", help="shipped scenario files")
    pr.add_argument("action", choices=["list", "show"])
    pr.add_argument("name", nargs="?")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    if args.command == "presets":
        if args.action == "list":
            for name in preset_names():
                cfg = load_config(name)
                desc = cfg.raw["scenario"].get("description", "")
                print(f"{name:<22s} {desc}")
            return EXIT_OK
        if not args.name:
            print("error: presets show needs a name", file=sys.stderr)
            return EXIT_CONFIG
        try:
            sys.stdout.write(preset_path(args.name).read_text(encoding="utf-8"))
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK

    overrides = list(args.override)
    if args.command == "run" and args.seed is not None:
        overrides.append(f"scenario.seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "derive":
            if not cfg.microscopic:
                raise ConfigError("derive needs microscopic [params]", source=args.config)
            rows = derive_rows(cfg)
    except (ConfigError, mdl.ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "derive":
        if args.csv:
            sys.stdout.write(write_csv(None, PARAMS_HEADER, rows))
        else:
            _print_derived(cfg, rows, sys.stdout)
        return EXIT_OK

    code = run_scenario(cfg, args.out)
    if code != EXIT_OK:
        out = Path(args.out or cfg.output_dir) / "meta.json"
        err = json.loads(out.read_text(encoding="utf-8")).get("error", "")
        print(f"{'config' if code == EXIT_CONFIG else 'runtime'} error: {err}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
