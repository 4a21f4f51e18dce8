"""Batch experiment runner.

Every run resolves a config (YAML file, then command-line overrides), hashes
the numerically relevant part, writes its outputs under names carrying that
hash, and finishes with a manifest.  Output bodies are deterministic; wall
times and timestamps only appear in the manifest.

Exit codes: 0 success, 2 config error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np
import yaml

from . import __version__
from .analysis import (
    bip_sup,
    bound_chains,
    gen_derivative,
    asymptotic_representative,
    report_to_dict,
    slice_size,
    subdivision_analysis,
    volume_comparison,
    weak_qs_estimate,
)
from .errors import DomainError, InvalidInputError
from .mapzoo import catalog_text, get_map
from .radius import bi_lipschitz_estimate, difference_quotients, log_transform_curve
from .transform import transform_of

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

STOCHASTIC = {"rho-curve", "dq", "subdivide", "qs", "asym-rep", "gen-derivative"}
# keys that do not change numerical output and stay out of the hash
UNHASHED = {"out", "threads", "format", "config"}


class ConfigError(ValueError):
    pass


# ----------------------------------------------------------------------------
# config handling


def _grid(spec):
    """A t-grid from a list or a ``{start, stop, num}`` / ``{start, stop, step}`` mapping."""
    if spec is None:
        return None
    if isinstance(spec, dict):
        start, stop = float(spec["start"]), float(spec["stop"])
        if "num" in spec:
            return np.linspace(start, stop, int(spec["num"])).tolist()
        step = float(spec.get("step", 1.0))
        k = int(math.floor((stop - start) / step + 1e-9))
        return [start + i * step for i in range(k + 1)]
    if isinstance(spec, str):
        return [float(v) for v in spec.split(",") if v.strip()]
    return [float(v) for v in spec]


def _parse_params(items):
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        try:
            out[key] = yaml.safe_load(val)
        except yaml.YAMLError as exc:
            raise ConfigError(str(exc)) from exc
    return out


def load_config(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a mapping")
    cfg["command"] = args.command
    for key in ("map", "n", "seed", "budget", "threads", "format", "out", "t0", "t", "resolution",
                "quad_grid", "triples", "d"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    for key in ("t_grid", "lags", "t_samples", "radii", "region", "u_range"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = _grid(val)
    params = dict(cfg.get("params") or {})
    params.update(_parse_params(getattr(args, "param", None)))
    cfg["params"] = params
    cfg.setdefault("n", 2)
    cfg.setdefault("format", "csv")
    cfg.setdefault("out", ".")
    cfg.setdefault("threads", 1)
    for key in ("t_grid", "lags", "t_samples", "radii", "region", "u_range"):
        if key in cfg:
            cfg[key] = _grid(cfg[key])
    return cfg


def config_hash(cfg: dict) -> str:
    core = {k: v for k, v in cfg.items() if k not in UNHASHED}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise ConfigError(f"missing config value: {k}")


def validate(cfg: dict):
    cmd = cfg["command"]
    if cfg["format"] not in ("csv", "json"):
        raise ConfigError("format must be csv or json")
    if cmd in STOCHASTIC and cfg.get("seed") is None:
        raise ConfigError("a seed is required for stochastic experiments")
    if cfg.get("seed") is not None and not (0 <= int(cfg["seed"]) < 2**64):
        raise ConfigError("seed must be an unsigned 64-bit integer")
    _require(cfg, "map")
    try:
        f = get_map(str(cfg["map"]), int(cfg["n"]), **cfg["params"])
    except (InvalidInputError, DomainError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    ts = []
    for key in ("t_grid", "t_samples", "region"):
        ts += list(cfg.get(key) or [])
    for key in ("t0",):
        if cfg.get(key) is not None:
            ts.append(float(cfg[key]))
    if cfg.get("t0") is not None and cfg.get("t") is not None:
        ts.append(float(cfg["t0"]) + float(cfg["t"]))
    bad = [t for t in ts if t >= f.M]
    if bad:
        raise ConfigError(f"t values must lie below M = {f.M:g}; got {bad[:3]}")
    return f


# ----------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, header, rows, chash):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config={chash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_json(path, obj, chash):
    obj = dict(obj)
    obj["configHash"] = chash
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    raise TypeError(f"not serializable: {type(v).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so JSON stays strict."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (float, np.floating)) and not math.isfinite(float(obj)):
        return None
    return obj


class Output:
    """Collects result files for one run; each file name carries the config hash."""

    def __init__(self, cfg, chash):
        self.dir = cfg["out"]
        self.format = cfg["format"]
        self.stem = f"{cfg['command']}-{cfg['map']}-{chash[:12]}"
        self.chash = chash
        self.files = []
        os.makedirs(self.dir, exist_ok=True)

    def table(self, header, rows, summary=None, suffix=""):
        name = self.stem + suffix
        if self.format == "csv":
            path = os.path.join(self.dir, name + ".csv")
            write_csv(path, header, rows, self.chash)
            self.files.append(path)
            if summary is not None:
                self.json(summary, suffix=suffix + "-summary")
        else:
            obj = {"columns": list(header), "rows": [[_clean(v) for v in r] for r in rows]}
            if summary is not None:
                obj["summary"] = summary
            self.json(obj, suffix=suffix)

    def json(self, obj, suffix=""):
        path = os.path.join(self.dir, self.stem + suffix + ".json")
        obj = _clean(obj)
        obj.setdefault("schemaVersion", 1)
        write_json(path, obj, self.chash)
        self.files.append(path)


# ----------------------------------------------------------------------------
# commands


def _budget(cfg):
    return None if cfg.get("budget") is None else int(cfg["budget"])


def _t_grid(cfg, default):
    return cfg.get("t_grid") or default


def cmd_rho_curve(f, cfg, out):
    curve = log_transform_curve(f, _t_grid(cfg, list(np.arange(-10.0, -0.5, 1.0))), _budget(cfg),
                                int(cfg["seed"]), threads=int(cfg["threads"]))
    rows = [(t, r, e, fl) for (t, r, e), fl in zip(curve.rows(), curve.flagged)]
    out.table(["t", "rhoTilde", "stdError", "flagged"], rows)
    return {"points": len(rows), "flagged": int(np.sum(curve.flagged))}


def cmd_dq(f, cfg, out):
    tg = _t_grid(cfg, list(np.arange(-10.0, -0.75, 0.25)))
    lags = cfg.get("lags") or [0.25, 0.5, 1.0]
    curve = log_transform_curve(f, tg, _budget(cfg), int(cfg["seed"]), threads=int(cfg["threads"]))
    dq = difference_quotients(curve, lags)
    lmin, lmax, L = bi_lipschitz_estimate(curve, lags)
    summary = {"Lmin": lmin, "Lmax": lmax, "L": L}
    out.table(["t0", "lag", "dq"], dq, summary)
    return summary


def cmd_bip(f, cfg, out):
    tm = transform_of(f)
    ts = cfg.get("t_samples") or _t_grid(cfg, [-8.0, -6.0, -4.0, -3.0])
    rep = bip_sup(tm, ts, int(cfg.get("quad_grid") or 64))
    summary = {"supEstimate": rep.sup_estimate, "verdict": rep.verdict, "trendSlope": rep.trend_slope,
               "mad": rep.mad, "excludedCells": rep.excluded_cells}
    out.table(["t", "integral"], list(zip(rep.t_samples, rep.integrals)), summary)
    return summary


def cmd_subdivide(f, cfg, out):
    _require(cfg, "t0", "t")
    tm = transform_of(f)
    t0, t = float(cfg["t0"]), float(cfg["t"])
    seed = int(cfg["seed"])
    rep = subdivision_analysis(tm, t0, t, seed=seed, box_budget=int(cfg.get("box_budget", 2048)),
                               slab_budget=int(cfg.get("budget") or 1 << 16))
    vc = volume_comparison(tm, t0, t, _budget(cfg), seed)
    chains = bound_chains(rep, vc.increment)
    summary = {
        "N": rep.N, "side": rep.side, "Vt": rep.V_t, "VtError": rep.V_t_err, "boxSum": rep.box_sum,
        "projectedTotal": rep.proj_total, "ratioC1": rep.ratio_c1, "ratioC2": rep.ratio_c2,
        "ratioC3": rep.ratio_c3, "increment": vc.increment, "volumeRatio": vc.ratio,
        "chainsHold": chains.all_hold, "failedSteps": chains.failed_steps(),
        "dqLower": chains.dq_lower, "dqMeasured": chains.dq_measured, "dqUpper": chains.dq_upper,
        "constants": chains.constants,
        "steps": [{"chain": side, "name": s.name, "lhs": s.lhs, "rhs": s.rhs, "relation": s.relation,
                   "holds": s.holds}
                  for side, steps in (("lower", chains.lower_steps), ("upper", chains.upper_steps))
                  for s in steps],
    }
    rows = [(i, rep.diam[i], rep.nu[i], rep.vol[i], rep.vol_err[i], rep.vol_base[i], rep.pi_rep[i],
             rep.proj_vol[i]) for i in range(rep.N)]
    out.table(["box", "diam", "nu", "vol", "volError", "volBase", "piRep", "projVol"], rows, summary)
    return {"chainsHold": chains.all_hold, "N": rep.N}


def cmd_qs(f, cfg, out):
    tm = transform_of(f)
    region = tuple(cfg.get("region") or (-6.0, -3.0))
    if len(region) != 2:
        raise ConfigError("region needs two heights")
    rep = weak_qs_estimate(tm, region, int(cfg.get("triples") or 20000), int(cfg["seed"]))
    summary = {"weakH": rep.weak_h, "triples": rep.triples, "region": list(rep.region)}
    out.table(["ratio", "H"], list(zip(rep.ratio_edges, rep.h_curve)), summary)
    return summary


def cmd_slice_size(f, cfg, out):
    _require(cfg, "t0")
    tm = transform_of(f)
    res = cfg.get("resolution") or 256
    levels = [int(res) * 2**k for k in range(int(cfg.get("refinements", 3)))]
    u_range = cfg.get("u_range")
    rows = [(r, slice_size(tm, float(cfg["t0"]), r, u_range).value) for r in levels]
    out.table(["resolution", "size"], rows)
    return {"size": rows[-1][1]}


def cmd_gen_derivative(f, cfg, out):
    radii = cfg.get("radii") or [math.exp(-k) for k in range(6, 11)]
    g = gen_derivative(f, radii, budget=_budget(cfg), seed=int(cfg["seed"]))
    rows = [(r, rho, (g.distances[i - 1] if i else math.nan)) for i, (r, rho) in enumerate(zip(g.radii, g.rhos))]
    summary = {"simple": g.simple, "finalDistance": float(g.distances[-1]) if g.distances.size else None}
    out.table(["radius", "rho", "supDistance"], rows, summary)
    return summary


def cmd_asym_rep(f, cfg, out):
    seed = int(cfg["seed"])
    tg = _t_grid(cfg, list(np.arange(-12.0, -3.5, 0.5)))
    radii = cfg.get("radii") or [math.exp(min(tg)), math.exp(min(tg) + 1)]
    g = gen_derivative(f, radii, budget=_budget(cfg), seed=seed)
    d = cfg.get("d")
    rep = asymptotic_representative(f, g, tg, None if d is None else float(d), _budget(cfg), seed)
    dirs = g.directions[:: max(1, len(g.directions) // 256)]
    rows = []
    for t, r, e in rep.curve.rows():
        res = float(np.max(rep.residual(f, math.exp(t) * dirs)))
        rows.append((t, r, e, res))
    summary = {"bilipschitz": rep.bilipschitz, "simple": g.simple}
    out.table(["t", "rhoTilde", "stdError", "residual"], rows, summary)
    return summary


COMMANDS = {
    "rho-curve": cmd_rho_curve,
    "dq": cmd_dq,
    "bip": cmd_bip,
    "subdivide": cmd_subdivide,
    "qs": cmd_qs,
    "slice-size": cmd_slice_size,
    "gen-derivative": cmd_gen_derivative,
    "asym-rep": cmd_asym_rep,
}


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config; flags override its values")
    common.add_argument("--out", help="output directory (default: current directory)")
    common.add_argument("--seed", type=int, help="seed for Monte Carlo streams")
    common.add_argument("--budget", type=int, help="Monte Carlo samples per volume")
    common.add_argument("--threads", type=int, help="worker threads for chunked sampling")
    common.add_argument("--format", choices=["csv", "json"], help="output format")
    common.add_argument("--map", help="zoo label, see the zoo subcommand")
    common.add_argument("--n", type=int, help="dimension (2 or 3)")
    common.add_argument("--param", action="append", metavar="KEY=VALUE", help="map parameter, repeatable")

    p = argparse.ArgumentParser(prog="meanradius", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("zoo", help="list built-in maps")

    def add(name, help_, *extra):
        sp = sub.add_parser(name, parents=[common], help=help_)
        for flag in extra:
            sp.add_argument(f"--{flag.replace('_', '-')}", dest=flag)
        return sp

    add("rho-curve", "sample t -> ln rho_f(e^t)", "t_grid")
    add("dq", "difference quotients and bi-Lipschitz estimate", "t_grid", "lags")
    sp = add("bip", "slice integrals and boundedness verdict", "t_samples", "t_grid")
    sp.add_argument("--quad-grid", dest="quad_grid", type=int)
    sp = add("subdivide", "box subdivision report and inequality chains")
    sp.add_argument("--t0", type=float)
    sp.add_argument("--t", type=float)
    sp = add("qs", "weak quasisymmetry estimate", "region")
    sp.add_argument("--triples", type=int)
    sp = add("slice-size", "slice length or area under refinement", "u_range")
    sp.add_argument("--t0", type=float)
    sp.add_argument("--resolution", type=int)
    add("gen-derivative", "rescalings f(r x) / rho_f(r) along radii", "radii")
    sp = add("asym-rep", "asymptotic representative and its transform's bi-Lipschitz constant", "t_grid", "radii")
    sp.add_argument("--d", type=float)
    return p


def _error(kind, message, code):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message), "exitCode": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "zoo":
        sys.stdout.write(catalog_text())
        return EXIT_OK
    try:
        cfg = load_config(args)
        f = validate(cfg)
    except ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    chash = config_hash(cfg)
    out = Output(cfg, chash)
    started = datetime.now(timezone.utc).isoformat()
    t_start = time.perf_counter()
    status, code, message, result = "ok", EXIT_OK, None, None
    try:
        result = COMMANDS[args.command](f, cfg, out)
    except (ConfigError, InvalidInputError, DomainError) as exc:
        status, code, message = "config-error", EXIT_CONFIG, str(exc)
    except ArithmeticError as exc:
        status, code, message = "numerical-failure", EXIT_NUMERIC, f"{type(exc).__name__}: {exc}"
    manifest = {
        "version": __version__,
        "configHash": chash,
        "config": _clean(cfg),
        "status": status,
        "message": message,
        "result": _clean(result),
        "outputs": [os.path.basename(p) for p in out.files],
        "started": started,
        "elapsedSeconds": time.perf_counter() - t_start,
    }
    path = os.path.join(out.dir, f"manifest-{out.stem}.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    if code:
        return _error(status, message, code)
    sys.stdout.write(path + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
