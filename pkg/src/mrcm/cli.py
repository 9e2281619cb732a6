"""Command-line entry point: ``mrcm COMMAND --config FILE [--workers N] [--out-dir DIR]``.

Exit codes: 0 ok, 1 I/O failure, 2 configuration error, 3 a bound is
violated, 4 a resource limit refused the run.
"""
from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, analyze, estimate, kernels
from .model import ModelError, ModelSpec, _strict_keys, load_fixture
from .simulate import (SAMPLE_COLUMNS, ExplorationConfig, ResourceRefusal, block_seed, resolve_workers,
                       run_batch, sample_box_graph)
from .simulate.box import DEFAULT_VERTEX_LIMIT

COMMANDS = ("kernels", "simulate", "scan", "fit", "validate", "report")
EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_VIOLATED, EXIT_REFUSED = 0, 1, 2, 3, 4
REQUIRED = object()

_CAPS = {"size_cap": 100_000, "generation_cap": None, "radius_cap": None}
SCHEMA = {
    "kernels": {"lambda": 1.0, "k": 4, "k_max": kernels.DEFAULT_K_MAX,
                "resolution": kernels.DEFAULT_RESOLUTION, "triangle": 0.0},
    "simulate": {"lambda": REQUIRED, "root_mark": None, "n_runs": 1000, "mode": "thinned",
                 "box_half_width": None, "vertex_limit": DEFAULT_VERTEX_LIMIT, **_CAPS},
    "scan": {"lambda_grid": REQUIRED, "root_mark": None, "n_runs": 1000, "mode": "thinned",
             "observable": "chi", "gamma": None, **_CAPS},
    "fit": {"form": "chi_divergence", "lambda_hat": None, "lambda_grid": None, "lambda": None,
            "n_grid": None, "root_mark": None, "n_runs": 1000, "mode": "thinned",
            "exclude_nearest": 2, "max_rel_stderr": 0.2, **_CAPS},
    "validate": {"root_mark": None, "marks": None, "lambda_hat": None, "lambda_ci": None,
                 "bracket": None, "threshold": analyze.DEFAULT_THRESHOLD, "critical_runs": 20_000,
                 "critical_size_cap": 10_000, "mode": "thinned", "chi_grid": [], "n_runs": 10_000,
                 "gamma_ladder": [0.5, 0.25, 0.125, 0.0625], "n_grid": [], "triangle": None,
                 "k_max": kernels.DEFAULT_K_MAX, "resolution": kernels.DEFAULT_RESOLUTION,
                 "size_cap": 100_000},
    "report": {"lambda": 1.0, "k_max": kernels.DEFAULT_K_MAX, "resolution": kernels.DEFAULT_RESOLUTION},
}
TOP_KEYS = {"model", "seed", "workers", *COMMANDS}
_GRIDS = ("lambda_grid", "n_grid", "chi_grid")


def _bare(e: ModelError) -> str:
    msg = str(e)
    return msg[len(e.path) + 2:] if e.path and msg.startswith(f"{e.path}: ") else msg


class ConfigError(ValueError):
    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class RunConfig:
    model: ModelSpec
    command: str
    params: dict
    seed: int
    workers: int
    out_dir: Path
    raw: bytes = b""
    resolved: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.raw).hexdigest()


def _parse_model(doc):
    if isinstance(doc, str):
        return load_fixture(doc)
    if isinstance(doc, dict) and set(doc) == {"fixture"}:
        return load_fixture(doc["fixture"])
    return ModelSpec.from_dict(doc)


def _check_section(name, doc, need_required):
    schema = SCHEMA[name]
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("must be an object", name)
    try:
        _strict_keys(doc, set(schema), name)
    except ModelError as e:
        raise ConfigError(_bare(e), e.path) from None
    out = {}
    for key, default in schema.items():
        if key in doc:
            out[key] = doc[key]
        elif default is REQUIRED:
            if need_required:
                raise ConfigError("missing required key", f"{name}.{key}")
            out[key] = None
        else:
            out[key] = copy.deepcopy(default)
    for key in _GRIDS:
        g = out.get(key)
        if g is not None:
            if not isinstance(g, list) or not all(isinstance(v, (int, float)) for v in g):
                raise ConfigError("must be a list of numbers", f"{name}.{key}")
            if any(b <= a for a, b in zip(g, g[1:])):
                raise ConfigError("must be strictly increasing", f"{name}.{key}")
    for key in ("n_runs", "critical_runs", "size_cap", "critical_size_cap", "k", "k_max", "resolution",
                "vertex_limit"):
        if key in out and out[key] is not None:
            v = out[key]
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError("must be an integer >= 1", f"{name}.{key}")
    modes = ("thinned", "branching", "box") if name == "simulate" else ("thinned", "branching")
    if "mode" in out and out["mode"] not in modes:
        raise ConfigError(f"must be one of {', '.join(modes)}", f"{name}.mode")
    if out.get("mode") == "box" and not (isinstance(out["box_half_width"], (int, float))
                                         and out["box_half_width"] > 0):
        raise ConfigError("box mode needs a positive number", f"{name}.box_half_width")
    return out


def parse_config(text: str | bytes, command: str, out_dir=".", workers: int | None = None) -> RunConfig:
    """Validate a JSON document and fill defaults for ``command``."""
    raw = text.encode() if isinstance(text, str) else bytes(text)
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    try:
        _strict_keys(doc, TOP_KEYS, "")
    except ModelError as e:
        raise ConfigError(_bare(e), e.path or None) from None
    if "seed" not in doc:
        raise ConfigError("missing required key (no implicit entropy)", "seed")
    seed = doc["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("must be an integer in [0, 2^64)", "seed")
    if "model" not in doc:
        raise ConfigError("missing required key", "model")
    try:
        model = _parse_model(doc["model"])
    except ModelError as e:
        path = f"model.{e.path}" if e.path else "model"
        raise ConfigError(_bare(e), path) from None
    resolved = {"model": model.to_dict(), "seed": seed}
    params = None
    for name in COMMANDS:
        if name in doc or name == command:
            sec = _check_section(name, doc.get(name), need_required=(name == command))
            resolved[name] = sec
            if name == command:
                params = sec
    w = doc.get("workers", 1) if workers is None else workers
    try:
        w = resolve_workers(w)
    except ValueError as e:
        raise ConfigError(str(e), "workers") from None
    resolved["workers"] = w
    return RunConfig(model, command, params, seed, w, Path(out_dir), raw, resolved)


# ---------------------------------------------------------------------------
# commands


class _Outputs:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.entries = []
        cfg.out_dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str):
        data = text.encode()
        (self.cfg.out_dir / name).write_bytes(data)
        self.entries.append({"path": name, "sha256": hashlib.sha256(data).hexdigest(),
                             "bytes": len(data), "command": self.cfg.command})

    def json(self, name: str, obj):
        self.write(name, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(x):
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, frozenset):
        return sorted(x)
    raise TypeError(f"not serialisable: {type(x).__name__}")


def _finite_json(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
    return x


def _root(model: ModelSpec, mark):
    if mark is None:
        return 0 if model.marks.is_finite else float(model.marks.low)
    return int(mark) if model.marks.is_finite else float(mark)


def _caps(p):
    try:
        return ExplorationConfig(p["size_cap"], p["generation_cap"], p["radius_cap"])
    except ValueError as e:
        raise ConfigError(str(e), "caps") from None


def cmd_kernels(cfg: RunConfig, out: _Outputs):
    p, m = cfg.params, cfg.model
    D = kernels.degree_kernel(m, p["resolution"])
    Dk = kernels.path_kernel(m, p["k"], p["resolution"], base=D)
    out.write("D.csv", D.to_csv())
    out.write(f"D_k{p['k']}.csv", Dk.to_csv())
    cons = kernels.derived_constants(m, float(p["lambda"]), float(p["triangle"]), p["k_max"], p["resolution"])
    out.json("constants.json", cons.to_dict())
    env = kernels.branching_envelope_norm(m, float(p["lambda"]), p["resolution"])
    out.json("kernels.json", {
        "D": D.to_dict(), f"D_k{p['k']}": Dk.to_dict(),
        "norms": {"inf_inf": kernels.mixed_norm(D, math.inf, math.inf),
                  "one_inf": kernels.mixed_norm(D, 1, math.inf), "op": kernels.operator_norm(D)},
        "envelope": {k: _finite_json(v) for k, v in env.__dict__.items()},
    })
    return EXIT_OK


BOX_COLUMNS = ("run_id", "seed", "lambda", "root_mark", "size", "n_vertices", "n_components", "largest")


def _simulate_box(cfg: RunConfig, out: _Outputs):
    p, m = cfg.params, cfg.model
    lam, root, L = float(p["lambda"]), _root(m, p["root_mark"]), float(p["box_half_width"])
    lines, sizes = [",".join(BOX_COLUMNS)], []
    for i in range(p["n_runs"]):
        s = block_seed(cfg.seed, 0, i)
        g = sample_box_graph(m, lam, L, np.random.Generator(np.random.PCG64(s)), root_mark=root,
                             vertex_limit=p["vertex_limit"])
        comp = g.component_sizes()
        sizes.append(g.cluster_size(0))
        lines.append(f"{i},{s},{lam!r},{root},{sizes[-1]},{g.n_vertices},{len(comp)},{int(comp.max())}")
    out.write("box.csv", "\n".join(lines) + "\n")
    out.json("summary.json", {"root_cluster": estimate.Estimate.from_values(sizes).to_dict(),
                              "box_half_width": L, "n_runs": p["n_runs"]})
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out: _Outputs):
    p, m = cfg.params, cfg.model
    if p["mode"] == "box":
        return _simulate_box(cfg, out)
    res = run_batch(m, float(p["lambda"]), _root(m, p["root_mark"]), p["n_runs"], cfg.seed, _caps(p),
                    mode=p["mode"], workers=cfg.workers)
    out.write("samples.csv", res.to_csv())
    h = estimate.ClusterSizeDistribution(res.cfg.size_cap).fit(res)
    out.json("summary.json", {"chi": h.chi().to_dict(), "theta": h.survival().to_dict(),
                              "mean_root_degree": float(res.root_degrees.mean()), "n_runs": len(res)})
    return EXIT_OK


def cmd_scan(cfg: RunConfig, out: _Outputs):
    p, m = cfg.params, cfg.model
    caps = _caps(p)
    scan, batches = analyze.scan_observable(m, p["lambda_grid"], _root(m, p["root_mark"]), p["n_runs"],
                                            cfg.seed, p["observable"], caps, p["mode"], p["gamma"],
                                            cfg.workers, keep_batches=True)
    lines = [",".join(SAMPLE_COLUMNS)]
    offset = 0
    for b in batches:
        lines.extend(b.csv_rows(offset))
        offset += len(b)
    out.write("scan.csv", "\n".join(lines) + "\n")
    out.write("scan_summary.csv", scan.to_csv())
    return EXIT_OK


def cmd_fit(cfg: RunConfig, out: _Outputs):
    p, m = cfg.params, cfg.model
    caps = _caps(p)
    root = _root(m, p["root_mark"])
    form = p["form"]
    kw = {"exclude_nearest": p["exclude_nearest"], "max_rel_stderr": p["max_rel_stderr"]}
    if form == "tail_power":
        if p["lambda"] is None or not p["n_grid"]:
            raise ConfigError("tail fits need 'lambda' and 'n_grid'", "fit")
        b = run_batch(m, float(p["lambda"]), root, p["n_runs"], cfg.seed, caps, mode=p["mode"],
                      workers=cfg.workers)
        table = estimate.estimate_cluster_tail(b, p["n_grid"])
        fit = analyze.fit_exponent(table, None, form, **kw)
        rows = ["n,mean,stderr"] + [f"{n},{e.mean!r},{e.stderr!r}" for n, e in table]
    else:
        if p["lambda_grid"] is None or p["lambda_hat"] is None:
            raise ConfigError("intensity fits need 'lambda_grid' and 'lambda_hat'", "fit")
        obs = "chi" if form == "chi_divergence" else "theta"
        scan = analyze.scan_observable(m, p["lambda_grid"], root, p["n_runs"], cfg.seed, obs, caps,
                                       p["mode"], None, cfg.workers)
        fit = analyze.fit_exponent(scan, float(p["lambda_hat"]), form, **kw)
        rows = scan.to_csv().rstrip("\n").split("\n")
    out.write("fit_data.csv", "\n".join(rows) + "\n")
    out.json("fit.json", fit.to_dict())
    return EXIT_OK


def _marks_for(model: ModelSpec, marks):
    if marks is not None:
        return [_root(model, x) for x in marks]
    if not model.marks.is_finite:
        raise ConfigError("interval marks need an explicit 'marks' list", "validate.marks")
    return [i for i, w in enumerate(model.marks.weights) if w > 0]


def cmd_validate(cfg: RunConfig, out: _Outputs):
    p, m = cfg.params, cfg.model
    root = _root(m, p["root_mark"])
    marks = _marks_for(m, p["marks"])
    if m.marks.is_finite and len(marks) != m.marks.n_atoms:
        raise ConfigError("bound checks need every atom of the mark alphabet", "validate.marks")
    if p["lambda_hat"] is not None:
        lam_hat = float(p["lambda_hat"])
        ci = tuple(p["lambda_ci"]) if p["lambda_ci"] else (lam_hat, lam_hat)
        crit = None
    else:
        if p["bracket"] is None:
            raise ConfigError("give 'lambda_hat' or a search 'bracket'", "validate")
        try:
            crit = analyze.find_critical_intensity(m, root, p["bracket"], p["critical_runs"], cfg.seed,
                                                   p["critical_size_cap"], p["mode"], p["threshold"],
                                                   workers=cfg.workers)
        except ValueError as e:
            raise ConfigError(str(e), "validate.bracket") from None
        lam_hat, ci = crit.lambda_hat, crit.ci
        out.json("critical.json", crit.to_dict())
    caps = ExplorationConfig(p["size_cap"])
    chi = {}
    for i, lam in enumerate(p["chi_grid"]):
        chi[float(lam)] = [
            estimate.estimate_chi(run_batch(m, float(lam), a, p["n_runs"], cfg.seed, caps, mode=p["mode"],
                                            task=1000 + 100 * i + j, workers=cfg.workers))
            for j, a in enumerate(marks)]
    t_holds, t_value = False, 0.0
    if p["triangle"] is not None:
        tri = p["triangle"]
        if not isinstance(tri, dict) or set(tri) != {"mean", "stderr"}:
            raise ConfigError("must be {'mean': ..., 'stderr': ...}", "validate.triangle")
        est = estimate.Estimate(float(tri["mean"]), float(tri["stderr"]), 1)
        verdict = kernels.assumption_report(m, lam_hat, est, p["k_max"], p["resolution"])
        t_holds, t_value = verdict.t_status == "holds", est.mean
    magn, tails = {}, {}
    if p["gamma_ladder"]:
        batches = [run_batch(m, lam_hat, a, p["n_runs"], cfg.seed, caps, mode=p["mode"],
                             task=5000 + j, workers=cfg.workers) for j, a in enumerate(marks)]
        for g in p["gamma_ladder"]:
            magn[float(g)] = [estimate.estimate_magnetization(b, float(g))["M"] for b in batches]
        if p["n_grid"]:
            for a, b in zip(marks, batches):
                tails[a] = estimate.estimate_cluster_tail(b, p["n_grid"])
    rep = analyze.verify_bounds(analyze.BoundInputs(m, lam_hat, ci, chi, magn, tails, t_holds, t_value,
                                                    p["k_max"], p["resolution"]))
    out.write("bounds.json", rep.to_json() + "\n")
    out.write("bounds.txt", rep.to_text())
    return EXIT_VIOLATED if rep.any_violated else EXIT_OK


def cmd_report(cfg: RunConfig, out: _Outputs):
    p, m = cfg.params, cfg.model
    lam = float(p["lambda"])
    verdict = kernels.assumption_report(m, lam, None, p["k_max"], p["resolution"])
    cons = kernels.derived_constants(m, lam, 0.0, p["k_max"], p["resolution"])
    env = kernels.branching_envelope_norm(m, lam, p["resolution"])
    doc = {"model": m.to_dict(), "fingerprint": m.fingerprint(), "assumptions": verdict.to_dict(),
           "constants": cons.to_dict(), "envelope": {k: _finite_json(v) for k, v in env.__dict__.items()},
           "interaction_range": m.interaction_range(), "truncated_mass": m.truncated_mass()}
    out.json("report.json", doc)
    lines = [f"model {m.fingerprint()}  d={m.d}  adjacency={m.adjacency.kind}  marks={m.marks.kind}",
             f"bounded degree: {verdict.d1_holds} (max D = {verdict.d1_value:.6g})",
             f"uniform connectivity: {verdict.d2_holds} (witness k = {verdict.d2_witness_k})",
             f"triangle condition: {verdict.t_status} (C_Delta = {verdict.t_C_delta:.6g})",
             f"||D||_op = {env.D_op:.6g}, lambda_O lower bound = {env.lambda_O_lower:.6g}",
             f"cbar({lam:g}) = {cons.cbar:.6g}"]
    out.write("report.txt", "\n".join(lines) + "\n")
    return EXIT_OK


HANDLERS = {"kernels": cmd_kernels, "simulate": cmd_simulate, "scan": cmd_scan, "fit": cmd_fit,
            "validate": cmd_validate, "report": cmd_report}


def run_command(cfg: RunConfig) -> int:
    """Execute ``cfg.command`` and write its outputs plus a manifest."""
    out = _Outputs(cfg)
    t0 = time.perf_counter()
    out.json("config_resolved.json", cfg.resolved)
    status = HANDLERS[cfg.command](cfg, out)
    manifest = {"config_sha256": cfg.config_hash, "version": __version__, "command": cfg.command,
                "wall_time_s": round(time.perf_counter() - t0, 3), "exit_status": status,
                "outputs": out.entries}
    (cfg.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return status


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mrcm", description="Marked random connection model toolkit")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON configuration file")
    ap.add_argument("--workers", type=int, default=None, help="worker threads (MRCM_THREADS overrides)")
    ap.add_argument("--out-dir", default=".", help="directory for outputs")
    args = ap.parse_args(argv)
    try:
        raw = Path(args.config).read_bytes()
    except OSError as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = parse_config(raw, args.command, args.out_dir, args.workers)
        return run_command(cfg)
    except (ConfigError, ModelError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceRefusal as e:
        print(f"refused: {e}", file=sys.stderr)
        return EXIT_REFUSED
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
