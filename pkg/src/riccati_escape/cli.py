"""Command-line front end.

Each job is one JSON document; results go to ``--out`` as CSV (curves and
sequences) or JSON (scalar reports).  Every output starts with the resolved
configuration so a run can be repeated from its own output.

Exit codes: 0 success, 2 bad configuration, 3 escape times not bounded on the
grid, 4 numerical failure (including a failed ``verify``).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .grassmann import HALF_PI
from .mean_escape import (
    Assumption1Violation,
    SwitchedSystem,
    build_transfer_matrices,
    make_grid,
    solve_power_series,
    solve_transfer,
)
from .montecarlo import estimate_mean_escape
from .numerics import DimensionError
from .rde import (
    NoEscapePossibleFromLinearPart,
    RiccatiSystem,
    angle_sampler,
    box_sampler,
    escape_profile,
    escape_time,
    step_sequence,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NUMERIC = 0, 2, 3, 4

COMMANDS = ("escape-time", "profile", "mean-escape", "simulate", "verify")

_SWITCHED = {"mean-escape", "simulate", "verify"}

DEFAULTS = {
    "escape-time": {"k": 1, "tol": 1e-8, "n_max": 10_000, "t_cap": 50.0, "n_steps": 20},
    "profile": {
        "k": 1,
        "tol": 1e-8,
        "t_cap": 50.0,
        "n_seeds": 50,
        "n_steps": 40,
        "seed": 0,
        "sampler": {"kind": "box", "half_width": 5.0},
    },
    "mean-escape": {
        "k": 1,
        "grid_spacing": 0.005,
        "K": 21,
        "tol": 0.0,
        "t_cap": 50.0,
        "h": None,
        "method": "series",
    },
    "simulate": {"k": 1, "z0": "A", "n_trials": 10_000, "seed": 0, "t_cap": 1000.0, "tol": 1e-8},
    "verify": {
        "k": 1,
        "thetas": [-1.2, -0.6, 0.0, 0.6, 1.2],
        "z0": "A",
        "n_trials": 100_000,
        "seed": 0,
        "grid_spacing": 0.005,
        "K": 21,
        "tol": 0.0,
        "t_cap": 50.0,
        "mc_t_cap": 1000.0,
        "n_se": 3.0,
    },
}

REQUIRED = {
    "escape-time": ("A", "Y0"),
    "profile": ("A",),
    "mean-escape": ("A", "B", "lambda"),
    "simulate": ("A", "B", "lambda", "Y0"),
    "verify": ("A", "B", "lambda"),
}


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


@dataclass
class JobConfig:
    command: str
    params: dict = field(default_factory=dict)
    provided: tuple = ()

    @classmethod
    def from_dict(cls, command: str, raw: dict) -> "JobConfig":
        if command not in COMMANDS:
            raise ConfigError("command", f"unknown command {command!r}")
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        for name in REQUIRED[command]:
            if name not in raw:
                raise ConfigError(name, "required field missing")
        params = json.loads(json.dumps(DEFAULTS[command]))
        params.update(raw)
        cfg = cls(command, params, tuple(sorted(raw)))
        cfg.validate()
        return cfg

    def validate(self):
        p = self.params
        k = p.get("k")
        if not isinstance(k, int) or k < 1:
            raise ConfigError("k", "must be a positive integer")
        shapes = []
        for name in ("A", "B"):
            if name in p:
                M = _matrix(p[name], name)
                if M.shape[0] != M.shape[1]:
                    raise ConfigError(name, f"must be square, got {M.shape[0]}x{M.shape[1]}")
                if not k < M.shape[0]:
                    raise ConfigError("k", f"must be smaller than the dimension {M.shape[0]}")
                shapes.append(M.shape)
        if len(set(shapes)) > 1:
            raise ConfigError("B", "must have the same shape as A")
        if self.command in _SWITCHED:
            lam = p.get("lambda")
            if not isinstance(lam, (int, float)) or not lam > 0 or not math.isfinite(lam):
                raise ConfigError("lambda", "must be a positive number")
        if "Y0" in p:
            d = shapes[0][0]
            Y0 = _matrix(p["Y0"], "Y0", allow_vector=True)
            if Y0.size != (d - k) * k:
                raise ConfigError("Y0", f"must have {(d - k)} x {k} entries")
        for name in ("tol", "t_cap", "grid_spacing", "mc_t_cap"):
            if name in p and not (isinstance(p[name], (int, float)) and p[name] >= 0):
                raise ConfigError(name, "must be a nonnegative number")
        for name in ("t_cap", "grid_spacing"):
            if name in p and not p[name] > 0:
                raise ConfigError(name, "must be positive")
        for name in ("n_max", "n_steps", "n_seeds", "n_trials", "K"):
            if name in p and not (isinstance(p[name], int) and p[name] >= (0 if name == "n_seeds" else 1)):
                raise ConfigError(name, "must be a positive integer")
        if "seed" in p and not (isinstance(p["seed"], int) and p["seed"] >= 0):
            raise ConfigError("seed", "must be a nonnegative integer")
        if "z0" in p and p["z0"] not in ("A", "B"):
            raise ConfigError("z0", "must be 'A' or 'B'")
        if self.command == "mean-escape" and p["method"] not in ("series", "transfer", "both"):
            raise ConfigError("method", "must be one of series, transfer, both")
        if self.command == "mean-escape" and p["h"] is not None and not (
            isinstance(p["h"], (int, float)) and p["h"] > 0
        ):
            raise ConfigError("h", "must be positive or null")
        if self.command == "profile":
            smp = p["sampler"]
            if not isinstance(smp, dict) or smp.get("kind") not in ("box", "angle"):
                raise ConfigError("sampler", "must be an object with kind 'box' or 'angle'")
            if smp["kind"] == "angle" and (shapes[0][0], k) != (2, 1):
                raise ConfigError("sampler", "angle sampling needs d=2, k=1")

    def metadata(self) -> dict:
        tolerances = {
            name: {"value": self.params[name], "source": "config" if name in self.provided else "default"}
            for name in ("tol", "t_cap", "n_max", "K", "grid_spacing", "h", "mc_t_cap", "n_se")
            if name in self.params
        }
        return {
            "package": "riccati_escape",
            "version": __version__,
            "command": self.command,
            "config": self.params,
            "tolerances": tolerances,
        }


def _matrix(value, name, allow_vector=False):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(name, "must be a nested array of numbers") from None
    if allow_vector and M.ndim <= 1:
        M = M.reshape(-1, 1)
    if M.ndim != 2 or M.size == 0:
        raise ConfigError(name, "must be a 2-D row-major array")
    if not np.all(np.isfinite(M)):
        raise ConfigError(name, "entries must be finite")
    return M


def fmt(x) -> str:
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.12g}"


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _meta_line(meta) -> str:
    return "# " + json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n"


def write_csv(path: Path, meta: dict, header, rows):
    lines = [_meta_line(meta), ",".join(header) + "\n"]
    lines += [",".join(fmt(v) for v in row) + "\n" for row in rows]
    _atomic_write(path, "".join(lines))


def write_json(path: Path, meta: dict, result: dict):
    _atomic_write(path, json.dumps({"metadata": meta, "result": result}, indent=2, sort_keys=True) + "\n")


def read_metadata(path) -> dict:
    """Recover the metadata block from a CSV or JSON output file."""
    text = Path(path).read_text()
    if text.startswith("# "):
        return json.loads(text.splitlines()[0][2:])
    return json.loads(text)["metadata"]


def _system(p, name="A"):
    return RiccatiSystem(np.array(p[name], dtype=float), p["k"])


def _switched(p):
    return SwitchedSystem(_system(p, "A"), _system(p, "B"), float(p["lambda"]))


def _num(x):
    return None if x is None else (x if math.isfinite(x) else str(x))


def _run_escape_time(cfg, out, threads):
    p = cfg.params
    sys_ = _system(p)
    meta = cfg.metadata()
    try:
        res = escape_time(sys_, p["Y0"], n_max=p["n_max"], t_cap=p["t_cap"], tol=p["tol"])
    except NoEscapePossibleFromLinearPart as exc:
        write_json(out / "escape_time.json", meta, {"outcome": "no-escape-possible", "reason": str(exc)})
        print("no escape possible: top block row of A is zero")
        return EXIT_OK
    times, deltas = step_sequence(sys_, p["Y0"], p["n_steps"], t_cap=p["t_cap"])
    rows = [(n, t, math.log(dt)) for n, (t, dt) in enumerate(zip(times, deltas))]
    write_csv(out / "steps.csv", meta, ["n", "t_n [time]", "log_delta_n [log time]"], rows)
    result = {
        "outcome": "finite" if res.finite else "not-before",
        "t_escape": _num(res.t_escape),
        "t_cap": res.t_cap,
        "bracket": list(res.bracket),
        "n_steps_used": len(res.steps) - 1,
    }
    write_json(out / "escape_time.json", meta, result)
    print(fmt(res.t_escape) if res.finite else f"no escape before {fmt(res.t_cap)}")
    return EXIT_OK


def _run_profile(cfg, out, threads):
    p = cfg.params
    sys_ = _system(p)
    smp = p["sampler"]
    if smp["kind"] == "angle":
        sampler = angle_sampler(smp.get("low", -HALF_PI), smp.get("high", HALF_PI))
    else:
        sampler = box_sampler(sys_.state_shape, smp.get("half_width", 5.0))
    pairs = escape_profile(
        sys_, sampler, p["n_seeds"], p["n_steps"], p["t_cap"], seed=p["seed"], tol=p["tol"], threads=threads
    )
    m = sys_.state_shape[0] * sys_.state_shape[1]
    header = [f"y{i + 1} [state]" for i in range(m)] + ["escape_time [time]"]
    header += [f"atan_y{i + 1} [rad]" for i in range(m)] + ["atan_escape_time [rad]"]
    rows = []
    for Y, t in pairs:
        y = np.ravel(Y)
        rows.append([*y, t, *np.arctan(y), math.atan(t)])
    write_csv(out / "profile.csv", cfg.metadata(), header, rows)
    print(f"{len(rows)} labelled states")
    return EXIT_OK


def _run_mean_escape(cfg, out, threads):
    p = cfg.params
    sw = _switched(p)
    grid = make_grid(sw, p["grid_spacing"], p["t_cap"])
    meta = cfg.metadata()
    header = ["theta [rad]", "tA [time]", "tB [time]"]
    cols = [grid.points, grid.tA, grid.tB]
    summary = {"n_points": len(grid.points), "t0": grid.t0}
    if p["method"] in ("series", "both"):
        sol = solve_power_series(sw, grid, K=p["K"], tol=p["tol"])
        header += ["TA [time]", "TB [time]"]
        cols += [sol.TA, sol.TB]
        summary.update(
            terms=sol.info["terms"],
            residual=sol.residual,
            truncation_bound=sol.info["truncation_bound"],
            F_t0=sol.info["F_t0"],
            term_norms=list(sol.term_norms),
        )
    if p["method"] in ("transfer", "both"):
        tm = build_transfer_matrices(sw, grid, p["h"])
        TA, TB = solve_transfer(tm)
        header += ["TA_transfer [time]", "TB_transfer [time]"]
        cols += [TA, TB]
        summary.update(
            h=tm.h,
            h_source="config" if p["h"] is not None else "grid spacing / max(||A||, ||B||)",
            max_row_sum_NA=float(tm.NA.sum(axis=1).max()),
            max_row_sum_NB=float(tm.NB.sum(axis=1).max()),
        )
    write_csv(out / "mean_escape.csv", meta, header, zip(*cols))
    write_json(out / "mean_escape.json", meta, summary)
    print(f"mean escape times on {len(grid.points)} angles written")
    return EXIT_OK


def _run_simulate(cfg, out, threads):
    p = cfg.params
    sw = _switched(p)
    rep = estimate_mean_escape(
        sw, p["Y0"], p["z0"], p["n_trials"], p["seed"], p["t_cap"], tol=p["tol"], threads=threads
    )
    write_json(out / "simulate.json", cfg.metadata(), rep.as_dict())
    print(f"{fmt(rep.mean)} +- {fmt(rep.stderr)}")
    return EXIT_OK


def _run_verify(cfg, out, threads):
    p = cfg.params
    sw = _switched(p)
    grid = make_grid(sw, p["grid_spacing"], p["t_cap"])
    sol = solve_power_series(sw, grid, K=p["K"], tol=p["tol"])
    checks = []
    for th in p["thetas"]:
        series = sol.TA_at(th) if p["z0"] == "A" else sol.TB_at(th)
        rep = estimate_mean_escape(sw, math.tan(th), p["z0"], p["n_trials"], p["seed"], p["mc_t_cap"], threads=threads)
        diff = abs(series - rep.mean)
        ok = diff <= p["n_se"] * rep.stderr
        checks.append(
            {"theta": th, "series": series, "monte_carlo": rep.as_dict(), "abs_diff": diff, "pass": bool(ok)}
        )
        print(f"theta={fmt(th)} series={fmt(series)} mc={fmt(rep.mean)}+-{fmt(rep.stderr)} {'PASS' if ok else 'FAIL'}")
    passed = all(c["pass"] for c in checks)
    write_json(out / "verify.json", cfg.metadata(), {"passed": passed, "checks": checks, "terms": sol.info["terms"]})
    return EXIT_OK if passed else EXIT_NUMERIC


_RUNNERS = {
    "escape-time": _run_escape_time,
    "profile": _run_profile,
    "mean-escape": _run_mean_escape,
    "simulate": _run_simulate,
    "verify": _run_verify,
}


def run(config: JobConfig, out, threads: int = 1) -> int:
    """Execute a validated job and return the process exit code."""
    out = Path(out)
    try:
        return _RUNNERS[config.command](config, out, threads)
    except Assumption1Violation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except DimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def build_parser():
    ap = argparse.ArgumentParser(prog="riccati-escape", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON job description")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        if args.seed < 0:
            print("error: config field 'seed': must be a nonnegative integer", file=sys.stderr)
            return EXIT_CONFIG
        raw["seed"] = args.seed
    try:
        cfg = JobConfig.from_dict(args.command, raw)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, args.out, args.threads)


if __name__ == "__main__":
    sys.exit(main())
