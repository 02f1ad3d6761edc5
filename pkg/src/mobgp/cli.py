"""Command-line front end: ingest, train, predict, control and synth.

Exit codes: 0 success, 2 bad input, 3 every training trial failed,
4 infeasible control problem, 1 anything else (e.g. solver non-convergence).
"""
from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .control import (
    FORMULATIONS,
    ControlConfig,
    RegionModel,
    discounted_deaths,
    minimal_budget,
    solve_min_cost,
    solve_min_deaths,
)
from .data import (
    CATEGORIES,
    datasets_to_csv,
    default_synth_spec,
    join,
    load_datasets,
    parse_deaths_csv,
    parse_mobility_csv,
    parse_population_csv,
    save_datasets,
    write_rejects,
)
from .epimodel import RegionInit, rollout
from .errors import (
    DegeneracyError,
    DomainError,
    InfeasibleError,
    InputError,
    MobGPError,
    ShapeError,
    TrainingError,
    UnboundVariableError,
    ValidationError,
)
from .learn import TrainConfig, predict_deaths, targets, train
from .mobility import beta_series
from .params import ParamSet

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_TRAIN, EXIT_INFEASIBLE = 0, 1, 2, 3, 4
EXPANDED_MAX_CONTROLS = 6


# -- small file helpers ---------------------------------------------------------
def _atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


def _open_text(path):
    try:
        return open(path, newline="")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return _jsonable(v.item())
    if isinstance(v, Path):
        return str(v)
    return v


class Manifest:
    """Reproducibility record written next to a command's outputs."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.started = time.time()
        self.body: dict = {
            "command": command,
            "arguments": {k: v for k, v in sorted(vars(args).items()) if k != "func"},
            "toolkit_version": __version__,
            "inputs": {},
            "outputs": {},
        }

    def add_input(self, path) -> None:
        self.body["inputs"][str(path)] = _digest(path)

    def add_output(self, path) -> None:
        self.body["outputs"][str(path)] = _digest(path)

    def write(self, path, **extra) -> None:
        self.body.update(extra)
        self.body["wall_clock"] = {
            "started_utc": dt.datetime.fromtimestamp(self.started, dt.timezone.utc).isoformat(),
            "elapsed_seconds": round(time.time() - self.started, 3),
        }
        _atomic_write(path, json.dumps(_jsonable(self.body), indent=2, sort_keys=True) + "\n")


# -- ingest ---------------------------------------------------------------------
def cmd_ingest(args) -> int:
    man = Manifest("ingest", args)
    with _open_text(args.mobility) as fh:
        mob, mob_rej = parse_mobility_csv(fh)
    with _open_text(args.deaths) as fh:
        deaths, death_rej = parse_deaths_csv(fh)
    with _open_text(args.population) as fh:
        pops = parse_population_csv(fh)
    for p in (args.mobility, args.deaths, args.population):
        man.add_input(p)
    regions = [r.strip() for r in args.regions.split(",") if r.strip()]
    if not regions:
        raise InputError("--regions is empty")
    if args.categories:
        cats = tuple(c.strip() for c in args.categories.split(","))
    else:
        present = set(mob[0].values) if mob else set(CATEGORIES)
        cats = tuple(c for c in CATEGORIES if c in present)
    datasets = join(mob, deaths, regions, args.date_from, args.date_to, cats, pops)
    out = Path(args.out)
    buf = io.StringIO()
    out.parent.mkdir(parents=True, exist_ok=True)
    save_datasets(datasets, out)
    rejects_path = out.with_name(out.stem + ".rejects.csv")
    write_rejects([("mobility", r) for r in mob_rej] + [("deaths", r) for r in death_rej], buf)
    _atomic_write(rejects_path, buf.getvalue())
    man.add_output(out)
    man.add_output(rejects_path)
    man.write(out.with_name(out.stem + ".manifest.json"), rejected_rows=len(mob_rej) + len(death_rej))
    print(f"wrote {len(datasets)} regions x {len(datasets[0])} days to {out} ({len(mob_rej) + len(death_rej)} rejected rows)")
    return EXIT_OK


# -- train ----------------------------------------------------------------------
def cmd_train(args) -> int:
    man = Manifest("train", args)
    data = load_datasets(args.data)
    man.add_input(args.data)
    obj = {}
    if args.config:
        obj = _read_json(args.config)
        man.add_input(args.config)
    if args.seed is not None:
        obj["rng_seed"] = args.seed
    cfg = TrainConfig.from_json(obj)
    best, report = train(data, cfg)
    best.dump(args.out)
    _atomic_write(args.report, report.to_csv())
    man.add_output(args.out)
    man.add_output(args.report)
    if args.figures:
        from .plotting import plot_training

        rows = [(tr.trial, e, a, b) for tr in report.trials for e, a, b in tr.history]
        fig = plot_training(rows, Path(args.report).with_suffix(".png"))
        man.add_output(fig)
    chosen = next(t for t in report.trials if t.trial == report.best_trial)
    man.write(
        Path(args.out).with_suffix(".manifest.json"),
        seed=cfg.rng_seed,
        config=cfg.to_json(),
        best_trial=report.best_trial,
        failed_trials=[t.trial for t in report.trials if t.failed],
        best_train_loss=chosen.train_loss,
        best_test_loss=chosen.test_loss,
    )
    print(f"best trial {report.best_trial}: train loss {chosen.train_loss:.3e}, test loss {chosen.test_loss:.3e}")
    return EXIT_OK


# -- predict --------------------------------------------------------------------
def _extend_mobility(m: np.ndarray, n: int) -> np.ndarray:
    """First ``n`` rows of ``m``, holding the last row beyond the data."""
    if n <= m.shape[0]:
        return m[:n]
    return np.vstack([m, np.repeat(m[-1:], n - m.shape[0], axis=0)])


def cmd_predict(args) -> int:
    man = Manifest("predict", args)
    params = ParamSet.load(args.params)
    data = load_datasets(args.data)
    man.add_input(args.params)
    man.add_input(args.data)
    if args.horizon < 0:
        raise InputError("--horizon must be >= 0")
    missing = [d.region_id for d in data if d.region_id not in params.per_region]
    if missing:
        raise InputError(f"no parameters for region(s) {', '.join(missing)}")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["region_id", "t", "date", "cumulative_deaths", "incident_deaths"])
    series = {}
    for ds in data:
        rp = params.region(ds.region_id)
        if rp.mobility_map.K != ds.K:
            raise InputError(f"region {ds.region_id}: parameters have {rp.mobility_map.K} categories, data {ds.K}")
        mob = _extend_mobility(ds.mobility, args.horizon)
        D = rollout(rp.init, params.global_params, rp.mobility_map.gamma_A, beta_series(mob, rp.mobility_map), args.horizon).column("D")
        d0 = dt.date.fromisoformat(ds.days[0])
        for t, v in enumerate(D):
            inc = "" if t == 0 else repr(float(v - D[t - 1]))
            w.writerow([ds.region_id, t, (d0 + dt.timedelta(days=t)).isoformat(), repr(float(v)), inc])
        series[ds.region_id] = (D, targets(ds))
    _atomic_write(args.out, buf.getvalue())
    man.add_output(args.out)
    if args.figures:
        from .plotting import plot_predictions

        man.add_output(plot_predictions(series, Path(args.out).with_suffix(".png")))
    man.write(Path(args.out).with_suffix(".manifest.json"))
    print(f"wrote predictions for {len(data)} regions over {args.horizon} days to {args.out}")
    return EXIT_OK


# -- control --------------------------------------------------------------------
def _control_setup(args, obj: dict, params: ParamSet, data_ds):
    rp = params.region(args.region)
    init = rp.init
    start = int(obj.get("start_day", 0))
    for key in ("T", "c"):
        if key not in obj:
            raise InputError(f"control config needs {key}")
    T = int(obj["T"])
    baseline_mob = None
    if data_ds is not None:
        if data_ds.K != rp.mobility_map.K:
            raise InputError("dataset and parameters disagree on the number of categories")
        if start > 0:
            beta = beta_series(data_ds.mobility[:start], rp.mobility_map)
            if beta.size < start:
                raise InputError(f"start_day {start} is beyond the {len(data_ds)} days of data")
            s = rollout(init, params.global_params, rp.mobility_map.gamma_A, beta, start).states[-1]
            init = RegionInit(init.S0, s.E, s.I, s.A, s.H, s.R, s.D)
        baseline_mob = _extend_mobility(data_ds.mobility[start:], T) if start < len(data_ds) else None
    elif start > 0:
        raise InputError("start_day needs --data to roll the model forward")
    overrides = {}
    for key, fn in (("u_lower", np.min), ("u_upper", np.max)):
        if obj.get(key) is None:
            if data_ds is None:
                raise InputError(f"control config needs {key} (or pass --data to use the observed range)")
            overrides[key] = tuple(fn(data_ds.mobility, axis=0))
    if args.budget is not None:
        overrides["budget"] = args.budget
    model = RegionModel(params.global_params, rp.mobility_map, init)
    cfg = ControlConfig.from_json({k: v for k, v in obj.items() if k != "start_day"}, model, **overrides)
    return cfg, baseline_mob


def _pick_formulation(cfg: ControlConfig, requested: str) -> str:
    if requested != "auto":
        return requested
    return "expanded" if cfg.K * cfg.n_blocks <= EXPANDED_MAX_CONTROLS else "epigraph"


def _stats_json(stats) -> dict:
    return {
        "iterations": stats.iterations,
        "phase1_iterations": stats.phase1_iterations,
        "kkt_residual": stats.kkt_residual,
        "dual_residual": stats.dual_residual,
        "primal_residual": stats.primal_residual,
        "gap": stats.gap,
        "relaxed": stats.relaxed,
        "duals": dict(sorted(stats.duals.items())),
    }


def cmd_control(args) -> int:
    man = Manifest(f"control {args.kind}", args)
    params = ParamSet.load(args.params)
    man.add_input(args.params)
    obj = _read_json(args.config)
    man.add_input(args.config)
    data_ds = None
    if args.data:
        man.add_input(args.data)
        found = [d for d in load_datasets(args.data) if d.region_id == args.region]
        if not found:
            raise InputError(f"region {args.region} is not in {args.data}")
        data_ds = found[0]
    cfg, baseline_mob = _control_setup(args, obj, params, data_ds)
    form = _pick_formulation(cfg, args.formulation)
    extra: dict = {"formulation": form}

    if args.kind == "min-cost":
        sol = solve_min_cost(cfg, form)
        extra["B_star"] = sol.total_cost
    else:
        if args.budget_from_min_cost:
            b_star, first = minimal_budget(cfg, form)
            extra["B_star"] = b_star
            extra["min_cost_solver"] = _stats_json(first.solver_stats)
            cfg = cfg.replace(budget=b_star * args.budget_factor)
        elif cfg.budget is None:
            raise InputError("min-deaths needs --budget, a budget in the config, or --budget-from-min-cost")
        extra["budget"] = cfg.budget
        sol = solve_min_deaths(cfg, form)

    baseline_J = None
    baseline_D = None
    if baseline_mob is not None:
        m = cfg.model
        tr = rollout(m.init, m.global_params, m.mobility_map.gamma_A, beta_series(baseline_mob, m.mobility_map), cfg.T)
        baseline_D = tr.column("D")
        baseline_J = discounted_deaths(baseline_D, cfg.gamma_D, cfg.T)

    prefix = args.out
    cats = cfg.model.mobility_map.categories or (data_ds.categories if data_ds else ())
    paths = {
        "schedule": Path(f"{prefix}.schedule.csv"),
        "cost": Path(f"{prefix}.cost.csv"),
        "trajectory": Path(f"{prefix}.trajectory.csv"),
    }
    _atomic_write(paths["schedule"], sol.schedule_csv(cats or None))
    _atomic_write(paths["cost"], sol.cost_csv())
    _atomic_write(paths["trajectory"], sol.trajectory.to_csv())
    for p in paths.values():
        man.add_output(p)
    if args.figures:
        from .plotting import plot_control

        names = list(cats) if cats else [str(k) for k in range(cfg.K)]
        traj = sol.trajectory
        man.add_output(
            plot_control(
                sol.u_star, names, sol.per_day_cost, traj.column("H"), traj.column("D"),
                Path(f"{prefix}.png"), cfg.tau_H, baseline_D,
            )
        )
    man.write(
        Path(f"{prefix}.manifest.json"),
        config=obj,
        kind=args.kind,
        total_cost=sol.total_cost,
        J=sol.J,
        cumulative_deaths=float(sol.trajectory.column("D")[-1]),
        baseline_J=baseline_J,
        baseline_cumulative_deaths=None if baseline_D is None else float(baseline_D[-1]),
        solver=_stats_json(sol.solver_stats),
        **extra,
    )
    print(f"{args.kind}: total cost {sol.total_cost:.6g}, J {sol.J:.6g} ({form} formulation)")
    return EXIT_OK


# -- synth ----------------------------------------------------------------------
def cmd_synth(args) -> int:
    from .data import synth_gen

    man = Manifest("synth", args)
    spec = default_synth_spec(regions=args.regions, days=args.days, K=args.categories, seed=args.seed, noise=args.noise)
    datasets, _ = synth_gen(spec, args.seed)
    mob, deaths, pops = datasets_to_csv(datasets)
    out = Path(args.out_dir)
    files = {"mobility.csv": mob, "deaths.csv": deaths, "population.csv": pops}
    for name, text in files.items():
        _atomic_write(out / name, text)
        man.add_output(out / name)
    spec.true_params.dump(out / "truth.json")
    man.add_output(out / "truth.json")
    save_datasets(datasets, out / "dataset.json")
    man.add_output(out / "dataset.json")
    man.write(out / "synth.manifest.json", seed=args.seed, regions=[d.region_id for d in datasets],
              date_from=datasets[0].days[0], date_to=datasets[0].days[-1])
    print(f"wrote synthetic data for {len(datasets)} regions to {out}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mobgp", description="Mobility-driven epidemic fitting and GP-based mobility control.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="join mobility and death CSVs into a dataset JSON")
    s.add_argument("--mobility", required=True)
    s.add_argument("--deaths", required=True)
    s.add_argument("--regions", required=True, help="comma-separated FIPS codes")
    s.add_argument("--population", required=True, help="CSV with region_id,population")
    s.add_argument("--from", dest="date_from", required=True)
    s.add_argument("--to", dest="date_to", required=True)
    s.add_argument("--categories", help="comma-separated subset of mobility categories")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="fit shared and per-region parameters")
    s.add_argument("--data", required=True)
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--figures", action="store_true", help="also render the loss curves as PNG")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="daily cumulative and incident deaths")
    s.add_argument("--params", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--horizon", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("control", help="optimal weekly mobility schedule")
    s.add_argument("kind", choices=("min-cost", "min-deaths"))
    s.add_argument("--params", required=True)
    s.add_argument("--region", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="output path prefix")
    s.add_argument("--data", help="dataset JSON: default bounds, start_day and the observed-mobility baseline")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--budget", type=float)
    g.add_argument("--budget-from-min-cost", action="store_true")
    s.add_argument("--budget-factor", type=float, default=1.0, help="multiplier on the minimal budget")
    s.add_argument("--formulation", choices=("auto",) + FORMULATIONS, default="auto")
    s.add_argument("--figures", action="store_true")
    s.set_defaults(func=cmd_control)

    s = sub.add_parser("synth", help="write a synthetic ground-truth data set")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--regions", type=int, default=3)
    s.add_argument("--days", type=int, default=82)
    s.add_argument("--categories", type=int, default=4)
    s.add_argument("--noise", type=float, default=0.0)
    s.set_defaults(func=cmd_synth)
    return p


_INPUT_ERRORS = (InputError, DomainError, ValidationError, ShapeError, UnboundVariableError, DegeneracyError)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleError as exc:
        where = f" (constraint {exc.constraint})" if exc.constraint is not None else ""
        print(f"infeasible: {exc}{where}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MobGPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
