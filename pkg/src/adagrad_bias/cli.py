"""Config-driven experiment runner: runs, checks, figure data and sweeps."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .analysis import (
    CheckOutcome,
    angle,
    check_descent,
    check_divergence_and_margins,
    check_preconditioner_convergence,
    check_summability,
    compare_directions,
    corner_condition,
    direction_report,
    projection_bounds_for_run,
    to_jsonable,
)
from .maxmargin import MarginError, MarginProblem, solve_hard_margin, solve_weighted_margin
from .model import Dataset, Hyperparams, LossModel, make_dataset, planted_dataset
from .optim import Optimizer, RunError, estimate_h_infinity, run, write_trajectory_csv

log = logging.getLogger("adagrad_bias")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

PER_RUN_CHECKS = ("descent", "summability", "divergence_and_margins")
ADAGRAD_CHECKS = ("preconditioner_convergence", "projection_bounds")


class ConfigError(ValueError):
    pass


def load_schema() -> dict:
    return json.loads(resources.files("adagrad_bias").joinpath("configs/schema.json").read_text())


@dataclass
class Experiment:
    name: str
    data: Dataset
    model: LossModel
    hp: Hyperparams
    runs: list
    out: Path
    thinning: int
    checks: list


def load_config(path, out=None, max_iters=None) -> Experiment:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, default_name=path.stem, out=out, max_iters=max_iters)


def parse_config(raw: dict, default_name="experiment", out=None, max_iters=None) -> Experiment:
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc

    ds = raw["dataset"]
    try:
        if "generator" in ds:
            gen = ds["generator"]
            data = planted_dataset(
                gen["n"], gen["p"], gen["seed"], margin_floor=gen.get("margin_floor", 0.1)
            )
        else:
            data = make_dataset(ds["points"], ds["labels"])
        hp_raw = dict(raw["hyperparams"])
        if max_iters is not None:
            hp_raw["max_iters"] = max_iters
        hp = Hyperparams(**hp_raw)
        hp.initial_point(data.n_features)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return Experiment(
        name=raw.get("name", default_name),
        data=data,
        model=LossModel.from_name(raw["loss"]),
        hp=hp,
        runs=[Optimizer(r) for r in raw["runs"]],
        out=Path(out if out is not None else raw.get("outputs", "out")),
        thinning=int(raw.get("thinning", 100)),
        checks=list(raw.get("checks", [])),
    )


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(to_jsonable(obj), indent=2) + "\n")


def _run_all(exp: Experiment, override: bool) -> dict:
    return {
        opt: run(opt, exp.model, exp.data, exp.hp, thinning=exp.thinning, override=override)
        for opt in exp.runs
    }


def evaluate_checks(exp: Experiment, trajs: dict) -> list[CheckOutcome]:
    outcomes = []
    for opt, traj in trajs.items():
        for name in exp.checks:
            if name in PER_RUN_CHECKS:
                if name == "descent":
                    res = check_descent(traj)
                elif name == "summability":
                    res = check_summability(traj)
                else:
                    res = check_divergence_and_margins(traj, exp.data)
            elif name in ADAGRAD_CHECKS and opt is Optimizer.ADAGRAD:
                if name == "preconditioner_convergence":
                    res = check_preconditioner_convergence(traj, exp.hp.epsilon)
                else:
                    res = projection_bounds_for_run(traj, exp.model, exp.data)
            else:
                continue
            outcomes.append(_tagged(res, opt.value))
    if "corner_condition" in exp.checks:
        cert = corner_condition(exp.data)
        outcomes.append(
            CheckOutcome("corner_condition", cert.holds, 0 if cert.holds else None, 0.0, cert.to_dict())
        )
    return outcomes


def _tagged(res: CheckOutcome, run_name: str) -> CheckOutcome:
    return CheckOutcome(f"{run_name}:{res.name}", res.holds, res.onset_step, res.worst_violation, res.details)


def _report(outcomes) -> int:
    for o in outcomes:
        log.info("%-40s %s", o.name, "ok" if o.holds else "FAILED")
    return EXIT_OK if all(o.holds for o in outcomes) else EXIT_CHECK_FAILED


def cmd_run(exp: Experiment, override: bool, write_outputs: bool = True) -> int:
    exp.out.mkdir(parents=True, exist_ok=True)
    trajs = _run_all(exp, override)
    if write_outputs:
        for opt, traj in trajs.items():
            write_trajectory_csv(traj, exp.out / f"trajectory_{opt.value}.csv")
        if Optimizer.ADAGRAD in trajs and Optimizer.GD in trajs:
            rep = direction_report(trajs[Optimizer.ADAGRAD], trajs[Optimizer.GD], exp.data)
            _dump_json(rep.to_dict(), exp.out / "direction_report.json")
        else:
            log.info("direction report needs both adagrad and gd runs; skipped")
    outcomes = evaluate_checks(exp, trajs)
    _dump_json([o.to_dict() for o in outcomes], exp.out / "checks.json")
    return _report(outcomes)


# --------------------------------------------------------------------------
# figure data
# --------------------------------------------------------------------------


def clip_halfplanes(box: float, Z: np.ndarray) -> np.ndarray:
    """Vertices of ``{w in [-box, box]^2 : <w, z_n> >= 1}`` (Sutherland-Hodgman)."""
    poly = [np.array(v, dtype=np.float64) for v in ((-box, -box), (box, -box), (box, box), (-box, box))]
    for z in Z:
        out = []
        for k, cur in enumerate(poly):
            prev = poly[k - 1]
            fc, fp = cur @ z - 1.0, prev @ z - 1.0
            if fc >= 0:
                if fp < 0:
                    out.append(prev + (cur - prev) * fp / (fp - fc))
                out.append(cur)
            elif fp >= 0:
                out.append(prev + (cur - prev) * fp / (fp - fc))
        poly = out
        if not poly:
            break
    return np.array(poly).reshape(-1, 2)


def _write_xy(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])


def cmd_figure_data(exp: Experiment, override: bool, n_ellipse: int = 360) -> int:
    if exp.data.n_features != 2:
        raise ConfigError(f"figure data needs p = 2, got p = {exp.data.n_features}")
    exp.out.mkdir(parents=True, exist_ok=True)
    ada = run(Optimizer.ADAGRAD, exp.model, exp.data, exp.hp, thinning=exp.thinning, override=override)
    h_inf, tail = estimate_h_infinity(ada, exp.hp.epsilon)
    Z = exp.data.signed_features
    w_tilde = solve_weighted_margin(MarginProblem(Z, 1.0 / np.sqrt(h_inf))).w_star
    w_hat = solve_hard_margin(MarginProblem(Z)).w_star

    box = 3.0 * max(np.linalg.norm(w_tilde), np.linalg.norm(w_hat))
    poly = clip_halfplanes(box, Z)
    _write_xy(exp.out / "feasible_region.csv", ["x", "y"], np.vstack([poly, poly[:1]]))

    # isoline sum_i w_i^2 / h_i = level through w_tilde
    level = float(np.sum(w_tilde**2 / h_inf))
    phi = np.linspace(0.0, 2.0 * math.pi, n_ellipse + 1)
    radii = np.sqrt(level * h_inf)
    _write_xy(exp.out / "ellipse.csv", ["x", "y"], np.column_stack([radii[0] * np.cos(phi), radii[1] * np.sin(phi)]))

    arrows = [(f"x_{n + 1}", *(x / np.linalg.norm(x))) for n, x in enumerate(exp.data.features)]
    arrows.append(("svm", *(w_hat / np.linalg.norm(w_hat))))
    arrows.append(("adagrad_predicted", *(w_tilde / np.linalg.norm(w_tilde))))
    _write_xy(exp.out / "arrows.csv", ["name", "x", "y"], arrows)
    _write_xy(
        exp.out / "points.csv",
        ["name", "x", "y"],
        [("tangency", *w_tilde), ("svm_solution", *w_hat)],
    )
    _dump_json(
        {"h_inf": h_inf, "h_inf_tail_error": tail, "ellipse_level": level, "box": box},
        exp.out / "figure_meta.json",
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------


def parse_sweep_values(axis: str, text: str, p: int) -> list:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ConfigError("sweep needs at least one value")
    try:
        if axis == "w0":
            vals = [np.array([float(c) for c in s.split(":")]) for s in items]
            if any(v.shape != (p,) for v in vals):
                raise ConfigError(f"w0 values need {p} colon-separated components")
            return vals
        return [float(s) for s in items]
    except ValueError as exc:
        raise ConfigError(f"bad sweep value: {exc}") from exc


def _label(value) -> str:
    if isinstance(value, np.ndarray):
        return ":".join(repr(float(v)) for v in value)
    return repr(float(value))


def cmd_sweep(exp: Experiment, axis: str, values: list, override: bool) -> int:
    exp.out.mkdir(parents=True, exist_ok=True)
    p = exp.data.n_features
    header = (
        ["index", "axis", "value"]
        + [f"pred_dir_{i + 1}" for i in range(p)]
        + ["angle_pred_svm", "angle_emp_pred"]
        + [f"h_inf_{i + 1}" for i in range(p)]
        + ["h_inf_tail_error"]
    )
    rows = []
    for k, value in enumerate(values):
        hp = Hyperparams(
            eta=value if axis == "eta" else exp.hp.eta,
            epsilon=value if axis == "epsilon" else exp.hp.epsilon,
            w0=value if axis == "w0" else exp.hp.w0,
            max_iters=exp.hp.max_iters,
            grad_tol=exp.hp.grad_tol,
        )
        rep = compare_directions(exp.data, exp.model, hp, thinning=exp.thinning, override=override)
        _dump_json(rep.to_dict(), exp.out / f"direction_report_{k:03d}.json")
        rows.append(
            [str(k), axis, _label(value)]
            + [repr(float(v)) for v in rep.adagrad_dir_predicted]
            + [repr(rep.angles["adagrad_predicted"]["svm"]), repr(rep.angles["adagrad_empirical"]["adagrad_predicted"])]
            + [repr(float(v)) for v in rep.h_inf]
            + [repr(float(rep.h_inf_tail_error))]
        )
    with open(exp.out / "sweep_summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    spread = max((angle(_row_dir(a, p), _row_dir(b, p)) for a in rows for b in rows), default=0.0)
    log.info("largest angle between predicted directions across the sweep: %.3e rad", spread)
    return EXIT_OK


def _row_dir(row, p):
    return np.array([float(v) for v in row[3 : 3 + p]])


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment config (JSON)")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--max-iters", type=int, help="iteration budget (overrides the config)")
    common.add_argument(
        "--override-assumptions",
        action="store_true",
        help="run even when separability or the step-size bound fails",
    )
    parser = argparse.ArgumentParser(prog="adagrad-bias", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run optimizers, write trajectories, reports and checks")
    sub.add_parser("check", parents=[common], help="run optimizers and write checks only")
    sub.add_parser("figure-data", parents=[common], help="write plot-ready CSVs for a planar dataset")
    sw = sub.add_parser("sweep", parents=[common], help="compare directions across hyperparameter values")
    sw.add_argument("--axis", required=True, choices=["eta", "epsilon", "w0"])
    sw.add_argument(
        "--values",
        required=True,
        help="comma-separated values; w0 vectors use ':' between components",
    )
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.max_iters is not None and args.max_iters < 1:
        log.error("--max-iters must be positive")
        return EXIT_USAGE
    try:
        exp = load_config(args.config, out=args.out, max_iters=args.max_iters)
        override = args.override_assumptions
        if args.command == "run":
            return cmd_run(exp, override)
        if args.command == "check":
            return cmd_run(exp, override, write_outputs=False)
        if args.command == "figure-data":
            return cmd_figure_data(exp, override)
        values = parse_sweep_values(args.axis, args.values, exp.data.n_features)
        return cmd_sweep(exp, args.axis, values, override)
    except (ConfigError, MarginError, RunError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
