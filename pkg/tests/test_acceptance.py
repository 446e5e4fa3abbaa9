"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Tolerances are pinned in the constants below.  Run on its own with
``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import math
import sys
import time
from importlib import resources
from pathlib import Path

import mpmath
import numpy as np
import pytest

from adagrad_bias import cli
from adagrad_bias.analysis import (
    angle,
    compare_directions,
    corner_condition,
    example31_data,
    example31_oracle,
    example32_oracle,
    figure2_data,
)
from adagrad_bias.maxmargin import MarginProblem, brute_force_margin, solve_hard_margin, solve_weighted_margin
from adagrad_bias.model import (
    Hyperparams,
    LossModel,
    check_assumptions,
    loss_gradient,
    make_dataset,
    planted_dataset,
)
from adagrad_bias.optim import estimate_h_infinity, run

sys.path.insert(0, str(Path(__file__).parent))
from conftest import ACCEPTANCE_LINES, random_separable  # noqa: E402

# pinned tolerances
DIR_TOL = 2e-2
CLOSED_FORM_TOL = 1e-6
RUNTIME_LIMIT_S = 60.0
CORNER_TOL = 1e-9
GENERIC_PASS_COUNT = 19
QP_AGREE_TOL = 1e-8
KKT_TOL = 1e-10
SUMMABILITY_RATIO = 0.1
H_TAIL_DRIFT = 0.05
FD_REL_TOL = 1e-6

T_LONG = 1_000_000
BUNDLED = ["example31_theta60", "example31_theta45", "figure1", "figure2", "planted_logistic"]


def verdict(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, detail


def example31_hp():
    return Hyperparams(eta=0.05, epsilon=1e-8, w0=np.zeros(2), max_iters=T_LONG)


def test_criterion_1_example31_theta60():
    theta = math.pi / 3
    start = time.perf_counter()
    rep = compare_directions(example31_data(theta), LossModel.exponential(), example31_hp(), thinning=1000)
    elapsed = time.perf_counter() - start
    gd_dir, ada_dir, _ = example31_oracle(theta)
    a_ada = angle(rep.adagrad_dir_empirical, [math.sqrt(0.5), math.sqrt(0.5)])
    a_gd = angle(rep.gd_dir_empirical, [math.cos(theta), math.sin(theta)])
    gap_closed = angle(ada_dir, gd_dir)
    gap_pipeline = rep.angles["adagrad_predicted"]["svm"]
    ok = (
        a_ada < DIR_TOL
        and a_gd < DIR_TOL
        and abs(gap_closed - math.pi / 12) < CLOSED_FORM_TOL
        and abs(gap_pipeline - math.pi / 12) < CLOSED_FORM_TOL
        and elapsed <= RUNTIME_LIMIT_S
    )
    verdict(
        1,
        ok,
        f"adagrad {a_ada:.2e} rad, gd {a_gd:.2e} rad, gap closed-form {gap_closed - math.pi / 12:+.1e}, "
        f"gap pipeline {gap_pipeline - math.pi / 12:+.1e}, runtime {elapsed:.1f}s",
    )


def test_criterion_2_coincidence_at_45_degrees():
    rep = compare_directions(example31_data(math.pi / 4), LossModel.exponential(), example31_hp(), thinning=1000)
    worst = max(v for row in rep.angles.values() for v in row.values())
    verdict(2, worst < DIR_TOL, f"largest pairwise angle {worst:.2e} rad")


def test_criterion_3_rotation_sensitivity():
    lo, hi = math.pi / 2 - 0.05, math.pi / 2 + 0.05
    _, ada_lo, _ = example31_oracle(lo)
    _, ada_hi, _ = example31_oracle(hi, reflected=True)
    gap_oracle = angle(ada_lo, ada_hi)
    hp = Hyperparams(eta=0.05, epsilon=1e-8, max_iters=100_000)
    preds = [
        compare_directions(example31_data(th), LossModel.exponential(), hp, thinning=1000).adagrad_dir_predicted
        for th in (lo, hi)
    ]
    gap_pipeline = angle(*preds)
    data_rot = angle(example31_data(lo).signed_features[0], example31_data(hi).signed_features[0])
    ok = abs(gap_oracle - math.pi / 2) < CLOSED_FORM_TOL and abs(gap_pipeline - math.pi / 2) < CLOSED_FORM_TOL
    verdict(
        3,
        ok,
        f"oracle gap {gap_oracle - math.pi / 2:+.1e}, pipeline gap {gap_pipeline - math.pi / 2:+.1e} "
        f"(from pi/2) for a data rotation of {data_rot:.4f} rad",
    )


def test_criterion_4_figure2_corner():
    data = figure2_data()
    hp = Hyperparams(eta=0.5, epsilon=1e-8, max_iters=100_000)
    rep = compare_directions(data, LossModel.logistic(), hp, thinning=1000)
    corner = np.array(example32_oracle(1.0, 1.0, 5 * math.pi / 8, -math.pi / 8))
    corner /= np.linalg.norm(corner)
    pred_gap = angle(rep.adagrad_dir_predicted, rep.svm_dir)
    to_corner = max(np.max(np.abs(rep.adagrad_dir_predicted - corner)), np.max(np.abs(rep.svm_dir - corner)))
    cert = corner_condition(data)
    ok = pred_gap < CORNER_TOL and to_corner < CORNER_TOL and cert.holds
    verdict(4, ok, f"adagrad vs gd predicted {pred_gap:.1e}, distance to corner {to_corner:.1e}, corner {cert.holds}")


def generic_instances():
    rng = np.random.default_rng(2024)
    for i in range(20):
        p = int(rng.integers(2, 6))
        n = int(rng.integers(2, 11))
        yield i, planted_dataset(n, p, seed=1000 + i)


def test_criterion_5_generic_instances():
    model = LossModel.logistic()
    angles = []
    for _, data in generic_instances():
        bound = check_assumptions(model, data, Hyperparams(eta=1.0)).eta_bound
        hp = Hyperparams(eta=0.9 * bound, epsilon=1e-8, max_iters=T_LONG)
        traj = run("adagrad", model, data, hp, thinning=T_LONG // 100)
        h_inf, _ = estimate_h_infinity(traj, hp.epsilon)
        w = solve_weighted_margin(MarginProblem(data.signed_features, 1.0 / np.sqrt(h_inf))).w_star
        angles.append(angle(traj.terminal_state.w, w))
    passed = sum(a < DIR_TOL for a in angles)
    verdict(
        5,
        passed >= GENERIC_PASS_COUNT,
        f"{passed}/20 within {DIR_TOL} rad (need {GENERIC_PASS_COUNT}); median {np.median(angles):.3f}, "
        f"max {max(angles):.3f}",
    )


def test_criterion_6_qp_oracle_equivalence():
    rng = np.random.default_rng(6)
    worst_gap = worst_kkt = 0.0
    for _ in range(200):
        n, p = int(rng.integers(1, 13)), int(rng.integers(1, 7))
        prob = MarginProblem(random_separable(rng, n, p))
        fast, ref = solve_hard_margin(prob), brute_force_margin(prob)
        worst_gap = max(worst_gap, float(np.linalg.norm(fast.w_star - ref.w_star)))
        worst_kkt = max(worst_kkt, fast.kkt_residual)
    ok = worst_gap < QP_AGREE_TOL and worst_kkt < KKT_TOL
    verdict(6, ok, f"max |w - w_brute| {worst_gap:.1e}, max KKT residual {worst_kkt:.1e}")


def test_criterion_7_check_suite_on_bundled_configs():
    failures, onsets = [], []
    for name in BUNDLED:
        exp = cli.load_config(str(resources.files("adagrad_bias").joinpath("configs", f"{name}.json")))
        if not check_assumptions(exp.model, exp.data, exp.hp).eta_ok:
            failures.append(f"{name}: step size above the bound")
            continue
        for o in cli.evaluate_checks(exp, cli._run_all(exp, override=False)):
            tag = f"{name}/{o.name}"
            if not o.holds:
                failures.append(tag)
            if o.name.endswith("summability") and not o.details["ratio"] < SUMMABILITY_RATIO:
                failures.append(f"{tag}: ratio")
            if o.name.endswith("preconditioner_convergence") and not o.details["tail_error"] < H_TAIL_DRIFT:
                failures.append(f"{tag}: drift")
            if o.name.endswith(("divergence_and_margins", "projection_bounds")):
                if o.onset_step is None:
                    failures.append(f"{tag}: no onset")
                else:
                    onsets.append(o.onset_step)
    latest = max(onsets, default=None)
    verdict(7, not failures, f"{len(BUNDLED)} configs, failures: {failures or 'none'}, latest onset step {latest}")


def test_criterion_8_gradient_finite_differences():
    rng = np.random.default_rng(88)
    mpmath.mp.dps = 40
    worst = 0.0
    for k in range(100):
        model = LossModel.exponential() if k % 2 else LossModel.logistic()
        n, p = int(rng.integers(1, 11)), int(rng.integers(1, 6))
        data = make_dataset(rng.standard_normal((n, p)), rng.choice([-1.0, 1.0], size=n))
        w = rng.standard_normal(p)
        Z = [[mpmath.mpf(float(v)) for v in row] for row in data.signed_features]

        def mp_loss(wv):
            total = mpmath.mpf(0)
            for row in Z:
                u = mpmath.fsum(a * b for a, b in zip(row, wv))
                total += mpmath.exp(-u) if k % 2 else mpmath.log1p(mpmath.exp(-u))
            return total

        step = mpmath.mpf("1e-15")
        base = [mpmath.mpf(float(v)) for v in w]
        fd = np.empty(p)
        for i in range(p):
            up, dn = list(base), list(base)
            up[i] += step
            dn[i] -= step
            fd[i] = float((mp_loss(up) - mp_loss(dn)) / (2 * step))
        g = loss_gradient(model, data, w)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    verdict(8, worst < FD_REL_TOL, f"worst relative error {worst:.1e} over 100 triples")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
