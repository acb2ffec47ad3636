"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected in ``RESULTS`` and echoed in the terminal summary
(see ``conftest.py``). Run on its own with ``pytest tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from skelfit import cli
from skelfit.bodymodel import body_forward, body_landmarks
from skelfit.energies import EnergySpec, e_clv, e_ct, e_j, e_osf
from skelfit.io import load_json
from skelfit.metrics import d_mean, reconstruction_error
from skelfit.optim import OptimizerConfig, compare_rotation_charts, fit_body, fit_skeleton
from skelfit.skeleton import SkeletonState, skeleton_forward
from skelfit.synth import NOISE_TIERS, body_warm_start, gen_suite, warm_start

pytestmark = pytest.mark.slow

N_SCENES = 50
RESULTS = {}


def record(n, title, passed, detail):
    RESULTS[n] = f"[{'PASS' if passed else 'FAIL'}] {n}. {title}: {detail}"
    print(RESULTS[n])
    assert passed, RESULTS[n]


@pytest.fixture(scope="module")
def suite(models):
    return gen_suite(models, N_SCENES, seed=0)


def _skeleton_errors(models, scene, state):
    fit = skeleton_forward(models.skeleton, state)
    gt = skeleton_forward(models.skeleton, scene.gt_skeleton)
    return reconstruction_error(fit.all_vertices, gt.all_vertices), d_mean(fit.landmarks, gt.landmarks)


@pytest.fixture(scope="module")
def warm_runs(models, suite):
    """OSF+, OSF and PLUS fits of every scene from the same sigma_t = 1 cm warm starts."""
    runs = {"warm": [], "osf_plus": [], "osf": [], "plus": []}
    for scene in suite:
        start = warm_start(scene, NOISE_TIERS["warm"], models)
        runs["warm"].append({"state": start, "error": _skeleton_errors(models, scene, start)})
        for mode in ("osf_plus", "osf", "plus"):
            rep = fit_skeleton(models.skeleton, models.body, scene.gt_body, start, OptimizerConfig(mode=mode))
            runs[mode].append({"report": rep, "error": _skeleton_errors(models, scene, rep.state)})
    return runs


def test_1_gradient_soundness(tmp_path):
    out = tmp_path / "gradcheck.json"
    t0 = time.perf_counter()
    code = cli.main(["gradcheck", "--out", str(out)])
    elapsed = time.perf_counter() - t0
    rows = load_json(out)
    worst = max(r["max_rel_err"] for r in rows)
    ok = code == 0 and all(r["passed"] and r["states"] >= 50 for r in rows) and worst < 1e-5 and elapsed < 60
    record(1, "gradient soundness", ok,
           f"{len(rows)} checks x {rows[0]['states']} states, worst rel err {worst:.1e} (< 1e-5), {elapsed:.1f} s (< 60 s)")


def test_2_round_trip_recovery(warm_runs):
    dm = np.array([r["error"][1] for r in warm_runs["plus"]])
    frac = float(np.mean(dm < 2e-3))
    total = sum(r["report"].wall_time for r in warm_runs["plus"])
    record(2, "round-trip recovery (PLUS)", frac >= 0.95 and total < 300,
           f"D_mean < 2 mm in {frac:.0%} of {len(dm)} scenes (>= 95%), max {dm.max() * 1e3:.2f} mm, "
           f"{total:.0f} s total (< 300 s)")


def test_3_accuracy_ordering(warm_runs):
    med = {k: float(np.median([r["error"][0] for r in v])) for k, v in warm_runs.items()}
    ok = med["plus"] < med["osf"] <= med["osf_plus"] < med["warm"]
    record(3, "accuracy ordering", ok,
           f"median recon PLUS {med['plus']:.2f} < OSF {med['osf']:.2f} <= OSF+ {med['osf_plus']:.2f} "
           f"< warm {med['warm']:.2f} mm")


def test_4_speed_ordering(warm_runs):
    t = {k: float(np.median([r["report"].wall_time for r in warm_runs[k]])) for k in ("osf_plus", "osf", "plus")}
    ok = t["osf_plus"] < t["osf"] < t["plus"] and t["osf"] >= 5 * t["osf_plus"]
    record(4, "speed ordering", ok,
           f"median wall time OSF+ {t['osf_plus']:.3f} s < OSF {t['osf']:.3f} s < PLUS {t['plus']:.3f} s, "
           f"OSF/OSF+ = {t['osf'] / t['osf_plus']:.1f} (>= 5)")


def test_5_warm_start_sensitivity(models, suite, warm_runs):
    cold = []
    for scene in suite:
        start = warm_start(scene, NOISE_TIERS["cold"], models)
        rep = fit_skeleton(models.skeleton, models.body, scene.gt_body, start, OptimizerConfig(mode="osf_plus"))
        cold.append(_skeleton_errors(models, scene, rep.state)[1])
    warm = [r["error"][1] for r in warm_runs["osf_plus"]]
    ratio = float(np.median(cold) / np.median(warm))
    record(5, "warm-start sensitivity (OSF+)", ratio >= 3,
           f"median landmark error cold {np.median(cold) * 1e3:.1f} mm vs warm {np.median(warm) * 1e3:.2f} mm, "
           f"ratio {ratio:.0f} (>= 3)")


def test_6_anatomical_invariants(models, suite, warm_runs, rng):
    spec = EnergySpec()
    worst = {"j": 0.0, "clv": 0.0}
    for scene, run in zip(suite, warm_runs["osf"]):
        rep = run["report"]
        targets = body_landmarks(models.body, body_forward(models.body, scene.gt_body))
        initial = rep.trace[0]["total"]
        _, _, terms = e_osf(models.skeleton, rep.state, targets, spec)
        w = spec.weights()
        for k in worst:
            worst[k] = max(worst[k], w[k] * terms[k] / initial)
    skel = models.skeleton
    exact = True
    for _ in range(20):
        beta = rng.uniform(skel.beta_min, skel.beta_max)
        rest = SkeletonState.rest(skel, beta=beta)
        exact &= all(fn(skel, rest)[0] == 0.0 for fn in (e_ct, e_j, e_clv))
    ok = worst["j"] < 0.01 and worst["clv"] < 0.01 and exact
    record(6, "anatomical invariants", ok,
           f"after OSF seam share <= {worst['j']:.2%}, clavicle share <= {worst['clv']:.2%} of initial energy "
           f"(< 1%); e_ct/e_j/e_clv at 20 shaped rest poses exactly 0: {exact}")


def test_7_rotation_charts(models, suite):
    problems = []
    for scene in suite[:20]:
        targets = body_landmarks(models.body, body_forward(models.body, scene.gt_body))
        problems.append((models.skeleton, targets, warm_start(scene, NOISE_TIERS["warm"], models), None, None))
    rows = compare_rotation_charts(problems, OptimizerConfig(mode="osf"))
    complete = len(rows) == 20 and all(
        len(r["quaternion"]["curve"]) > 0 and len(r["rodrigues"]["curve"]) > 0 for r in rows)
    wins = sum(r["quaternion"]["final"] <= r["rodrigues"]["final"] for r in rows)
    record(7, "rotation-chart experiment", complete and wins >= 10,
           f"{len(rows)} complete paired curves, quaternion final <= Rodrigues in {wins}/20 pairs (>= 50%)")


def test_8_body_fitter(models, suite):
    errors, monotone = [], True
    for scene in suite:
        init = body_warm_start(scene, np.random.default_rng([scene.seed, 3]))
        rep = fit_body(models.body, scene, OptimizerConfig(mode="body"), init=init)
        errors.append(rep.extra["reprojectionError"])
        monotone &= bool(np.all(np.diff(rep.extra["lossThetaBest"]) <= 0))
    errors = np.array(errors)
    frac = float(np.mean(errors < 1e-3))
    record(8, "body fitter", frac >= 0.9 and monotone,
           f"reprojection < 1e-3 in {frac:.0%} of {len(errors)} scenes (>= 90%), median {np.median(errors):.1e}; "
           f"best-so-far loss_theta monotone: {monotone}")


def test_9_determinism(tmp_path):
    digests = []
    for run in ("a", "b"):
        root = tmp_path / run
        assert cli.main(["gen", "--out", str(root), "--scenes", "3", "--seed", "9"]) == 0
        for mode in ("osfplus", "osf", "plus", "body"):
            assert cli.main(["fit", "--manifest", str(root / "manifest.json"), "--mode", mode, "--seed", "4",
                             "--rounds", "2", "--steps", "25"]) == 0
        files = sorted(p for p in root.rglob("*.json") if p.name != "report.json")
        digests.append({str(p.relative_to(root)): p.read_bytes() for p in files})
    a, b = digests
    states = [k for k in a if k.endswith("state.json")]
    ok = a == b and len(states) == 12
    record(9, "determinism", ok,
           f"{len(a)} JSON outputs ({len(states)} state files, 4 modes x 3 scenes) byte-identical across reruns: {a == b}")
