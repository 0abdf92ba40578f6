"""Built-in invariant suites behind the ``verify`` subcommand.

Each suite is a fast, deterministic check of a structural property; the CLI
prints a machine-readable summary and exits nonzero when any suite fails.
Fault hooks (scaled envelope constant, injected NaN noise) let the negative
paths be exercised on demand.
"""

from __future__ import annotations

import numpy as np

from .diagnostics import alignment, first_order_term
from .model import make_instance, recovery_loss
from .noise_oracle import FreshnessError, NoiseConfig, NoiseOracle, ProjectionRequest
from .pipeline import RunConfig, run_mpsnsga
from .model import InstanceSpec
from .schedule import ScheduleConstants, theorem_schedule
from .sga_core import BlockState, NumericalAbort, StepPlan, normalized_step, scaled_gradient


def _suite_homogeneity(rng: np.random.Generator) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(300):
        d1, d2 = rng.integers(2, 7, size=2)
        w = rng.standard_normal((d1, d2))
        grad = rng.standard_normal((d1, d2))
        r = float(np.vdot(grad, w))  # 1-homogeneous reward by construction
        state = BlockState(block_index=0, W=w)
        g = scaled_gradient(state, r, grad)
        c = float(rng.uniform(0.1, 5.0))
        state_c = BlockState(block_index=0, W=c * w)
        g_c = scaled_gradient(state_c, c * r, grad)
        worst = max(worst, float(np.max(np.abs(g_c - c * g))) / max(1.0, float(np.max(np.abs(g)))))
        # direction invariance of one normalized step
        plan = StepPlan(eta=0.05, budget=1)
        s1 = normalized_step(state, plan, r, grad)
        s2 = normalized_step(state_c, plan, c * r, grad)
        u1 = s1.W / np.linalg.norm(s1.W)
        u2 = s2.W / np.linalg.norm(s2.W)
        worst = max(worst, float(np.max(np.abs(u1 - u2))))
        v = rng.standard_normal(d1); v /= np.linalg.norm(v)
        u = rng.standard_normal(d2); u /= np.linalg.norm(u)
        worst = max(worst, abs(alignment(v, u, w) - alignment(v, u, c * w)))
    return worst < 1e-11, f"worst deviation {worst:.2e}"


def _suite_expansion(rng: np.random.Generator) -> tuple[bool, str]:
    bad = 0
    for _ in range(100):
        d1, d2 = rng.integers(2, 6, size=2)
        w = rng.standard_normal((d1, d2))
        q = rng.standard_normal((d1, d2))
        v = rng.standard_normal(d1); v /= np.linalg.norm(v)
        u = rng.standard_normal(d2); u /= np.linalg.norm(u)
        s = first_order_term(w, q, v, u)
        errs = []
        for eta in (1e-3, 5e-4):
            fd = (alignment(v, u, w + eta * q) - alignment(v, u, w)) / eta
            errs.append(abs(fd - s))
        if errs[0] > 1e-12 and errs[1] > 0.75 * errs[0] + 1e-12:
            bad += 1
    return bad <= 5, f"{bad}/100 cases without first-order error halving"


def _suite_ladder(c1_scale: float) -> tuple[bool, str]:
    inst = make_instance(4, [6, 6, 6, 6], 2.0, "paired_correlation", seed=3, rho=0.4)
    consts = ScheduleConstants(c1_scale=c1_scale)
    sched = theorem_schedule(inst, 0.1, 500, consts)
    worst = 0.0
    for m in range(sched.n_blocks()):
        stages = [c[m] for c in sched.phase1_cycles]
        for a, b in zip(stages, stages[1:]):
            if a.ladder != b.ladder:
                continue
            worst = max(worst, abs(b.lb - a.zeta * a.lb) / a.lb)
        for st in stages:
            worst = max(worst, abs(st.ub - 2.0 * st.zeta * st.lb) / st.ub)
    return worst < 1e-9, f"worst ladder relation error {worst:.2e}"


def _suite_positivity(c1_scale: float) -> tuple[bool, str]:
    inst = make_instance(5, [5, 5, 5, 5, 5], 2.0, "random", seed=4)
    sched = theorem_schedule(inst, 0.2, 300, ScheduleConstants(c1_scale=c1_scale))
    try:
        sched.validate()
    except Exception as e:  # noqa: BLE001 - report any validation failure
        return False, str(e)
    return True, "all step sizes and budgets positive/finite"


def _suite_freshness() -> tuple[bool, str]:
    cfg = NoiseConfig(kind="gaussian_iid", backend="projected", seed=0)
    oracle = NoiseOracle(cfg, [3, 3, 3, 3])
    f = np.zeros((3, 3)); f[0, 0] = 1.0
    req = ProjectionRequest(0, [None, f], [np.eye(3) / np.sqrt(3)])
    oracle.fresh_sample_projections(req, 5)
    try:
        oracle.fresh_sample_projections(req, 5)
    except FreshnessError:
        return True, "repeated sample index rejected"
    return False, "freshness violation not detected"


def _suite_covariance(rng: np.random.Generator) -> tuple[bool, str]:
    cfg = NoiseConfig(kind="gaussian_iid", backend="projected", seed=11)
    oracle = NoiseOracle(cfg, [3, 3, 3, 3])
    f = rng.standard_normal((3, 3)); f /= np.linalg.norm(f)
    a = rng.standard_normal((3, 3)); a /= np.linalg.norm(a)
    b = rng.standard_normal((3, 3))
    b -= np.vdot(a, b) * a
    b /= np.linalg.norm(b)
    target = 0.3
    probe_b = target * a + np.sqrt(1 - target**2) * b
    req = ProjectionRequest(0, [None, f], [a, probe_b])
    n = 20000
    vals = oracle.projections_batch(req, n)
    cov = float(np.mean(vals[:, 0] * vals[:, 1]))
    se = float(np.std(vals[:, 0] * vals[:, 1]) / np.sqrt(n))
    ok = abs(cov - target) <= 3 * se
    return ok, f"cov {cov:.4f} vs {target} (3se={3*se:.4f})"


def _suite_loss_sign(rng: np.random.Generator) -> tuple[bool, str]:
    inst = make_instance(4, [4, 4, 4, 4], 1.5, "random", seed=7)
    ests = []
    for d in inst.dims:
        v = rng.standard_normal(d)
        ests.append(v / np.linalg.norm(v))
    l1 = recovery_loss(ests, inst)
    l2 = recovery_loss([-v for v in ests], inst)
    same = l1.per_component == l2.per_component
    return same, "loss invariant under estimate sign flips"


def _suite_bounded_sphere() -> tuple[bool, str]:
    cfg = NoiseConfig(kind="bounded_sphere", backend="explicit", seed=5)
    oracle = NoiseOracle(cfg, [3, 3, 3, 3])
    tensors = oracle._materialize(0, n=64)
    norms = np.linalg.norm(tensors.reshape(64, -1), axis=1)
    ok = bool(np.all(norms <= 1.0)) and bool(np.all(norms > 0.999))
    return ok, f"max vectorized norm {norms.max():.12f}"


def _suite_pipeline_smoke(nan_hook: bool) -> tuple[bool, str]:
    noise = NoiseConfig(kind="zero", backend="projected", seed=1,
                        fault_nan_at=5 if nan_hook else None)
    if nan_hook:
        noise = NoiseConfig(kind="gaussian_iid", backend="projected", seed=1,
                            fault_nan_at=5)
    cfg = RunConfig(
        instance=InstanceSpec(order=4, dims=[4, 4, 4, 4], snr=2.0,
                              spike_mode="symmetric", seed=2),
        noise=noise,
        schedule_mode="theorem",
        delta=0.2,
        t3=100,
        constants=ScheduleConstants(t1_cap=200, t2_cap=200),
        seed=3,
        trace_stride=10**9,
    )
    try:
        report = run_mpsnsga(cfg)
    except NumericalAbort as e:
        return False, f"run aborted: {e}"
    ok = report.losses["max_loss"] < 0.5
    return ok, f"max loss {report.losses['max_loss']:.3e}"


def run_suites(c1_scale: float = 1.0, nan_hook: bool = False,
               quick: bool = False) -> dict:
    rng = np.random.default_rng(2024)
    suites = [
        ("homogeneity_identities", lambda: _suite_homogeneity(rng)),
        ("first_order_expansion", lambda: _suite_expansion(rng)),
        ("ladder_consistency", lambda: _suite_ladder(c1_scale)),
        ("schedule_positivity", lambda: _suite_positivity(c1_scale)),
        ("noise_freshness", lambda: _suite_freshness()),
        ("covariance_fidelity", lambda: _suite_covariance(rng)),
        ("loss_sign_invariance", lambda: _suite_loss_sign(rng)),
        ("bounded_sphere_norm", lambda: _suite_bounded_sphere()),
    ]
    if not quick:
        suites.append(("pipeline_smoke", lambda: _suite_pipeline_smoke(nan_hook)))
    results = []
    for name, fn in suites:
        try:
            ok, detail = fn()
        except Exception as e:  # noqa: BLE001 - a crashed suite is a failed suite
            ok, detail = False, f"{type(e).__name__}: {e}"
        results.append({"name": name, "passed": bool(ok), "detail": detail})
    return {"passed": all(r["passed"] for r in results), "suites": results}
