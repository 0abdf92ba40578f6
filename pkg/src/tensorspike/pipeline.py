"""End-to-end orchestration: sign-enumerated initialization, three training phases,
streaming selection, dual-sign refinement with distance tie-breaking, extraction.

Every sign pattern runs Phases I-II on its own derived noise stream; a
streaming validation score picks the winner; Phase III refines each block with
both reward signs and keeps the run that stays closer to its start.  The final
matrices hand off to spectral extraction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .model import (InstanceSpec, SignalInstance, block_shapes,
                    block_spike_indices, recovery_loss)
from .noise_oracle import NoiseConfig, NoiseOracle
from .resources import PipelineSnapshot, ResourceLedger, audit_state_size
from .schedule import (PhaseSchedule, ScheduleConstants, ScheduleError,
                       adaptive_schedule, reference_search, theorem_schedule)
from .sga_core import BlockState, StepPlan, run_block_inner, sweep_order
from .spectral import top_eigvec_power


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class InitPattern:
    """One sign assignment: a (deterministic, random) pair per matrix block,
    a single sign for the vector block."""

    tau: int
    signs: list[tuple[int, ...]]

    def __post_init__(self) -> None:
        for s in self.signs:
            if any(x not in (-1, 1) for x in s):
                raise ConfigError("signs must be +-1")


def enumerate_patterns(order: int) -> list[InitPattern]:
    """All 2**order sign patterns (4 per matrix block, 2 for the vector block)."""
    idxs = block_spike_indices(order)
    patterns = []
    for tau in range(2 ** order):
        bits = tau
        signs: list[tuple[int, ...]] = []
        for blk in idxs:
            if len(blk) == 1:
                signs.append((1 - 2 * (bits & 1),))
                bits >>= 1
            else:
                signs.append((1 - 2 * (bits & 1), 1 - 2 * ((bits >> 1) & 1)))
                bits >>= 2
        patterns.append(InitPattern(tau=tau, signs=signs))
    return patterns


def _init_vectors(dims: list[int], seed: int) -> list[np.ndarray]:
    """Normalized Gaussian vectors shared by every sign pattern of one run."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(23,)))
    out = []
    for d in dims:
        v = rng.standard_normal(d)
        out.append(v / np.linalg.norm(v))
    return out


def build_initialization(pattern: InitPattern, dims: list[int], seed: int) -> list[BlockState]:
    """Signed initialization: half-weight scaled embedded identity plus half-weight
    random rank-1 part for matrix blocks; a random unit vector for the vector block.

    The random vectors depend on ``seed`` only, so the sign enumeration ranges
    over one shared draw (guaranteeing one pattern with both parts positively
    correlated with the signal)."""
    order = len(dims)
    vecs = _init_vectors(dims, seed)
    states = []
    for m, idx in enumerate(block_spike_indices(order)):
        if len(idx) == 1:
            (sv,) = pattern.signs[m]
            w = sv * vecs[idx[0]]
        else:
            a, b = idx
            da, db = dims[a], dims[b]
            sd, sr = pattern.signs[m]
            det = np.zeros((da, db))
            det[np.arange(da), np.arange(da)] = da ** -0.5 / 2.0
            w = sd * det + sr * 0.5 * np.outer(vecs[a], vecs[b])
        states.append(BlockState(block_index=m, W=w))
    return states


def deterministic_random_parts(dims: list[int], seed: int) -> list[np.ndarray]:
    """The unsigned halves of the initialization (for tests and the odd-order search)."""
    return _init_vectors(dims, seed)


@dataclass
class RunConfig:
    instance: InstanceSpec
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    schedule_mode: str = "theorem"   # theorem | case1 | case2 | auto
    delta: float = 0.1
    t3: int = 2000
    c3: float | None = None
    kappa: float = 0.5
    lambda_hint: float | None = None  # schedule SNR; defaults to the instance snr
    constants: ScheduleConstants = field(default_factory=ScheduleConstants)
    schedule_parity: str | None = None
    seed: int = 0
    n0: int = 64
    trace_stride: int = 32
    instrument: bool = False
    early_exit: bool = False
    phases: tuple[int, ...] = (1, 2, 3)
    sample_cap: int | None = None
    jobs: int = 1

    def __post_init__(self) -> None:
        self.validate()

    def schedule_snr(self) -> float:
        return self.lambda_hint if self.lambda_hint is not None else self.instance.snr

    def validate(self) -> None:
        if self.schedule_mode not in ("theorem", "case1", "case2", "auto"):
            raise ConfigError(f"unknown schedule mode {self.schedule_mode!r}")
        parity = "odd" if self.instance.order % 2 else "even"
        if self.schedule_parity is not None and self.schedule_parity != parity:
            raise ConfigError(
                f"schedule parity {self.schedule_parity!r} does not match order "
                f"{self.instance.order} ({parity})"
            )
        if self.instance.order // 2 < 2:
            raise ConfigError(f"pipeline schedules require order >= 4, got {self.instance.order}")
        if not (0.0 < self.delta < 1.0):
            raise ConfigError("delta must lie in (0, 1)")
        if not (0.0 < self.kappa < 1.0):
            raise ConfigError("kappa must lie in (0, 1)")
        if self.schedule_mode == "case1" and self.c3 is None:
            raise ConfigError("case1 requires c3")
        if self.early_exit and not self.instrument:
            raise ConfigError("early_exit requires instrument mode")
        if sorted(set(self.phases)) != list(self.phases) or not set(self.phases) <= {1, 2, 3}:
            raise ConfigError("phases must be an increasing subset of (1, 2, 3)")
        if self.n0 < 1:
            raise ConfigError("n0 must be >= 1")

    def to_dict(self) -> dict:
        return {
            "instance": self.instance.to_dict(),
            "noise": self.noise.to_dict(),
            "schedule": {
                "mode": self.schedule_mode,
                "delta": self.delta,
                "t3": self.t3,
                "c3": self.c3,
                "kappa": self.kappa,
                "lambda_hint": self.lambda_hint,
                "parity": self.schedule_parity,
                "constants": self.constants.to_dict(),
            },
            "run": {
                "seed": self.seed,
                "n0": self.n0,
                "trace_stride": self.trace_stride,
                "instrument": self.instrument,
                "early_exit": self.early_exit,
                "phases": list(self.phases),
                "sample_cap": self.sample_cap,
                "jobs": self.jobs,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        try:
            inst = InstanceSpec.from_dict(d["instance"])
        except KeyError as e:
            raise ConfigError(f"missing config key: {e}") from None
        sch = d.get("schedule", {})
        run = d.get("run", {})
        try:
            constants = ScheduleConstants.from_dict(sch.get("constants", {}))
        except ScheduleError as e:
            raise ConfigError(str(e)) from None
        cfg = cls(
            instance=inst,
            noise=NoiseConfig.from_dict(d.get("noise", {})),
            schedule_mode=str(sch.get("mode", "theorem")),
            delta=float(sch.get("delta", 0.1)),
            t3=int(sch.get("t3", 2000)),
            c3=(float(sch["c3"]) if sch.get("c3") is not None else None),
            kappa=float(sch.get("kappa", 0.5)),
            lambda_hint=(float(sch["lambda_hint"])
                         if sch.get("lambda_hint") is not None else None),
            constants=constants,
            schedule_parity=(str(sch["parity"]) if sch.get("parity") is not None else None),
            seed=int(run.get("seed", 0)),
            n0=int(run.get("n0", 64)),
            trace_stride=int(run.get("trace_stride", 32)),
            instrument=bool(run.get("instrument", False)),
            early_exit=bool(run.get("early_exit", False)),
            phases=tuple(int(p) for p in run.get("phases", (1, 2, 3))),
            sample_cap=(int(run["sample_cap"]) if run.get("sample_cap") is not None else None),
            jobs=int(run.get("jobs", 1)),
        )
        cfg.validate()
        return cfg


@dataclass
class RunReport:
    config: dict
    schedule: dict
    tau_star: int
    phase3_signs: list[str]
    losses: dict
    resources: dict
    estimates: list[list[float]]
    final_alignments: list[float] | None
    search: dict | None
    selection_scores: list[float]
    snr_band: dict
    traces: list[tuple] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {
            "schema": "tensorspike-v1",
            "config": self.config,
            "schedule": self.schedule,
            "tau_star": self.tau_star,
            "phase3_signs": self.phase3_signs,
            "losses": self.losses,
            "resources": self.resources,
            "estimates": self.estimates,
            "final_alignments": self.final_alignments,
            "search": self.search,
            "selection_scores": self.selection_scores,
            "snr_band": self.snr_band,
        }
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def build_schedule(cfg: RunConfig, instance: SignalInstance,
                   ledger: ResourceLedger | None = None) -> tuple[PhaseSchedule, dict | None]:
    """Resolve the configured schedule mode, running the reference search if asked."""
    search_info = None
    mode = cfg.schedule_mode
    c3 = cfg.c3
    snr = cfg.schedule_snr()
    if mode == "auto":
        oracle = NoiseOracle(cfg.noise, instance.dims, ledger=ledger, stream_key=(5,))
        w0 = None
        if instance.order % 2:
            w0 = deterministic_random_parts(instance.dims, cfg.seed)[0]
        res = reference_search(oracle, instance, cfg.kappa, cfg.delta,
                               w0=w0, constants=cfg.constants)
        search_info = {
            "c3": res.c3,
            "samples_used": res.samples_used,
            "rounds": [vars(r) for r in res.rounds],
        }
        mode = "case1" if res.c3 is not None else "case2"
        c3 = res.c3
    if mode == "theorem":
        inst = instance
        if snr != instance.snr:
            inst = replace(instance, snr=snr)
        return theorem_schedule(inst, cfg.delta, cfg.t3, cfg.constants), search_info
    sched = adaptive_schedule(mode, instance.dims, instance.order, snr,
                              cfg.delta, c3=c3, t3=cfg.t3, constants=cfg.constants)
    return sched, search_info


def select_initialization(candidates: list[list[BlockState]], oracle: NoiseOracle,
                          n0: int, instance: SignalInstance) -> tuple[int, list[float]]:
    """Streaming validation scores; argmax wins, ties broken by lowest index."""
    dirs = instance.signal_directions()
    nb = instance.n_blocks
    probe_block = nb - 1
    scores = []
    for states in candidates:
        factors = [st.normalized() for st in states]
        signal = instance.snr * float(np.prod([float(np.vdot(f, d))
                                               for f, d in zip(factors, dirs)]))
        fixed = [None if i == probe_block else factors[i] for i in range(nb)]
        noise = oracle.probe_score_batch(probe_block, fixed, factors[probe_block], n0)
        scores.append(signal + float(np.mean(noise)))
    return int(np.argmax(scores)), scores


def _phase_plans(cycle, early_exit: bool) -> list[StepPlan]:
    return [
        StepPlan(eta=st.eta, budget=st.budget,
                 exit_threshold=st.ub if early_exit else None)
        for st in cycle
    ]


def run_phases_12(
    states: list[BlockState],
    sched: PhaseSchedule,
    oracle: NoiseOracle,
    instance: SignalInstance,
    cfg: RunConfig,
    trace_sink: list | None = None,
    tau: int = -1,
) -> list[BlockState]:
    """Phase I staged cycles followed by the Phase II constant-step sweep."""
    order_mode = sched.parity
    nb = len(states)
    if 1 in cfg.phases:
        for ci, cycle in enumerate(sched.phase1_cycles):
            plans = _phase_plans(cycle, cfg.early_exit)
            label = f"I.{cycle[0].ladder}{cycle[0].h}"
            for m in sweep_order(nb, order_mode):
                states[m], rows = run_block_inner(
                    states, m, plans[m], oracle, instance,
                    trace_stride=cfg.trace_stride, instrument=cfg.instrument, phase=label)
                if trace_sink is not None:
                    trace_sink.extend((tau, *r) for r in rows)
    if 2 in cfg.phases:
        exit2 = None
        plans = [StepPlan(eta=p.eta, budget=p.budget,
                          exit_threshold=(1.0 - sched.eps2 / 2.0) if cfg.early_exit else None)
                 for p in sched.phase2]
        for m in sweep_order(nb, order_mode):
            states[m], rows = run_block_inner(
                states, m, plans[m], oracle, instance,
                trace_stride=cfg.trace_stride, instrument=cfg.instrument, phase="II")
            if trace_sink is not None:
                trace_sink.extend((tau, *r) for r in rows)
    return states


def phase3_refine(
    states: list[BlockState],
    sched: PhaseSchedule,
    instance: SignalInstance,
    noise: NoiseConfig,
    ledger: ResourceLedger | None,
    cfg: RunConfig,
    trace_sink: list | None = None,
    tau: int = -1,
    snapshot: PipelineSnapshot | None = None,
) -> tuple[list[BlockState], list[str]]:
    """Per block, run the decaying-step refinement with both reward signs from the
    same start and keep the normalized result closer to that start."""
    nb = len(states)
    sign_choices = ["plus"] * nb
    for m in sweep_order(nb, sched.parity):
        spec3 = sched.phase3[m]
        start = states[m]
        size = int(np.prod(start.W.shape))
        if snapshot is not None:
            snapshot.add(f"phase3_b{m}_start", size, 0)
        finals = {}
        for si, sign in enumerate(("plus", "minus")):
            oracle = NoiseOracle(noise, instance.dims, ledger=ledger,
                                 stream_key=(3, m, si))
            plan = StepPlan(eta=spec3.eta, budget=spec3.budget,
                            decay_length=spec3.decay_length, reward_sign=sign)
            if snapshot is not None:
                snapshot.add(f"phase3_b{m}_{sign}", size, spec3.budget)
            final, rows = run_block_inner(
                states, m, plan, oracle, instance,
                trace_stride=cfg.trace_stride, instrument=cfg.instrument,
                phase=f"III.{sign}")
            finals[sign] = final
            if trace_sink is not None:
                trace_sink.extend((tau, *r) for r in rows)
        d_plus = float(np.linalg.norm(finals["plus"].W - start.normalized()))
        d_minus = float(np.linalg.norm(finals["minus"].W - start.normalized()))
        choice = "plus" if d_plus <= d_minus else "minus"
        sign_choices[m] = choice
        states[m] = finals[choice]
        if snapshot is not None:
            snapshot.remove_tag(f"phase3_b{m}_plus")
            snapshot.remove_tag(f"phase3_b{m}_minus")
            snapshot.remove_tag(f"phase3_b{m}_start")
            snapshot.add(f"phase3_b{m}_final", size, 0)
    return states, sign_choices


def extract_estimates(states: list[BlockState], instance: SignalInstance,
                      seed: int = 0) -> list[np.ndarray]:
    """Unit-vector estimates per component: spectral extraction for matrix blocks,
    the normalized iterate itself for the vector block."""
    estimates: list[np.ndarray | None] = [None] * instance.order
    for m, idx in enumerate(instance.block_indices()):
        w = states[m].normalized()
        if len(idx) == 1:
            estimates[idx[0]] = w
        else:
            left = 0.5 * (w @ w.T + (w @ w.T).T)
            right = 0.5 * (w.T @ w + (w.T @ w).T)
            estimates[idx[0]] = top_eigvec_power(left, seed=seed + 2 * m)
            estimates[idx[1]] = top_eigvec_power(right, seed=seed + 2 * m + 1)
    return estimates


def run_mpsnsga(cfg: RunConfig) -> RunReport:
    """Full multi-phase run; returns the in-memory report."""
    cfg.validate()
    instance = cfg.instance.build()
    nb = instance.n_blocks
    ledger = ResourceLedger(sample_cap=cfg.sample_cap)
    search_ledger = ResourceLedger()
    sched, search_info = build_schedule(cfg, instance, ledger=search_ledger)

    snapshot = PipelineSnapshot()
    patterns = enumerate_patterns(instance.order)
    sizes = [int(np.prod(s)) for s in block_shapes(instance.dims)]
    traces: list[tuple] = []

    candidates = []
    for pat in patterns:
        states = build_initialization(pat, instance.dims, cfg.seed)
        for m in range(nb):
            snapshot.add(f"p{pat.tau}_b{m}", sizes[m],
                         sched.phase1_budget(m) + sched.phase2[m].budget)
        oracle = NoiseOracle(cfg.noise, instance.dims, ledger=ledger,
                             stream_key=(1, pat.tau))
        states = run_phases_12(states, sched, oracle, instance, cfg,
                               trace_sink=traces, tau=pat.tau)
        candidates.append(states)
    peak_current, peak_paper = audit_state_size(snapshot)

    sel_oracle = NoiseOracle(cfg.noise, instance.dims, ledger=ledger, stream_key=(2,))
    tau_star, scores = select_initialization(candidates, sel_oracle, cfg.n0, instance)
    chosen = [BlockState(block_index=st.block_index, W=st.normalized().copy())
              for st in candidates[tau_star]]
    for pat in patterns:
        if pat.tau != tau_star:
            for m in range(nb):
                snapshot.remove_tag(f"p{pat.tau}_b{m}")

    sign_choices = ["plus"] * nb
    if 3 in cfg.phases:
        chosen, sign_choices = phase3_refine(
            chosen, sched, instance, cfg.noise, ledger, cfg,
            trace_sink=traces, tau=tau_star, snapshot=snapshot)
        cur, pap = audit_state_size(snapshot)
        peak_current = max(peak_current, cur)
        peak_paper = max(peak_paper, pap)

    estimates = extract_estimates(chosen, instance, seed=cfg.seed + 9000)
    losses = recovery_loss(estimates, instance)

    dirs = instance.signal_directions()
    final_align = None
    if cfg.instrument:
        final_align = [float(np.vdot(chosen[m].normalized(), dirs[m])) for m in range(nb)]

    ledger.state_scalars_current = peak_current
    ledger.state_scalars_paper = peak_paper
    resources = ledger.to_dict()
    resources["search_samples"] = search_ledger.samples_used
    resources["lambda2_NKS"] = instance.snr ** 2 * resources["NKS"]

    lo, hi = instance.snr_band()
    report = RunReport(
        config=cfg.to_dict(),
        schedule=sched.to_dict(),
        tau_star=tau_star,
        phase3_signs=sign_choices,
        losses={"per_component": losses.per_component, "max_loss": losses.max_loss},
        resources=resources,
        estimates=[v.tolist() for v in estimates],
        final_alignments=final_align,
        search=search_info,
        selection_scores=scores,
        snr_band={"lo": lo, "hi": hi,
                  "within": bool(lo <= instance.snr <= hi)},
        traces=traces,
    )
    return report


def aligned_pattern(instance: SignalInstance, seed: int) -> InitPattern:
    """The sign pattern whose deterministic and random parts both correlate
    positively with the planted directions (oracle knowledge; tests only)."""
    vecs = _init_vectors(instance.dims, seed)
    dirs = instance.signal_directions()
    signs: list[tuple[int, ...]] = []
    for m, idx in enumerate(instance.block_indices()):
        if len(idx) == 1:
            s = float(np.dot(vecs[idx[0]], instance.spikes[idx[0]]))
            signs.append((1 if s >= 0 else -1,))
        else:
            a, b = idx
            da, db = instance.dims[a], instance.dims[b]
            det = np.zeros((da, db))
            det[np.arange(da), np.arange(da)] = da ** -0.5 / 2.0
            sd = float(np.vdot(det, dirs[m]))
            sr = float(np.vdot(np.outer(vecs[a], vecs[b]), dirs[m]))
            signs.append((1 if sd >= 0 else -1, 1 if sr >= 0 else -1))
    tau = 0
    shift = 0
    for s in signs:
        for x in s:
            tau |= (0 if x == 1 else 1) << shift
            shift += 1
    return InitPattern(tau=tau, signs=signs)


def samples_until_aligned(
    instance: SignalInstance,
    sched: PhaseSchedule,
    noise: NoiseConfig,
    seed: int,
    threshold: float = 0.9,
    include_search_samples: int = 0,
) -> int | None:
    """Fresh samples consumed until every block alignment reaches ``threshold``.

    Runs Phases I-II for the oracle-aligned pattern with early stage exits
    (diagnostics instrumentation); returns None if the threshold is never hit.
    """
    ledger = ResourceLedger()
    pat = aligned_pattern(instance, seed)
    states = build_initialization(pat, instance.dims, seed)
    oracle = NoiseOracle(noise, instance.dims, ledger=ledger, stream_key=(1, pat.tau))
    nb = instance.n_blocks
    dirs = instance.signal_directions()

    def aligns() -> list[float]:
        return [float(np.vdot(st.normalized(), dirs[m])) for m, st in enumerate(states)]

    order_mode = sched.parity
    stages = list(sched.phase1_cycles) + [None]
    for cycle in stages:
        for m in sweep_order(nb, order_mode):
            if cycle is None:
                # Phase II: run each block until the measured level (or budget).
                p2 = sched.phase2[m]
                plan = StepPlan(eta=p2.eta, budget=p2.budget, exit_threshold=threshold)
            else:
                # Phase I stage: the ladder's own exit, capped at the measured level.
                st = cycle[m]
                plan = StepPlan(eta=st.eta, budget=st.budget,
                                exit_threshold=min(st.ub, threshold))
            states[m], _ = run_block_inner(states, m, plan, oracle, instance,
                                           trace_stride=10**9, instrument=True)
            if all(a >= threshold for a in aligns()):
                return ledger.samples_used + include_search_samples
    return None
