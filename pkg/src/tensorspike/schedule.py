"""Hyper-parameter schedules: strength constants, stage ladders, step sizes, budgets.

Two families are provided.  The oracle ("theorem") schedule reads the true
pair correlations of the instance; the adaptive schedules (Case I / Case II)
use only observable quantities plus an optionally searched reference parameter
``c3`` that estimates the geometric mean of the pair correlations.

All proportionality constants are explicit fields of :class:`ScheduleConstants`
and can be overridden per run.  ``paper_strict()`` restores the conservative
worst-case constants; the defaults are rescaled for desk-size instances (see
README) and additionally cap per-stage budgets.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy import stats

from .model import SignalInstance, block_shapes, block_spike_indices
from .noise_oracle import NoiseOracle, noise_bound_c1


class ScheduleError(ValueError):
    """Inconsistent schedule request (parity, order, or parameter range)."""


@dataclass
class ScheduleConstants:
    """Tunable leading constants for every schedule formula."""

    t1_const: float = 8.0            # Phase-I budget multiplier
    t2_const: float = 8.0            # Phase-II budget multiplier
    eta1_scale: float = 1.0          # multiplies the Phase-I step-size min{}
    eta2_scale: float = 1.0          # multiplies the Phase-II step-size min{}
    t1_cap: int | None = 4000        # per-stage budget cap (None = uncapped)
    t2_cap: int | None = 4000
    c2_scale: float = 1.0
    c1_scale: float = 1.0
    eps2: float | None = None        # Phase-II target gap; None -> 1/order
    eps3: float = 0.7                # Phase-III stability margin
    eta3_scale: float = 1.0          # multiplies the Phase-III step log^2(T)/(snr T)
    search_n1_const: float = 8.0     # reference-search sample multiplier
    t3_default: int = 2000
    use_paper_eta_prefactor: bool = False  # divide eta by c2 (and h*^2 in Phase I)

    @classmethod
    def paper_strict(cls) -> "ScheduleConstants":
        """Worst-case constants as stated by the analysis; desk-size runs become huge."""
        return cls(t1_const=32.0, t2_const=32.0, t1_cap=None, t2_cap=None,
                   use_paper_eta_prefactor=True)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScheduleConstants":
        base = cls()
        known = set(base.to_dict())
        unknown = set(d) - known
        if unknown:
            raise ScheduleError(f"unknown constants override(s): {sorted(unknown)}")
        kwargs = {k: d[k] for k in d}
        return cls(**kwargs)


@dataclass
class StrengthParams:
    gamma: list[float]
    c0: float
    c2: float
    zeta: list[float]
    h_star: int
    mode: str
    c1: float = 0.0
    c3: float | None = None

    def __post_init__(self) -> None:
        if any(g <= 0 for g in self.gamma):
            raise ScheduleError("every gamma must be positive")
        if self.h_star < 1:
            raise ScheduleError("h_star must be >= 1")


@dataclass
class PhaseStage:
    block: int
    h: int
    ladder: str
    eta: float
    budget: int
    lb: float
    ub: float
    eff_snr: float
    zeta: float


@dataclass
class Phase2Spec:
    block: int
    eta: float
    budget: int
    eff_snr: float


@dataclass
class Phase3Spec:
    block: int
    eta: float
    budget: int
    decay_length: int


@dataclass
class PhaseSchedule:
    order: int
    parity: str
    mode: str
    strength: StrengthParams
    phase1_cycles: list[list[PhaseStage]]   # cycle-major: phase1_cycles[h][block]
    phase2: list[Phase2Spec]
    phase3: list[Phase3Spec]
    eps2: float
    eps3: float

    def n_blocks(self) -> int:
        return len(self.phase2)

    def phase1_budget(self, block: int) -> int:
        return sum(c[block].budget for c in self.phase1_cycles)

    def phase12_total(self) -> int:
        return sum(self.phase1_budget(m) + self.phase2[m].budget
                   for m in range(self.n_blocks()))

    def validate(self) -> None:
        for cycle in self.phase1_cycles:
            for st in cycle:
                if not (st.eta > 0 and math.isfinite(st.eta)):
                    raise ScheduleError(f"bad eta in stage {st}")
                if st.budget < 1:
                    raise ScheduleError(f"bad budget in stage {st}")
                if not (st.ub > st.lb > 0):
                    raise ScheduleError(f"bad ladder bounds in stage {st}")
        for p2 in self.phase2:
            if not (p2.eta > 0 and p2.budget >= 1):
                raise ScheduleError(f"bad phase2 spec {p2}")
        for p3 in self.phase3:
            if not (p3.eta > 0 and p3.budget >= 2 and 0 < p3.decay_length <= p3.budget):
                raise ScheduleError(f"bad phase3 spec {p3}")

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "parity": self.parity,
            "mode": self.mode,
            "strength": {
                "gamma": self.strength.gamma,
                "c0": self.strength.c0,
                "c1": self.strength.c1,
                "c2": self.strength.c2,
                "c3": self.strength.c3,
                "zeta": self.strength.zeta,
                "h_star": self.strength.h_star,
                "mode": self.strength.mode,
            },
            "phase1": [[asdict(st) for st in cycle] for cycle in self.phase1_cycles],
            "phase2": [asdict(p) for p in self.phase2],
            "phase3": [asdict(p) for p in self.phase3],
            "eps2": self.eps2,
            "eps3": self.eps3,
        }


# ---------------------------------------------------------------------------
# strength constants


def compute_c0(dims: list[int], order: int, delta: float) -> float:
    """Initialization-overlap constant from Student-t quantiles.

    ``min_n  t^2 (1 + t/sqrt(d_n))^-2`` at the ``(1 + delta/order)/2`` quantile
    with ``d_n - 1`` degrees of freedom.
    """
    if delta <= 0 or delta / order >= 1:
        raise ScheduleError(f"delta={delta} out of range for order {order}")
    level = (1.0 + delta / order) / 2.0
    best = math.inf
    for d in dims:
        if d < 2:
            raise ScheduleError("every dimension must be >= 2")
        t = float(stats.t.ppf(level, d - 1))
        best = min(best, t * t / (1.0 + t / math.sqrt(d)) ** 2)
    return best


def _pair_products(dims: list[int], order: int, d0: float) -> list[float]:
    """Per-block dimension products; the lone vector block uses d0 * d1."""
    out = []
    for idx in block_spike_indices(order):
        if len(idx) == 1:
            out.append(d0 * dims[idx[0]])
        else:
            out.append(float(dims[idx[0]] * dims[idx[1]]))
    return out


def _eta_denoms(dims: list[int], order: int) -> list[float]:
    """Step-size dimension denominators: d_a*d_b for matrix blocks, d_1 for the vector."""
    out = []
    for idx in block_spike_indices(order):
        if len(idx) == 1:
            out.append(float(dims[idx[0]]))
        else:
            out.append(float(dims[idx[0]] * dims[idx[1]]))
    return out


def compute_gamma(instance: SignalInstance, c0: float, parity: str | None = None) -> list[float]:
    """Per-block effective initial strength from true pair correlations.

    The vector block (odd order) uses the zero-correlation convention with the
    pseudo-dimension ``d0 = sqrt(c0)``.
    """
    if c0 <= 0:
        raise ScheduleError("c0 must be positive")
    expected = "odd" if instance.order % 2 else "even"
    if parity is not None and parity != expected:
        raise ScheduleError(f"parity {parity!r} does not match order {instance.order}")
    prods = _pair_products(instance.dims, instance.order, d0=math.sqrt(c0))
    corrs = instance.pair_correlations()
    return [abs(c) / p ** 0.25 + c0 / p ** 0.5 for c, p in zip(corrs, prods)]


def _c2_value(order: int, dims: list[int], delta: float, constants: ScheduleConstants) -> float:
    return constants.c2_scale * order * math.log(order * max(dims) / delta)


def _phase3_specs(n_blocks: int, snr: float, t3: int,
                  eta3_scale: float = 1.0) -> list[Phase3Spec]:
    if t3 < 2:
        raise ScheduleError("t3 must be >= 2")
    if snr <= 0:
        raise ScheduleError("phase-III step size needs a positive snr")
    eta3 = eta3_scale * math.log(t3) ** 2 / (snr * t3)
    decay = max(1, int(t3 / math.log(t3)))
    return [Phase3Spec(block=m, eta=eta3, budget=t3, decay_length=decay)
            for m in range(n_blocks)]


def _cap(t: float, cap: int | None) -> int:
    t = int(math.ceil(t))
    if cap is not None:
        t = min(t, int(cap))
    return max(1, t)


def _record_c1(sched: PhaseSchedule, dims: list[int], delta: float,
               constants: ScheduleConstants) -> None:
    total = max(1, sched.phase12_total() + sum(p.budget for p in sched.phase3))
    log_dp = math.log(min(0.5, delta)) - 8.0 * math.log(
        sched.n_blocks() * max(dims) * total
    )
    # noise_bound_c1 with delta' = delta / (nb * d_max * T)^8, evaluated in log space
    sizes = sum(int(np.prod(s)) for s in block_shapes(dims))
    inner = math.log(total * sizes + 2 * total * sched.n_blocks()) - log_dp
    sched.strength.c1 = constants.c1_scale * 4.0 * inner


# ---------------------------------------------------------------------------
# oracle (theorem) schedule


def theorem_schedule(instance: SignalInstance, delta: float, t3: int,
                     constants: ScheduleConstants | None = None) -> PhaseSchedule:
    """Full three-phase schedule from the true pair correlations."""
    constants = constants or ScheduleConstants()
    order = instance.order
    k_half = order // 2
    if k_half < 2:
        raise ScheduleError(f"schedules require order >= 4, got {order}")
    denom = k_half - 1
    parity = "odd" if order % 2 else "even"
    dims = instance.dims
    nb = instance.n_blocks
    snr = instance.snr
    if snr <= 0:
        raise ScheduleError("theorem schedule needs a positive snr")

    c0 = compute_c0(dims, order, delta)
    gamma = compute_gamma(instance, c0)
    c2 = _c2_value(order, dims, delta, constants)
    h_star = max(1, math.ceil(math.log(4.0) + max(math.log(1.0 / g) for g in gamma) / denom))
    zeta = [math.exp((math.log(4.0) + math.log(1.0 / g) / denom) / h_star) for g in gamma]
    denoms = _eta_denoms(dims, order)

    eta_pref = constants.eta1_scale / (c2 if constants.use_paper_eta_prefactor else 1.0)
    cycles: list[list[PhaseStage]] = []
    for h in range(1, h_star + 1):
        cycle = []
        for m in range(nb):
            lam = snr * float(np.prod([zeta[i] ** (h - 1) * gamma[i] / 4.0
                                       for i in range(nb) if i != m]))
            lb = zeta[m] ** (h - 1) * gamma[m] / 4.0
            ub = zeta[m] ** h * gamma[m] / 2.0
            eta = eta_pref * min(lam / (zeta[m] ** h * gamma[m] * denoms[m]),
                                 zeta[m] ** (h - 1) * gamma[m] / (lam + 1.0))
            budget = _cap(constants.t1_const * zeta[m] ** h * gamma[m] / (eta * lam),
                          constants.t1_cap)
            cycle.append(PhaseStage(block=m, h=h, ladder="h", eta=eta, budget=budget,
                                    lb=lb, ub=ub, eff_snr=lam, zeta=zeta[m]))
        cycles.append(cycle)

    e2 = 1.0 - 1.0 / denom if denom > 1 else 0.0
    eta2_pref = constants.eta2_scale / (c2 if constants.use_paper_eta_prefactor else 1.0)
    phase2 = []
    for m in range(nb):
        lam2 = snr * (1.0 - 1.0 / k_half) ** (nb - (m + 1)) * float(
            np.prod([gamma[i] ** e2 for i in range(m)]) if m else 1.0)
        eta2 = eta2_pref * min(lam2 / (order * denoms[m]), 1.0 / (lam2 + 1.0))
        budget = _cap(constants.t2_const / (eta2 * lam2), constants.t2_cap)
        phase2.append(Phase2Spec(block=m, eta=eta2, budget=budget, eff_snr=lam2))

    sched = PhaseSchedule(
        order=order, parity=parity, mode="theorem",
        strength=StrengthParams(gamma=gamma, c0=c0, c2=c2, zeta=zeta,
                                h_star=h_star, mode="theorem"),
        phase1_cycles=cycles, phase2=phase2,
        phase3=_phase3_specs(nb, snr, t3, constants.eta3_scale),
        eps2=constants.eps2 if constants.eps2 is not None else 1.0 / order,
        eps3=constants.eps3,
    )
    _record_c1(sched, dims, delta, constants)
    sched.validate()
    return sched


# ---------------------------------------------------------------------------
# adaptive schedules (observable quantities only)


def c3_admissible_range(dims: list[int]) -> tuple[float, float]:
    order = len(dims)
    gm = float(np.prod(dims)) ** (1.0 / order)
    return gm ** (-0.5 + 2.0 / order), 1.0


def adaptive_schedule(
    case: str,
    dims: list[int],
    order: int,
    lambda_hint: float,
    delta: float,
    c3: float | None = None,
    t3: int | None = None,
    constants: ScheduleConstants | None = None,
) -> PhaseSchedule:
    """Schedule from observable quantities; ``case1`` needs the searched c3."""
    constants = constants or ScheduleConstants()
    dims = [int(d) for d in dims]
    if len(dims) != order:
        raise ScheduleError("len(dims) must equal order")
    k_half = order // 2
    if k_half < 2:
        raise ScheduleError(f"schedules require order >= 4, got {order}")
    if lambda_hint <= 0:
        raise ScheduleError("lambda_hint must be positive")
    parity = "odd" if order % 2 else "even"
    nb = (order + 1) // 2
    t3 = t3 if t3 is not None else constants.t3_default
    c0 = compute_c0(dims, order, delta)
    c2 = _c2_value(order, dims, delta, constants)
    denoms = _eta_denoms(dims, order)
    kk = nb - 1  # exponent count: k-1 (even, nb=k) / k (odd, nb=k+1)

    if case == "case1":
        if c3 is None:
            raise ScheduleError("case1 requires c3")
        if not (0.0 < c3 <= 1.0 + 1e-9):
            raise ScheduleError(f"c3={c3} must lie in (0, 1]")
        lo, _ = c3_admissible_range(dims)
        if c3 < lo - 1e-9:
            warnings.warn(f"c3={c3} below the analyzed band [{lo:.4g}, 1]; "
                          "schedule built anyway", RuntimeWarning)
        prods = _pair_products(dims, order, d0=float(dims[0]))
        gtil = [c3 / p ** 0.25 for p in prods]
        h1 = max(1, math.ceil(math.log(4.0) + kk * math.log(1.0 / c3)))
        h2 = max(1, math.ceil(math.log(1.0 / c3) + math.log(prods[-1]) / (4.0 * kk)))
        zeta2 = [math.exp((math.log(1.0 / c3) + math.log(p) / (4.0 * kk)) / h2)
                 for p in prods]
        pref1 = constants.eta1_scale / (c2 * h1 * h1 if constants.use_paper_eta_prefactor else 1.0)
        pref2 = constants.eta1_scale / (c2 * h2 * h2 if constants.use_paper_eta_prefactor else 1.0)
        cycles = []
        base = c3 ** nb / (4.0 ** kk)
        for h in range(1, h1 + 1):
            cycle = []
            for m in range(nb):
                lam = lambda_hint * base * float(
                    np.prod([prods[i] ** -0.25 for i in range(nb) if i != m]))
                ub = math.e ** h * c3 ** nb * prods[m] ** -0.25 / 4.0
                lb = ub / (2.0 * math.e)
                eta = pref1 * min(lam / (ub * denoms[m]), ub * lam, lb / (lam + 1.0))
                budget = _cap(constants.t1_const * ub / (eta * lam), constants.t1_cap)
                cycle.append(PhaseStage(block=m, h=h, ladder="h1", eta=eta, budget=budget,
                                        lb=lb, ub=ub, eff_snr=lam, zeta=math.e))
            cycles.append(cycle)
        for h in range(1, h2 + 1):
            cycle = []
            for m in range(nb):
                lam = lambda_hint * c3 ** kk * float(
                    np.prod([zeta2[i] ** (h - 1) * prods[i] ** -0.25
                             for i in range(nb) if i != m]))
                ub = c3 * zeta2[m] ** h * prods[m] ** -0.25
                lb = ub / (2.0 * zeta2[m])
                eta = pref2 * min(lam / (ub * denoms[m]), lb / (lam + 1.0))
                budget = _cap(constants.t1_const * ub / (eta * lam), constants.t1_cap)
                cycle.append(PhaseStage(block=m, h=h, ladder="h2", eta=eta, budget=budget,
                                        lb=lb, ub=ub, eff_snr=lam, zeta=zeta2[m]))
            cycles.append(cycle)
        p2_exp = -0.25 + 1.0 / (4.0 * kk)
        zeta_rec, h_rec, mode, c3_rec = zeta2, h1 + h2, "case1", c3
    elif case == "case2":
        d0 = 1.0 if parity == "odd" else None
        prods = _pair_products(dims, order, d0=d0 if d0 is not None else 1.0)
        gtil = [c0 / p ** 0.5 for p in prods]
        zeta = []
        if parity == "odd":
            gtil[0] = math.sqrt(c0) / math.sqrt(dims[0])
        h_star = max(1, math.ceil(math.log(4.0 / c0) + math.log(prods[-1]) / (2.0 * kk)))
        for m in range(nb):
            if parity == "odd" and m == 0:
                zeta.append(math.exp((math.log(2.0 / math.sqrt(c0))
                                      + math.log(dims[0]) / (2.0 * kk)) / h_star))
            else:
                zeta.append(math.exp((math.log(4.0 / c0)
                                      + math.log(prods[m]) / (2.0 * kk)) / h_star))
        pref = constants.eta1_scale / (c2 * h_star * h_star
                                       if constants.use_paper_eta_prefactor else 1.0)
        cycles = []
        for h in range(1, h_star + 1):
            cycle = []
            for m in range(nb):
                lam = lambda_hint / 4.0 ** kk * float(
                    np.prod([zeta[i] ** (h - 1) * gtil[i] for i in range(nb) if i != m]))
                ub = zeta[m] ** h * gtil[m] / 4.0
                lb = ub / (2.0 * zeta[m])
                eta = pref * min(lam / (ub * denoms[m]), lb / (lam + 1.0))
                budget = _cap(constants.t1_const * ub / (eta * lam), constants.t1_cap)
                cycle.append(PhaseStage(block=m, h=h, ladder="h", eta=eta, budget=budget,
                                        lb=lb, ub=ub, eff_snr=lam, zeta=zeta[m]))
            cycles.append(cycle)
        p2_exp = -0.5 + 1.0 / (2.0 * kk)
        zeta_rec, h_rec, mode, c3_rec = zeta, h_star, "case2", None
    else:
        raise ScheduleError(f"unknown adaptive case {case!r}")

    eta2_pref = constants.eta2_scale / (c2 if constants.use_paper_eta_prefactor else 1.0)
    phase2 = []
    for m in range(nb):
        lam2 = lambda_hint * (1.0 - 1.0 / nb) ** (nb - (m + 1)) * float(
            np.prod([prods[i] ** p2_exp for i in range(m)]) if m else 1.0)
        eta2 = eta2_pref * min(lam2 / (order * denoms[m]), 1.0 / (lam2 + 1.0))
        budget = _cap(constants.t2_const / (eta2 * lam2), constants.t2_cap)
        phase2.append(Phase2Spec(block=m, eta=eta2, budget=budget, eff_snr=lam2))

    sched = PhaseSchedule(
        order=order, parity=parity, mode=mode,
        strength=StrengthParams(gamma=gtil, c0=c0, c2=c2, zeta=zeta_rec,
                                h_star=h_rec, mode=mode, c3=c3_rec),
        phase1_cycles=cycles, phase2=phase2,
        phase3=_phase3_specs(nb, lambda_hint, t3, constants.eta3_scale),
        eps2=constants.eps2 if constants.eps2 is not None else 1.0 / order,
        eps3=constants.eps3,
    )
    _record_c1(sched, dims, delta, constants)
    sched.validate()
    return sched


# ---------------------------------------------------------------------------
# reference parameter search


@dataclass
class SearchRound:
    tau: int
    n1: int
    abs_mean: float
    threshold: float
    accepted: bool


@dataclass
class SearchResult:
    c3: float | None
    rounds: list[SearchRound] = field(default_factory=list)
    samples_used: int = 0


def _identity_factors(instance: SignalInstance) -> list[np.ndarray]:
    """Per matrix block the flat embedding probe [I 0]; the vector block is skipped."""
    out = []
    for idx, shape in zip(instance.block_indices(), block_shapes(instance.dims)):
        if len(idx) == 1:
            out.append(None)
        else:
            probe = np.zeros(shape)
            probe[:, : shape[0]][np.arange(shape[0]), np.arange(shape[0])] = 1.0
            out.append(probe)
    return out


def reference_search(
    oracle: NoiseOracle,
    instance: SignalInstance,
    kappa: float,
    delta: float,
    w0: np.ndarray | None = None,
    constants: ScheduleConstants | None = None,
) -> SearchResult:
    """Search the reference correlation parameter by thresholded streaming scores.

    Returns ``c3 = kappa**tau`` for the first accepted round, or ``None`` when
    every round up to the horizon rejects (the caller then uses Case II).
    """
    constants = constants or ScheduleConstants()
    if not (0.0 < kappa < 1.0):
        raise ScheduleError(f"kappa must lie in (0, 1), got {kappa}")
    order = instance.order
    parity = "odd" if order % 2 else "even"
    nb = instance.n_blocks
    factors = _identity_factors(instance)
    if parity == "odd":
        if w0 is None:
            raise ScheduleError("odd-order search needs the initialization vector w0")
        factors[0] = np.asarray(w0, dtype=float)
        exp_thresh = nb           # k + 1
        exp_n1 = 2 * nb           # 2k + 2
        horizon_coeff = 0.5 - 3.0 / (2.0 * nb)
    else:
        exp_thresh = nb           # k
        exp_n1 = 2 * nb           # 2k
        horizon_coeff = 0.5 - 1.0 / nb

    dims_rows = float(np.prod([f.shape[0] if f.ndim == 2 else f.shape[0]
                               for f in factors]))
    gm_log = math.log(float(np.prod(instance.dims))) / order
    t_max = max(0, math.ceil(horizon_coeff * gm_log / math.log(1.0 / kappa)))

    dirs = instance.signal_directions()
    pop = instance.snr * float(np.prod([float(np.vdot(f, d))
                                        for f, d in zip(factors, dirs)]))
    probe_block = nb - 1
    fixed = [None if i == probe_block else f for i, f in enumerate(factors)]
    probe = factors[probe_block]

    result = SearchResult(c3=None)
    for tau in range(t_max + 1):
        n1 = max(1, math.ceil(constants.search_n1_const * kappa ** (-exp_n1 * tau) * dims_rows))
        noise = oracle.probe_score_batch(probe_block, fixed, probe, n1)
        mean = abs(pop + float(np.mean(noise)))
        threshold = kappa ** (exp_thresh * tau)
        accepted = mean >= threshold
        result.rounds.append(SearchRound(tau=tau, n1=n1, abs_mean=mean,
                                         threshold=threshold, accepted=accepted))
        result.samples_used += n1
        if accepted:
            result.c3 = kappa ** tau
            break
    return result
