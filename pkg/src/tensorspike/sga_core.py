"""Normalized stochastic gradient ascent kernels and sequential block sweeps.

The scaled objective ``|W| * R(W)`` is 2-homogeneous in the block variable, so
its gradient ``G = (R/|W|) W + |W| grad R`` scales linearly with ``W`` and the
normalized iterate evolves scale-free.  One fresh sample is consumed per step;
the reward value is recovered from the gradient query through 1-homogeneity
(``R = <grad R, W>``), so each step costs exactly one oracle query.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import SignalInstance
from .noise_oracle import NoiseOracle


class NumericalAbort(RuntimeError):
    """Non-finite value encountered during a gradient step; the run is invalid."""


@dataclass
class BlockState:
    block_index: int
    W: np.ndarray
    frob_norm: float = -1.0
    alignment: float | None = None

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=float)
        if self.frob_norm < 0:
            self.frob_norm = float(np.linalg.norm(self.W))

    def normalized(self) -> np.ndarray:
        if self.frob_norm <= 0:
            raise NumericalAbort(f"block {self.block_index} has zero norm")
        return self.W / self.frob_norm


@dataclass
class StepPlan:
    eta: float
    budget: int
    decay_length: int | None = None  # halve eta every this many steps
    reward_sign: str = "plus"        # "plus" | "minus"
    exit_threshold: float | None = None  # diagnostics-mode early stage exit on alpha

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise ValueError("step size must be positive")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.decay_length is not None and not (0 < self.decay_length <= max(self.budget, 1)):
            raise ValueError("decay_length must lie in (0, budget]")
        if self.reward_sign not in ("plus", "minus"):
            raise ValueError("reward_sign must be 'plus' or 'minus'")


def scaled_gradient(state: BlockState, reward_value: float, reward_gradient: np.ndarray) -> np.ndarray:
    """Gradient of the norm-scaled objective: (R/|W|) W + |W| grad R."""
    if state.frob_norm <= 0:
        raise NumericalAbort(f"block {state.block_index} has zero norm")
    return (reward_value / state.frob_norm) * state.W + state.frob_norm * reward_gradient


def normalized_step(state: BlockState, plan: StepPlan, reward_value: float,
                    reward_gradient: np.ndarray) -> BlockState:
    """One ascent step W <- W + eta * G."""
    g = scaled_gradient(state, reward_value, reward_gradient)
    w_next = state.W + plan.eta * g
    if not np.all(np.isfinite(w_next)):
        raise NumericalAbort(f"non-finite update on block {state.block_index}")
    return BlockState(block_index=state.block_index, W=w_next)


def frozen_signal_coefficient(states: list[BlockState], m: int,
                              instance: SignalInstance) -> float:
    """snr times the product of the frozen blocks' normalized signal alignments."""
    dirs = instance.signal_directions()
    s = instance.snr
    for i, st in enumerate(states):
        if i == m:
            continue
        nrm = float(np.linalg.norm(st.W))
        if nrm <= 0:
            raise NumericalAbort(f"frozen block {i} has zero norm")
        s *= float(np.vdot(st.W, dirs[i])) / nrm
    return s


def run_block_inner(
    states: list[BlockState],
    m: int,
    plan: StepPlan,
    oracle: NoiseOracle,
    instance: SignalInstance,
    trace_stride: int = 32,
    instrument: bool = False,
    phase: str = "",
) -> tuple[BlockState, list[tuple]]:
    """Run ``plan.budget`` normalized steps on block ``m`` with the others frozen.

    Frozen blocks enter through their normalized values.  Returns the
    finalized (unit Frobenius norm) block state and trace rows
    ``(phase, block, step, eta, alpha, frob_norm, reward_value)``; alpha is NaN
    unless ``instrument`` is set.
    """
    dirs = instance.signal_directions()
    p_dir = dirs[m]
    s = frozen_signal_coefficient(states, m, instance)
    sgn = -1.0 if plan.reward_sign == "minus" else 1.0
    factors = [None if i == m else st.normalized() for i, st in enumerate(states)]
    stream = oracle.block_stream(m, factors)

    w = states[m].W.astype(float).copy()
    eta = plan.eta
    decay = plan.decay_length
    stride = max(1, int(trace_stride))
    want_alpha = instrument or plan.exit_threshold is not None
    trace: list[tuple] = []

    for t in range(plan.budget):
        if decay is not None and t > 0 and t % decay == 0:
            eta *= 0.5
        e = stream.draw()
        nrm = float(np.linalg.norm(w))
        if not math.isfinite(nrm) or nrm <= 0.0:
            raise NumericalAbort(f"block {m} degenerated at step {t} (norm={nrm})")
        pw = float(np.vdot(p_dir, w))
        r = s * pw
        if e is not None:
            r += float(np.vdot(e, w))
        r *= sgn
        # W <- (1 + eta R/|W|) W + eta |W| (signed gradient)
        w *= 1.0 + eta * r / nrm
        w += (eta * nrm * s * sgn) * p_dir
        if e is not None:
            w += (eta * nrm * sgn) * e
        if t % stride == 0:
            alpha = pw / nrm if want_alpha else float("nan")
            trace.append((phase, m, t, eta, alpha, nrm, r))
        if plan.exit_threshold is not None:
            nrm2 = float(np.linalg.norm(w))
            if nrm2 > 0 and float(np.vdot(p_dir, w)) / nrm2 >= plan.exit_threshold:
                break

    nrm = float(np.linalg.norm(w))
    if not math.isfinite(nrm) or nrm <= 0.0:
        raise NumericalAbort(f"block {m} non-finite at finalization")
    w /= nrm
    alpha = float(np.vdot(p_dir, w)) if want_alpha else float("nan")
    trace.append((phase, m, plan.budget, eta, alpha if want_alpha else float("nan"), 1.0, float("nan")))
    final = BlockState(block_index=m, W=w, frob_norm=1.0,
                       alignment=alpha if want_alpha else None)
    return final, trace


def sweep_order(n_blocks: int, order_mode: str) -> list[int]:
    if order_mode == "even":
        return list(range(n_blocks - 1, -1, -1))
    if order_mode == "odd":
        return list(range(n_blocks - 1, 0, -1)) + [0]
    raise ValueError(f"unknown order_mode {order_mode!r}")


def sequential_sweep(
    states: list[BlockState],
    plans: list[StepPlan],
    order_mode: str,
    oracle: NoiseOracle,
    instance: SignalInstance,
    trace_stride: int = 32,
    instrument: bool = False,
    phase: str = "",
) -> tuple[list[BlockState], list[tuple]]:
    """Update every block once, in descending index order (vector block last when odd).

    Each block sees already-updated later blocks and not-yet-updated earlier
    blocks, all at their normalized values.
    """
    expected = "odd" if instance.order % 2 else "even"
    if order_mode != expected:
        raise ValueError(f"order_mode {order_mode!r} does not match order {instance.order}")
    if len(plans) != len(states):
        raise ValueError("need one plan per block")
    states = list(states)
    trace: list[tuple] = []
    for m in sweep_order(len(states), order_mode):
        states[m], rows = run_block_inner(
            states, m, plans[m], oracle, instance,
            trace_stride=trace_stride, instrument=instrument, phase=phase,
        )
        trace.extend(rows)
    return states, trace
