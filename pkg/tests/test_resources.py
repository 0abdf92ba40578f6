import numpy as np
import pytest

from tensorspike.model import InstanceSpec
from tensorspike.noise_oracle import NoiseConfig
from tensorspike.pipeline import RunConfig, run_mpsnsga
from tensorspike.resources import (PipelineSnapshot, ResourceLedger,
                                   SampleBudgetExceeded, audit_state_size,
                                   charge_sample)
from tensorspike.schedule import ScheduleConstants


def test_charge_zero_is_noop():
    ledger = ResourceLedger()
    charge_sample(ledger, 0)
    assert ledger.samples_used == 0


def test_charge_accumulates_and_caps():
    ledger = ResourceLedger(sample_cap=10)
    charge_sample(ledger, 6)
    charge_sample(ledger, 4)
    assert ledger.samples_used == 10
    with pytest.raises(SampleBudgetExceeded):
        charge_sample(ledger, 1)


def test_ledger_merge_additive():
    a = ResourceLedger(samples_used=5)
    b = ResourceLedger(samples_used=7)
    a.merge(b)
    assert a.samples_used == 12
    assert a.passes == 1


def test_audit_empty_snapshot():
    snap = PipelineSnapshot()
    assert audit_state_size(snap) == (0, 0)


def test_audit_counts_allocations():
    snap = PipelineSnapshot()
    # 16 patterns x 2 blocks x 8x8 scalars
    for tau in range(16):
        for m in range(2):
            snap.add(f"p{tau}b{m}", 64, iterate_budget=10)
    current, paper = audit_state_size(snap)
    assert current == 16 * 2 * 64
    assert current <= 4 * 2 * 16 * 64  # spec headroom bound with C <= 4
    assert paper == 16 * 2 * 64 * 11


def test_audit_phase3_only_bound():
    snap = PipelineSnapshot()
    for m in range(2):
        snap.add(f"b{m}_start", 64, 0)
        snap.add(f"b{m}_plus", 64, 5)
        snap.add(f"b{m}_minus", 64, 5)
    current, _ = audit_state_size(snap)
    assert current <= 4 * 2 * 64


def _run_report(d, seed=0):
    cfg = RunConfig(
        instance=InstanceSpec(order=4, dims=[d] * 4, snr=2.0,
                              spike_mode="symmetric", seed=seed),
        noise=NoiseConfig(kind="zero", backend="projected", seed=0),
        schedule_mode="theorem",
        delta=0.2,
        t3=50,
        constants=ScheduleConstants(t1_cap=20, t2_cap=20),
        seed=seed,
        trace_stride=10 ** 9,
    )
    return run_mpsnsga(cfg)


def test_memory_exponent_fits_d_squared():
    ds = [4, 8, 16]
    sizes = [_run_report(d).resources["state_scalars_current"] for d in ds]
    coeffs = [s / d ** 2 for s, d in zip(sizes, ds)]
    a = float(np.mean(coeffs))
    for s, d in zip(sizes, ds):
        assert abs(s - a * d ** 2) / s <= 0.05


def test_k_equals_one_and_nks_reported():
    rep = _run_report(4)
    assert rep.resources["passes"] == 1
    assert rep.resources["NKS"] == (rep.resources["samples_used"]
                                    * rep.resources["state_bits"])
    assert rep.resources["lambda2_NKS"] == pytest.approx(
        4.0 * rep.resources["NKS"])


def test_paper_convention_exceeds_current():
    rep = _run_report(4)
    assert rep.resources["state_scalars_paper"] > rep.resources["state_scalars_current"]
