"""Planted rank-1 spiked-tensor instances and ground-truth evaluation metrics.

An instance of the model is an order-``k`` tensor ``T = snr * (v_1 x ... x v_k) + E``
with unit spike vectors ``v_n`` of (possibly unequal) dimensions ``d_n``.  The
estimation algorithm pairs consecutive spikes into matrix blocks; everything
here that depends on that pairing (block shapes, signal directions) lives in
this module so the rest of the package shares one convention:

* even order ``2k``:   blocks ``(v_1, v_2), (v_3, v_4), ...``
* odd order ``2k+1``:  a lone vector block ``(v_1,)`` followed by
  ``(v_2, v_3), (v_4, v_5), ...``
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

UNIT_TOL_INPUT = 1e-9
UNIT_TOL_INTERNAL = 1e-12


class ModelError(ValueError):
    """Invalid instance parameters or malformed estimates."""


def block_spike_indices(order: int) -> list[tuple[int, ...]]:
    """0-based spike indices per block, in block order (vector block first if odd)."""
    if order < 3:
        raise ModelError(f"tensor order must be >= 3, got {order}")
    if order % 2 == 0:
        return [(2 * m, 2 * m + 1) for m in range(order // 2)]
    return [(0,)] + [(2 * m + 1, 2 * m + 2) for m in range(order // 2)]


def block_shapes(dims: list[int]) -> list[tuple[int, ...]]:
    return [tuple(dims[i] for i in idx) for idx in block_spike_indices(len(dims))]


def correlation(u: np.ndarray, v: np.ndarray) -> float:
    """Inner product of ``u`` with the leading coordinates of the longer vector ``v``.

    Requires ``len(u) <= len(v)``; equals the ordinary inner product when the
    lengths match.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.ndim != 1 or v.ndim != 1:
        raise ModelError("correlation expects 1-d vectors")
    if u.shape[0] > v.shape[0]:
        raise ModelError(f"first vector longer than second ({u.shape[0]} > {v.shape[0]})")
    return float(np.dot(u, v[: u.shape[0]]))


def embed(u: np.ndarray, dim: int) -> np.ndarray:
    """Zero-pad ``u`` to length ``dim``."""
    u = np.asarray(u, dtype=float)
    if dim < u.shape[0]:
        raise ModelError("cannot embed into a smaller dimension")
    out = np.zeros(dim)
    out[: u.shape[0]] = u
    return out


def _unit(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ModelError("zero vector cannot be normalized")
    return v / n


@dataclass
class SignalInstance:
    """The hidden planted model: dims, SNR and true unit spikes.

    Used by the data simulator and by evaluation only; the estimation
    algorithm itself never reads the spikes except through sampled rewards.
    """

    order: int
    dims: list[int]
    snr: float
    spikes: list[np.ndarray]

    def __post_init__(self) -> None:
        if self.order < 3:
            raise ModelError(f"order must be >= 3, got {self.order}")
        if len(self.dims) != self.order or len(self.spikes) != self.order:
            raise ModelError("dims/spikes length must equal order")
        if self.snr < 0:
            raise ModelError(f"snr must be non-negative, got {self.snr}")
        for idx in block_spike_indices(self.order):
            if len(idx) == 2 and self.dims[idx[0]] > self.dims[idx[1]]:
                raise ModelError(
                    f"paired dims must be non-decreasing within a block, got "
                    f"{self.dims[idx[0]]} > {self.dims[idx[1]]}"
                )
        for n, (d, v) in enumerate(zip(self.dims, self.spikes)):
            if v.shape != (d,):
                raise ModelError(f"spike {n} has shape {v.shape}, expected ({d},)")
            if abs(float(np.linalg.norm(v)) - 1.0) > UNIT_TOL_INPUT:
                raise ModelError(f"spike {n} is not unit norm")

    @property
    def n_blocks(self) -> int:
        return (self.order + 1) // 2

    def block_indices(self) -> list[tuple[int, ...]]:
        return block_spike_indices(self.order)

    def signal_directions(self) -> list[np.ndarray]:
        """Per-block planted direction: outer product ``v_a v_b^T`` or the lone vector."""
        out = []
        for idx in self.block_indices():
            if len(idx) == 1:
                out.append(self.spikes[idx[0]].copy())
            else:
                out.append(np.outer(self.spikes[idx[0]], self.spikes[idx[1]]))
        return out

    def pair_correlations(self) -> list[float]:
        """Correlation of each matrix block's spike pair (vector block reports 0)."""
        out = []
        for idx in self.block_indices():
            if len(idx) == 1:
                out.append(0.0)
            else:
                out.append(correlation(self.spikes[idx[0]], self.spikes[idx[1]]))
        return out

    def snr_band(self) -> tuple[float, float]:
        """Heuristic admissible SNR band [1, prod d_n^(1/4)]; advisory only."""
        upper = float(np.prod([d ** 0.25 for d in self.dims]))
        return 1.0, upper


@dataclass
class RecoveryLoss:
    per_component: list[float]
    max_loss: float = field(init=False)

    def __post_init__(self) -> None:
        for x in self.per_component:
            if not (0.0 <= x <= 4.0 + 1e-12):
                raise ModelError(f"loss entry {x} outside [0, 4]")
        self.max_loss = max(self.per_component)


def make_instance(
    order: int,
    dims: list[int],
    snr: float,
    spike_mode: str = "random",
    seed: int = 0,
    rho: float | None = None,
) -> SignalInstance:
    """Construct a planted instance.

    ``spike_mode``:
      random             independent normalized Gaussian spikes
      symmetric          all spikes identical (requires equal dims)
      paired_correlation plant Cor = rho on each matrix block's spike pair
    """
    dims = [int(d) for d in dims]
    if len(dims) != order:
        raise ModelError("len(dims) must equal order")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(101,)))

    if spike_mode == "symmetric":
        if len(set(dims)) != 1:
            raise ModelError("symmetric mode requires all dims equal")
        v = _unit(rng.standard_normal(dims[0]))
        spikes = [v.copy() for _ in range(order)]
    elif spike_mode == "random":
        spikes = [_unit(rng.standard_normal(d)) for d in dims]
    elif spike_mode == "paired_correlation":
        if rho is None:
            raise ModelError("paired_correlation mode requires rho")
        if abs(rho) > 1.0:
            raise ModelError(f"|rho| must be <= 1, got {rho}")
        spikes: list[np.ndarray | None] = [None] * order
        for idx in block_spike_indices(order):
            if len(idx) == 1:
                spikes[idx[0]] = _unit(rng.standard_normal(dims[idx[0]]))
                continue
            a, b = idx
            u = _unit(rng.standard_normal(dims[a]))
            spikes[a] = u
            eu = embed(u, dims[b])
            c = float(np.sqrt(max(0.0, 1.0 - rho * rho)))
            if c == 0.0:
                spikes[b] = np.sign(rho) * eu
            else:
                w = rng.standard_normal(dims[b])
                w -= np.dot(w, eu) * eu
                spikes[b] = rho * eu + c * _unit(w)
    else:
        raise ModelError(f"unknown spike_mode {spike_mode!r}")

    return SignalInstance(order=order, dims=dims, snr=float(snr), spikes=spikes)


def recovery_loss(estimates: list[np.ndarray], instance: SignalInstance) -> RecoveryLoss:
    """Sign-invariant squared distance to each true spike: min(|v-v*|^2, |v+v*|^2)."""
    if len(estimates) != instance.order:
        raise ModelError("need one estimate per component")
    per = []
    for n, (v, vs) in enumerate(zip(estimates, instance.spikes)):
        v = np.asarray(v, dtype=float)
        if v.shape != vs.shape:
            raise ModelError(f"estimate {n} has shape {v.shape}, expected {vs.shape}")
        if abs(float(np.linalg.norm(v)) - 1.0) > UNIT_TOL_INPUT:
            raise ModelError(f"estimate {n} is not unit norm")
        per.append(min(float(np.sum((v - vs) ** 2)), float(np.sum((v + vs) ** 2))))
    return RecoveryLoss(per_component=per)


@dataclass
class InstanceSpec:
    """Replayable description of an instance; serializes to/from JSON."""

    order: int
    dims: list[int]
    snr: float
    spike_mode: str = "random"
    seed: int = 0
    rho: float | None = None

    def build(self) -> SignalInstance:
        return make_instance(self.order, self.dims, self.snr, self.spike_mode, self.seed, self.rho)

    def to_dict(self) -> dict:
        d = {
            "order": self.order,
            "dims": list(self.dims),
            "snr": self.snr,
            "spike_mode": self.spike_mode,
            "seed": self.seed,
        }
        if self.rho is not None:
            d["rho"] = self.rho
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceSpec":
        return cls(
            order=int(d["order"]),
            dims=[int(x) for x in d["dims"]],
            snr=float(d["snr"]),
            spike_mode=str(d.get("spike_mode", "random")),
            seed=int(d.get("seed", 0)),
            rho=(float(d["rho"]) if "rho" in d and d["rho"] is not None else None),
        )


def instance_to_json(instance: SignalInstance, spec: InstanceSpec | None = None,
                     include_spikes: bool = False) -> str:
    doc: dict = spec.to_dict() if spec is not None else {
        "order": instance.order, "dims": instance.dims, "snr": instance.snr,
    }
    if include_spikes:
        doc["spikes"] = [v.tolist() for v in instance.spikes]
    return json.dumps(doc, sort_keys=True)
