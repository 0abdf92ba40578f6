"""Per-sample noise projections for streaming gradient queries.

Each fresh sample's noise tensor E enters the algorithm only through
contractions against the current factor tensors.  Two backends supply those
contractions:

* ``explicit``  materializes E (small instances only) and contracts literally;
* ``projected`` simulates the exact joint Gaussian law of the requested
  projections without ever materializing E.  With unit-Frobenius fixed
  factors, the block-projected noise matrix of an i.i.d. standard Gaussian
  tensor is itself an i.i.d. standard Gaussian matrix, which is what makes the
  low-memory simulation faithful.

Freshness is enforced per block: sample indices must be strictly increasing,
so no sample is consumed twice by the same block.
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass, field

import numpy as np

from .model import SignalInstance, block_shapes, block_spike_indices
from .resources import ResourceLedger, charge_sample

FIXED_FACTOR_TOL = 1e-9

_AXIS_LETTERS = string.ascii_lowercase


class FreshnessError(RuntimeError):
    """A sample index was consumed twice (or out of order) by one block."""


class BackendError(ValueError):
    """Unsupported backend/kind combination or explicit tensor over the size cap."""


@dataclass
class NoiseConfig:
    kind: str = "gaussian_iid"  # gaussian_iid | bounded_sphere | zero
    seed: int = 0
    backend: str = "projected"  # projected | explicit
    explicit_cap: int = 10**6
    scale: float = 1.0          # noise amplitude multiplier (1.0 = unit model)
    clip: float | None = None   # optional entrywise clip of block projections
    fault_nan_at: int | None = None  # test hook: inject NaN at this sample index

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian_iid", "bounded_sphere", "zero"):
            raise BackendError(f"unknown noise kind {self.kind!r}")
        if self.backend not in ("projected", "explicit"):
            raise BackendError(f"unknown backend {self.backend!r}")
        if self.kind == "bounded_sphere" and self.backend != "explicit":
            raise BackendError("bounded_sphere noise requires the explicit backend")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "seed": self.seed, "backend": self.backend,
             "explicit_cap": self.explicit_cap, "scale": self.scale}
        if self.clip is not None:
            d["clip"] = self.clip
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseConfig":
        return cls(
            kind=str(d.get("kind", "gaussian_iid")),
            seed=int(d.get("seed", 0)),
            backend=str(d.get("backend", "projected")),
            explicit_cap=int(d.get("explicit_cap", 10**6)),
            scale=float(d.get("scale", 1.0)),
            clip=(float(d["clip"]) if d.get("clip") is not None else None),
        )


@dataclass
class ProjectionRequest:
    """One block's projection query: frozen factors for the other blocks plus probes."""

    block_index: int
    fixed_factors: list[np.ndarray | None]
    probe_matrices: list[np.ndarray] = field(default_factory=list)

    def validate(self, shapes: list[tuple[int, ...]]) -> None:
        m = self.block_index
        if not (0 <= m < len(shapes)):
            raise ValueError(f"block index {m} out of range")
        if len(self.fixed_factors) != len(shapes):
            raise ValueError("need one fixed-factor slot per block")
        for i, f in enumerate(self.fixed_factors):
            if i == m:
                continue
            if f is None:
                raise ValueError(f"missing fixed factor for block {i}")
            if f.shape != shapes[i]:
                raise ValueError(f"fixed factor {i} has shape {f.shape}, expected {shapes[i]}")
            if abs(float(np.linalg.norm(f)) - 1.0) > FIXED_FACTOR_TOL:
                raise ValueError(f"fixed factor {i} is not unit Frobenius norm")
        if not self.probe_matrices:
            raise ValueError("probe list must be non-empty")
        for q in self.probe_matrices:
            if q.shape != shapes[m]:
                raise ValueError(f"probe has shape {q.shape}, expected {shapes[m]}")


def noise_bound_c1(total_samples: int, dims: list[int], order: int, delta_prime: float) -> float:
    """High-probability envelope constant for block-projected noise.

    ``4 * log((T * sum_of_block_sizes + 2*T*n_blocks) / delta')`` with the block
    sizes taken from the pairing convention (a lone vector block contributes
    its dimension).
    """
    if total_samples < 1:
        raise ValueError("total_samples must be >= 1")
    if not (0.0 < delta_prime < 1.0):
        raise ValueError("delta_prime must lie in (0, 1)")
    sizes = [int(np.prod(s)) for s in block_shapes(list(dims))]
    n_blocks = len(sizes)
    return 4.0 * math.log((total_samples * sum(sizes) + 2 * total_samples * n_blocks) / delta_prime)


def _contract_subscripts(order: int, block: int, batch: bool = False) -> tuple[str, list[tuple[int, ...]]]:
    """einsum spec contracting all blocks but ``block``; returns (subscripts, factor axes)."""
    idxs = block_spike_indices(order)
    letters = _AXIS_LETTERS[:order]
    prefix = "z" if batch else ""
    operands = []
    factor_axes = []
    for i, ax in enumerate(idxs):
        if i == block:
            continue
        operands.append("".join(letters[a] for a in ax))
        factor_axes.append(ax)
    out = "".join(letters[a] for a in idxs[block])
    sub = prefix + letters + "," + ",".join(operands) + "->" + prefix + out
    return sub, factor_axes


class NoiseOracle:
    """Stateful per-run noise source with freshness tracking and sample accounting.

    One oracle per run (or per independent pattern); internally sequential.
    ``stream_key`` separates independent streams derived from the same base seed.
    """

    def __init__(
        self,
        config: NoiseConfig,
        dims: list[int],
        ledger: ResourceLedger | None = None,
        stream_key: tuple[int, ...] = (),
    ) -> None:
        self.config = config
        self.dims = [int(d) for d in dims]
        self.order = len(self.dims)
        self.shapes = block_shapes(self.dims)
        self.ledger = ledger
        self.stream_key = tuple(int(k) for k in stream_key)
        self._tensor_size = int(np.prod(self.dims))
        if config.backend == "explicit" and self._tensor_size > config.explicit_cap:
            raise BackendError(
                f"explicit backend needs prod(dims)={self._tensor_size} <= cap {config.explicit_cap}"
            )
        self._counter = 0
        self._last_index: dict[int, int] = {}
        self._gens: dict[int, np.random.Generator] = {}

    # -- indexing ----------------------------------------------------------

    def _check_fresh(self, block: int, sample_index: int) -> None:
        last = self._last_index.get(block, -1)
        if sample_index <= last:
            raise FreshnessError(
                f"sample {sample_index} already consumed for block {block} (last {last})"
            )
        self._last_index[block] = sample_index

    def take_index(self, block: int) -> int:
        idx = self._counter
        self._counter += 1
        self._check_fresh(block, idx)
        if self.ledger is not None:
            charge_sample(self.ledger, 1)
        return idx

    def _stream(self, block: int) -> np.random.Generator:
        gen = self._gens.get(block)
        if gen is None:
            ss = np.random.SeedSequence(entropy=self.config.seed,
                                        spawn_key=self.stream_key + (7, block))
            gen = np.random.default_rng(ss)
            self._gens[block] = gen
        return gen

    # -- explicit materialization -----------------------------------------

    def _materialize(self, sample_index: int, n: int = 1) -> np.ndarray:
        """Explicit noise tensors for samples [sample_index, sample_index + n)."""
        if self.config.backend != "explicit":
            raise BackendError("materialization requires the explicit backend")
        ss = np.random.SeedSequence(entropy=self.config.seed,
                                    spawn_key=self.stream_key + (11, int(sample_index)))
        rng = np.random.default_rng(ss)
        if self.config.kind == "zero":
            return np.zeros((n, *self.dims))
        e = rng.standard_normal((n, self._tensor_size))
        if self.config.kind == "bounded_sphere":
            norms = np.linalg.norm(e, axis=1, keepdims=True)
            e = e / norms
            over = np.linalg.norm(e, axis=1) > 1.0
            if np.any(over):
                e[over] /= np.linalg.norm(e[over], axis=1, keepdims=True)
        e *= self.config.scale
        return e.reshape((n, *self.dims))

    def _project_block(self, tensors: np.ndarray, block: int,
                       fixed_factors: list[np.ndarray | None]) -> np.ndarray:
        sub, factor_axes = _contract_subscripts(self.order, block, batch=True)
        factors = [np.asarray(fixed_factors[i], dtype=float)
                   for i in range(len(self.shapes)) if i != block]
        return np.einsum(sub, tensors, *factors, optimize=True)

    # -- spec operations ----------------------------------------------------

    def fresh_sample_projections(self, req: ProjectionRequest, sample_index: int) -> list[float]:
        """Projections <E_m, Q> of one fresh sample's noise onto each probe Q."""
        req.validate(self.shapes)
        self._check_fresh(req.block_index, sample_index)
        if self.ledger is not None:
            charge_sample(self.ledger, 1)
        self._counter = max(self._counter, sample_index + 1)
        vals = self._projection_values(req, sample_index, n=1)[0]
        return [float(v) for v in vals]

    def projections_batch(self, req: ProjectionRequest, n: int,
                          start_index: int | None = None) -> np.ndarray:
        """(n, n_probes) projections over n consecutive fresh samples."""
        req.validate(self.shapes)
        start = self._counter if start_index is None else start_index
        self._check_fresh(req.block_index, start + n - 1)
        if self.ledger is not None:
            charge_sample(self.ledger, n)
        self._counter = max(self._counter, start + n)
        return self._projection_values(req, start, n=n)

    def _projection_values(self, req: ProjectionRequest, start: int, n: int) -> np.ndarray:
        probes = [np.asarray(q, dtype=float) for q in req.probe_matrices]
        p = len(probes)
        if self.config.kind == "zero":
            return np.zeros((n, p))
        if self.config.backend == "explicit":
            out = np.empty((n, p))
            chunk = max(1, min(n, 2_000_000 // max(1, self._tensor_size)))
            done = 0
            while done < n:
                c = min(chunk, n - done)
                tensors = self._materialize(start + done, n=c)
                blocks = self._project_block(tensors, req.block_index, req.fixed_factors)
                flat = blocks.reshape(c, -1)
                for j, q in enumerate(probes):
                    out[done:done + c, j] = flat @ q.ravel()
                done += c
            return out
        # projected Gaussian: joint law from the probes' Gram matrix
        gram = np.empty((p, p))
        flats = [q.ravel() for q in probes]
        for i in range(p):
            for j in range(i, p):
                gram[i, j] = gram[j, i] = float(np.dot(flats[i], flats[j]))
        chol = self._gram_cholesky(gram)
        z = self._stream(req.block_index).standard_normal((n, p))
        return (z @ chol.T) * self.config.scale

    @staticmethod
    def _gram_cholesky(gram: np.ndarray) -> np.ndarray:
        for reg in (0.0, 1e-12, 1e-9):
            try:
                return np.linalg.cholesky(gram + reg * np.eye(gram.shape[0]))
            except np.linalg.LinAlgError:
                continue
        # last resort for a severely degenerate probe set
        w, v = np.linalg.eigh(gram)
        w = np.clip(w, 0.0, None)
        return v * np.sqrt(w)

    def signal_plus_noise_reward(self, w_block: np.ndarray, req: ProjectionRequest,
                                 instance: SignalInstance, sample_index: int) -> float:
        """Reward of one fresh sample: signal coefficient times alignment plus noise."""
        m = req.block_index
        dirs = instance.signal_directions()
        s = instance.snr
        for i, f in enumerate(req.fixed_factors):
            if i == m:
                continue
            s *= float(np.vdot(f, dirs[i]))
        signal = s * float(np.vdot(w_block, dirs[m]))
        noise = self.fresh_sample_projections(
            ProjectionRequest(m, req.fixed_factors, [np.asarray(w_block, dtype=float)]),
            sample_index,
        )[0]
        return signal + noise

    # -- fast paths for the optimizer and scoring ---------------------------

    def block_stream(self, block: int, fixed_factors: list[np.ndarray | None]) -> "BlockNoiseStream":
        return BlockNoiseStream(self, block, fixed_factors)

    def probe_score_batch(self, block: int, fixed_factors: list[np.ndarray | None],
                          probe: np.ndarray, n: int) -> np.ndarray:
        """n fresh projections of the full probe tensor (fixed factors x probe).

        The fixed factors here need not be unit norm: the returned values are
        the literal contractions of each sample's noise tensor.
        """
        if n <= 0:
            return np.zeros(0)
        start = self._counter
        self._check_fresh(block, start + n - 1)
        if self.ledger is not None:
            charge_sample(self.ledger, n)
        self._counter = start + n
        if self.config.kind == "zero":
            return np.zeros(n)
        norms = [float(np.linalg.norm(f)) for i, f in enumerate(fixed_factors) if i != block]
        total_norm = float(np.linalg.norm(probe)) * float(np.prod(norms))
        if self.config.backend == "projected":
            z = self._stream(block).standard_normal(n)
            return z * total_norm * self.config.scale
        normed = [None if i == block else np.asarray(f) / np.linalg.norm(f)
                  for i, f in enumerate(fixed_factors)]
        req = ProjectionRequest(block, normed, [np.asarray(probe, dtype=float)])
        vals = self._projection_values(req, start, n=n)[:, 0]
        return vals * float(np.prod(norms))


class BlockNoiseStream:
    """Per-inner-loop noise source returning full block noise matrices.

    The gradient query needs the whole projected matrix E_m; for the projected
    Gaussian backend that matrix is i.i.d. standard normal (times scale), for
    the explicit backend it is the literal contraction of a fresh tensor.
    """

    def __init__(self, oracle: NoiseOracle, block: int,
                 fixed_factors: list[np.ndarray | None]) -> None:
        self.oracle = oracle
        self.block = block
        self.shape = oracle.shapes[block]
        cfg = oracle.config
        self._zero = cfg.kind == "zero"
        self._scale = cfg.scale
        self._clip = cfg.clip
        self._fault = cfg.fault_nan_at
        if cfg.backend == "explicit":
            for i, f in enumerate(fixed_factors):
                if i != block and abs(float(np.linalg.norm(f)) - 1.0) > FIXED_FACTOR_TOL:
                    raise ValueError(f"fixed factor {i} is not unit Frobenius norm")
            self._factors = [None if i == block else np.asarray(f, dtype=float)
                             for i, f in enumerate(fixed_factors)]
        else:
            self._factors = None
        self._gen = oracle._stream(block) if cfg.backend == "projected" else None

    def draw(self) -> np.ndarray | None:
        idx = self.oracle.take_index(self.block)
        if self._fault is not None and idx == self._fault:
            bad = np.zeros(self.shape)
            bad.flat[0] = np.nan
            return bad
        if self._zero:
            return None
        if self._gen is not None:
            e = self._gen.standard_normal(self.shape)
            if self._scale != 1.0:
                e *= self._scale
        else:
            tensors = self.oracle._materialize(idx, n=1)
            e = self.oracle._project_block(tensors, self.block, self._factors)[0]
        if self._clip is not None:
            np.clip(e, -self._clip, self._clip, out=e)
        return e
