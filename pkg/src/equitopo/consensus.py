"""Gossip averaging runs and the size-independence experiment.

The recursion x <- W x preserves the mean exactly for doubly-stochastic W,
so the disagreement ||x - mean(x0) * 1|| is the quantity tracked per step.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonFiniteError, ParameterError
from .seeds import derive_seed, make_rng
from .topology import DynSampler, GossipMatrix, TopologySpec, build_topology

RESIDUAL_FLOOR = 1e-13


@dataclass
class ConsensusTrace:
    """Per-iteration residual records for one or more trials of one topology."""

    family: str
    n: int
    seed: int
    trial: np.ndarray
    iteration: np.ndarray
    residual: np.ndarray
    spec: TopologySpec | None = None
    meta: dict = field(default_factory=dict)

    def trial_residuals(self, k: int) -> np.ndarray:
        mask = self.trial == k
        order = np.argsort(self.iteration[mask])
        return self.residual[mask][order]

    def csv_text(self) -> str:
        lines = ["family,n,trial,iter,residual"]
        for k, t, r in zip(self.trial, self.iteration, self.residual):
            lines.append(f"{self.family},{self.n},{k},{t},{float(r)!r}")
        return "\n".join(lines) + "\n"


def gossip_run(topology: GossipMatrix | DynSampler, x0, iters: int,
               trial: int = 0) -> ConsensusTrace:
    """Iterate x <- W^(t) x and record ||x - mean(x0) * 1|| at every step."""
    if iters < 1:
        raise ParameterError(f"iters must be >= 1, got {iters}")
    x = np.array(x0, dtype=float)
    if not np.isfinite(x).all():
        raise ParameterError("x0 must be finite")
    is_sampler = isinstance(topology, DynSampler)
    n = topology.n
    if x.shape != (n,):
        raise ParameterError(f"x0 must have shape ({n},), got {x.shape}")
    mean0 = x.mean()
    residuals = np.empty(iters + 1)
    residuals[0] = np.linalg.norm(x - mean0)
    max_drift = 0.0
    for t in range(1, iters + 1):
        w = topology.sample() if is_sampler else topology
        x = w @ x
        if not np.isfinite(x).all():
            raise NonFiniteError(f"non-finite state at iteration {t}")
        max_drift = max(max_drift, abs(x.mean() - mean0) / (1.0 + abs(mean0)))
        residuals[t] = np.linalg.norm(x - mean0)
    iterations = np.arange(iters + 1)
    return ConsensusTrace(
        family=getattr(topology, "family", "custom"), n=n, seed=0,
        trial=np.full(iters + 1, trial), iteration=iterations, residual=residuals,
        meta={"max_mean_drift": max_drift})


def consensus_experiment(spec: TopologySpec, iters: int, trials: int,
                         master_seed: int | None = None) -> ConsensusTrace:
    """Independent repetitions: fresh topology and fresh x0 per trial."""
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    master = spec.seed if master_seed is None else master_seed
    parts = []
    drift = 0.0
    for k in range(trials):
        sub = replace(spec, seed=derive_seed(master, "trial", k))
        topology = build_topology(sub)
        x0 = make_rng(master, "x0", k).standard_normal(spec.n)
        tr = gossip_run(topology, x0, iters, trial=k)
        drift = max(drift, tr.meta["max_mean_drift"])
        parts.append(tr)
    return ConsensusTrace(
        family=spec.family, n=spec.n, seed=master,
        trial=np.concatenate([p.trial for p in parts]),
        iteration=np.concatenate([p.iteration for p in parts]),
        residual=np.concatenate([p.residual for p in parts]),
        spec=spec, meta={"max_mean_drift": drift, "iters": iters, "trials": trials})


def fit_decay_slope(iterations, residuals, skip: int = 2,
                    floor: float = RESIDUAL_FLOOR) -> float:
    """Least-squares slope of log residual per iteration.

    The first `skip` iterations are transients and excluded; the series is
    truncated at the first residual below `floor` to avoid fitting the
    floating-point floor.  Returns -inf when fewer than two usable points
    remain (instant consensus).
    """
    t = np.asarray(iterations, dtype=float)
    r = np.asarray(residuals, dtype=float)
    below = np.nonzero(r < floor)[0]
    end = below[0] if below.size else len(r)
    mask = (t[:end] >= skip)
    if mask.sum() < 2:
        return float("-inf")
    return float(np.polyfit(t[:end][mask], np.log(r[:end][mask]), 1)[0])


@dataclass
class SizeSweepEntry:
    n: int
    slope: float
    trial_slopes: tuple[float, ...]
    trace: ConsensusTrace


@dataclass
class SizeSweep:
    """Per-size decay summary across one family."""

    family: str
    entries: list[SizeSweepEntry]

    @property
    def slopes(self) -> list[float]:
        return [e.slope for e in self.entries]

    def max_deviation(self) -> float:
        """Largest |slope - mean slope| across sizes."""
        s = np.asarray(self.slopes)
        return float(np.abs(s - s.mean()).max())


def size_independence_experiment(family: str, sizes, iters: int, trials: int,
                                 master_seed: int = 0, rho: float = 0.75,
                                 p: float = 0.5, eta: float = 0.5,
                                 m_for=None) -> SizeSweep:
    """Run the gossip experiment at several sizes and fit per-size decay slopes.

    The fitted slope is taken on the geometric mean of the per-trial residual
    curves.  `m_for(n)` chooses the basis count per size (None keeps the
    family default).
    """
    sizes = list(sizes)
    if len(sizes) < 2:
        raise ParameterError("need at least two sizes")
    entries = []
    for n in sizes:
        m = m_for(n) if m_for is not None else None
        spec = TopologySpec(family=family, n=n, rho=rho, p=p, m=m, eta=eta,
                            seed=derive_seed(master_seed, "size", n))
        trace = consensus_experiment(spec, iters, trials)
        per_trial = []
        logs = []
        for k in range(trials):
            res = trace.trial_residuals(k)
            per_trial.append(fit_decay_slope(np.arange(iters + 1), res))
            logs.append(np.log(np.clip(res, 1e-300, None)))
        geo_mean = np.exp(np.mean(logs, axis=0))
        slope = fit_decay_slope(np.arange(iters + 1), geo_mean)
        entries.append(SizeSweepEntry(n=n, slope=slope,
                                      trial_slopes=tuple(per_trial), trace=trace))
    return SizeSweep(family=family, entries=entries)
