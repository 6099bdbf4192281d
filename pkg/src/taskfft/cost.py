"""Latency-bandwidth cost model used for placement, stealing and reporting."""

from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_ALPHA = 1e-6
DEFAULT_BETA = 1e-10


@dataclass(frozen=True)
class CommCostParams:
    alpha: float = DEFAULT_ALPHA        # per-message startup, s
    beta: float = DEFAULT_BETA          # inverse bandwidth, s/byte
    latency: float = DEFAULT_ALPHA      # one-way latency L, s
    bandwidth: float = 1.0 / DEFAULT_BETA  # B, bytes/s
    steal_overhead: float = 1e-5        # queue management + serialization, s

    def __post_init__(self):
        for name in ("alpha", "beta", "latency", "bandwidth", "steal_overhead"):
            v = getattr(self, name)
            if not v >= 0 or math.isnan(v):
                raise ValueError(f"{name} must be >= 0, got {v}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")


@dataclass(frozen=True)
class PhaseTimings:
    t_pack: float = 0.0
    t_mpi: float = 0.0
    t_unpack: float = 0.0

    def __post_init__(self):
        if min(self.t_pack, self.t_mpi, self.t_unpack) < 0:
            raise ValueError("phase timings must be >= 0")


@dataclass(frozen=True)
class PhaseEstimate:
    t_comp: float
    t_comm: float
    k: float
    tau_s: float
    rho: float

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        if self.k < 0:
            raise ValueError("k must be >= 0")


def comm_cost(params: CommCostParams, peers: int, nbytes: float) -> float:
    """alpha * |S| + beta * m."""
    if peers < 0 or nbytes < 0:
        raise ValueError("peers and bytes must be >= 0")
    return params.alpha * peers + params.beta * nbytes


def effective_lower_bound(t: PhaseTimings) -> float:
    return max(t.t_pack, t.t_mpi, t.t_unpack)


def transfer_cost(params: CommCostParams, nbytes: float) -> float:
    """L + V/B."""
    return params.latency + nbytes / params.bandwidth


def placement_cost(compute_est: float, params: CommCostParams, bytes_remote: float = 0) -> float:
    if compute_est < 0 or bytes_remote < 0:
        raise ValueError("inputs must be >= 0")
    if bytes_remote == 0:
        return compute_est
    return compute_est + transfer_cost(params, bytes_remote)


def steal_cost(params: CommCostParams, nbytes: float) -> float:
    return params.latency + nbytes / params.bandwidth + params.steal_overhead


def steal_worthwhile(idle_estimate: float, params: CommCostParams, nbytes: float) -> bool:
    return idle_estimate > steal_cost(params, nbytes)


def phase_estimate(e: PhaseEstimate) -> float:
    return max(e.t_comp, e.t_comm) + (1.0 - e.rho) * e.k * e.tau_s


def fft_work(line_length: int, batch: int) -> float:
    """Work units N log2 N * batch; a length-1 line counts as one unit."""
    return line_length * max(math.log2(line_length), 1.0) * batch


@dataclass
class ComputeModel:
    """C_comp = coeff * N log2 N * batch, with ``coeff`` fit from a warm-up run."""

    coeff: float = 5e-9

    def estimate(self, line_length: int, batch: int) -> float:
        return self.coeff * fft_work(line_length, batch)

    def fit(self, seconds: float, work: float) -> None:
        if work > 0 and seconds > 0:
            self.coeff = seconds / work
