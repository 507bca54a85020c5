"""Finite-N SK free energy by exact enumeration of all 2^N spin configurations.

The spins are split into two blocks A and B.  For a coupling matrix J,

    H(sigma) = H_A(sigma_A) + H_B(sigma_B) + sigma_A^T J_AB sigma_B,

so every configuration's energy is an entry of an outer sum plus one matrix
product, and log sum exp H is accumulated over column chunks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .diffusion import default_workers
from .rs import ModelParams

MAX_N = 24
CHUNK_COLUMNS = 1 << 10


@dataclass(frozen=True)
class DisorderSample:
    """Couplings g_ij (i < j) in row-major upper-triangular order."""

    n: int
    couplings: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        g = np.asarray(self.couplings, dtype=float).ravel()
        if g.size != self.n * (self.n - 1) // 2:
            raise ValueError(f"expected {self.n * (self.n - 1) // 2} couplings, got {g.size}")
        g.setflags(write=False)
        object.__setattr__(self, "couplings", g)

    @classmethod
    def from_seed(cls, n: int, seed: int) -> "DisorderSample":
        rng = np.random.default_rng(int(seed))
        return cls(n, rng.standard_normal(n * (n - 1) // 2), int(seed))

    def matrix(self) -> np.ndarray:
        """Symmetric matrix with J_ij = J_ji = g_ij / 2, so sigma^T J sigma = sum_{i<j} g_ij sigma_i sigma_j."""
        J = np.zeros((self.n, self.n))
        iu = np.triu_indices(self.n, k=1)
        J[iu] = 0.5 * self.couplings
        return J + J.T


@dataclass(frozen=True)
class FreeEnergyEstimate:
    n: int
    mean: float
    stderr: float
    n_samples: int


def _spin_table(k: int) -> np.ndarray:
    """All 2^k configurations in {-1, 1}^k as rows."""
    if k == 0:
        return np.ones((1, 0))
    bits = (np.arange(2**k)[:, None] >> np.arange(k)[None, :]) & 1
    return 1.0 - 2.0 * bits


def _block_energy(spins: np.ndarray, J: np.ndarray, h: float) -> np.ndarray:
    return np.einsum("ci,ij,cj->c", spins, J, spins) + h * spins.sum(axis=1)


def free_energy_one(sample: DisorderSample, params: ModelParams) -> float:
    """(1/N) log sum_sigma exp(H_N(sigma)) with H_N = (beta/sqrt N) sum g_ij s_i s_j + h sum s_i."""
    n = sample.n
    if n > MAX_N:
        raise ValueError(f"exact enumeration supports n <= {MAX_N}, got {n}")
    J = (params.beta / math.sqrt(n)) * sample.matrix()
    a = n // 2
    SA, SB = _spin_table(a), _spin_table(n - a)
    HA = _block_energy(SA, J[:a, :a], params.h)
    HB = _block_energy(SB, J[a:, a:], params.h)
    cross = 2.0 * SA @ J[:a, a:]
    parts = []
    for lo in range(0, len(SB), CHUNK_COLUMNS):
        sb = SB[lo : lo + CHUNK_COLUMNS]
        energy = HA[:, None] + HB[None, lo : lo + CHUNK_COLUMNS] + cross @ sb.T
        parts.append(logsumexp(energy))
    return float(logsumexp(parts)) / n


def sample_seeds(seed: int, n_samples: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(n_samples, dtype=np.uint64)


def disorder_average(
    n: int, params: ModelParams, n_samples: int, seed: int = 0, workers: int | None = None
) -> FreeEnergyEstimate:
    """Mean and standard error of free_energy_one over independent coupling draws."""
    if n > MAX_N:
        raise ValueError(f"exact enumeration supports n <= {MAX_N}, got {n}")
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    samples = [DisorderSample.from_seed(n, s) for s in sample_seeds(seed, n_samples)]
    workers = workers or default_workers()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = np.array(list(pool.map(lambda smp: free_energy_one(smp, params), samples)))
    else:
        values = np.array([free_energy_one(smp, params) for smp in samples])
    return FreeEnergyEstimate(n, float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_samples)), n_samples)


def fit_finite_size(ns, gaps) -> float:
    """Least-squares C in gap ~ C / N."""
    x = 1.0 / np.asarray(ns, dtype=float)
    y = np.asarray(gaps, dtype=float)
    return float(x @ y / (x @ x))
