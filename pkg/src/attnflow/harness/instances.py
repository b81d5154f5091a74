"""Seeded random (Q, K, V) instances."""
from __future__ import annotations

import numpy as np

from attnflow.attention import ModelParams
from attnflow.errors import ContractViolation, GenerationFailure
from attnflow.rng import SplitMix64

GAP_GENERATION = 1e-3
MAX_RESAMPLES = 1000


def random_instance(d: int, n: int, beta: float = 1.0, seed: int = 0,
                    gap: float = GAP_GENERATION, max_resamples: int = MAX_RESAMPLES) -> ModelParams:
    """Gaussian Q and K, symmetrized Gaussian V resampled until lambda_1 > 0 and
    lambda_1 - lambda_2 > ``gap``.

    Draw order from ``SplitMix64(seed)``: Q row-major, K row-major, then one
    d x d Gaussian block per V candidate.
    """
    if d < 2:
        raise ContractViolation(f"d must be >= 2, got {d}")
    rng = SplitMix64(seed)
    Q = rng.normal((d, d))
    K = rng.normal((d, d))
    for _ in range(max_resamples):
        M = rng.normal((d, d))
        V = 0.5 * (M + M.T)
        lam = np.linalg.eigvalsh(V)[::-1]
        if lam[0] > 0 and lam[0] - lam[1] > gap:
            return ModelParams(Q, K, V, beta, n)
    raise GenerationFailure(f"no admissible V after {max_resamples} draws (d={d}, seed={seed})")
