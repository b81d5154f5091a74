"""Stability scans over all consensus and bipartite consensus points."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from attnflow.attention import ModelParams
from attnflow.errors import ContractViolation
from attnflow.linalg import ValueSpectrum
from attnflow.rng import SplitMix64
from attnflow.stability import (
    STABLE,
    bipartite_stability_test,
    bipartite_state,
    consensus_spectrum,
    consensus_state,
    jacobian_self,
    verdict_from_abscissa,
)
from attnflow.linalg import general_eigenvalues

EXHAUSTIVE_MAX_N = 20


@dataclass(frozen=True)
class ScanRow:
    k: int
    n1: int              # tokens at +v_k
    n2: int              # tokens at -v_k
    count: int           # sign patterns represented by this row
    verdict: str
    pattern: tuple[int, ...] | None = None

    @property
    def is_consensus(self) -> bool:
        return self.n1 == 0 or self.n2 == 0


def split_verdict(params: ModelParams, spectrum: ValueSpectrum, k: int, n1: int, n2: int,
                  manifold: bool = False) -> str:
    """Verdict for ``n1`` tokens at ``v_k`` and ``n2`` at ``-v_k``."""
    if n1 == 0 or n2 == 0:
        return verdict_from_abscissa(consensus_spectrum(spectrum, k, n1 + n2).abscissa())
    return bipartite_stability_test(params, spectrum, k, n1, n2, manifold=manifold)


def scan_bipartite(params: ModelParams, mode: str = "exhaustive", *, samples: int = 100,
                   seed: int = 0, manifold: bool = False) -> list[ScanRow]:
    """Stability of the ``d * 2^n`` consensus / bipartite consensus points.

    ``mode``:

    ``"exhaustive"``
        one analytic test per ``(k, n1)``, weighted by ``C(n, n1)``;
    ``"patterns"``
        every sign pattern separately, verdict from the numerically assembled
        Jacobian (cross-check for small ``n``);
    ``"sample"``
        ``samples`` uniformly random sign patterns per eigenvector.
    """
    spectrum = params.spectrum()
    d, n = params.d, params.n
    rows: list[ScanRow] = []
    if mode == "exhaustive":
        if n > EXHAUSTIVE_MAX_N:
            raise ContractViolation(f"exhaustive scan requires n <= {EXHAUSTIVE_MAX_N}, got {n}")
        for k in range(1, d + 1):
            for n1 in range(n, -1, -1):
                rows.append(ScanRow(k, n1, n - n1, comb(n, n1),
                                    split_verdict(params, spectrum, k, n1, n - n1, manifold)))
    elif mode == "patterns":
        if n > EXHAUSTIVE_MAX_N:
            raise ContractViolation(f"pattern scan requires n <= {EXHAUSTIVE_MAX_N}, got {n}")
        for k in range(1, d + 1):
            for pattern in itertools.product((1, -1), repeat=n):
                X = bipartite_state(spectrum, k, pattern)
                ab = float(general_eigenvalues(jacobian_self(X, params)).real.max())
                n1 = pattern.count(1)
                rows.append(ScanRow(k, n1, n - n1, 1, verdict_from_abscissa(ab), tuple(pattern)))
    elif mode == "sample":
        rng = SplitMix64(seed)
        for k in range(1, d + 1):
            signs = np.where(rng.uniform((samples, n)) < 0.5, 1, -1)
            for pattern in signs:
                n1 = int(np.count_nonzero(pattern > 0))
                rows.append(ScanRow(k, n1, n - n1, 1,
                                    split_verdict(params, spectrum, k, n1, n - n1, manifold),
                                    tuple(int(s) for s in pattern)))
    else:
        raise ContractViolation(f"unknown scan mode {mode!r}")
    return rows


def stable_count(rows: list[ScanRow]) -> int:
    return sum(r.count for r in rows if r.verdict == STABLE)


def stable_bipartite_indices(rows: list[ScanRow]) -> set[int]:
    """Eigen indices ``k`` carrying at least one stable (strictly) bipartite point."""
    return {r.k for r in rows if r.verdict == STABLE and not r.is_consensus}


def summarize_scan(rows: list[ScanRow]) -> dict:
    total = sum(r.count for r in rows)
    per_k: dict[int, int] = {}
    for r in rows:
        if r.verdict == STABLE:
            per_k[r.k] = per_k.get(r.k, 0) + r.count
    return {"total": total, "stable": stable_count(rows), "stable_by_k": dict(sorted(per_k.items()))}


def consensus_rows(params: ModelParams) -> list[ScanRow]:
    spectrum = params.spectrum()
    return [ScanRow(k, params.n, 0, 1, split_verdict(params, spectrum, k, params.n, 0))
            for k in range(1, params.d + 1)]


__all__ = ["ScanRow", "scan_bipartite", "split_verdict", "stable_count", "stable_bipartite_indices",
           "summarize_scan", "consensus_state"]
