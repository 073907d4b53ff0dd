"""Budgeted estimators of interaction attribution curves.

All three estimators count one budget unit per distinct coalition whose value
curve is evaluated (reference-row predictions inside a single value are not
budget units). The empty and full coalitions are always evaluated first.
When the budget covers full enumeration, every estimator defers to the exact
computation.
"""

from __future__ import annotations

import itertools
import math
import warnings
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .core import coalition_iter, mask_size
from .games import SurvivalGame, ValueTable, evaluate_all_coalitions
from .interactions import aggregate_ksii, exact_ksii, exact_sii

RIDGE = 1e-8
_COND_LIMIT = 1e8


class _BudgetedValues:
    """Coalition-value cache that charges one budget unit per new coalition."""

    def __init__(self, game: SurvivalGame, budget: int):
        self.game = game
        self.budget = budget
        self.cache: Dict[int, np.ndarray] = {}
        self._fetch([0, game.full_mask])

    @property
    def spent(self) -> int:
        return len(self.cache)

    def affordable(self, masks: Sequence[int]) -> bool:
        new = {m for m in masks if m not in self.cache}
        return self.spent + len(new) <= self.budget

    def _fetch(self, masks: Sequence[int]) -> None:
        new = sorted({m for m in masks if m not in self.cache})
        if not new:
            return
        values = self.game.values_for_masks(new)
        for mask, val in zip(new, values):
            self.cache[mask] = val

    def get(self, masks: Sequence[int]) -> List[np.ndarray]:
        if not self.affordable(masks):
            raise RuntimeError("budget exhausted")
        self._fetch(masks)
        return [self.cache[m] for m in masks]

    def delta(self, K: int, M: int) -> np.ndarray:
        """Discrete derivative of K on top of M from cached/new evaluations."""
        subsets = _subsets_of(K)
        vals = self.get([M | sub for sub in subsets])
        kp = mask_size(K)
        out = np.zeros_like(vals[0])
        for sub, val in zip(subsets, vals):
            sign = -1.0 if (kp - mask_size(sub)) % 2 else 1.0
            out += sign * val
        return out


def _exact_fallback(game: SurvivalGame, k: int):
    table = evaluate_all_coalitions(game)
    ksii = exact_ksii(table, k)
    info = {"method": "exact_fallback", "evaluations": 1 << game.p}
    return ksii, info


def _targets(p: int, k: int) -> List[int]:
    return [m for m in coalition_iter(p, k) if m]


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

def approx_montecarlo(game: SurvivalGame, k: int, budget: int, seed: int):
    """Direct Monte-Carlo estimate of the interaction index per coalition.

    For target K, subsets M of the remaining features are drawn with size
    uniform on 0..p-|K| and uniformly within each size, exactly the index's
    weight distribution, so the plain average of discrete derivatives is
    unbiased. Sampling stops as soon as a draw no longer fits the budget.
    """
    p = game.p
    if budget >= (1 << p):
        return _exact_fallback(game, k)
    bank = _BudgetedValues(game, budget)
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 101)))
    targets = _targets(p, k)
    sums = {K: None for K in targets}
    counts = {K: 0 for K in targets}
    exhausted = False
    while not exhausted:
        progress = False
        for K in targets:
            rest = [j for j in range(p) if not (K >> j) & 1]
            m_size = int(rng.integers(0, len(rest) + 1))
            chosen = rng.choice(len(rest), size=m_size, replace=False) if m_size else []
            M = 0
            for c in chosen:
                M |= 1 << rest[int(c)]
            needed = [M | sub for sub in _subsets_of(K)]
            if not bank.affordable(needed):
                exhausted = True
                break
            d = bank.delta(K, M)
            sums[K] = d if sums[K] is None else sums[K] + d
            counts[K] += 1
            progress = True
        if not progress:
            break
    T = len(game.grid)
    sii = {
        K: (sums[K] / counts[K]) if counts[K] else np.zeros(T)
        for K in targets
    }
    ksii = aggregate_ksii(sii, k, p)
    info = {"method": "mc", "evaluations": bank.spent,
            "samples": {mask_size(K): 0 for K in targets}}
    for K in targets:
        info["samples"][mask_size(K)] += counts[K]
    return ksii, info


def _subsets_of(mask: int) -> List[int]:
    out = []
    sub = mask
    while True:
        out.append(sub)
        if sub == 0:
            break
        sub = (sub - 1) & mask
    return out


# ---------------------------------------------------------------------------
# permutation sampling
# ---------------------------------------------------------------------------

def approx_permutation(game: SurvivalGame, k: int, budget: int, seed: int):
    """Permutation estimator: each sampled permutation contributes one
    marginal-contribution sample per singleton (prefixes) and one discrete
    derivative per contiguous window of each order 2..k; the preceding
    elements form the conditioning set. Window positions in a uniform random
    permutation reproduce the index's weight distribution exactly.
    """
    p = game.p
    if budget >= (1 << p):
        return _exact_fallback(game, k)
    bank = _BudgetedValues(game, budget)
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 211)))
    targets = _targets(p, k)
    sums: Dict[int, np.ndarray] = {}
    counts = {K: 0 for K in targets}
    n_perms = 0
    while True:
        perm = rng.permutation(p)
        needed = set()
        samples: List[Tuple[int, int]] = []  # (K mask, M mask)
        prefix = 0
        prefixes = [0]
        for j in perm:
            prefix |= 1 << int(j)
            prefixes.append(prefix)
        for order in range(1, k + 1):
            for pos in range(p - order + 1):
                K = 0
                for j in perm[pos:pos + order]:
                    K |= 1 << int(j)
                M = prefixes[pos]
                samples.append((K, M))
                for sub in _subsets_of(K):
                    needed.add(M | sub)
        if not bank.affordable(needed):
            break
        for K, M in samples:
            d = bank.delta(K, M)
            sums[K] = d if K not in sums else sums[K] + d
            counts[K] += 1
        n_perms += 1
        if bank.spent >= budget:
            break
    T = len(game.grid)
    sii = {
        K: (sums[K] / counts[K]) if counts[K] else np.zeros(T)
        for K in targets
    }
    ksii = aggregate_ksii(sii, k, p)
    info = {"method": "permutation", "evaluations": bank.spent,
            "permutations": n_perms}
    return ksii, info


# ---------------------------------------------------------------------------
# kernel-weighted regression
# ---------------------------------------------------------------------------

def _kernel_size_mass(p: int) -> np.ndarray:
    """Total kernel mass per coalition size 1..p-1 (mass of one coalition of
    size s times the number of such coalitions)."""
    sizes = np.arange(1, p)
    return (p - 1) / (sizes * (p - sizes))


def _sample_coalitions(p: int, n_rows: int, rng: np.random.Generator):
    """Stratified coalition sample: strata whose share of the remaining rows
    covers them entirely are enumerated, the rest are sampled without
    replacement within each size. Returns (masks, weights) where weights
    restore the full kernel-weighted objective in expectation."""
    sizes = list(range(1, p))
    mass = {s: m for s, m in zip(sizes, _kernel_size_mass(p))}
    counts = {s: math.comb(p, s) for s in sizes}
    chosen: List[int] = []
    weights: List[float] = []
    remaining = n_rows
    open_sizes = sizes[:]
    # repeatedly peel off strata that the proportional allocation saturates
    while open_sizes and remaining > 0:
        total_mass = sum(mass[s] for s in open_sizes)
        saturated = [
            s for s in open_sizes
            if remaining * mass[s] / total_mass >= counts[s]
        ]
        if not saturated:
            break
        for s in sorted(saturated, key=lambda s: counts[s]):
            if counts[s] > remaining:
                continue
            for combo in itertools.combinations(range(p), s):
                mask = 0
                for j in combo:
                    mask |= 1 << j
                chosen.append(mask)
                weights.append(mass[s] / counts[s])
            remaining -= counts[s]
            open_sizes.remove(s)
    if open_sizes and remaining > 0:
        total_mass = sum(mass[s] for s in open_sizes)
        alloc = {s: remaining * mass[s] / total_mass for s in open_sizes}
        take = {s: min(counts[s], int(a)) for s, a in alloc.items()}
        leftovers = sorted(open_sizes, key=lambda s: alloc[s] - take[s], reverse=True)
        short = remaining - sum(take.values())
        for s in leftovers:
            if short <= 0:
                break
            if take[s] < counts[s]:
                take[s] += 1
                short -= 1
        for s in open_sizes:
            n_s = take[s]
            if n_s == 0:
                continue
            picked = _sample_masks_of_size(p, s, n_s, rng)
            per_weight = mass[s] / counts[s] * (counts[s] / n_s)
            chosen.extend(picked)
            weights.extend([per_weight] * n_s)
    return chosen, np.array(weights)


def _sample_masks_of_size(p: int, s: int, n: int, rng: np.random.Generator) -> List[int]:
    total = math.comb(p, s)
    if total <= 200_000:
        combos = list(itertools.combinations(range(p), s))
        idx = rng.choice(total, size=n, replace=False)
        picked = [combos[i] for i in idx]
    else:
        seen = set()
        picked = []
        while len(picked) < n:
            combo = tuple(sorted(rng.choice(p, size=s, replace=False).tolist()))
            if combo not in seen:
                seen.add(combo)
                picked.append(combo)
    out = []
    for combo in picked:
        mask = 0
        for j in combo:
            mask |= 1 << j
        out.append(mask)
    return out


def approx_regression(game: SurvivalGame, k: int, budget: int, seed: int,
                      fallback_to_exact: bool = True):
    """Kernel-weighted least squares on the order-k indicator basis.

    Coalitions are sampled from the Shapley kernel distribution (without
    replacement within size strata); the empty and full coalitions enter as
    exact linear constraints, so the estimates satisfy efficiency at every
    budget. Coefficients of the non-empty basis functions are the attribution
    estimates per timepoint.
    """
    p = game.p
    if fallback_to_exact and budget >= (1 << p):
        return _exact_fallback(game, k)
    basis = list(coalition_iter(p, k))  # leading entry is the empty set
    n_basis = len(basis)
    bank = _BudgetedValues(game, budget)
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 307)))
    n_rows = min(budget - 2, (1 << p) - 2)
    masks, weights = _sample_coalitions(p, n_rows, rng)
    values = np.vstack(bank.get(masks))  # (n_rows, T)

    A = np.empty((len(masks), n_basis))
    for col, S in enumerate(basis):
        A[:, col] = [1.0 if (m & S) == S else 0.0 for m in masks]
    sqrtw = np.sqrt(weights)
    Aw = A * sqrtw[:, None]

    # exact constraints: intercept equals the empty value (zero by centering),
    # and all coefficients sum to the full-coalition value
    C = np.zeros((2, n_basis))
    C[0, 0] = 1.0
    C[1, :] = 1.0
    d = np.vstack([bank.cache[0], bank.cache[game.full_mask]])  # (2, T)

    sv = np.linalg.svd(np.vstack([Aw, C]), compute_uv=False)
    rank = int(np.sum(sv > sv[0] * (len(masks) + 2) * np.finfo(float).eps))
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    full_design = len(masks) == (1 << p) - 2
    underdetermined = rank < n_basis
    # near the interpolation regime the fit variance blows up well before the
    # design loses rank, so demand a two-rows-per-column margin as well
    unstable = underdetermined or cond > _COND_LIMIT or (
        not full_design and len(masks) < 2 * n_basis
    )
    if unstable:
        warnings.warn(
            f"regression design is unstable (rows={len(masks)}, basis={n_basis}, "
            f"rank={rank}, condition={cond:.2e})"
            + ("; ridge-stabilized solve" if underdetermined else ""),
            RuntimeWarning,
        )

    H = Aw.T @ Aw
    ridge = RIDGE if underdetermined else 0.0
    if ridge:
        H = H + ridge * np.eye(n_basis)
    rhs = Aw.T @ (values * sqrtw[:, None])  # (n_basis, T)
    kkt = np.block([[2.0 * H, C.T], [C, np.zeros((2, 2))]])
    rhs_full = np.vstack([2.0 * rhs, d])
    try:
        sol = np.linalg.solve(kkt, rhs_full)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs_full, rcond=None)[0]
    coef = sol[:n_basis]

    ksii = {S: coef[col] for col, S in enumerate(basis) if S != 0}
    info = {
        "method": "regression",
        "evaluations": bank.spent,
        "n_basis": n_basis,
        "design_rows": len(masks),
        "design_rank": rank,
        "condition": cond,
        "unstable": bool(unstable),
        "ridge": ridge,
    }
    return ksii, info
