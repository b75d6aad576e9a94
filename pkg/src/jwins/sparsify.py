"""Importance accumulation and index selection for sparsified sharing.

Each node keeps a per-coefficient score vector V that sums the transform of
every parameter change it has seen (its own training steps and the shift
applied by averaging). The top coefficients of |V| are the ones shared in a
round; shared entries are reset so unsent changes keep accumulating until
they win a slot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .wavelet import WaveletSpec, dwt

# Cut-off fractions and probabilities used when a round draws how much to
# send. Mean is 0.342857...; roughly a third of the coefficient vector.
DEFAULT_ALPHA_SUPPORT = (0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 1.0)
DEFAULT_ALPHA_PROBS = (1 / 7, 1 / 7, 1 / 7, 1 / 7, 1 / 7, 1 / 7, 1 / 7)


@dataclass(eq=False)
class Accumulator:
    """Per-coefficient importance scores.

    With ``enabled`` False the training delta overwrites the scores instead of
    adding to them, which reduces ranking to "largest change this round".
    """

    scores: np.ndarray
    enabled: bool = True


def new_accumulator(coeff_len: int, enabled: bool = True) -> Accumulator:
    if coeff_len < 1:
        raise ValueError("coefficient length must be positive")
    return Accumulator(np.zeros(coeff_len), enabled)


def _delta_scores(before: np.ndarray, after: np.ndarray, spec: WaveletSpec | None) -> np.ndarray:
    if before.shape != after.shape:
        raise ValueError("parameter vectors differ in length")
    delta = np.asarray(after, dtype=np.float64) - np.asarray(before, dtype=np.float64)
    if spec is None:
        return delta
    return dwt(delta, spec).data


def accumulate_training_delta(
    acc: Accumulator,
    before: np.ndarray,
    after: np.ndarray,
    spec: WaveletSpec | None,
) -> None:
    """Fold one local-training parameter change into the scores.

    ``spec`` selects the scoring domain: a filter spec scores in the wavelet
    domain, None scores raw parameter deltas (the transform-off ablation).
    """
    delta = _delta_scores(before, after, spec)
    if delta.shape != acc.scores.shape:
        raise ValueError("delta length does not match accumulator")
    if acc.enabled:
        acc.scores += delta
    else:
        acc.scores[:] = delta


def accumulate_averaging_delta(
    acc: Accumulator,
    pre_avg: np.ndarray,
    post_avg: np.ndarray,
    spec: WaveletSpec | None,
) -> None:
    """Fold the parameter shift applied by one averaging step into the scores."""
    delta = _delta_scores(pre_avg, post_avg, spec)
    if delta.shape != acc.scores.shape:
        raise ValueError("delta length does not match accumulator")
    acc.scores += delta


@dataclass(frozen=True, eq=False)
class AlphaDistribution:
    """Discrete distribution of cut-off fractions in (0, 1]."""

    support: tuple[float, ...] = DEFAULT_ALPHA_SUPPORT
    probs: tuple[float, ...] = DEFAULT_ALPHA_PROBS

    def __post_init__(self):
        if len(self.support) == 0 or len(self.support) != len(self.probs):
            raise ValueError("support and probs must be non-empty and equal length")
        if any(not 0.0 < a <= 1.0 for a in self.support):
            raise ValueError("cut-off fractions must lie in (0, 1]")
        if any(p < 0.0 for p in self.probs):
            raise ValueError("probabilities must be non-negative")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ValueError("probabilities must sum to 1")

    @classmethod
    def uniform(cls, support) -> "AlphaDistribution":
        support = tuple(float(a) for a in support)
        p = 1.0 / len(support)
        return cls(support, tuple(p for _ in support))

    def mean(self) -> float:
        return float(sum(a * p for a, p in zip(self.support, self.probs)))


def draw_alpha(dist: AlphaDistribution, rng: np.random.Generator) -> float:
    """Sample one cut-off fraction, consuming exactly one uniform draw."""
    u = rng.random()
    cum = 0.0
    for a, p in zip(dist.support, dist.probs):
        cum += p
        if u < cum:
            return a
    return dist.support[-1]


def selection_size(alpha: float, coeff_len: int) -> int:
    """Entry count for a cut-off fraction: round-half-up, clamped to [0, n]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("cut-off fraction must lie in [0, 1]")
    k = int(np.floor(alpha * coeff_len + 0.5))
    return min(max(k, 0), coeff_len)


@dataclass(eq=False)
class Selection:
    """Chosen coefficient indices (sorted ascending) plus the fraction used."""

    indices: np.ndarray
    alpha_used: float

    @property
    def k(self) -> int:
        return int(self.indices.size)


def top_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest |scores|; ties go to the lowest index.

    Selection-based, so O(n) rather than O(n log n) for a full sort.
    """
    n = scores.size
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k >= n:
        return np.arange(n, dtype=np.int64)
    mag = np.abs(scores)
    part = np.argpartition(mag, n - k)
    threshold = mag[part[n - k]]
    above = np.flatnonzero(mag > threshold)
    ties = np.flatnonzero(mag == threshold)
    sel = np.concatenate([above, ties[: k - above.size]])
    sel.sort()
    return sel.astype(np.int64)


def select_topk(acc, alpha: float) -> Selection:
    """Pick the top-|V| coefficient indices for a cut-off fraction.

    Accepts an Accumulator or a bare score vector.
    """
    scores = acc.scores if isinstance(acc, Accumulator) else np.asarray(acc)
    k = selection_size(alpha, scores.size)
    return Selection(top_indices(scores, k), float(alpha))


def random_indices(coeff_len: int, k: int, seed: int) -> np.ndarray:
    """Sorted k-subset of [0, coeff_len) fully determined by the seed.

    Sender and receiver both call this, so only the seed crosses the wire.
    """
    if not 0 <= k <= coeff_len:
        raise ValueError("selection size out of range")
    if k == coeff_len:
        return np.arange(coeff_len, dtype=np.int64)
    rng = np.random.default_rng(seed)
    idx = rng.choice(coeff_len, size=k, replace=False)
    idx.sort()
    return idx.astype(np.int64)


def select_random(coeff_len: int, alpha: float, seed: int) -> Selection:
    """Seeded uniform selection of a fraction of coefficient slots."""
    k = selection_size(alpha, coeff_len)
    return Selection(random_indices(coeff_len, k, seed), float(alpha))


def reset_selected(acc: Accumulator, sel: Selection) -> None:
    """Zero the scores of shared entries; unshared scores keep accumulating."""
    if sel.k and int(sel.indices.max()) >= acc.scores.size:
        raise ValueError("selection index out of range")
    acc.scores[sel.indices] = 0.0
