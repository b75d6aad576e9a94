"""Per-node protocol logic for one synchronous gossip round.

A round has two phases so that every node trains and builds its outgoing
message before anyone averages:

* ``prepare_round`` runs tau local SGD steps, scores what changed, selects
  what to share, and returns the outgoing update.
* ``finalize_round`` takes the inbox of neighbor updates, averages in the
  shared domain, writes the averaged parameters back into the model, and
  settles the importance accumulator for the next round.

Four algorithms share this skeleton: the wavelet protocol (sparse updates in
the wavelet domain picked by accumulated importance with a randomized
cut-off), full sharing, seeded random sampling in parameter space, and a
memory-efficient Choco-SGD baseline with error compensation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import codec
from .codec import CodecError, SparseUpdate
from .graph import MixingWeights
from .learner import SGDConfig, local_sgd
from .sparsify import (
    AlphaDistribution,
    Selection,
    accumulate_averaging_delta,
    accumulate_training_delta,
    draw_alpha,
    new_accumulator,
    reset_selected,
    select_topk,
    selection_size,
    top_indices,
)
from .wavelet import WaveletCoeffs, coeff_layout, coeff_length, dwt, idwt, sym2_filters

log = logging.getLogger(__name__)


class Algo(str, Enum):
    JWINS = "jwins"
    FULL = "full"
    RANDOM = "random"
    CHOCO = "choco"


@dataclass
class Ablations:
    """Feature switches for the wavelet protocol.

    wavelet_on=False ranks and shares raw parameter deltas (identity
    transform); accumulation_on=False overwrites the score vector each round
    instead of summing; random_cutoff_on=False pins the cut-off fraction to
    the distribution mean; metadata_compression_on=False ships raw u32
    indices instead of gamma-coded gaps.
    """

    wavelet_on: bool = True
    accumulation_on: bool = True
    random_cutoff_on: bool = True
    metadata_compression_on: bool = True


@dataclass
class ProtocolConfig:
    """Everything a node needs to run rounds, minus the graph."""

    algo: Algo = Algo.JWINS
    sgd: SGDConfig = field(default_factory=SGDConfig)
    alpha: AlphaDistribution = field(default_factory=AlphaDistribution)
    random_alpha: float = 0.37
    choco_gamma: float = 0.6
    choco_alpha: float = 0.2
    wavelet_levels: int = 4
    ablations: Ablations = field(default_factory=Ablations)

    def __post_init__(self):
        if not 0.0 < self.random_alpha <= 1.0:
            raise ValueError("random sampling fraction must lie in (0, 1]")
        if not 0.0 <= self.choco_gamma <= 1.0:
            raise ValueError("consensus step size must lie in [0, 1]")
        if not 0.0 < self.choco_alpha <= 1.0:
            raise ValueError("choco sparsity must lie in (0, 1]")


@dataclass(eq=False)
class RoundOutcome:
    """What one node did in one round, for metrics and debugging."""

    outbound: SparseUpdate
    bytes_sent: int
    meta_bytes: int
    alpha_used: float
    rejected: int = 0


class NodeState:
    """Mutable per-node state: model, data slice, RNG streams, protocol
    memory (importance scores or Choco mirrors), and the scratch carried
    between the two phases of the current round."""

    def __init__(self, node_id: int, model, cfg: ProtocolConfig,
                 X: np.ndarray, y: np.ndarray,
                 rng_data: np.random.Generator,
                 rng_alpha: np.random.Generator,
                 rng_misc: np.random.Generator):
        self.node_id = node_id
        self.model = model
        self.X = X
        self.y = y
        self.rng_data = rng_data
        self.rng_alpha = rng_alpha
        self.rng_misc = rng_misc
        self.algo = cfg.algo
        plen = model.param_count
        if cfg.algo == Algo.JWINS and cfg.ablations.wavelet_on:
            self.spec = sym2_filters(cfg.wavelet_levels)
            self.coeff_len = coeff_length(plen, cfg.wavelet_levels)
            self.layout = coeff_layout(plen, cfg.wavelet_levels)
        else:
            self.spec = None
            self.coeff_len = plen
            self.layout = None
        if cfg.algo == Algo.JWINS:
            self.acc = new_accumulator(self.coeff_len, cfg.ablations.accumulation_on)
        else:
            self.acc = None
        if cfg.algo == Algo.CHOCO:
            self.choco_hat = np.zeros(plen)
            self.choco_agg = np.zeros(plen)
        self._pending = None

    def _transform(self, x: np.ndarray) -> np.ndarray:
        if self.spec is None:
            return np.asarray(x, dtype=np.float64).copy()
        return dwt(x, self.spec).data

    def _untransform(self, c: np.ndarray) -> np.ndarray:
        if self.spec is None:
            return c
        return idwt(WaveletCoeffs(c, self.layout, self.model.param_count), self.spec)


def prepare_round(state: NodeState, round_no: int, cfg: ProtocolConfig) -> SparseUpdate:
    """Phase one: local training plus building the outgoing update."""
    x0 = state.model.get_flat()
    local_sgd(state.model, state.X, state.y, cfg.sgd, state.rng_data)
    x_tau = state.model.get_flat()

    if state.algo == Algo.JWINS:
        accumulate_training_delta(state.acc, x0, x_tau, state.spec)
        if cfg.ablations.random_cutoff_on:
            alpha = draw_alpha(cfg.alpha, state.rng_alpha)
        else:
            alpha = cfg.alpha.mean()
        sel = select_topk(state.acc, alpha)
        coeffs = state._transform(x_tau)
        update = codec.make_indexed_update(
            round_no, state.node_id, sel.indices,
            coeffs[sel.indices].astype(np.float32),
            compressed=cfg.ablations.metadata_compression_on,
        )
        state._pending = (x_tau, coeffs, sel, alpha, update)
        return update

    if state.algo == Algo.FULL:
        update = codec.make_full_update(round_no, state.node_id, x_tau.astype(np.float32))
        state._pending = (x_tau, x_tau, None, 1.0, update)
        return update

    if state.algo == Algo.RANDOM:
        k = selection_size(cfg.random_alpha, state.coeff_len)
        seed = int(state.rng_misc.integers(0, 2**64, dtype=np.uint64))
        sel = Selection(codec.random_indices(state.coeff_len, k, seed), cfg.random_alpha)
        update = codec.make_seed_update(
            round_no, state.node_id, seed, x_tau[sel.indices].astype(np.float32))
        state._pending = (x_tau, x_tau, sel, cfg.random_alpha, update)
        return update

    if state.algo == Algo.CHOCO:
        residual = x_tau - state.choco_hat
        idx = top_indices(residual, selection_size(cfg.choco_alpha, state.coeff_len))
        vals = residual[idx].astype(np.float32)
        state.choco_hat[idx] += vals.astype(np.float64)
        update = codec.make_indexed_update(round_no, state.node_id, idx, vals)
        state._pending = (x_tau, vals, Selection(idx, cfg.choco_alpha), cfg.choco_alpha, update)
        return update

    raise ValueError("unknown algorithm %r" % (state.algo,))


def _gather_contributions(state: NodeState, inbox, weights: MixingWeights,
                          round_no: int) -> tuple[list, int]:
    """Validate the inbox and resolve every update to (sender, indices, values).

    Bad messages (wrong round, unknown sender, out-of-range indices) are
    rejected with a log line and the node continues with the rest. A
    duplicate sender is a caller bug and raises.
    """
    contribs = []
    rejected = 0
    seen = set()
    neighbor_set = set(int(j) for j in weights.neighbors[state.node_id])
    for u in sorted(inbox, key=lambda m: m.sender):
        if u.sender in seen:
            raise ValueError("duplicate sender %d in inbox" % u.sender)
        seen.add(u.sender)
        if u.round_no != round_no:
            log.warning("node %d dropped update from %d: round %d != %d",
                        state.node_id, u.sender, u.round_no, round_no)
            rejected += 1
            continue
        if u.sender not in neighbor_set:
            log.warning("node %d dropped update from non-neighbor %d",
                        state.node_id, u.sender)
            rejected += 1
            continue
        try:
            idx = codec.resolve_indices(u, state.coeff_len)
        except CodecError as exc:
            log.warning("node %d dropped update from %d: %s",
                        state.node_id, u.sender, exc)
            rejected += 1
            continue
        contribs.append((u.sender, idx, u.values))
    return contribs, rejected


def sparse_average(own: np.ndarray, contributions, weights: MixingWeights,
                   self_id: int) -> np.ndarray:
    """Weighted average per slot over whoever actually contributed it.

    For slot k with contributor set S(k) (self always includes every slot),
    the result is sum_{j in S(k)} w_ij v_j[k] / sum_{j in S(k)} w_ij. Slots
    nobody else sent keep the node's own value bitwise unchanged.

    ``contributions`` is a list of (sender, indices, values); indices None
    means a dense contribution covering every slot.
    """
    result = own.copy()
    if not contributions:
        return result
    w_self = float(weights.self_weight[self_id])
    acc = w_self * own
    norm = np.full(own.size, w_self)
    touched = np.zeros(own.size, dtype=bool)
    seen = set()
    for sender, idx, values in contributions:
        if sender in seen:
            raise ValueError("duplicate sender %d" % sender)
        seen.add(sender)
        w = weights.weight(self_id, sender)
        v = values.astype(np.float64)
        if idx is None:
            if v.size != own.size:
                raise ValueError("dense contribution with wrong length")
            acc += w * v
            norm += w
            touched[:] = True
        else:
            acc[idx] += w * v
            norm[idx] += w
            touched[idx] = True
    result[touched] = acc[touched] / norm[touched]
    return result


def finalize_round(state: NodeState, inbox, weights: MixingWeights,
                   round_no: int, cfg: ProtocolConfig) -> RoundOutcome:
    """Phase two: average with the inbox and settle per-round state."""
    if state._pending is None:
        raise RuntimeError("finalize_round called before prepare_round")
    x_tau, shared, sel, alpha, update = state._pending
    state._pending = None
    degree = int(weights.neighbors[state.node_id].size)
    contribs, rejected = _gather_contributions(state, inbox, weights, round_no)

    if state.algo == Algo.JWINS:
        if contribs:
            avg = sparse_average(shared, contribs, weights, state.node_id)
            x_next = state._untransform(avg)
            reset_selected(state.acc, sel)
            accumulate_averaging_delta(state.acc, x_tau, x_next, state.spec)
        else:
            # Nothing arrived: parameters stay exactly at the post-training
            # point and the averaging delta is exactly zero.
            x_next = x_tau
            reset_selected(state.acc, sel)
        state.model.set_flat(x_next)
    elif state.algo in (Algo.FULL, Algo.RANDOM):
        x_next = sparse_average(shared, contribs, weights, state.node_id)
        state.model.set_flat(x_next)
    elif state.algo == Algo.CHOCO:
        # The aggregate tracks sum_j w_ij x_hat_j (self included); every
        # broadcast residual q_j advances x_hat_j, so folding w * q_j in
        # keeps it current without storing any neighbor mirror.
        w_self = float(weights.self_weight[state.node_id])
        if sel.k:
            state.choco_agg[sel.indices] += w_self * shared.astype(np.float64)
        for sender, idx, values in contribs:
            w = weights.weight(state.node_id, sender)
            v = values.astype(np.float64)
            if idx is None:
                state.choco_agg += w * v
            else:
                state.choco_agg[idx] += w * v
        x_next = x_tau + cfg.choco_gamma * (state.choco_agg - state.choco_hat)
        state.model.set_flat(x_next)
    else:
        raise ValueError("unknown algorithm %r" % (state.algo,))

    return RoundOutcome(
        outbound=update,
        bytes_sent=update.byte_size * degree,
        meta_bytes=update.meta_bytes * degree,
        alpha_used=float(alpha),
        rejected=rejected,
    )


def run_round(state: NodeState, inbox, weights: MixingWeights,
              round_no: int, cfg: ProtocolConfig) -> RoundOutcome:
    """Both phases back to back, for tests and single-node use.

    In the simulator the phases are split by a barrier so the inbox can hold
    the updates of the same round.
    """
    prepare_round(state, round_no, cfg)
    return finalize_round(state, inbox, weights, round_no, cfg)
