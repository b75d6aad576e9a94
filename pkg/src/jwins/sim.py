"""Round-synchronous simulator, metrics CSV, probe, and run comparison.

One process simulates every node. A round has two phases separated by a
barrier: all nodes prepare (train locally, build their outgoing update),
then all nodes finalize (average the updates that reached them). Every
update crosses a real serialize/deserialize boundary, so traffic accounting
is byte-exact and the codec is exercised on every message.

Determinism: the run seed fans out through named SeedSequence spawns (model
init, partition, data, topology, and three per-node streams), so a config
reproduces its metrics file byte for byte, regardless of worker count.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from . import codec
from .graph import Topology, generate_regular, metropolis_hastings, round_seed
from .learner import (
    Dataset,
    SGDConfig,
    evaluate,
    load_idx,
    make_model,
    shard_partition,
    synth_blobs,
)
from .node import (
    Ablations,
    Algo,
    NodeState,
    ProtocolConfig,
    finalize_round,
    prepare_round,
)
from .sparsify import AlphaDistribution, selection_size, top_indices
from .wavelet import WaveletCoeffs, coeff_length, dwt, idwt, sym2_filters

METRICS_HEADER = "round,node,test_loss,test_acc,bytes_cum,bytes_meta_cum,alpha"
PROBE_HEADER = "round,mse_wavelet,mse_random,cum_mse_wavelet,cum_mse_random"

# Tags for deriving independent seed streams from the run seed.
_TAG_MODEL = 0
_TAG_PARTITION = 1
_TAG_DATA = 2
_TAG_TOPOLOGY = 4
_TAG_NODE_DATA = 5
_TAG_NODE_ALPHA = 6
_TAG_NODE_MISC = 7

_SEED_MASK = 2**64 - 1


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _seed_seq(seed: int, *tags: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & _SEED_MASK, *tags])


def _seed_int(seed: int, *tags: int) -> int:
    return int(_seed_seq(seed, *tags).generate_state(1, np.uint64)[0])


@dataclass
class TopologyCfg:
    d: int = 4
    dynamic: bool = False
    seed: int | None = None


@dataclass
class ModelCfg:
    kind: str = "logreg"
    hidden: int = 64
    init_scale: float = 0.01


@dataclass
class DataCfg:
    kind: str = "synthetic"
    classes: int = 10
    dims: int = 32
    per_class: int = 100
    test_per_class: int = 50
    mean_scale: float = 1.0
    noise_scale: float = 1.0
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None


@dataclass
class PartitionCfg:
    shards_per_node: int = 2


@dataclass
class ChocoCfg:
    gamma: float = 0.6
    alpha: float = 0.2


@dataclass
class AlphaCfg:
    support: tuple[float, ...] = tuple(AlphaDistribution().support)
    probs: tuple[float, ...] = tuple(AlphaDistribution().probs)


@dataclass
class RunConfig:
    algo: str = "jwins"
    n: int = 16
    seed: int = 1234
    rounds: int = 200
    eval_every: int = 10
    workers: int = 1
    random_alpha: float = 0.37
    wavelet_levels: int = 4
    message_dump: str | None = None
    topology: TopologyCfg = field(default_factory=TopologyCfg)
    model: ModelCfg = field(default_factory=ModelCfg)
    data: DataCfg = field(default_factory=DataCfg)
    partition: PartitionCfg = field(default_factory=PartitionCfg)
    sgd: SGDConfig = field(default_factory=SGDConfig)
    alpha: AlphaCfg = field(default_factory=AlphaCfg)
    choco: ChocoCfg = field(default_factory=ChocoCfg)
    ablations: Ablations = field(default_factory=Ablations)

    def resolved(self) -> dict:
        """Plain dict with every default filled in, for provenance echoes."""
        d = asdict(self)
        d["alpha"]["support"] = list(self.alpha.support)
        d["alpha"]["probs"] = list(self.alpha.probs)
        return d


_SECTION_TYPES = {
    "topology": TopologyCfg,
    "model": ModelCfg,
    "data": DataCfg,
    "partition": PartitionCfg,
    "sgd": SGDConfig,
    "choco": ChocoCfg,
    "ablations": Ablations,
}


def _build_section(cls, raw: dict, where: str):
    allowed = cls.__dataclass_fields__
    for key in raw:
        if key not in allowed:
            raise ConfigError("unknown config key %r in %s" % (key, where))
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError("bad %s config: %s" % (where, exc)) from exc


def config_from_dict(raw: dict) -> RunConfig:
    """Validate a raw mapping (e.g. parsed YAML) into a RunConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    top_fields = RunConfig.__dataclass_fields__
    kwargs = {}
    for key, value in raw.items():
        if key not in top_fields:
            raise ConfigError("unknown config key %r" % key)
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError("config section %r must be a mapping" % key)
            kwargs[key] = _build_section(_SECTION_TYPES[key], value, key)
        elif key == "alpha":
            if not isinstance(value, dict):
                raise ConfigError("config section 'alpha' must be a mapping")
            extra = set(value) - {"support", "probs"}
            if extra:
                raise ConfigError("unknown config key %r in alpha" % extra.pop())
            support = tuple(float(a) for a in value.get("support", AlphaCfg().support))
            if "probs" in value:
                probs = tuple(float(p) for p in value["probs"])
            else:
                probs = tuple(1.0 / len(support) for _ in support)
            kwargs[key] = AlphaCfg(support, probs)
        else:
            kwargs[key] = value
    try:
        cfg = RunConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.algo not in [a.value for a in Algo]:
        raise ConfigError("unknown algorithm %r" % cfg.algo)
    if cfg.n < 1:
        raise ConfigError("need at least one node")
    if cfg.rounds < 1:
        raise ConfigError("need at least one round")
    if cfg.eval_every < 1:
        raise ConfigError("eval_every must be positive")
    if cfg.workers < 1:
        raise ConfigError("workers must be positive")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    if cfg.n > 1:
        if not 0 < cfg.topology.d < cfg.n:
            raise ConfigError("degree must satisfy 0 < d < n")
        if (cfg.n * cfg.topology.d) % 2 != 0:
            raise ConfigError("n * d must be even")
    if cfg.algo == Algo.CHOCO.value and cfg.topology.dynamic:
        # The error-compensation state assumes the neighborhood it was built
        # against; reject the combination up front rather than mid-run.
        raise ConfigError("choco does not support a dynamic topology")
    if cfg.model.kind not in ("logreg", "mlp"):
        raise ConfigError("unknown model kind %r" % cfg.model.kind)
    if cfg.data.kind not in ("synthetic", "idx"):
        raise ConfigError("unknown data kind %r" % cfg.data.kind)
    if cfg.data.kind == "idx":
        for attr in ("train_images", "train_labels", "test_images", "test_labels"):
            if getattr(cfg.data, attr) is None:
                raise ConfigError("idx data needs %s" % attr)
    try:
        AlphaDistribution(cfg.alpha.support, cfg.alpha.probs)
        ProtocolConfig(
            algo=Algo(cfg.algo),
            sgd=cfg.sgd,
            random_alpha=cfg.random_alpha,
            choco_gamma=cfg.choco.gamma,
            choco_alpha=cfg.choco.alpha,
            wavelet_levels=cfg.wavelet_levels,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def _load_data(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    d = cfg.data
    if d.kind == "idx":
        train = load_idx(d.train_images, d.train_labels)
        test = load_idx(d.test_images, d.test_labels)
        if train.num_classes < test.num_classes:
            train.num_classes = test.num_classes
        return train, test
    # One blob draw covers train and test so both share the class means.
    total = d.per_class + d.test_per_class
    full = synth_blobs(d.classes, d.dims, total, _seed_int(cfg.seed, _TAG_DATA),
                       d.mean_scale, d.noise_scale)
    train_idx = []
    test_idx = []
    for c in range(d.classes):
        start = c * total
        train_idx.append(np.arange(start, start + d.per_class))
        test_idx.append(np.arange(start + d.per_class, start + total))
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    train = Dataset(full.features[tr], full.labels[tr], d.classes)
    test = Dataset(full.features[te], full.labels[te], d.classes)
    return train, test


def _protocol_config(cfg: RunConfig) -> ProtocolConfig:
    return ProtocolConfig(
        algo=Algo(cfg.algo),
        sgd=cfg.sgd,
        alpha=AlphaDistribution(cfg.alpha.support, cfg.alpha.probs),
        random_alpha=cfg.random_alpha,
        choco_gamma=cfg.choco.gamma,
        choco_alpha=cfg.choco.alpha,
        wavelet_levels=cfg.wavelet_levels,
        ablations=cfg.ablations,
    )


@dataclass(eq=False)
class Runtime:
    cfg: RunConfig
    pcfg: ProtocolConfig
    train: Dataset
    test: Dataset
    states: list
    topology: Topology
    topo_seed: int


def build_runtime(cfg: RunConfig) -> Runtime:
    train, test = _load_data(cfg)
    pcfg = _protocol_config(cfg)
    mcfg = cfg.model
    features = train.features.shape[1]
    classes = max(train.num_classes, 2)
    init_rng = np.random.default_rng(_seed_seq(cfg.seed, _TAG_MODEL))
    reference = make_model(mcfg.kind, features, classes, hidden=mcfg.hidden,
                           rng=init_rng, init_scale=mcfg.init_scale)
    flat0 = reference.get_flat()
    if cfg.n == 1:
        parts = [np.arange(train.labels.size)]
    else:
        parts = shard_partition(train.labels, cfg.n, cfg.partition.shards_per_node,
                                _seed_int(cfg.seed, _TAG_PARTITION))
    states = []
    for i in range(cfg.n):
        model = make_model(mcfg.kind, features, classes, hidden=mcfg.hidden, rng=None)
        model.set_flat(flat0)
        states.append(NodeState(
            i, model, pcfg,
            train.features[parts[i]], train.labels[parts[i]],
            rng_data=np.random.default_rng(_seed_seq(cfg.seed, _TAG_NODE_DATA, i)),
            rng_alpha=np.random.default_rng(_seed_seq(cfg.seed, _TAG_NODE_ALPHA, i)),
            rng_misc=np.random.default_rng(_seed_seq(cfg.seed, _TAG_NODE_MISC, i)),
        ))
    topo_seed = cfg.topology.seed
    if topo_seed is None:
        topo_seed = _seed_int(cfg.seed, _TAG_TOPOLOGY)
    if cfg.n == 1:
        topology = Topology(1, 0, (np.empty(0, dtype=np.int64),), topo_seed)
    else:
        topology = generate_regular(cfg.n, cfg.topology.d, topo_seed)
    return Runtime(cfg, pcfg, train, test, states, topology, topo_seed)


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.10g" % float(x)


def run(cfg: RunConfig, out_path=None, return_states=False):
    """Execute a full experiment; returns metric rows, optionally writes CSV.

    Row shape: (round, node_label, test_loss, test_acc, bytes_cum,
    bytes_meta_cum, alpha). After each evaluation the per-node rows are
    followed by an AGG row of column means. With ``return_states`` the final
    per-node states come back too, as (rows, states).
    """
    rt = build_runtime(cfg)
    n = cfg.n
    states = rt.states
    topology = rt.topology
    weights = metropolis_hastings(topology)
    bytes_cum = np.zeros(n, dtype=np.int64)
    meta_cum = np.zeros(n, dtype=np.int64)
    rows: list[tuple] = []
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    dump_fh = open(cfg.message_dump, "wb") if cfg.message_dump else None

    def node_map(fn):
        if pool is None:
            return [fn(s) for s in states]
        return list(pool.map(fn, states))

    try:
        for t in range(cfg.rounds):
            if cfg.topology.dynamic and n > 1:
                topology = generate_regular(n, cfg.topology.d, round_seed(rt.topo_seed, t))
                weights = metropolis_hastings(topology)
            outgoing = node_map(lambda s: prepare_round(s, t, rt.pcfg))
            blobs = [codec.serialize(u) for u in outgoing]
            if dump_fh is not None:
                for blob in blobs:
                    dump_fh.write(struct.pack("<I", len(blob)))
                    dump_fh.write(blob)
            # Decode once per broadcast message; receivers share the result.
            wire = [codec.deserialize(b) for b in blobs]
            inboxes = [[wire[j] for j in topology.neighbors[i]] for i in range(n)]
            outcomes = node_map(
                lambda s: finalize_round(s, inboxes[s.node_id], weights, t, rt.pcfg))
            for i, oc in enumerate(outcomes):
                bytes_cum[i] += oc.bytes_sent
                meta_cum[i] += oc.meta_bytes
            if (t + 1) % cfg.eval_every == 0 or t == cfg.rounds - 1:
                scores = node_map(lambda s: evaluate(s.model, rt.test.features,
                                                     rt.test.labels))
                alphas = [oc.alpha_used for oc in outcomes]
                for i in range(n):
                    rows.append((t + 1, str(i), scores[i][0], scores[i][1],
                                 int(bytes_cum[i]), int(meta_cum[i]), alphas[i]))
                rows.append((t + 1, "AGG",
                             float(np.mean([s[0] for s in scores])),
                             float(np.mean([s[1] for s in scores])),
                             float(bytes_cum.mean()),
                             float(meta_cum.mean()),
                             float(np.mean(alphas))))
    finally:
        if pool is not None:
            pool.shutdown()
        if dump_fh is not None:
            dump_fh.close()
    if out_path is not None:
        write_metrics(out_path, cfg, rows)
    if return_states:
        return rows, states
    return rows


def write_metrics(path, cfg: RunConfig, rows) -> None:
    lines = ["# config: " + json.dumps(cfg.resolved(), sort_keys=True), METRICS_HEADER]
    for row in rows:
        rnd, node, loss, acc, b, m, alpha = row
        lines.append(",".join([str(int(rnd)), node, _fmt(loss), _fmt(acc),
                               _fmt(b), _fmt(m), _fmt(alpha)]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics(path) -> tuple[dict | None, list[dict]]:
    """Parse a metrics CSV; returns (config echo or None, row dicts)."""
    config = None
    rows = []
    header_seen = False
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("# "):
                if line.startswith("# config: "):
                    config = json.loads(line[len("# config: "):])
                continue
            if not header_seen:
                if line != METRICS_HEADER:
                    raise ValueError("schema mismatch in %s" % path)
                header_seen = True
                continue
            parts = line.split(",")
            if len(parts) != 7:
                raise ValueError("schema mismatch in %s" % path)
            rows.append({
                "round": int(parts[0]),
                "node": parts[1],
                "test_loss": float(parts[2]),
                "test_acc": float(parts[3]),
                "bytes_cum": float(parts[4]),
                "bytes_meta_cum": float(parts[5]),
                "alpha": float(parts[6]),
            })
    if not header_seen:
        raise ValueError("schema mismatch in %s" % path)
    return config, rows


def reconstruction_probe(cfg: RunConfig, budget: float, out_path=None) -> list[tuple]:
    """Single-node diagnostic: how well does each sharing rule track the model?

    One node trains normally. Two frozen snapshots chase it, each refreshed
    with the same per-round coefficient budget: one picks wavelet
    coefficients by accumulated importance, the other picks uniformly random
    parameter slots. Rows: (round, mse_wavelet, mse_random, cum_wavelet,
    cum_random).
    """
    if cfg.n != 1:
        raise ConfigError("the probe runs on a single node")
    if not 0.0 < budget <= 1.0:
        raise ConfigError("budget must lie in (0, 1]")
    rt = build_runtime(cfg)
    state = rt.states[0]
    spec = sym2_filters(cfg.wavelet_levels)
    plen = state.model.param_count
    clen = coeff_length(plen, cfg.wavelet_levels)
    layout = dwt(state.model.get_flat(), spec).layout
    k_wave = selection_size(budget, clen)
    k_rand = selection_size(budget, plen)
    x_prev = state.model.get_flat()
    recon_coeffs = dwt(x_prev, spec).data.copy()
    recon_params = x_prev.copy()
    scores = np.zeros(clen)
    cum_w = 0.0
    cum_r = 0.0
    rows = []
    from .learner import local_sgd

    for t in range(cfg.rounds):
        local_sgd(state.model, state.X, state.y, cfg.sgd, state.rng_data)
        x = state.model.get_flat()
        coeffs = dwt(x, spec).data
        scores += dwt(x - x_prev, spec).data
        sel = top_indices(scores, k_wave)
        recon_coeffs[sel] = coeffs[sel]
        scores[sel] = 0.0
        approx = idwt(WaveletCoeffs(recon_coeffs, layout, plen), spec)
        mse_w = float(np.mean((x - approx) ** 2))
        seed = int(state.rng_misc.integers(0, 2**64, dtype=np.uint64))
        ridx = codec.random_indices(plen, k_rand, seed)
        recon_params[ridx] = x[ridx]
        mse_r = float(np.mean((x - recon_params) ** 2))
        cum_w += mse_w
        cum_r += mse_r
        rows.append((t + 1, mse_w, mse_r, cum_w, cum_r))
        x_prev = x
    if out_path is not None:
        lines = ["# config: " + json.dumps(cfg.resolved(), sort_keys=True),
                 "# budget: %.10g" % budget,
                 PROBE_HEADER]
        for row in rows:
            lines.append(",".join([str(row[0])] + ["%.10g" % v for v in row[1:]]))
        with open(out_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return rows


def compare(paths, target_acc: float | None = None) -> str:
    """Summarize finished runs side by side; first file is the baseline.

    Reports final accuracy and loss, total bytes per node, metadata bytes,
    and traffic savings relative to the baseline. With a target accuracy it
    also reports the first evaluation round where the run's mean accuracy
    reached the target and the bytes spent by then.
    """
    if not paths:
        raise ValueError("nothing to compare")
    summaries = []
    for path in paths:
        config, rows = read_metrics(path)
        agg = [r for r in rows if r["node"] == "AGG"]
        if not agg:
            raise ValueError("no AGG rows in %s" % path)
        final = agg[-1]
        entry = {
            "path": str(path),
            "algo": (config or {}).get("algo", "?"),
            "rounds": final["round"],
            "acc": final["test_acc"],
            "loss": final["test_loss"],
            "bytes": final["bytes_cum"],
            "meta": final["bytes_meta_cum"],
        }
        if target_acc is not None:
            hit = next((r for r in agg if r["test_acc"] >= target_acc), None)
            entry["hit_round"] = hit["round"] if hit else None
            entry["hit_bytes"] = hit["bytes_cum"] if hit else None
        summaries.append(entry)
    base_bytes = summaries[0]["bytes"]
    lines = []
    head = "%-28s %-7s %7s %9s %9s %14s %12s %9s" % (
        "file", "algo", "rounds", "acc", "loss", "bytes/node", "meta/node", "savings")
    if target_acc is not None:
        head += " %11s %14s" % ("hit@%.3g" % target_acc, "bytes@target")
    lines.append(head)
    for s in summaries:
        save = 1.0 - s["bytes"] / base_bytes if base_bytes else 0.0
        line = "%-28s %-7s %7d %9.4f %9.4f %14.0f %12.0f %8.1f%%" % (
            _short(s["path"]), s["algo"], s["rounds"], s["acc"], s["loss"],
            s["bytes"], s["meta"], 100.0 * save)
        if target_acc is not None:
            if s["hit_round"] is None:
                line += " %11s %14s" % ("never", "-")
            else:
                line += " %11d %14.0f" % (s["hit_round"], s["hit_bytes"])
        lines.append(line)
    return "\n".join(lines)


def _short(path: str, limit: int = 28) -> str:
    return path if len(path) <= limit else "..." + path[-(limit - 3):]
