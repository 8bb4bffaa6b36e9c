"""End-to-end split-learning runs with optional attack and defense."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from slsim import attacks, baselines, nn
from slsim.errors import ConfigError, DivergenceError
from slsim.defense.filtering import VARIANTS, filter_batch, transform
from slsim.defense.reduction import TransformConfig
from slsim.harness.config import ExperimentConfig
from slsim.harness.data import Dataset, load_dataset
from slsim.harness.metrics import accuracy, attack_success_rate, detection_metrics, separation_ratio
from slsim.split import (
    EmbeddingBatch,
    RoundState,
    aggregate,
    client_forward,
    client_update,
    partition_features,
    server_round,
)

ROUNDS_HEADER = ["round", "loss", "retained", "poison_removed", "poison_total"]
SUMMARY_HEADER = ["attack", "defense", "acc", "asr", "sep_ratio_E", "sep_ratio_U", "sep_ratio_H", "seed"]
TIMING_FIELDS = ("wall_time",)

# stream tags for derived seeds
_PARTITION, _BOTTOM, _TOP, _BATCH, _AUX, _POISON, _TRIGGER, _DEFENSE, _PAIRS, _DP, _SWAP = range(11)


def sub_seed(master: int, *tags: int) -> int:
    return int(np.random.SeedSequence([master, *tags]).generate_state(1)[0])


@dataclass
class RoundRecord:
    round: int
    loss: float
    retained: int
    poison_removed: int
    poison_total: int
    precision: float = math.nan
    recall: float = math.nan
    magnitude: float = math.nan
    skipped: bool = False


@dataclass
class ExperimentResult:
    records: List[RoundRecord]
    acc: float
    asr: float
    sep_ratio_E: float
    sep_ratio_U: float
    sep_ratio_H: float
    wall_time: float
    config: Dict
    seed: int
    flags: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return _json_safe(asdict(self))

    def defense_label(self) -> str:
        d = self.config["defense"]
        if d["kind"] == "securesplit" and d["variant"] != "full":
            return f"securesplit-{d['variant']}"
        return d["kind"]

    def summary_row(self) -> List:
        return [self.config["attack"]["kind"], self.defense_label(), _fmt(self.acc), _fmt(self.asr),
                _fmt(self.sep_ratio_E), _fmt(self.sep_ratio_U), _fmt(self.sep_ratio_H), self.seed]


def _json_safe(obj):
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and not math.isfinite(x)) else repr(float(x))


@dataclass
class SplitModel:
    partition: object
    bottoms: List[nn.MlpParams]
    top: nn.MlpParams
    mode: str

    def client_inputs(self, X: np.ndarray) -> List[np.ndarray]:
        return [X[:, idx] for idx in self.partition.clients]

    def logits(self, X, features_hook=None, embedding_hook=None) -> np.ndarray:
        """Forward pass; hooks may rewrite client inputs or embeddings (triggers)."""
        inputs = self.client_inputs(np.asarray(X, dtype=np.float64))
        if features_hook is not None:
            inputs = features_hook(inputs)
        embs = [nn.predict(b, x) for b, x in zip(self.bottoms, inputs)]
        if embedding_hook is not None:
            embs = embedding_hook(embs)
        batches = [EmbeddingBatch(e) for e in embs]
        return nn.predict(self.top, aggregate(batches, self.mode).values)


class BatchStream:
    """Consecutive mini-batches over reshuffled epochs (incomplete tail dropped)."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        self._order = np.empty(0, dtype=np.int64)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self._order.size:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        rows = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return rows


class Attacker:
    """Poison selection and trigger application for the malicious clients."""

    def __init__(self, cfg: ExperimentConfig, data: Dataset, model: SplitModel):
        self.cfg = cfg
        self.attack_cfg = cfg.attack
        self.kind = cfg.attack.kind
        self.malicious = list(cfg.malicious)
        n = data.train_y.size
        rng = np.random.default_rng(sub_seed(cfg.seed, _AUX))
        known = rng.choice(n, size=max(1, int(round(self.attack_cfg.aux_fraction * n))), replace=False)
        self.aux = np.full(n, -1, dtype=np.int64)
        self.aux[known] = data.train_y[known]
        self.shortfall = 0
        self.magnitudes: List[float] = []
        self.oracle_calls: List[int] = []
        self.patch_cols = None
        self.saliency = None
        self.patch_value = float(data.train_x.max())
        self.source_pool = np.flatnonzero(self.aux == self.attack_cfg.source)
        dim = cfg.embedding_dim
        trig_seed = sub_seed(cfg.seed, _TRIGGER)
        if self.kind == "villain":
            self.trigger = attacks.villain_trigger(dim, self.attack_cfg.magnitude, self.attack_cfg.trigger_fraction)
        elif self.kind in ("he", "adaptive"):
            self.trigger = attacks.he_trigger(dim, self.attack_cfg.magnitude, trig_seed)
        else:
            self.trigger = None
        self.widths = [idx.size for idx in model.partition.clients]

    def active(self, t: int) -> bool:
        return self.kind != "none" and t >= self.attack_cfg.start_round

    def select(self, rows: np.ndarray, t: int) -> np.ndarray:
        picked, short = attacks.select_poison_targets(self.aux[rows], self.attack_cfg.target, self.attack_cfg.rate,
                                                      rows.size, sub_seed(self.cfg.seed, _POISON, t))
        self.shortfall += short
        return picked

    @property
    def wants_saliency(self) -> bool:
        return self.kind == "badvfl" and self.patch_cols is None

    def observe_gradient(self, input_grad: np.ndarray) -> None:
        """Saliency from the latest input gradient; frozen once the patch is placed."""
        self.saliency = attacks.input_saliency(input_grad)

    def _ensure_patch(self) -> None:
        if self.patch_cols is None:
            width = self.widths[self.malicious[0]]
            saliency = self.saliency if self.saliency is not None else np.zeros(width)
            self.patch_cols = attacks.top_salient(saliency, min(self.attack_cfg.patch_size, width))

    def poison_features(self, inputs: List[np.ndarray], poisoned: np.ndarray, X_full: np.ndarray,
                        partition, t: int) -> List[np.ndarray]:
        """BadVFL: swap in a known source-class example's local features, then patch."""
        if self.kind != "badvfl" or poisoned.size == 0:
            return inputs
        self._ensure_patch()
        out = list(inputs)
        rng = np.random.default_rng(sub_seed(self.cfg.seed, _SWAP, t))
        for i in self.malicious:
            local = out[i].copy()
            if self.source_pool.size:
                donors = rng.choice(self.source_pool, size=poisoned.size)
                local[poisoned] = X_full[donors][:, partition.clients[i]]
            saliency = np.zeros(local.shape[1])
            saliency[self.patch_cols] = 1.0
            out[i] = attacks.badvfl_feature_trigger(local, saliency, self.patch_cols.size, poisoned,
                                                    self.patch_value)
        return out

    def _embed(self, emb: np.ndarray, magnitude: float) -> np.ndarray:
        if self.kind == "villain":
            return attacks.villain_inject(emb, self.trigger.scaled(magnitude))
        if self.kind in ("he", "adaptive"):
            return attacks.he_replace(emb, self.trigger.scaled(magnitude))
        if self.kind == "fu":
            return attacks.fu_replace(emb)
        return emb

    def poison_embeddings(self, embs: List[np.ndarray], poisoned: np.ndarray, magnitude: float) -> List[np.ndarray]:
        if poisoned.size == 0 or self.kind in ("none", "badvfl"):
            return embs
        out = list(embs)
        for i in self.malicious:
            e = out[i].copy()
            e[poisoned] = self._embed(e[poisoned], magnitude)
            out[i] = e
        return out

    def test_magnitude(self) -> float:
        if self.kind == "adaptive":
            return float(np.mean(self.magnitudes)) if self.magnitudes else 0.0
        return self.attack_cfg.magnitude

    def test_hooks(self):
        """Input/embedding rewrites applied to every test example when measuring ASR."""
        if self.kind == "badvfl":
            self._ensure_patch()

            def features(inputs):
                out = list(inputs)
                for i in self.malicious:
                    x = out[i].copy()
                    x[:, self.patch_cols] = self.patch_value
                    out[i] = x
                return out
            return features, None

        magnitude = self.test_magnitude()

        def embeddings(embs):
            out = list(embs)
            for i in self.malicious:
                out[i] = self._embed(out[i], magnitude)
            return out
        return None, embeddings


def _transform_config(cfg: ExperimentConfig, t: int) -> TransformConfig:
    d = cfg.defense
    return TransformConfig(reduced_dim=d.reduced_dim, reducer=d.reducer, n_neighbors=d.n_neighbors,
                           layout_epochs=d.layout_epochs, max_degree=d.max_degree,
                           seed=sub_seed(cfg.seed, _DEFENSE, t))


def _defend(cfg: ExperimentConfig, agg: EmbeddingBatch, t: int):
    """Returns (training batch, retained rows, transformed-or-None)."""
    d = cfg.defense
    m = agg.m
    everything = np.arange(m)
    if d.kind == "securesplit":
        tcfg = _transform_config(cfg, t)
        stage = VARIANTS[d.variant][0]
        tr = transform(agg, tcfg, need_h=stage == "H") if stage != "E" else None
        retained, _ = filter_batch(agg, tcfg, d.alpha, d.variant, transformed=tr)
        return agg, retained, tr
    base = baselines.BaselineConfig(d.kind, d.k_trim, d.f, d.c, d.noise_std, d.prune_fraction) \
        if d.kind in baselines.BASELINES else None
    if d.kind == "trmean":
        return baselines.trimmed_mean_clean(agg, base.trim_count(m)), everything, None
    if d.kind == "multi_krum":
        f, c = base.krum_params(m)
        return agg, baselines.multi_krum_select(agg, f, c), None
    if d.kind == "kmeans":
        return agg, baselines.kmeans_filter(agg, seed=sub_seed(cfg.seed, _DEFENSE, t)), None
    if d.kind == "dp":
        return baselines.dp_noise(agg, d.noise_std, sub_seed(cfg.seed, _DP, t)), everything, None
    return agg, everything, None


def _separation(cfg: ExperimentConfig, agg: EmbeddingBatch, poisoned: np.ndarray, tr, t: int):
    pairs = cfg.metrics.separation_pairs
    seed = sub_seed(cfg.seed, _PAIRS, t)
    if tr is None or tr.H is None:
        tr = transform(agg, _transform_config(cfg, t))
    return tuple(separation_ratio(v.values, poisoned, pairs, seed)[0] for v in (agg, tr.U, tr.H))


def build_model(cfg: ExperimentConfig, data: Dataset) -> SplitModel:
    partition = partition_features(data.n_features, cfg.n_clients, cfg.rho, sub_seed(cfg.seed, _PARTITION))
    bottoms = [
        nn.mlp_init([idx.size, *cfg.bottom_hidden, cfg.embedding_dim], sub_seed(cfg.seed, _BOTTOM, i),
                    gain=cfg.init_gain)
        for i, idx in enumerate(partition.clients)
    ]
    top_in = cfg.n_clients * cfg.embedding_dim if cfg.aggregation == "concatenate" else cfg.embedding_dim
    top = nn.mlp_init([top_in, *cfg.top_hidden, data.n_classes], sub_seed(cfg.seed, _TOP), gain=cfg.init_gain)
    return SplitModel(partition, bottoms, top, cfg.aggregation)


def run_experiment(cfg: ExperimentConfig, data: Optional[Dataset] = None,
                   progress: Optional[Callable[[RoundRecord], None]] = None) -> ExperimentResult:
    cfg.validate()
    started = time.perf_counter()
    if data is None:
        data = load_dataset(cfg.dataset, cfg.seed)
    if cfg.batch_size > data.train_y.size:
        raise ConfigError(f"batch_size: {cfg.batch_size} exceeds the {data.train_y.size} training rows")
    model = build_model(cfg, data)
    state = RoundState(model.bottoms, model.top, cfg.aggregation)
    attacker = Attacker(cfg, data, model)
    stream = BatchStream(data.train_y.size, cfg.batch_size, sub_seed(cfg.seed, _BATCH))

    last_poison_round = cfg.rounds if attacker.kind != "none" else None
    sep_round = cfg.metrics.separation_round or last_poison_round
    seps = (math.nan, math.nan, math.nan)
    records: List[RoundRecord] = []
    skipped = 0

    for t in range(1, cfg.rounds + 1):
        rows = stream.next()
        X, y = data.train_x[rows], data.train_y[rows]
        poisoned = attacker.select(rows, t) if attacker.active(t) else np.empty(0, dtype=np.int64)

        inputs = attacker.poison_features(model.client_inputs(X), poisoned, data.train_x, model.partition, t)
        outs = [client_forward(b, x, rows) for b, x in zip(state.bottoms, inputs)]
        clean_embs = [e.values for e, _ in outs]
        traces = [tr for _, tr in outs]
        if not all(np.isfinite(e).all() for e in clean_embs):
            raise DivergenceError("non-finite client embeddings", t)

        magnitude = attacker.attack_cfg.magnitude
        if attacker.kind == "adaptive" and poisoned.size:
            magnitude = _adaptive_magnitude(cfg, attacker, clean_embs, poisoned, rows, t)
            attacker.magnitudes.append(magnitude)
        embs = attacker.poison_embeddings(clean_embs, poisoned, magnitude)
        per_client = [EmbeddingBatch(e, row_ids=rows) for e in embs]
        agg = aggregate(per_client, cfg.aggregation)

        train_batch, retained, tr = _defend(cfg, agg, t)
        if t == sep_round and poisoned.size:
            seps = _separation(cfg, agg, poisoned, tr, t)

        step = server_round(state, per_client, train_batch, y, retained, cfg.lr)
        if not step.skipped and not math.isfinite(step.loss):
            raise DivergenceError("non-finite training loss", t)
        if step.skipped:
            skipped += 1
        if attacker.wants_saliency:
            i = attacker.malicious[0]
            attacker.observe_gradient(nn.backward(state.bottoms[i], traces[i], step.client_grads[i])[1])
        for i, (bottom, trace, g) in enumerate(zip(state.bottoms, traces, step.client_grads)):
            state.bottoms[i] = client_update(bottom, trace, g, cfg.lr)
        state.top = step.top
        state.round = t

        precision, recall = detection_metrics(retained, poisoned, rows.size)
        kept = np.zeros(rows.size, dtype=bool)
        kept[retained] = True
        rec = RoundRecord(t, step.loss, int(retained.size), int(np.sum(~kept[poisoned])), int(poisoned.size),
                          precision, recall, magnitude if poisoned.size else math.nan, step.skipped)
        records.append(rec)
        if progress is not None:
            progress(rec)

    model.bottoms, model.top = state.bottoms, state.top
    eval_model = model
    if cfg.defense.kind == "mp":
        eval_model = SplitModel(model.partition, model.bottoms,
                                baselines.prune_top_model(model.top, cfg.defense.prune_fraction), model.mode)
    acc = accuracy(eval_model.logits, data.test_x, data.test_y)
    asr = math.nan
    if attacker.kind != "none":
        fhook, ehook = attacker.test_hooks()
        eligible = data.test_y == cfg.attack.source if attacker.kind == "badvfl" else None
        asr = attack_success_rate(lambda X: eval_model.logits(X, fhook, ehook), data.test_x, data.test_y,
                                  cfg.attack.target, eligible)

    flags = {
        "poison_shortfall": attacker.shortfall,
        "skipped_rounds": skipped,
        "oracle_calls": attacker.oracle_calls,
        "adaptive_magnitudes": attacker.magnitudes,
        "test_magnitude": attacker.test_magnitude() if attacker.kind != "none" else None,
        "dropped_features": int(model.partition.dropped.size),
    }
    return ExperimentResult(records, acc, asr, *seps, time.perf_counter() - started,
                            cfg.to_dict(), cfg.seed, flags)


def _adaptive_magnitude(cfg, attacker: Attacker, clean_embs, poisoned, rows, t) -> float:
    """Bisection on the trigger magnitude against the live defense: accept a
    magnitude when every poisoned row survives the server's filter."""
    def passes(lam: float) -> bool:
        embs = attacker.poison_embeddings(clean_embs, poisoned, lam)
        agg = aggregate([EmbeddingBatch(e, row_ids=rows) for e in embs], cfg.aggregation)
        if cfg.defense.kind == "none":
            return True
        _, retained, _ = _defend(cfg, agg, t)
        return bool(np.isin(poisoned, retained).all())

    oracle = attacks.CountingOracle(passes)
    lam = attacks.adaptive_lambda_search(oracle, cfg.attack.magnitude, cfg.attack.tolerance)
    attacker.oracle_calls.append(oracle.calls)
    return lam


def result_json(result: ExperimentResult) -> str:
    return json.dumps(result.to_dict(), indent=2, sort_keys=True, allow_nan=False)


def write_outputs(result: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(result_json(result) + "\n")
    with open(out / "rounds.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROUNDS_HEADER)
        for r in result.records:
            w.writerow([r.round, _fmt(r.loss), r.retained, r.poison_removed, r.poison_total])
    write_summary([result], out / "summary.csv")
    return out


def write_summary(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for r in results:
            w.writerow(r.summary_row())


def result_from_dict(data: Dict) -> ExperimentResult:
    def num(x):
        return math.nan if x is None else x

    records = [RoundRecord(**{k: num(v) if k in ("loss", "precision", "recall", "magnitude") else v
                              for k, v in r.items()}) for r in data["records"]]
    return ExperimentResult(records, num(data["acc"]), num(data["asr"]), num(data["sep_ratio_E"]),
                            num(data["sep_ratio_U"]), num(data["sep_ratio_H"]), data["wall_time"],
                            data["config"], data["seed"], data.get("flags", {}))
