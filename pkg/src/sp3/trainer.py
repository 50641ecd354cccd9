"""The weakly semi-supervised training loop and the ablation harness.

Random draws per iteration, all from one generator, in this order: labelled
batch indices, unlabelled batch indices, then one dropout mask per image in
batch order.  Model initialisation and the labelled/unlabelled split use
their own generators derived from the seed.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .dataset import Dataset, Sample
from .grid import GridError
from .losses import pseudo_label_loss, supervised_loss
from .metrics import evaluate, mean_foreground_dice
from .model import SGD, PixelModel, backward, forward
from .propagation import (
    ThresholdState,
    dominant_proportion,
    ensemble_pseudo_label,
    expand_label_grid,
    scribble_conflicts,
    select_superpixels,
    superpixel_uncertainty,
    update_thresholds,
)
from .tensorio import tensor_write

log = logging.getLogger(__name__)

THRESHOLD_STRATEGIES = ("none", "always", "fixed", "ema", "ema_class")


@dataclass(frozen=True)
class TrainConfig:
    batch: int = 4
    mu: float = 0.5
    lr: float = 0.5
    iters: int = 500
    seed: int = 0
    tau0: float = 0.5
    momentum: float = 0.99
    dropout: float = 0.2
    labeled_ratio: float = 0.1
    val_every: int = 20
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-4
    init_scale: float = 0.01
    # ablation switches
    expand: bool = True
    pseudo: bool = True
    uncertainty: str = "superpixel"
    reverse_uncertainty: bool = False
    use_unlabeled: bool = True
    threshold: str = "ema_class"
    fixed_threshold: float = 0.8
    # recompute superpixels in memory with this n (None: use the manifest's)
    n_superpixels: int | None = None
    compactness: float = 0.1

    def __post_init__(self):
        if self.batch < 1 or self.iters < 0:
            raise GridError("batch must be >= 1 and iters >= 0")
        if not 0.0 < self.mu < 1.0:
            raise GridError("mu must lie in (0, 1)")
        if self.n_labeled < 1 or (self.use_unlabeled and self.n_unlabeled < 1):
            raise GridError(f"mu*B and (1-mu)*B must both be >= 1 (B={self.batch}, mu={self.mu})")
        if not 0.0 <= self.dropout < 1.0:
            raise GridError("dropout rate must lie in [0, 1)")
        if self.threshold not in THRESHOLD_STRATEGIES:
            raise GridError(f"unknown threshold strategy {self.threshold!r}")

    @property
    def n_labeled(self) -> int:
        return int(round(self.mu * self.batch))

    @property
    def n_unlabeled(self) -> int:
        return self.batch - self.n_labeled

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise GridError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    model: PixelModel
    rows: list[dict]
    thresholds: ThresholdState
    labeled_ids: list[str]
    checkpoints: list[dict] = field(default_factory=list)


def split_labeled(train: list[Sample], ratio: float, seed: int) -> tuple[list[Sample], list[Sample]]:
    rng = np.random.default_rng([seed, 1])
    k = min(len(train), max(1, int(round(ratio * len(train)))))
    pick = set(rng.choice(len(train), size=k, replace=False).tolist())
    return [s for i, s in enumerate(train) if i in pick], [s for i, s in enumerate(train) if i not in pick]


def _draw(rng, pool, k):
    idx = rng.choice(len(pool), size=k, replace=len(pool) < k)
    return [pool[i] for i in idx]


def predict(model: PixelModel, sample: Sample) -> np.ndarray:
    p1, p2, _ = forward(model, sample.image, train_mode=False, feats=sample.feats)
    return ensemble_pseudo_label(p1, p2)


def validation_dice(model: PixelModel, samples: list[Sample], classes: int) -> float:
    if not samples:
        return float("nan")
    return float(np.mean([mean_foreground_dice(predict(model, s), s.truth, classes) for s in samples]))


def log_columns(classes: int) -> list[str]:
    return ["iteration", "L_sup", "L_pseu"] + [f"T_{c}" for c in range(classes)] + ["sampling_rate", "val_dice"]


def train(dataset: Dataset, config: TrainConfig, checkpoint_every: int = 0) -> TrainResult:
    """Run the training loop and return the model and per-iteration log rows."""
    C = dataset.classes
    if config.n_superpixels is not None:
        dataset = dataset.with_superpixels(config.n_superpixels, config.compactness)
    train_set = dataset.split("train")
    labeled, unlabeled = split_labeled(train_set, config.labeled_ratio, config.seed)
    if config.use_unlabeled and not unlabeled:
        raise GridError("no unlabelled training samples left after the labelled split")
    for s in labeled:
        if s.scribbles is None:
            raise GridError(f"sample {s.id}: labelled sample without scribbles")
    for s in labeled + (unlabeled if config.use_unlabeled else []):
        if s.sp is None:
            raise GridError(f"sample {s.id}: superpixels missing")
    val_set = dataset.split("val")

    targets = {}
    for s in labeled:
        raw = s.raw_scribbles(C)
        if config.expand:
            clashes = scribble_conflicts(s.sp, raw, C)
            if len(clashes):
                log.warning("sample %s: %d superpixels hold multi-class scribbles; left unexpanded", s.id, len(clashes))
            targets[s.id] = expand_label_grid(s.sp, raw, C, on_conflict="keep")
        else:
            targets[s.id] = raw

    model = PixelModel.init(C, np.random.default_rng([config.seed, 0]), config.init_scale, config.dropout)
    opt = SGD(model.params(), config.lr, config.sgd_momentum, config.weight_decay)
    rng = np.random.default_rng([config.seed, 2])
    state = ThresholdState.initial(C, config.tau0, config.momentum)
    rows: list[dict] = []
    checkpoints: list[dict] = []
    val_dice = validation_dice(model, val_set, C)

    for it in range(1, config.iters + 1):
        if checkpoint_every and (it == 1 or it % checkpoint_every == 0):
            checkpoints.append({
                "iteration": it,
                "weights": model.to_tensor().copy(),
                "thresholds": state,
                "rng": rng.bit_generator.state,
            })
        batch = _draw(rng, labeled, config.n_labeled)
        n_lab = len(batch)
        if config.use_unlabeled:
            batch += _draw(rng, unlabeled, config.n_unlabeled)
        B = len(batch)

        grads = [np.zeros_like(p) for p in model.params()]
        l_sup = l_pseu = 0.0
        stats = []
        chosen_total = sp_total = 0
        for b, s in enumerate(batch):
            p1, p2, cache = forward(model, s.image, train_mode=True, rng=rng, feats=s.feats)
            g = np.zeros((2,) + p1.shape)
            if b < n_lab:
                sup = supervised_loss(p1, p2, targets[s.id])
                l_sup += sup.value / n_lab
                g += sup.grad / n_lab
            if config.pseudo:
                pseudo = ensemble_pseudo_label(p1, p2)
                refined, chosen, dom_psi = _refine(s, pseudo, state, config, C)
                if dom_psi is not None:
                    stats.append(dom_psi)
                chosen_total += int(chosen.sum())
                sp_total += s.sp.n
                unc = superpixel_uncertainty(s.sp, p1, p2, config.uncertainty, config.reverse_uncertainty)
                pseu = pseudo_label_loss(p1, p2, refined, unc)
                l_pseu += pseu.value / B
                g += pseu.grad / B
            for k, gk in enumerate(backward(cache, g[0], g[1])):
                grads[k] += gk
        opt.step(grads)

        if config.pseudo and config.threshold in ("ema", "ema_class") and stats:
            state = update_thresholds(state, stats, class_specific=config.threshold == "ema_class")
        if it == 1 or it % config.val_every == 0 or it == config.iters:
            val_dice = validation_dice(model, val_set, C)
        row = {"iteration": it, "L_sup": l_sup, "L_pseu": l_pseu}
        for c, t in enumerate(_effective_thresholds(state, config, C)):
            row[f"T_{c}"] = float(t)
        row["sampling_rate"] = chosen_total / sp_total if sp_total else 0.0
        row["val_dice"] = val_dice
        checked = [v for k, v in row.items() if k != "val_dice" or val_set]
        if not np.all(np.isfinite(checked)):
            raise FloatingPointError(f"non-finite log values at iteration {it}: {row}")
        rows.append(row)
    return TrainResult(model, rows, state, [s.id for s in labeled], checkpoints)


def _effective_thresholds(state: ThresholdState, config: TrainConfig, C: int) -> np.ndarray:
    if config.threshold == "always":
        return np.zeros(C)
    if config.threshold == "fixed":
        return np.full(C, config.fixed_threshold)
    if config.threshold == "none":
        return np.ones(C)
    return state.T


def _refine(s: Sample, pseudo, state, config, C):
    """Refined pseudo-label, per-superpixel selection mask, and (dom, psi)."""
    if config.threshold == "none":
        return pseudo, np.zeros(s.sp.n, dtype=bool), None
    dom, psi = dominant_proportion(s.sp, pseudo, C)
    chosen = select_superpixels(dom, psi, _effective_thresholds(state, config, C))
    refined = np.where(s.sp.broadcast(chosen), s.sp.broadcast(dom), pseudo).astype(np.uint8)
    return refined, chosen, (dom, psi)


def format_log(rows: list[dict], classes: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = log_columns(classes)
    w.writerow(cols)
    for r in rows:
        w.writerow([r["iteration"]] + [repr(float(r[c])) for c in cols[1:]])
    return buf.getvalue()


def save_run(result: TrainResult, config: TrainConfig, dataset: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    (out / "predictions").mkdir(parents=True, exist_ok=True)
    (out / "log.csv").write_text(format_log(result.rows, dataset.classes))
    tensor_write(out / "weights.spt", result.model.to_tensor())
    cfg = asdict(config)
    cfg["labeled_ids"] = result.labeled_ids
    cfg["classes"] = dataset.classes
    cfg["final_thresholds"] = result.thresholds.to_json()
    (out / "config.json").write_text(json.dumps(cfg, indent=1))
    for s in dataset.split("test"):
        tensor_write(out / "predictions" / f"{s.id}.spt", predict(result.model, s))
    return out


def test_report(model: PixelModel, dataset: Dataset) -> dict:
    """Mean foreground Dice/JI/HD95/ASD over the test split."""
    reports = [evaluate(predict(model, s), s.truth, dataset.classes) for s in dataset.split("test")]

    def avg(key):
        vals = [getattr(r, key) for r in reports]
        vals = [v for v in vals if np.isfinite(v)]
        return float(np.mean(vals)) if vals else float("nan")

    return {
        "test_dice": avg("mean_dice"),
        "test_ji": avg("mean_ji"),
        "test_hd95": avg("mean_hd95"),
        "test_asd": avg("mean_asd"),
    }


ABLATION_COLUMNS = ["variant", "seed", "val_dice", "test_dice", "test_ji", "test_hd95", "test_asd"]


def ablation_run(dataset: Dataset, variants: list[dict], seeds=(0,), base: dict | None = None) -> list[dict]:
    """Train every variant under every seed; one result row each.

    A variant is a dict with a ``name`` plus TrainConfig overrides applied on
    top of ``base``.
    """
    base_cfg = TrainConfig.from_dict(base or {})
    sp_cache: dict = {}
    rows = []
    for v in variants:
        overrides = {k: val for k, val in v.items() if k != "name"}
        for seed in seeds:
            cfg = replace(base_cfg, seed=seed, **overrides)
            data = dataset
            if cfg.n_superpixels is not None:
                key = (cfg.n_superpixels, cfg.compactness)
                if key not in sp_cache:
                    sp_cache[key] = dataset.with_superpixels(*key)
                data = sp_cache[key]
                cfg = replace(cfg, n_superpixels=None)
            res = train(data, cfg)
            row = {"variant": v["name"], "seed": seed, "val_dice": res.rows[-1]["val_dice"] if res.rows else float("nan")}
            row.update(test_report(res.model, data))
            rows.append(row)
            log.info("ablation %s seed %d: %s", v["name"], seed, row)
    return rows


def format_ablation(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in rows:
        w.writerow([r["variant"], r["seed"]] + [repr(float(r[c])) for c in ABLATION_COLUMNS[2:]])
    return buf.getvalue()
