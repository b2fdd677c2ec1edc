"""Full-batch training loop, evaluation, and the multi-seed run protocol.

Each epoch draws two augmented views for the contrastive term, runs a
clean-graph forward pass for the supervised term, and takes one optimizer
step on the combined loss. After the warmup epoch and then every R epochs
a correction round rewrites suspect working labels using a fresh
clean-graph forward pass. The protocol repeats training over several seeds
with a fresh split, fresh noise and fresh initialization per run and
reports mean and population std of the final test accuracy.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, make_views
from .correction import RELABELED, CorrectionConfig, append_audit, correct_labels
from .encoder import EncoderConfig, ModelParams, encode, init_params, normalized_embeddings, predict
from .errors import ContractError, NumericError, TrainingError
from .graph import UNLABELED, Dataset, LabelStore, make_split
from .noise import NoiseSpec, SynthSpec, gen_synthetic, inject
from .objectives import LossConfig, contrastive_loss, supervised_loss, total_loss
from .tensor import Tape, backward, no_grad, zero_grads

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    warmup: int = 100
    correction_period: int = 20
    learning_rate: float = 0.01
    optimizer: str = "adam"  # adam | sgd
    seed: int = 0
    use_contrastive: bool = True
    use_correction: bool = True
    hidden_dim: int = 256
    embed_dim: int = 256
    num_layers: int = 3
    aug: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    correction: CorrectionConfig = field(default_factory=CorrectionConfig)

    def validate(self) -> None:
        if not 0 < self.warmup <= self.epochs:
            raise ContractError(
                f"warmup must satisfy 0 < W <= epochs, got W={self.warmup}, epochs={self.epochs}")
        if self.correction_period < 1:
            raise ContractError(f"correction period must be >= 1, got {self.correction_period}")
        if self.learning_rate <= 0:
            raise ContractError(f"learning rate must be positive, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ContractError(f"unknown optimizer '{self.optimizer}'")
        self.aug.validate()
        self.loss.validate()
        self.correction.validate()


@dataclass
class RunMetrics:
    epochs: list = field(default_factory=list)
    corrections: list = field(default_factory=list)
    final_test_acc: float = 0.0

    def relabel_totals(self):
        relabeled = sum(c["relabeled"] for c in self.corrections)
        hits = sum(c["relabeled_correct"] for c in self.corrections)
        noisy = sum(c["noisy_before"] for c in self.corrections)
        return relabeled, hits, noisy


class Sgd:
    def __init__(self, params, lr):
        self.params = list(params)
        self.lr = lr

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.values -= (self.lr * p.grad).astype(p.values.dtype)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (self.lr / b1c) * m / (np.sqrt(v / b2c) + self.eps)
            p.values -= update.astype(p.values.dtype)


def make_optimizer(cfg: TrainConfig, params: ModelParams):
    tensors = params.tensors()
    if cfg.optimizer == "sgd":
        return Sgd(tensors, cfg.learning_rate)
    return Adam(tensors, cfg.learning_rate)


def _accuracy(q: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ContractError("accuracy over an empty mask")
    pred = np.argmax(q[idx], axis=1)
    return float(np.count_nonzero(pred == target[idx])) / idx.size


def correction_epochs(cfg: TrainConfig):
    """Epochs at which a correction round runs: W, W+R, ... up to the last epoch."""
    return list(range(cfg.warmup, cfg.epochs + 1, cfg.correction_period))


def train(dataset: Dataset, cfg: TrainConfig, metrics_path=None, corrections_path=None):
    """Train on one dataset; returns (params, RunMetrics)."""
    cfg.validate()
    labels = dataset.labels.copy()
    if not labels.train_mask.any():
        raise ContractError("train: empty train mask")
    if np.any(labels.observed[labels.train_mask] == UNLABELED):
        raise ContractError("train: a train node has no observed label")

    g, x = dataset.graph, dataset.attrs
    enc_cfg = EncoderConfig(input_dim=x.dim, num_layers=cfg.num_layers,
                            hidden_dim=cfg.hidden_dim, embed_dim=cfg.embed_dim)
    rng = np.random.default_rng(cfg.seed)
    init_rng, aug_rng = rng.spawn(2)
    params = init_params(enc_cfg, labels.num_classes, init_rng)
    opt = make_optimizer(cfg, params)
    rounds = set(correction_epochs(cfg)) if cfg.use_correction else set()

    metrics = RunMetrics()
    for epoch in range(1, cfg.epochs + 1):
        try:
            with Tape():
                l_cl = None
                if cfg.use_contrastive:
                    (g1, x1), (g2, x2) = make_views(g, x, cfg.aug, rng=aug_rng)
                    h1 = encode(g1, x1, params)
                    h2 = encode(g2, x2, params)
                    l_cl = contrastive_loss(h1, h2, cfg.loss.temperature)
                h = encode(g, x, params)
                q = predict(h, params)
                l_sup = supervised_loss(q, labels.working, labels.train_mask)
                loss = total_loss(l_cl, l_sup, cfg.loss)
                if not np.isfinite(loss.values).all():
                    raise NumericError("loss is not finite")
                backward(loss)
            opt.step()
            zero_grads(params.tensors())
        except NumericError as e:
            raise TrainingError(f"training diverged at epoch {epoch}: {e}") from e

        qv = q.values
        entry = {
            "epoch": epoch,
            "loss": loss.item(),
            "loss_contrastive": 0.0 if l_cl is None else l_cl.item(),
            "loss_supervised": l_sup.item(),
            "train_acc": _accuracy(qv, labels.working, labels.train_mask),
        }
        if labels.clean is not None and labels.test_mask.any():
            entry["test_acc"] = _accuracy(qv, labels.clean, labels.test_mask)
        metrics.epochs.append(entry)

        if epoch in rounds:
            with no_grad():
                h_corr = encode(g, x, params)
                q_corr = predict(h_corr, params)
            hn = normalized_embeddings(h_corr.values)
            before = labels.working.copy()
            labels, records = correct_labels(labels, g, hn, q_corr.values, cfg.correction)
            stats = _round_stats(epoch, before, labels, records)
            metrics.corrections.append(stats)
            if corrections_path is not None:
                append_audit(corrections_path, records)
            logger.info("epoch %d: relabeled %d/%d train nodes", epoch,
                        stats["relabeled"], int(labels.train_mask.sum()))

    if labels.clean is not None and labels.test_mask.any():
        metrics.final_test_acc = _accuracy(_predictions(dataset, params), labels.clean,
                                           labels.test_mask)
    if metrics_path is not None:
        with open(metrics_path, "w", encoding="utf-8") as fh:
            for entry in metrics.epochs:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
            for entry in metrics.corrections:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return params, metrics


def _round_stats(epoch: int, before: np.ndarray, labels, records) -> dict:
    relabels = [r for r in records if r.verdict == RELABELED]
    stats = {
        "epoch": epoch,
        "event": "correction",
        "relabeled": len(relabels),
        "relabeled_correct": 0,
        "noisy_before": 0,
        "precision": None,
        "recall": None,
    }
    if labels.clean is None:
        return stats
    train = labels.train_mask
    noisy_before = int(np.count_nonzero(before[train] != labels.clean[train]))
    hits = sum(1 for r in relabels if r.new_label == int(labels.clean[r.node]))
    stats["noisy_before"] = noisy_before
    stats["relabeled_correct"] = hits
    if relabels:
        stats["precision"] = hits / len(relabels)
    if noisy_before:
        stats["recall"] = hits / noisy_before
    return stats


def _predictions(dataset: Dataset, params: ModelParams) -> np.ndarray:
    with no_grad():
        h = encode(dataset.graph, dataset.attrs, params)
        return predict(h, params).values


def evaluate(params: ModelParams, dataset: Dataset, mask: np.ndarray) -> float:
    """Accuracy of argmax predictions against clean labels on the masked nodes."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ContractError("evaluate: empty mask")
    if dataset.labels.clean is None:
        raise ContractError("evaluate: dataset has no clean labels")
    if np.any(dataset.labels.clean[mask] == UNLABELED):
        raise ContractError("evaluate: a masked node has no clean label")
    return _accuracy(_predictions(dataset, params), dataset.labels.clean, mask)


# ---------------------------------------------------------------------------
# multi-seed protocol
# ---------------------------------------------------------------------------


def prepare_run(base: Dataset, label_rate: float | None, noise: NoiseSpec | None,
                seed: int) -> Dataset:
    """Fresh split (when a rate is given) and fresh noise for one run."""
    labels = base.labels.copy()
    if label_rate is not None:
        if labels.clean is None:
            raise ContractError("protocol needs clean labels to draw a split")
        train_mask, test_mask = make_split(base.graph.num_nodes, label_rate,
                                           labels.clean, seed=seed)
        observed = np.where(train_mask, labels.clean, UNLABELED)
        labels = LabelStore.create(labels.num_classes, base.graph.num_nodes,
                                   observed, train_mask, test_mask, clean=labels.clean)
    if noise is not None and noise.rate > 0:
        labels = inject(labels, replace(noise, seed=seed))
    return Dataset(base.graph, base.attrs, labels)


def run_protocol(dataset_spec, noise_spec: NoiseSpec | None, cfg: TrainConfig,
                 num_runs: int = 5, label_rate: float | None = None,
                 label: str = "full", out_dir=None) -> dict:
    """Train ``num_runs`` seeds (base seed + run index) and summarize.

    ``dataset_spec`` is either a Dataset carrying clean labels or a
    SynthSpec to generate one. Each run draws a fresh split, fresh noise
    and a fresh initialization from its own seed.
    """
    if num_runs < 1:
        raise ContractError(f"num_runs must be >= 1, got {num_runs}")
    if isinstance(dataset_spec, SynthSpec):
        base = gen_synthetic(dataset_spec)
    elif isinstance(dataset_spec, Dataset):
        base = dataset_spec
    else:
        raise ContractError(f"unsupported dataset spec {type(dataset_spec).__name__}")

    out = None if out_dir is None else Path(out_dir)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    accs, precisions, recalls, relabel_counts, run_rows = [], [], [], [], []
    for r in range(num_runs):
        seed = cfg.seed + r
        ds = prepare_run(base, label_rate, noise_spec, seed)
        run_cfg = replace(cfg, seed=seed)
        metrics_path = None if out is None else out / f"metrics_run{r}.jsonl"
        corrections_path = None if out is None else out / f"corrections_run{r}.jsonl"
        _, metrics = train(ds, run_cfg, metrics_path=metrics_path,
                           corrections_path=corrections_path)
        relabeled, hits, noisy = metrics.relabel_totals()
        precision = hits / relabeled if relabeled else None
        recall = hits / noisy if noisy else None
        accs.append(metrics.final_test_acc)
        relabel_counts.append(relabeled)
        if precision is not None:
            precisions.append(precision)
        if recall is not None:
            recalls.append(recall)
        run_rows.append({
            "run": r,
            "seed": seed,
            "final_test_acc": metrics.final_test_acc,
            "relabeled": relabeled,
            "relabel_precision": precision,
            "relabel_recall": recall,
        })
        logger.info("run %d (%s): test acc %.4f, relabeled %d", r, label,
                    metrics.final_test_acc, relabeled)

    summary = {
        "label": label,
        "num_runs": num_runs,
        "mean_acc": float(np.mean(accs)),
        "std_acc": float(np.std(accs)),
        "relabel_precision_mean": float(np.mean(precisions)) if precisions else None,
        "relabel_recall_mean": float(np.mean(recalls)) if recalls else None,
        "relabeled_mean": float(np.mean(relabel_counts)),
        "runs": run_rows,
    }
    if out is not None:
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return summary
