"""Training loop, evaluation, and run-directory artifacts."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass

import numpy as np

from batchot import embed
from batchot.config import RunConfig
from batchot.data import Dataset, batch_pair_stream, load_mnist_idx, synth_blobs, train_test_split
from batchot.ground import GroundParams, ground_matrices
from batchot.loss import (
    WeightingMode,
    contrastive_loss,
    contrastive_parts,
    make_weights,
    otl_forward,
    otl_gradient,
    triplet_loss,
)
from batchot.metrics import RetrievalReport, accuracy, report_csv, retrieval_metrics, train_linear_classifier
from batchot.ot import SinkhornConfig

log = logging.getLogger(__name__)

CURVES_HEADER = ["epoch", "map", "accuracy", "loss_total", "loss_pos", "loss_neg", "surrogate", "seconds"]
CURVES_FILE = "curves.csv"
REPORT_FILE = "report.csv"
TIMING_FILE = "timing.csv"
CHECKPOINT_FILE = "checkpoint.bin"
CONFIG_FILE = "config.txt"

# spawn keys for the independent random streams of one run
_INIT, _SHUFFLE, _WEIGHTS, _TRIPLETS, _CLASSIFIER = range(5)


def _stream(seed: int, key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, key])


def _stream_seed(seed: int, key: int, *extra: int) -> int:
    return int(np.random.SeedSequence([seed, key, *extra]).generate_state(1)[0])


@dataclass
class EpochRow:
    epoch: int
    map: float
    accuracy: float
    loss_total: float
    loss_pos: float
    loss_neg: float
    surrogate: float
    seconds: float | None

    def cells(self) -> list[str]:
        values = [self.map, self.accuracy, self.loss_total, self.loss_pos, self.loss_neg, self.surrogate]
        seconds = "" if self.seconds is None else repr(round(self.seconds, 6))
        return [str(self.epoch)] + [repr(float(v)) for v in values] + [seconds]


def load_datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "blobs":
        full = synth_blobs(cfg.blob_classes, cfg.blob_per_class, cfg.blob_dim, cfg.blob_sigma, cfg.blob_seed)
        train, test = train_test_split(full, cfg.test_fraction, cfg.blob_seed)
    else:
        paths = cfg.mnist_paths()
        train = load_mnist_idx(paths["train_images"], paths["train_labels"])
        test = load_mnist_idx(paths["test_images"], paths["test_labels"])
    rng = np.random.default_rng(cfg.subset_seed)
    if cfg.train_limit and cfg.train_limit < len(train):
        train = train.take(np.sort(rng.permutation(len(train))[: cfg.train_limit]))
    if cfg.test_limit and cfg.test_limit < len(test):
        test = test.take(np.sort(rng.permutation(len(test))[: cfg.test_limit]))
    return train, test


def build_network(cfg: RunConfig, input_dim: int) -> embed.EmbedNet:
    sizes = [input_dim] + cfg.hidden_and_embedding()
    return embed.init(sizes, _stream_seed(cfg.seed, _INIT))


def embed_all(net: embed.EmbedNet, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
    return np.concatenate([embed.forward(net, x[i : i + chunk])[0] for i in range(0, x.shape[0], chunk)])


def evaluate(net: embed.EmbedNet, train: Dataset, test: Dataset, cfg: RunConfig) -> tuple[RetrievalReport, float]:
    """Test-set retrieval report and linear-probe accuracy (probe fit on train)."""
    test_emb = embed_all(net, test.features)
    report = retrieval_metrics(test_emb, test.labels)
    clf = train_linear_classifier(
        embed_all(net, train.features),
        train.labels,
        epochs=cfg.classifier_epochs,
        lr=cfg.classifier_lr,
        seed=_stream_seed(cfg.seed, _CLASSIFIER),
    )
    return report, accuracy(clf, test_emb, test.labels)


class Trainer:
    """Owns the network and random streams for one run."""

    def __init__(self, cfg: RunConfig, train: Dataset):
        self.cfg = cfg
        self.train = train
        self.net = build_network(cfg, train.dim)
        self.opt = embed.OptimizerConfig(cfg.learning_rate, cfg.momentum, cfg.weight_decay)
        self.ground = GroundParams(cfg.gamma, cfg.epsilon)
        self.sinkhorn = SinkhornConfig(
            lam=cfg.lam, max_iterations=cfg.sinkhorn_iterations, stabilized=cfg.stabilized
        )
        self.mode = WeightingMode(cfg.weighting, seed=cfg.seed)
        self.weight_rng = np.random.default_rng(_stream(cfg.seed, _WEIGHTS))
        self.triplet_rng = np.random.default_rng(_stream(cfg.seed, _TRIPLETS))
        self._members = [np.flatnonzero(train.labels == c) for c in range(train.class_count)]
        self._others = [np.flatnonzero(train.labels != c) for c in range(train.class_count)]

    def _apply(self, traces_and_grads) -> None:
        grads = None
        for trace, grad in traces_and_grads:
            g = embed.backward(self.net, trace, grad)
            grads = g if grads is None else grads + g
        embed.sgd_step(self.net, grads, self.opt)

    def step_ot(self, pair) -> tuple[float, float, float, float]:
        e1, tr1 = embed.forward(self.net, pair.x1)
        e2, tr2 = embed.forward(self.net, pair.x2)
        g = ground_matrices(e1, e2, pair.labels1, pair.labels2, self.ground)
        t = make_weights(self.mode, g, self.sinkhorn, rng=self.weight_rng)
        value = otl_forward(g, t)
        g1, g2 = otl_gradient(e1, e2, g, t)
        self._apply([(tr1, g1), (tr2, g2)])
        return value.total, value.positive_part, value.negative_part, value.surrogate

    def step_contrastive(self, pair) -> tuple[float, float, float, float]:
        e1, tr1 = embed.forward(self.net, pair.x1)
        e2, tr2 = embed.forward(self.net, pair.x2)
        y = (pair.labels1 == pair.labels2).astype(np.float64)
        loss, g1, g2 = contrastive_loss(e1, e2, y, self.cfg.epsilon)
        pos, neg = contrastive_parts(e1, e2, y, self.cfg.epsilon)
        self._apply([(tr1, g1), (tr2, g2)])
        return loss, pos, neg, loss

    def step_triplet(self, pair) -> tuple[float, float, float, float]:
        rng = self.triplet_rng
        pos_idx = np.array([rng.choice(self._members[c]) for c in pair.labels1])
        neg_idx = np.array([rng.choice(self._others[c]) for c in pair.labels1])
        ea, tra = embed.forward(self.net, pair.x1)
        ep, trp = embed.forward(self.net, self.train.features[pos_idx])
        en, trn = embed.forward(self.net, self.train.features[neg_idx])
        loss, (ga, gp, gn) = triplet_loss(ea, ep, en, self.cfg.epsilon)
        d_ap = np.sum((ea - ep) ** 2, axis=1)
        d_an = np.sum((ea - en) ** 2, axis=1)
        active = (d_ap - d_an + self.cfg.epsilon) > 0
        pos = float(np.mean(active * d_ap))
        neg = float(np.mean(active * (self.cfg.epsilon - d_an)))
        self._apply([(tra, ga), (trp, gp), (trn, gn)])
        return loss, pos, neg, loss

    def run_epoch(self, epoch: int) -> np.ndarray:
        step = {"ot": self.step_ot, "contrastive": self.step_contrastive, "triplet": self.step_triplet}[self.cfg.loss]
        totals = []
        for pair in batch_pair_stream(self.train, self.cfg.batch_size, _stream_seed(self.cfg.seed, _SHUFFLE, epoch)):
            totals.append(step(pair))
        return np.mean(np.asarray(totals), axis=0)


@dataclass
class TrainResult:
    rows: list[EpochRow]
    net: embed.EmbedNet
    report: RetrievalReport
    accuracy: float
    output_dir: str


def _write_rows(path: str, header: list[str], rows: list[list[str]]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def train(cfg: RunConfig, datasets: tuple[Dataset, Dataset] | None = None, write: bool = True) -> TrainResult:
    """Run the full training loop described by ``cfg``.

    Writes ``curves.csv``, ``report.csv``, ``timing.csv``, ``config.txt``
    and ``checkpoint.bin`` under ``cfg.output_dir`` unless ``write`` is off.
    """
    train_ds, test_ds = datasets or load_datasets(cfg)
    if train_ds.dim != test_ds.dim:
        raise ValueError("train and test feature dimensions differ")
    trainer = Trainer(cfg, train_ds)
    if write:
        os.makedirs(cfg.output_dir, exist_ok=True)
        with open(os.path.join(cfg.output_dir, CONFIG_FILE), "w", encoding="utf-8") as fh:
            fh.write(cfg.to_text())

    rows: list[EpochRow] = []
    timing: list[list[str]] = []
    report, acc = None, float("nan")
    every = cfg.resolved_eval_every
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        losses = trainer.run_epoch(epoch)
        seconds = time.perf_counter() - start
        timing.append([str(epoch), repr(round(seconds, 6))])
        if epoch % every == 0 or epoch == cfg.epochs:
            report, acc = evaluate(trainer.net, train_ds, test_ds, cfg)
            rows.append(EpochRow(epoch, report.map, acc, *losses, seconds if cfg.record_time else None))
            log.info("epoch %d  mAP %.4f  acc %.4f  loss %.5f", epoch, report.map, acc, losses[0])
            if write:
                _write_rows(os.path.join(cfg.output_dir, CURVES_FILE), CURVES_HEADER, [r.cells() for r in rows])

    if write:
        _write_rows(os.path.join(cfg.output_dir, TIMING_FILE), ["epoch", "seconds"], timing)
        embed.save_checkpoint(trainer.net, os.path.join(cfg.output_dir, CHECKPOINT_FILE))
        with open(os.path.join(cfg.output_dir, REPORT_FILE), "w", encoding="utf-8") as fh:
            fh.write(report_csv(report, {"accuracy": acc}))
    return TrainResult(rows, trainer.net, report, acc, cfg.output_dir)


def read_curves(path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
