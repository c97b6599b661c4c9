"""Minibatch training loop shared by SegMatch and Audio2vec."""
from dataclasses import dataclass
import json
import logging
import time

import numpy as np

from . import nn
from .corpus import batcher, subseed
from .errors import DataError
from .evaluation import paraphrase_retrieval

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.0002
    max_epochs: int = 15
    clip: float = 2.0
    batch_size: int = 16
    speaker_blocked: bool = False
    seed: int = 0


@dataclass
class TrainResult:
    best_params: dict
    best_epoch: int
    records: list
    optimizer: nn.Adam

    @property
    def best_record(self):
        return next(r for r in self.records if r["epoch"] == self.best_epoch)


def copy_params(params):
    return {k: v.copy() for k, v in params.items()}


def speaker_vocabulary(speakers):
    return sorted(set(map(str, speakers)))


def best_epoch(records, key="val_recall@10"):
    """Epoch maximizing ``key``; ties go to the earliest epoch."""
    best = None
    for r in records:
        if best is None or r[key] > best[key]:
            best = r
    return best["epoch"]


def train(model, train_features, train_speakers, val_features, val_image_ids, config=TrainConfig(),
          optimizer=None, start_epoch=0, log_file=None, speaker_vocab=None):
    """Train ``model`` in place, validating paraphrase recall after each epoch.

    Returns a :class:`TrainResult` whose ``best_params`` is a copy of the
    parameters at the epoch with the highest validation recall@10.
    ``log_file`` (an open text file) receives one JSON record per epoch.
    """
    if len(train_features) == 0 or len(val_features) == 0:
        raise DataError("training and validation splits must be non-empty")
    if len(train_features) < 2:
        raise DataError("training needs at least 2 utterances per batch")
    dtype = model.params["enc.conv.kernel"].dtype
    xs = [np.asarray(x, dtype=dtype) for x in train_features]
    for i, x in enumerate(xs):
        if len(x) < model.min_length():
            raise DataError(f"training utterance {i} has {len(x)} frames; model needs {model.min_length()}")
    vocab = speaker_vocab or speaker_vocabulary(train_speakers)
    index = {s: i for i, s in enumerate(vocab)}
    try:
        labels = np.array([index[str(s)] for s in train_speakers])
    except KeyError as exc:
        raise DataError(f"unknown speaker id {exc.args[0]!r}") from exc
    optimizer = optimizer or nn.Adam(lr=config.lr)

    records = []
    best_params, best_r10 = None, -np.inf
    for epoch in range(start_epoch + 1, start_epoch + config.max_epochs + 1):
        t0 = time.time()
        batches = batcher(train_speakers, config.batch_size, config.speaker_blocked,
                          seed=subseed(config.seed, f"batches/{epoch}"))
        losses, mixed = [], 0
        for idx in batches:
            if len(idx) < 2:
                continue
            if len({str(train_speakers[i]) for i in idx}) > 1:
                mixed += 1
            loss, grads = model.loss_and_grads([xs[i] for i in idx], labels[idx])
            grads, _ = nn.clip_gradients(grads, config.clip)
            optimizer.step(model.params, grads)
            losses.append(loss)
        metrics = paraphrase_retrieval(model.embed(val_features), val_image_ids)
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_recall@1": metrics.recall_at[1],
            "val_recall@5": metrics.recall_at[5],
            "val_recall@10": metrics.recall_at[10],
            "val_median_rank": metrics.median_rank,
            "batches": len(batches),
            "mixed_speaker_batches": mixed,
        }
        records.append(record)
        log.info("epoch %d loss %.4f R@10 %.3f medr %.1f (%.1fs)", epoch, record["train_loss"],
                 record["val_recall@10"], record["val_median_rank"], time.time() - t0)
        if log_file is not None:
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            log_file.flush()
        if record["val_recall@10"] > best_r10:
            best_r10 = record["val_recall@10"]
            best_params = copy_params(model.params)
    return TrainResult(best_params, best_epoch(records), records, optimizer)
