"""Metric-learning optimization: user-disjoint splits, batch-hard triplet
mining, the training loop, retrieval validation metrics, and random
hyperparameter search.

Batches are composed as P users x K windows; after every epoch the model
is scored on the validation users with R-Precision and Precision@1 and
the checkpoint with the best Precision@1 is retained (the selection
criterion), stopping after `patience` epochs without improvement.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, replace

import numpy as np
import torch

from .encoding import FeatureWindow, Standardizer, fit_standardizer
from .errors import ConfigurationError, InvalidInputError, NumericalError
from .model import (
    Checkpoint,
    ModelConfig,
    MotionEmbedder,
    TrainState,
    checkpoint_from_model,
    embed_windows,
    frame_dropout,
    init_model,
)


@dataclass(frozen=True)
class DataSplit:
    train_users: tuple[str, ...]
    val_users: tuple[str, ...]
    test_users: tuple[str, ...]

    def __post_init__(self):
        groups = (set(self.train_users), set(self.val_users), set(self.test_users))
        if not all(groups):
            raise ConfigurationError("every split subset must be non-empty")
        if len(groups[0] | groups[1] | groups[2]) != sum(len(g) for g in groups):
            raise ConfigurationError("split subsets must be pairwise disjoint")


def make_split(users, counts: tuple[int, int, int], seed: int) -> DataSplit:
    """Deterministic shuffled user assignment into train/val/test."""
    users = sorted(set(users))
    n_train, n_val, n_test = counts
    if min(counts) < 1:
        raise ConfigurationError(f"all split counts must be >= 1, got {counts}")
    if n_train + n_val + n_test > len(users):
        raise ConfigurationError(
            f"split counts {counts} need {n_train + n_val + n_test} users, have {len(users)}")
    perm = np.random.default_rng(seed).permutation(len(users))
    shuffled = [users[i] for i in perm]
    return DataSplit(
        train_users=tuple(sorted(shuffled[:n_train])),
        val_users=tuple(sorted(shuffled[n_train:n_train + n_val])),
        test_users=tuple(sorted(shuffled[n_train + n_val:n_train + n_val + n_test])))


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 0.2
    learning_rate: float = 1e-3
    p_users: int = 4
    k_windows: int = 4
    epochs: int = 30
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0:
            raise ConfigurationError("margin must be > 0")
        if self.p_users < 2 or self.k_windows < 2:
            raise ConfigurationError("batches need P >= 2 users and K >= 2 windows")
        if self.epochs < 1 or self.patience < 1:
            raise ConfigurationError("epochs and patience must be >= 1")
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")


@dataclass(frozen=True)
class ValidationReport:
    r_precision: float
    precision_at_1: float
    epoch: int

    def __post_init__(self):
        for name in ("r_precision", "precision_at_1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name}={v} outside [0, 1]")


def triplet_loss(d_ap: float, d_an: float, m: float) -> float:
    """Margin loss max(0, d_ap - d_an + m) on nonnegative distances."""
    if d_ap < 0 or d_an < 0:
        raise InvalidInputError("distances must be nonnegative")
    return max(0.0, d_ap - d_an + m)


def _pairwise_sq_dists(emb: np.ndarray) -> np.ndarray:
    diff = emb[:, None, :] - emb[None, :, :]
    return np.sum(diff * diff, axis=-1)


def mine_batch(embeddings: np.ndarray, labels) -> list[tuple[int, int, int]]:
    """Batch-hard mining: per anchor, the farthest same-user window as the
    positive and the nearest other-user window as the negative.

    Anchors without a same-user partner or without any other-user window
    are skipped with a warning.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    d2 = _pairwise_sq_dists(emb)
    triples = []
    skipped = 0
    for i in range(len(labels)):
        same = labels == labels[i]
        same[i] = False
        other = labels != labels[i]
        if not same.any() or not other.any():
            skipped += 1
            continue
        same_idx = np.nonzero(same)[0]
        other_idx = np.nonzero(other)[0]
        pos = int(same_idx[np.argmax(d2[i, same_idx])])
        neg = int(other_idx[np.argmin(d2[i, other_idx])])
        triples.append((i, pos, neg))
    if skipped:
        warnings.warn(f"mine_batch skipped {skipped} degenerate anchors", stacklevel=2)
    return triples


def _neighbor_ranking(query_emb: np.ndarray, ref_emb: np.ndarray) -> np.ndarray:
    """Stable distance ordering of references per query (ties by index)."""
    q = np.asarray(query_emb, dtype=np.float64)
    r = np.asarray(ref_emb, dtype=np.float64)
    d2 = np.sum((q[:, None, :] - r[None, :, :]) ** 2, axis=-1)
    return np.argsort(d2, axis=1, kind="stable")


def precision_at_1(query_emb, query_users, ref_emb, ref_users) -> float:
    """Fraction of queries whose single nearest reference shares their user."""
    ref_users = np.asarray(ref_users)
    if len(ref_users) == 0:
        raise InvalidInputError("reference set is empty")
    order = _neighbor_ranking(query_emb, ref_emb)
    nearest = ref_users[order[:, 0]]
    return float(np.mean(nearest == np.asarray(query_users)))


def r_precision(query_emb, query_users, ref_emb, ref_users) -> float:
    """Per query: among its R nearest references (R = that user's reference
    count), the fraction sharing its user; averaged over queries."""
    query_users = np.asarray(query_users)
    ref_users = np.asarray(ref_users)
    if len(ref_users) == 0:
        raise InvalidInputError("reference set is empty")
    order = _neighbor_ranking(query_emb, ref_emb)
    scores = []
    skipped = 0
    for i, user in enumerate(query_users):
        r = int(np.sum(ref_users == user))
        if r == 0:
            skipped += 1
            continue
        top = ref_users[order[i, :r]]
        scores.append(float(np.mean(top == user)))
    if skipped:
        warnings.warn(f"r_precision excluded {skipped} queries with no same-user references",
                      stacklevel=2)
    if not scores:
        raise InvalidInputError("no query has same-user references")
    return float(np.mean(scores))


def alternate_query_reference(windows: list[FeatureWindow]):
    """Split windows into (references, queries): within each (user, condition)
    group, sorted by window_id, even positions are references and odd
    positions are queries."""
    groups: dict[tuple[str, str], list[FeatureWindow]] = {}
    for w in windows:
        groups.setdefault((w.user_id, w.condition), []).append(w)
    refs, queries = [], []
    for key in sorted(groups):
        ordered = sorted(groups[key], key=lambda w: w.window_id)
        refs.extend(ordered[0::2])
        queries.extend(ordered[1::2])
    return refs, queries


def _stack(windows: list[FeatureWindow], standardizer: Standardizer):
    feats = np.stack([standardizer.transform(w).features for w in windows])
    users = np.array([w.user_id for w in windows])
    return feats, users


def validation_metrics(model: MotionEmbedder, val_windows: list[FeatureWindow],
                       standardizer: Standardizer, epoch: int) -> ValidationReport:
    refs, queries = alternate_query_reference(val_windows)
    if not refs or not queries:
        raise InvalidInputError("validation set too small to split into queries and references")
    ref_feats, ref_users = _stack(refs, standardizer)
    q_feats, q_users = _stack(queries, standardizer)
    ref_emb = embed_windows(model, ref_feats)
    q_emb = embed_windows(model, q_feats)
    return ValidationReport(
        r_precision=r_precision(q_emb, q_users, ref_emb, ref_users),
        precision_at_1=precision_at_1(q_emb, q_users, ref_emb, ref_users),
        epoch=epoch)


def _compose_batches(labels: np.ndarray, p_users: int, k_windows: int,
                     rng: np.random.Generator) -> list[np.ndarray]:
    by_user: dict[str, np.ndarray] = {}
    for user in sorted(set(labels.tolist())):
        by_user[user] = np.nonzero(labels == user)[0]
    users = sorted(by_user)
    order = rng.permutation(len(users))
    batches = []
    for start in range(0, len(users) - 1, p_users):
        chunk = [users[i] for i in order[start:start + p_users]]
        if len(chunk) < 2:
            continue
        idx = []
        for user in chunk:
            pool = by_user[user]
            replace_draw = len(pool) < k_windows
            idx.append(rng.choice(pool, size=k_windows, replace=replace_draw))
        batches.append(np.concatenate(idx))
    return batches


def train(model: MotionEmbedder, train_windows: list[FeatureWindow],
          val_windows: list[FeatureWindow], cfg: TrainConfig, *,
          fps: float, standardizer: Standardizer | None = None,
          initial_epoch: int = 0) -> tuple[Checkpoint, list[ValidationReport]]:
    """Optimize the model on mined triplet losses, tracking the best epoch.

    Returns the checkpoint with the best validation Precision@1 plus the
    per-epoch validation history. Raises NumericalError on divergence.
    """
    train_users = {w.user_id for w in train_windows}
    val_users = {w.user_id for w in val_windows}
    if train_users & val_users:
        raise ConfigurationError(
            f"train/val users overlap: {sorted(train_users & val_users)}")
    if standardizer is None:
        standardizer = fit_standardizer(train_windows)
    lengths = {w.features.shape[0] for w in train_windows + val_windows}
    if len(lengths) != 1:
        raise InvalidInputError(f"windows have mixed lengths {sorted(lengths)}")
    window_len = lengths.pop()

    feats, labels = _stack(train_windows, standardizer)
    ss = np.random.SeedSequence(cfg.seed)
    batch_rng, drop_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    p_drop = model.config.frame_dropout_p

    best_p1 = -1.0
    best_tensors: dict[str, torch.Tensor] = {}
    best_epoch = initial_epoch
    stale = 0
    history: list[ValidationReport] = []

    for e in range(cfg.epochs):
        epoch = initial_epoch + e
        model.train()
        for batch_idx in _compose_batches(labels, cfg.p_users, cfg.k_windows, batch_rng):
            batch = np.stack([frame_dropout(feats[i], p_drop, drop_rng)
                              for i in batch_idx])
            emb = model(torch.from_numpy(batch))
            triples = mine_batch(emb.detach().numpy(), labels[batch_idx])
            if not triples:
                continue
            a, p, n = (list(col) for col in zip(*triples))
            d_ap = torch.linalg.vector_norm(emb[a] - emb[p], dim=1)
            d_an = torch.linalg.vector_norm(emb[a] - emb[n], dim=1)
            loss = torch.relu(d_ap - d_an + cfg.margin).mean()
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite triplet loss at epoch {epoch} (lr={cfg.learning_rate})")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()

        report = validation_metrics(model, val_windows, standardizer, epoch)
        history.append(report)
        if report.precision_at_1 > best_p1:
            best_p1 = report.precision_at_1
            best_tensors = {name: t.detach().clone()
                            for name, t in model.state_dict().items()}
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    if best_tensors:
        model.load_state_dict(best_tensors)
    model.eval()
    state = TrainState(epochs_completed=initial_epoch + len(history),
                       best_val_precision_at_1=max(best_p1, 0.0))
    ckpt = checkpoint_from_model(model, standardizer, fps, window_len, state)
    return ckpt, history


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    seed: int
    config: dict
    val_precision_at_1: float
    val_r_precision: float
    epochs_ran: int


TRIAL_LOG_HEADER = ["trial_id", "seed", "config_json", "val_precision_at_1",
                    "val_r_precision", "epochs_ran"]

_MODEL_KEYS = {f for f in ModelConfig.__dataclass_fields__ if f != "seed"}
_TRAIN_KEYS = {f for f in TrainConfig.__dataclass_fields__ if f != "seed"}


def write_trial_log(trials: list[TrialRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIAL_LOG_HEADER)
        for t in trials:
            writer.writerow([t.trial_id, t.seed, json.dumps(t.config, sort_keys=True),
                             t.val_precision_at_1, t.val_r_precision, t.epochs_ran])


def hyperparameter_search(space: dict, budget: int, seed: int,
                          train_windows: list[FeatureWindow],
                          val_windows: list[FeatureWindow], *,
                          fps: float,
                          base_model: ModelConfig | None = None,
                          base_train: TrainConfig | None = None,
                          trial_log_path=None) -> tuple[Checkpoint, list[TrialRecord]]:
    """Random search over discrete candidate lists.

    `space` maps a ModelConfig or TrainConfig field name to a sequence of
    candidate values; each trial draws one value per key. The checkpoint
    with the highest validation Precision@1 wins (ties favor the earlier
    trial), and the full trial log is returned (and written as CSV when
    trial_log_path is given).
    """
    if budget < 1:
        raise ConfigurationError(f"search budget must be >= 1, got {budget}")
    base_model = base_model or ModelConfig()
    base_train = base_train or TrainConfig()
    unknown = set(space) - _MODEL_KEYS - _TRAIN_KEYS
    if unknown:
        raise ConfigurationError(f"unknown search-space keys: {sorted(unknown)}")
    for key, choices in space.items():
        if not len(choices):
            raise ConfigurationError(f"search-space key {key} has no candidates")

    rng = np.random.default_rng(seed)
    best: tuple[float, Checkpoint] | None = None
    trials: list[TrialRecord] = []
    for trial_id in range(budget):
        trial_seed = int(rng.integers(0, 2**31 - 1))
        sampled = {key: choices[int(rng.integers(len(choices)))]
                   for key, choices in sorted(space.items())}
        model_cfg = replace(base_model, seed=trial_seed,
                            **{k: v for k, v in sampled.items() if k in _MODEL_KEYS})
        train_cfg = replace(base_train, seed=trial_seed,
                            **{k: v for k, v in sampled.items() if k in _TRAIN_KEYS})
        model = init_model(model_cfg)
        ckpt, history = train(model, train_windows, val_windows, train_cfg, fps=fps)
        p1 = ckpt.train_state.best_val_precision_at_1
        best_report = max(history, key=lambda h: h.precision_at_1)
        trials.append(TrialRecord(
            trial_id=trial_id, seed=trial_seed, config=sampled,
            val_precision_at_1=p1, val_r_precision=best_report.r_precision,
            epochs_ran=len(history)))
        if best is None or p1 > best[0]:
            best = (p1, ckpt)
    if trial_log_path is not None:
        write_trial_log(trials, trial_log_path)
    return best[1], trials
