"""Behaviour cloning of the driving modes (branched) and the mixed single-head baseline."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .experts import DemoDataset
from .features import FEATURE_DIM, batch_features
from .nets import AdamState, BranchedPolicyNet, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ILConfig:
    batch_size: int = 256
    learning_rate: float = 1e-3
    max_epochs: int = 50
    patience: int = 10
    val_fraction: float = 0.1
    feature_width: int = 64
    branch_width: int = 64
    max_batches_per_epoch: int = 0  # 0: one pass over the training records
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.feature_width < 1 or self.branch_width < 1 or self.max_batches_per_epoch < 0:
            raise ValueError("widths must be >= 1 and max_batches_per_epoch >= 0")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_loss_per_mode: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    batch_losses: list = field(default_factory=list)
    seed: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("batch_losses")
        return d


@dataclass
class PreparedSet:
    """Featurised records of one branch, split into train/validation by episode."""

    X_train: np.ndarray
    A_train: np.ndarray
    X_val: np.ndarray
    A_val: np.ndarray


def split_episodes(n_episodes: int, val_fraction: float, rng: np.random.Generator):
    order = rng.permutation(n_episodes)
    n_val = max(1, int(round(val_fraction * n_episodes))) if n_episodes >= 2 else 0
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def _rows(ds: DemoDataset, episodes: np.ndarray) -> np.ndarray:
    if episodes.size == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.arange(ds.episode_starts[e], ds.episode_starts[e + 1]) for e in episodes])


def prepare(datasets: Sequence[DemoDataset], catalog, val_fraction: float, rng: np.random.Generator,
            features: Optional[Sequence[np.ndarray]] = None) -> PreparedSet:
    """Featurise and split one or more datasets that feed the same branch."""
    Xt, At, Xv, Av = [], [], [], []
    for j, ds in enumerate(datasets):
        if ds.K == 0:
            raise ValueError("empty demonstration dataset")
        X = features[j] if features is not None else batch_features(ds.obs, np.repeat(ds.scenarios, np.diff(ds.episode_starts)), catalog)
        if X.shape != (ds.K, FEATURE_DIM):
            raise ValueError(f"feature matrix has shape {X.shape}, expected {(ds.K, FEATURE_DIM)}")
        X = X.astype(np.float32)
        tr, va = split_episodes(ds.n_episodes, val_fraction, rng)
        rt, rv = _rows(ds, tr), _rows(ds, va)
        Xt.append(X[rt]); At.append(ds.actions[rt])
        Xv.append(X[rv]); Av.append(ds.actions[rv])
    return PreparedSet(np.concatenate(Xt), np.concatenate(At).astype(np.float32),
                       np.concatenate(Xv), np.concatenate(Av).astype(np.float32))


def _val_loss(net: BranchedPolicyNet, X, A, mode: int, chunk: int = 65536) -> float:
    if X.shape[0] == 0:
        return math.nan
    tot = 0.0
    for lo in range(0, X.shape[0], chunk):
        out = net.forward_batch(X[lo:lo + chunk].astype(np.float64), np.full(min(chunk, X.shape[0] - lo), mode))
        tot += float(np.sum(np.abs(A[lo:lo + chunk].astype(np.float64) - out)))
    return tot / X.shape[0]


def fit_branches(sets: Sequence[PreparedSet], cfg: ILConfig, rng: np.random.Generator, net=None):
    """Mode-balanced mini-batch Adam on the L1 loss; keeps the best validation epoch.

    Every batch holds ``batch_size // n`` records from each branch, so the batch
    loss is the uniform average over modes of the per-mode mean L1 errors.
    """
    n = len(sets)
    for k, s in enumerate(sets):
        if s.X_train.shape[0] == 0:
            raise ValueError(f"branch {k + 1} has no training records")
    if net is None:
        net = BranchedPolicyNet(sets[0].X_train.shape[1], n, cfg.feature_width, cfg.branch_width,
                                seed=int(rng.integers(2**31)))
    if any(s.X_train.shape[1] != net.in_dim for s in sets):
        raise ValueError(f"observation dimension does not match the network input {net.in_dim}")
    per = max(1, cfg.batch_size // n)
    total = sum(s.X_train.shape[0] for s in sets)
    n_batches = max(1, math.ceil(total / (per * n)))
    if cfg.max_batches_per_epoch:
        n_batches = min(n_batches, cfg.max_batches_per_epoch)
    opt = AdamState(lr=cfg.learning_rate)
    report = TrainReport(seed=cfg.seed, config=asdict(cfg))
    best = net.copy()
    perms = [rng.permutation(s.X_train.shape[0]) for s in sets]
    cursor = [0] * n
    modes_col = np.repeat(np.arange(1, n + 1), per)
    stale = 0
    for epoch in range(cfg.max_epochs):
        run = 0.0
        for _ in range(n_batches):
            xs, as_ = [], []
            for k, s in enumerate(sets):
                if cursor[k] + per > perms[k].shape[0]:
                    perms[k] = rng.permutation(s.X_train.shape[0])
                    cursor[k] = 0
                take = perms[k][cursor[k]:cursor[k] + per]
                if take.shape[0] < per:  # tiny branch: sample with replacement
                    take = rng.integers(0, s.X_train.shape[0], per)
                cursor[k] += per
                xs.append(s.X_train[take]); as_.append(s.A_train[take])
            X = np.concatenate(xs).astype(np.float64)
            A = np.concatenate(as_).astype(np.float64)
            loss, g = net.loss_and_grad(X, A, modes_col)
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite imitation loss at epoch {epoch}")
            adam_step(net.params, g, opt)
            report.batch_losses.append(loss)
            run += loss
        per_mode = [_val_loss(net, s.X_val, s.A_val, k + 1) for k, s in enumerate(sets)]
        finite = [v for v in per_mode if math.isfinite(v)]
        val = float(np.mean(finite)) if finite else run / n_batches
        report.train_loss.append(run / n_batches)
        report.val_loss.append(val)
        report.val_loss_per_mode.append(per_mode)
        log.info("epoch %d train %.4f val %.4f", epoch, run / n_batches, val)
        if val < report.best_val_loss - 1e-6:
            report.best_val_loss, report.best_epoch = val, epoch
            best = net.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return best, report


def train_low_level(datasets: Sequence[DemoDataset], catalog, cfg: ILConfig = ILConfig(),
                    features: Optional[Sequence[np.ndarray]] = None):
    """Branch ``i`` learns from ``datasets[i - 1]`` (ordered by mode id)."""
    if not datasets:
        raise ValueError("need at least one mode dataset")
    for i, ds in enumerate(datasets):
        if ds.mode != i + 1:
            raise ValueError(f"dataset {i} holds mode {ds.mode}, expected {i + 1}")
    rng = np.random.default_rng(cfg.seed)
    sets = [prepare([ds], catalog, cfg.val_fraction, rng, None if features is None else [features[i]])
            for i, ds in enumerate(datasets)]
    return fit_branches(sets, cfg, rng)


def train_il_baseline(datasets: Sequence[DemoDataset], catalog, cfg: ILConfig = ILConfig(),
                      features: Optional[Sequence[np.ndarray]] = None):
    """Single-branch net on the union of all mode datasets, records sampled uniformly."""
    if not datasets or sum(ds.K for ds in datasets) == 0:
        raise ValueError("mixed dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    s = prepare(datasets, catalog, cfg.val_fraction, rng, features)
    return fit_branches([s], cfg, rng)


def evaluate_per_mode(net: BranchedPolicyNet, sets: Sequence[PreparedSet], branch_for_mode=None) -> list:
    """Validation L1 of each mode's held-out data under the given branch mapping."""
    out = []
    for k, s in enumerate(sets):
        b = (k + 1) if branch_for_mode is None else branch_for_mode(k + 1)
        out.append(_val_loss(net, s.X_val, s.A_val, b))
    return out
