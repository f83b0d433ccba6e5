"""Adam optimization with early stopping over stratified folds, plus the
module-combination ablation grid."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import data as D
from . import metrics as MT
from . import model as M


class NonFiniteGradientError(RuntimeError):
    def __init__(self, group: str):
        super().__init__(f"non-finite gradient in parameter group '{group}'")
        self.group = group


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 512          # auto-shrunk to the dataset size
    max_epochs: int = 500
    patience: int = 10
    hidden: int = 128              # desk-scale runs use 32
    window: int = 40
    seed: int = 0
    task: str = "regression"       # regression | classification | both
    use_case: int = 1
    use_nandense: bool = True      # False: mean-imputed standard dense
    at1: bool = True
    at2: bool = True
    at3: bool = True
    attn_scale: str = "k"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: M.HgbNetParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.arrays.items()},
                   {k: np.zeros_like(a) for k, a in params.arrays.items()})


def adam_step(params: M.HgbNetParams, grads: dict, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8):
    """Standard bias-corrected update, in place."""
    state.step += 1
    t = state.step
    for name, arr in params.arrays.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(arr)
        if not np.isfinite(g).all():
            raise NonFiniteGradientError(name)
        state.m[name] = beta1 * state.m[name] + (1 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1 - beta2) * g * g
        m_hat = state.m[name] / (1 - beta1 ** t)
        v_hat = state.v[name] / (1 - beta2 ** t)
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# ---------------------------------------------------------------------------
# training loop


class EarlyStopper:
    """Stop after `patience` consecutive epochs without a strict
    validation-loss improvement; remembers the best epoch."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.best_epoch = 0
        self.bad_epochs = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """True when this epoch improved on the best seen so far."""
        if np.isfinite(val_loss) and val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass
class LogRecord:
    epoch: int
    split: str
    loss: float
    metric: float
    wall_time: float


@dataclass
class TrainResult:
    params: M.HgbNetParams
    model_config: M.ModelConfig
    stats: D.NormStats
    log: list
    best_epoch: int
    best_val_loss: float
    train_ids: tuple
    val_ids: tuple
    aborted: bool = False


def _slice_batch(batch: M.Batch, idx) -> M.Batch:
    return M.Batch(batch.x[idx], batch.m[idx], batch.e_norm[idx],
                   batch.delta_norm[idx], batch.uc2[idx], batch.y_hgb[idx],
                   batch.y_cls[idx], batch.buckets[idx],
                   tuple(batch.sample_ids[i] for i in idx))


def _grads(param_nodes: dict, params: M.HgbNetParams) -> dict:
    return {name: (node.grad if node.grad is not None
                   else np.zeros_like(params[name]))
            for name, node in param_nodes.items()}


def _eval_metric(yhat, logits, batch: M.Batch, task: str) -> float:
    if task == "classification":
        _, _, f1, _ = MT.classification_metrics(batch.y_cls,
                                                M.predict_class(logits))
        return f1
    _, _, r2 = MT.regression_metrics(batch.y_hgb, yhat[:, 0])
    return r2


def model_config_for(train_config: TrainConfig, catalog: D.FeatureCatalog,
                     stats: D.NormStats) -> M.ModelConfig:
    base = M.ModelConfig(
        k=catalog.k, window=train_config.window, hidden=train_config.hidden,
        use_case=train_config.use_case, attn_scale=train_config.attn_scale,
        use_nandense=train_config.use_nandense, at1=train_config.at1,
        at2=train_config.at2, at3=train_config.at3)
    return M.with_denorm(base, stats, catalog)


def train(samples, manifest: D.FoldManifest, fold: int,
          catalog: D.FeatureCatalog, config: TrainConfig) -> TrainResult:
    """Seeded mini-batch epochs; stops when validation loss has not
    improved for `patience` consecutive epochs and returns the
    best-validation parameters. Normalization statistics come from this
    fold's training split only."""
    by_id = {s.sample_id: s for s in samples}
    train_ids = manifest.ids(fold, "train")
    val_ids = manifest.ids(fold, "val")
    stats = D.compute_norm_stats(samples, train_ids)
    model_config = model_config_for(config, catalog, stats)

    train_batch = M.make_batch([by_id[i] for i in train_ids], stats, catalog)
    val_batch = M.make_batch([by_id[i] for i in val_ids], stats, catalog)

    params = M.init_params(model_config, config.seed)
    state = AdamState.zeros_like(params)
    shuffle_rng = np.random.default_rng([config.seed, fold, 1])
    batch_size = min(config.batch_size, train_batch.size)

    log: list = []
    best_params = params.copy()
    stopper = EarlyStopper(config.patience)
    aborted = False
    t0 = time.monotonic()

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(train_batch.size)
        epoch_losses = []
        for start in range(0, train_batch.size, batch_size):
            idx = order[start:start + batch_size]
            mini = _slice_batch(train_batch, idx)
            nodes = M.wrap_params(params)
            yhat, logits, _ = M.forward(mini, nodes, model_config)
            loss = M.task_loss(yhat, logits, mini, config.task)
            loss_val = loss.value.item()
            if not np.isfinite(loss_val):
                log.append(LogRecord(epoch, "abort", loss_val, float("nan"),
                                     time.monotonic() - t0))
                aborted = True
                break
            ad.backward(loss)
            try:
                adam_step(params, _grads(nodes, params), state, config.lr)
            except NonFiniteGradientError as exc:
                log.append(LogRecord(epoch, "abort", loss_val, float("nan"),
                                     time.monotonic() - t0))
                log.append(LogRecord(epoch, f"abort:{exc.group}", loss_val,
                                     float("nan"), time.monotonic() - t0))
                aborted = True
                break
            epoch_losses.append(loss_val)
        if aborted:
            break

        train_loss = float(np.mean(epoch_losses))
        nodes = M.wrap_params(params)
        yhat, logits, _ = M.forward(val_batch, nodes, model_config)
        val_loss = M.task_loss(yhat, logits, val_batch, config.task).value.item()
        val_metric = _eval_metric(yhat.value, logits.value, val_batch, config.task)
        now = time.monotonic() - t0
        log.append(LogRecord(epoch, "train", train_loss, float("nan"), now))
        log.append(LogRecord(epoch, "val", val_loss, val_metric, now))

        if stopper.update(epoch, val_loss):
            best_params = params.copy()
        elif stopper.should_stop:
            break

    return TrainResult(best_params, model_config, stats, log, stopper.best_epoch,
                       stopper.best, tuple(train_ids), tuple(val_ids), aborted)


def predict(samples, params: M.HgbNetParams, model_config: M.ModelConfig,
            stats: D.NormStats, catalog: D.FeatureCatalog,
            chunk: int = 512):
    """(yhat g/dL, predicted class, true hgb, true class, buckets)."""
    nodes = M.wrap_params(params)
    yhat_all, cls_all = [], []
    for start in range(0, len(samples), chunk):
        batch = M.make_batch(samples[start:start + chunk], stats, catalog)
        yhat, logits, _ = M.forward(batch, nodes, model_config)
        yhat_all.append(yhat.value[:, 0])
        cls_all.append(M.predict_class(logits.value))
    return (np.concatenate(yhat_all), np.concatenate(cls_all),
            np.array([s.target_hgb for s in samples]),
            np.array([s.target_class for s in samples], dtype=np.int64),
            np.array([s.bucket for s in samples]))


def evaluate_fold(samples, manifest, fold, catalog, result: TrainResult,
                  bucket_metric: str = "r2") -> MT.EvalReport:
    by_id = {s.sample_id: s for s in samples}
    test = [by_id[i] for i in manifest.ids(fold, "test")]
    yhat, cls_pred, y_hgb, y_cls, buckets = predict(
        test, result.params, result.model_config, result.stats, catalog)
    return MT.build_report(y_hgb, yhat, y_cls, cls_pred, buckets, bucket_metric)


def format_log(log) -> str:
    lines = []
    for rec in log:
        lines.append(f"epoch={rec.epoch}\tsplit={rec.split}"
                     f"\tloss={rec.loss!r}\tmetric={rec.metric!r}"
                     f"\twall_time={rec.wall_time:.3f}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ablation grid


ABLATION_GRID = (
    ("ND", dict(use_nandense=True, at1=False, at2=False, at3=False)),
    ("ND+AT1", dict(use_nandense=True, at1=True, at2=False, at3=False)),
    ("ND+AT2", dict(use_nandense=True, at1=False, at2=True, at3=False)),
    ("ND+AT3", dict(use_nandense=True, at1=False, at2=False, at3=True)),
    ("IM-mean+AT1+AT2+AT3", dict(use_nandense=False, at1=True, at2=True, at3=True)),
    ("ND+AT1+AT2+AT3", dict(use_nandense=True, at1=True, at2=True, at3=True)),
)


@dataclass
class AblationRow:
    name: str
    r2_mean: float
    r2_std: float
    f1_mean: float
    f1_std: float
    per_fold: list = field(default_factory=list)


def ablate(samples, manifest, catalog, config: TrainConfig,
           grid=ABLATION_GRID, folds=None) -> list:
    """Train every module combination across folds; means and standard
    deviations are over folds."""
    if not grid:
        raise ValueError("empty ablation grid")
    folds = list(range(manifest.n_folds)) if folds is None else list(folds)
    rows = []
    for name, flags in grid:
        cell_config = replace(config, **flags)
        r2s, f1s, per_fold = [], [], []
        for fold in folds:
            result = train(samples, manifest, fold, catalog, cell_config)
            report = evaluate_fold(samples, manifest, fold, catalog, result)
            r2s.append(report.r2)
            f1s.append(report.weighted_f1)
            per_fold.append(report)
        rows.append(AblationRow(name, float(np.mean(r2s)), float(np.std(r2s)),
                                float(np.mean(f1s)), float(np.std(f1s)),
                                per_fold))
    return rows


def format_ablation(rows) -> str:
    lines = ["format_version=1",
             "combination\tr2_mean\tr2_std\tf1_mean\tf1_std"]
    for row in rows:
        lines.append(f"{row.name}\t{row.r2_mean!r}\t{row.r2_std!r}"
                     f"\t{row.f1_mean!r}\t{row.f1_std!r}")
    return "\n".join(lines) + "\n"
