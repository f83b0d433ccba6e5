"""Evaluation quantities: regression errors, weighted classification
metrics, confusion matrices, serious-misdiagnosis rate, and per-interval
bucket curves."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_CLASSES = 4
LOW_CONFIDENCE_N = 10


def regression_metrics(y_true, y_pred) -> tuple[float, float, float]:
    """(rmse, mae, r2). r2 may be negative; for an all-constant truth it is
    1.0 on exact predictions and 0.0 otherwise."""
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("empty input")
    err = y_true - y_pred
    rmse = float(np.sqrt(np.mean(err ** 2)))
    mae = float(np.mean(np.abs(err)))
    ss_res = float(np.sum(err ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return rmse, mae, r2


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    """4x4 counts, rows = true class, cols = predicted class."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(f"length mismatch: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("empty input")
    for arr, name in ((y_true, "true"), (y_pred, "pred")):
        if arr.min() < 0 or arr.max() >= N_CLASSES:
            raise ValueError(f"{name} labels outside 0..{N_CLASSES - 1}")
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(conf, (y_true, y_pred), 1)
    return conf


def classification_from_confusion(conf: np.ndarray):
    """Weighted precision/recall/F1 from a 4x4 confusion matrix.

    A class with zero predicted positives gets precision 0; per-class
    scores are weighted by true-class counts.
    """
    conf = np.asarray(conf, dtype=np.int64)
    if conf.shape != (N_CLASSES, N_CLASSES):
        raise ValueError(f"expected 4x4 confusion, got {conf.shape}")
    n_k = conf.sum(axis=1).astype(np.float64)
    predicted = conf.sum(axis=0).astype(np.float64)
    tp = np.diag(conf).astype(np.float64)

    precision = np.divide(tp, predicted, out=np.zeros(N_CLASSES), where=predicted > 0)
    recall = np.divide(tp, n_k, out=np.zeros(N_CLASSES), where=n_k > 0)
    pr = precision + recall
    f1 = np.divide(2 * precision * recall, pr, out=np.zeros(N_CLASSES), where=pr > 0)

    total = n_k.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    weighted = lambda m: float((n_k * m).sum() / total)
    per_class = {"precision": precision, "recall": recall, "f1": f1, "n": n_k}
    return weighted(precision), weighted(recall), weighted(f1), per_class


def classification_metrics(y_true, y_pred):
    """(weighted_precision, weighted_recall, weighted_f1, confusion)."""
    conf = confusion_matrix(y_true, y_pred)
    wp, wr, wf, _ = classification_from_confusion(conf)
    return wp, wr, wf, conf


def serious_misdiagnosis(conf: np.ndarray) -> float:
    """Fraction of samples predicted two or more severity levels away
    from the true class."""
    conf = np.asarray(conf, dtype=np.int64)
    if conf.shape != (N_CLASSES, N_CLASSES):
        raise ValueError(f"expected 4x4 confusion, got {conf.shape}")
    n = conf.sum()
    if n == 0:
        raise ValueError("empty confusion matrix")
    i, j = np.indices(conf.shape)
    return float(conf[np.abs(i - j) >= 2].sum() / n)


@dataclass
class BucketRow:
    bucket: float
    value: float
    n: int
    low_confidence: bool


def interval_curve(buckets, y_true, y_pred, metric: str = "r2") -> list[BucketRow]:
    """Metric computed within each interval bucket, plot-ready.

    Buckets with fewer than 10 samples are flagged low-confidence; empty
    buckets are simply absent. `metric` is one of r2/rmse/mae/f1.
    """
    buckets = np.asarray(buckets, dtype=np.float64)
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if not (len(buckets) == len(y_true) == len(y_pred)):
        raise ValueError("buckets, y_true, y_pred lengths differ")
    rows = []
    for b in sorted(set(buckets.tolist())):
        sel = buckets == b
        t, p = y_true[sel], y_pred[sel]
        if metric in ("r2", "rmse", "mae"):
            rmse, mae, r2 = regression_metrics(t.astype(np.float64),
                                               p.astype(np.float64))
            value = {"r2": r2, "rmse": rmse, "mae": mae}[metric]
        elif metric == "f1":
            _, _, value, _ = classification_metrics(t.astype(np.int64),
                                                    p.astype(np.int64))
        else:
            raise ValueError(f"unknown metric {metric!r}")
        n = int(sel.sum())
        rows.append(BucketRow(round(b, 6), value, n, n < LOW_CONFIDENCE_N))
    return rows


@dataclass
class EvalReport:
    """Everything cmd_evaluate emits for one (fold, use case, task) cell."""
    n: int
    rmse: float = float("nan")
    mae: float = float("nan")
    r2: float = float("nan")
    weighted_precision: float = float("nan")
    weighted_recall: float = float("nan")
    weighted_f1: float = float("nan")
    confusion: np.ndarray = field(default_factory=lambda: np.zeros((4, 4), np.int64))
    serious_misdiagnosis_rate: float = float("nan")
    per_bucket: list[BucketRow] = field(default_factory=list)


def build_report(y_true_hgb, y_pred_hgb, y_true_cls, y_pred_cls,
                 buckets, bucket_metric: str = "r2") -> EvalReport:
    rmse, mae, r2 = regression_metrics(y_true_hgb, y_pred_hgb)
    wp, wr, wf, conf = classification_metrics(y_true_cls, y_pred_cls)
    return EvalReport(
        n=len(y_true_hgb), rmse=rmse, mae=mae, r2=r2,
        weighted_precision=wp, weighted_recall=wr, weighted_f1=wf,
        confusion=conf, serious_misdiagnosis_rate=serious_misdiagnosis(conf),
        per_bucket=interval_curve(buckets, y_true_hgb, y_pred_hgb, bucket_metric),
    )


def format_report(report: EvalReport) -> str:
    """Deterministic structured-text rendering of an EvalReport.

    Standard deviations elsewhere in this project are over folds; bucket
    rows mirror the plot-file columns (bucket, metric, n)."""
    lines = ["format_version=1", f"n={report.n}"]
    for name in ("rmse", "mae", "r2", "weighted_precision", "weighted_recall",
                 "weighted_f1", "serious_misdiagnosis_rate"):
        lines.append(f"{name}={getattr(report, name)!r}")
    lines.append("confusion_rows_true_cols_pred=")
    for row in report.confusion:
        lines.append("  " + " ".join(str(int(v)) for v in row))
    lines.append("per_bucket=bucket\tvalue\tn\tlow_confidence")
    for row in report.per_bucket:
        lines.append(f"  {row.bucket:g}\t{row.value!r}\t{row.n}\t{int(row.low_confidence)}")
    return "\n".join(lines) + "\n"


def format_bucket_table(rows: list[BucketRow]) -> str:
    """Delimited plot file: bucket, metric value, n."""
    out = ["bucket\tvalue\tn"]
    for row in rows:
        out.append(f"{row.bucket:g}\t{row.value!r}\t{row.n}")
    return "\n".join(out) + "\n"


def spearman_rank(x, y) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size != y.size or x.size < 2:
        raise ValueError("need two equal-length series of at least 2 points")

    def ranks(v):
        order = np.argsort(v, kind="stable")
        r = np.empty_like(v)
        r[order] = np.arange(1, v.size + 1, dtype=np.float64)
        # average ranks over ties
        for u in np.unique(v):
            sel = v == u
            if sel.sum() > 1:
                r[sel] = r[sel].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx ** 2).sum() * (ry ** 2).sum())
    if denom == 0:
        return 0.0
    return float((rx * ry).sum() / denom)
