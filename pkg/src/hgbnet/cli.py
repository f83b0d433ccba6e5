"""Command-line entry point wiring generation, preprocessing, training,
evaluation, ablation, and single-patient prediction into reproducible
file-based runs."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import data as D
from . import metrics as MT
from . import model as M
from . import runconfig as RC
from . import synth as S
from . import training as T

TASK_ALIASES = {"reg": "regression", "cls": "classification", "both": "both",
                "regression": "regression", "classification": "classification"}


# ---------------------------------------------------------------------------
# artifact helpers


def _echo_config(out: Path, config: RC.RunConfig, extra=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(RC.format_config(config, extra))


def _provenance(out: Path, **entries) -> None:
    lines = ["format_version=1", f"package_version={__version__}",
             f"numpy_version={np.__version__}"]
    for key in sorted(entries):
        lines.append(f"{key}={entries[key]}")
    (out / "provenance.txt").write_text("\n".join(lines) + "\n")


def save_samples(out_dir: Path, samples) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    l = len(D.UC2_FEATURES)
    np.save(out_dir / "x.npy", np.stack([s.x for s in samples]))
    np.save(out_dir / "m.npy", np.stack([s.m for s in samples]))
    np.save(out_dir / "e.npy", np.stack([s.e for s in samples]))
    np.save(out_dir / "delta.npy", np.stack([s.delta for s in samples]))
    meta = np.zeros((n, 5))
    uc2_values = np.zeros((n, l))
    uc2_mask = np.zeros((n, l))
    for i, s in enumerate(samples):
        meta[i] = (s.delta_max, s.target_hgb, s.target_class, s.gap_days, s.bucket)
        if s.uc2_values is not None:
            uc2_values[i] = s.uc2_values
            uc2_mask[i] = s.uc2_mask
    np.save(out_dir / "meta.npy", meta)
    np.save(out_dir / "uc2_values.npy", uc2_values)
    np.save(out_dir / "uc2_mask.npy", uc2_mask)
    ids = "\n".join(f"{s.sample_id}\t{s.patient_id}" for s in samples)
    (out_dir / "ids.txt").write_text(ids + "\n")


def load_samples(out_dir: Path):
    x = np.load(out_dir / "x.npy")
    m = np.load(out_dir / "m.npy")
    e = np.load(out_dir / "e.npy")
    delta = np.load(out_dir / "delta.npy")
    meta = np.load(out_dir / "meta.npy")
    uc2_values = np.load(out_dir / "uc2_values.npy")
    uc2_mask = np.load(out_dir / "uc2_mask.npy")
    ids = [line.split("\t") for line in
           (out_dir / "ids.txt").read_text().splitlines()]
    samples = []
    for i, (sid, pid) in enumerate(ids):
        samples.append(D.ModelInput(
            sample_id=sid, patient_id=pid, x=x[i], e=e[i], m=m[i],
            delta=delta[i], delta_max=float(meta[i, 0]),
            target_hgb=float(meta[i, 1]), target_class=int(meta[i, 2]),
            gap_days=float(meta[i, 3]), bucket=float(meta[i, 4]),
            uc2_values=uc2_values[i], uc2_mask=uc2_mask[i]))
    return samples


def load_artifacts(data_dir: str):
    root = Path(data_dir)
    catalog, stats_per_fold = D.parse_catalog((root / "catalog.txt").read_text())
    manifest = D.parse_manifest((root / "folds.txt").read_text())
    samples = load_samples(root / "samples")
    return catalog, stats_per_fold, manifest, samples


# ---------------------------------------------------------------------------
# commands


def cmd_generate(config: RC.RunConfig) -> int:
    out = Path(config.out)
    synth_config = replace(config.synth, seed=config.seed)
    _echo_config(out, replace(config, synth=synth_config))
    corpus = S.generate(synth_config)
    events = out / "events.csv"
    demographics = out / "demographics.csv"
    D.write_events(events, corpus)
    D.write_demographics(demographics, corpus)
    _provenance(out, dataset_hash=RC.file_digest(events, demographics),
                n_patients=len(corpus))
    print(f"wrote {events} and {demographics} ({len(corpus)} patients)")
    return 0


def cmd_preprocess(config: RC.RunConfig) -> int:
    out = Path(config.out)
    _echo_config(out, config)
    corpus = D.load_corpus(config.events, config.demographics)
    kept, catalog = D.preprocess(corpus, config.prep)
    # uc2 extras are stored unconditionally; a use-case-1 model ignores them
    samples, skipped = D.build_samples(kept, catalog, config.window,
                                       use_case=2,
                                       max_per_patient=config.max_samples_per_patient)
    manifest = D.make_folds(samples, seed=config.fold_seed())
    stats = [D.compute_norm_stats(samples, manifest.ids(f, "train"))
             for f in range(manifest.n_folds)]
    (out / "catalog.txt").write_text(D.format_catalog(catalog, stats))
    (out / "folds.txt").write_text(D.format_manifest(manifest))
    save_samples(out / "samples", samples)
    _provenance(out, dataset_hash=RC.file_digest(config.events, config.demographics),
                n_patients=len(kept), n_samples=len(samples),
                skipped=";".join(f"{k}={v}" for k, v in sorted(skipped.items())))
    print(f"preprocessed {len(kept)} patients into {len(samples)} samples "
          f"(K={catalog.k})")
    return 0


def _train_config(config: RC.RunConfig) -> T.TrainConfig:
    return replace(config.train, seed=config.seed)


def cmd_train(config: RC.RunConfig, fold: int | None) -> int:
    out = Path(config.out)
    _echo_config(out, config)
    catalog, _, manifest, samples = load_artifacts(config.data_dir)
    train_config = _train_config(config)
    folds = range(manifest.n_folds) if fold is None else [fold]
    for f in folds:
        result = T.train(samples, manifest, f, catalog, train_config)
        fold_dir = out / f"fold{f}"
        fold_dir.mkdir(parents=True, exist_ok=True)
        fingerprint = M.config_fingerprint(result.model_config, catalog,
                                           result.stats)
        M.save_checkpoint(fold_dir / "model.ckpt", result.params,
                          result.model_config, fingerprint)
        (fold_dir / "train_log.txt").write_text(T.format_log(result.log))
        status = "aborted" if result.aborted else "ok"
        print(f"fold {f}: best epoch {result.best_epoch} "
              f"val loss {result.best_val_loss:.6f} [{status}]")
    _provenance(out, data_dir=config.data_dir,
                dataset_hash=RC.file_digest(Path(config.data_dir) / "catalog.txt",
                                            Path(config.data_dir) / "folds.txt"))
    return 0


def _load_fold_model(config: RC.RunConfig, catalog, manifest, samples, f: int):
    ckpt = Path(config.checkpoint) if config.checkpoint \
        else Path(config.out) / f"fold{f}" / "model.ckpt"
    stats = D.compute_norm_stats(samples, manifest.ids(f, "train"))
    params, model_config, _ = M.load_checkpoint(ckpt)
    expected = M.config_fingerprint(model_config, catalog, stats)
    # re-load with the expectation to enforce the fingerprint contract
    params, model_config, _ = M.load_checkpoint(ckpt, expected_fingerprint=expected)
    return params, model_config, stats


def cmd_evaluate(config: RC.RunConfig, fold: int | None,
                 checkpoints_dir: str | None) -> int:
    out = Path(config.out)
    _echo_config(out, config)
    catalog, _, manifest, samples = load_artifacts(config.data_dir)
    by_id = {s.sample_id: s for s in samples}
    folds = range(manifest.n_folds) if fold is None else [fold]
    r2s, f1s = [], []
    for f in folds:
        ckpt_dir = Path(checkpoints_dir or config.out)
        ckpt = Path(config.checkpoint) if config.checkpoint \
            else ckpt_dir / f"fold{f}" / "model.ckpt"
        stats = D.compute_norm_stats(samples, manifest.ids(f, "train"))
        params, model_config, _ = M.load_checkpoint(ckpt)
        expected = M.config_fingerprint(model_config, catalog, stats)
        M.load_checkpoint(ckpt, expected_fingerprint=expected)

        test = [by_id[i] for i in manifest.ids(f, "test")]
        yhat, cls_pred, y_hgb, y_cls, buckets = T.predict(
            test, params, model_config, stats, catalog)
        report = MT.build_report(y_hgb, yhat, y_cls, cls_pred, buckets, "r2")
        (out / f"report_fold{f}.txt").write_text(MT.format_report(report))
        (out / f"buckets_r2_fold{f}.tsv").write_text(
            MT.format_bucket_table(report.per_bucket))
        (out / f"buckets_f1_fold{f}.tsv").write_text(
            MT.format_bucket_table(MT.interval_curve(buckets, y_cls, cls_pred, "f1")))
        r2s.append(report.r2)
        f1s.append(report.weighted_f1)
        print(f"fold {f}: r2 {report.r2:.4f} f1 {report.weighted_f1:.4f} "
              f"n {report.n}")
    summary = ["format_version=1", "std_is_over=folds",
               f"folds={','.join(str(f) for f in folds)}",
               f"r2_mean={float(np.mean(r2s))!r}", f"r2_std={float(np.std(r2s))!r}",
               f"f1_mean={float(np.mean(f1s))!r}", f"f1_std={float(np.std(f1s))!r}"]
    (out / "summary.txt").write_text("\n".join(summary) + "\n")
    _provenance(out, data_dir=config.data_dir)
    return 0


def cmd_ablate(config: RC.RunConfig, fold: int | None) -> int:
    out = Path(config.out)
    _echo_config(out, config)
    catalog, _, manifest, samples = load_artifacts(config.data_dir)
    folds = None if fold is None else [fold]
    rows = T.ablate(samples, manifest, catalog, _train_config(config), folds=folds)
    (out / "ablation.txt").write_text(T.format_ablation(rows))
    for row in rows:
        print(f"{row.name}: r2 {row.r2_mean:.4f}±{row.r2_std:.4f} "
              f"f1 {row.f1_mean:.4f}±{row.f1_std:.4f}")
    _provenance(out, data_dir=config.data_dir)
    return 0


def cmd_predict(config: RC.RunConfig, fold: int, extras: dict) -> int:
    out = Path(config.out)
    _echo_config(out, config)
    catalog, stats_per_fold, manifest, samples = load_artifacts(config.data_dir)
    corpus = D.load_corpus(config.events, config.demographics)
    if len(corpus) != 1:
        raise D.SchemaError(config.events, 0, "patient_id",
                            f"expected events for exactly one patient, "
                            f"got {len(corpus)}")
    series = corpus[0]

    ckpt = Path(config.checkpoint)
    stats = D.compute_norm_stats(samples, manifest.ids(fold, "train"))
    params, model_config, _ = M.load_checkpoint(ckpt)
    expected = M.config_fingerprint(model_config, catalog, stats)
    M.load_checkpoint(ckpt, expected_fingerprint=expected)

    sample = D.build_history_input(series, catalog, model_config.window, extras)
    batch = M.make_batch([sample], stats, catalog)
    yhat, logits, trace = M.forward(batch, M.wrap_params(params), model_config)
    cls = int(M.predict_class(logits.value)[0])

    lines = ["format_version=1",
             f"patient_id={series.patient_id}",
             f"hemoglobin_g_dl={float(yhat.value[0, 0])!r}",
             f"anemia_class={cls}",
             f"anemia_label={D.SEVERITY_NAMES[cls]}"]
    for name, w in (("general", trace.alpha), ("feature_level", trace.gamma),
                    ("label_level", trace.beta)):
        if w is not None:
            lines.append(f"attention_{name}=" +
                         " ".join(repr(float(v)) for v in w[0]))
    (out / "prediction.txt").write_text("\n".join(lines) + "\n")
    print(f"{series.patient_id}: hgb {float(yhat.value[0, 0]):.2f} g/dL, "
          f"class {cls} ({D.SEVERITY_NAMES[cls]})")
    return 0


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hgbnet",
        description="hemoglobin/anemia prediction from irregular EHR series")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="sectioned key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="run directory")
        p.add_argument("--use-case", type=int, choices=(1, 2), dest="use_case")
        p.add_argument("--task", choices=sorted(TASK_ALIASES))
        p.add_argument("--fold", type=int)

    p = sub.add_parser("generate", help="write a synthetic corpus")
    common(p)
    p = sub.add_parser("preprocess", help="events -> catalog, folds, tensors")
    common(p)
    p.add_argument("--events")
    p.add_argument("--demographics")
    p = sub.add_parser("train", help="train one or all folds")
    common(p)
    p.add_argument("--data", help="preprocess output directory")
    p = sub.add_parser("evaluate", help="test-fold reports and curves")
    common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoints", help="directory holding fold*/model.ckpt")
    p = sub.add_parser("ablate", help="module-combination grid")
    common(p)
    p.add_argument("--data")
    p = sub.add_parser("predict", help="one patient, next-moment prediction")
    common(p)
    p.add_argument("--data")
    p.add_argument("--events")
    p.add_argument("--demographics")
    p.add_argument("--checkpoint")
    p.add_argument("--extra", action="append", default=[],
                   help="next-visit measurement, name=value (repeatable)")
    return parser


def _overrides(args) -> dict:
    out = {"seed": args.seed, "out": args.out}
    if getattr(args, "use_case", None) is not None:
        out["train.use_case"] = args.use_case
    if getattr(args, "task", None) is not None:
        out["train.task"] = TASK_ALIASES[args.task]
    for attr, key in (("events", "events"), ("demographics", "demographics"),
                      ("data", "data_dir"), ("checkpoint", "checkpoint")):
        if getattr(args, attr, None):
            out[key] = getattr(args, attr)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = RC.load_config(args.config, _overrides(args))
        fold = getattr(args, "fold", None)
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "preprocess":
            return cmd_preprocess(config)
        if args.command == "train":
            return cmd_train(config, fold)
        if args.command == "evaluate":
            return cmd_evaluate(config, fold, getattr(args, "checkpoints", None))
        if args.command == "ablate":
            return cmd_ablate(config, fold)
        if args.command == "predict":
            extras = {}
            for item in args.extra:
                if "=" not in item:
                    raise RC.ConfigError(f"--extra expects name=value, got {item!r}")
                name, value = item.split("=", 1)
                extras[name] = float(value)
            return cmd_predict(config, fold if fold is not None else 0, extras)
        raise RC.ConfigError(f"unknown command {args.command!r}")
    except Exception as exc:  # single-line, machine-parsable failure
        message = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
