"""``pcg`` command line: preprocess, train, encode, classify, evaluate, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from . import features as feat
from .artifacts import (PIPELINE_VERSION, fmt, read_array, read_csv, run_dir, write_array, write_csv,
                        write_json)
from .autodiff import no_grad
from .config import ExperimentConfig, load_config
from .metrics import LITERATURE_ROWS, REPORT_COLUMNS, MetricsReport, average_reports, evaluate
from .preprocessing import CLASSES, load_manifest, make_crop_batch, stratified_split
from .svm import SvmModel
from .wavenet import WaveNetAE, encode, train

log = logging.getLogger("pcgvae")

SPLITS = ("train", "val", "test")
PREDICTION_COLUMNS = ["record_id", "path", "label", "predicted", "anomaly_score",
                      "score_Normal", "score_Murmur", "score_Extrasystole"]


class PipelineError(RuntimeError):
    pass


def _split_records(labels, cfg: ExperimentConfig) -> dict[str, list[int]]:
    p = cfg.preprocess
    rest, test = stratified_split(labels, p.test_fraction, cfg.run.seed)
    val_share = p.val_fraction / (1 - p.test_fraction) if p.test_fraction < 1 else 0.0
    sub_train, sub_val = stratified_split([labels[i] for i in rest], val_share, cfg.run.seed + 1)
    return {"train": [rest[i] for i in sub_train], "val": [rest[i] for i in sub_val], "test": test}


# ------------------------------------------------------------------ commands

def cmd_preprocess(manifest, cfg: ExperimentConfig, out) -> dict:
    """Split the manifest and write training and evaluation crop archives."""
    try:
        records = load_manifest(manifest)
    except (OSError, ValueError) as exc:
        raise PipelineError(f"{manifest}: {exc}") from exc
    if not records:
        raise PipelineError("no records")
    labels = [r.label for r in records]
    splits = _split_records(labels, cfg)
    h = cfg.hash()
    summary = {}
    with run_dir(out) as out:
        cfg.save(out / "config.ini")
        rows = [(i, records[i].source_path, records[i].label, name) for name in SPLITS for i in splits[name]]
        write_csv(out / "splits.csv", ["record_id", "path", "label", "split"], sorted(rows))
        for name in SPLITS:
            ids = splits[name]
            counts = Counter(labels[i] for i in ids)
            summary[name] = {c: counts.get(c, 0) for c in CLASSES}
            log.info("split %s: %s", name, summary[name])
            archives = [("eval", cfg.classify_preprocess_config())]
            if name == "train":
                archives.insert(0, ("train", cfg.preprocess_config()))
            for kind, pcfg in archives:
                batch = make_crop_batch([records[i] for i in ids], pcfg, record_ids=ids)
                write_array(out / f"{name}_{kind}_crops", batch.crops.reshape(len(batch), pcfg.crop_length), {
                    "config_hash": h, "split": name, "record_ids": batch.record_ids.tolist(),
                    "labels": [labels[i] for i in batch.record_ids],
                    "paths": [records[i].source_path for i in batch.record_ids],
                    "crop_length": pcfg.crop_length, "crops_per_signal": pcfg.crops_per_signal,
                })
        write_json(out / "preprocess_summary.json", {"config_hash": h, "counts": summary})
    return summary


def cmd_train(cfg: ExperimentConfig, data_dir, out) -> list[Path]:
    """Train the autoencoder on the training crops; checkpoints and CSV log in ``out``."""
    div = cfg.divergence()
    crops, meta = read_array(Path(data_dir) / "train_train_crops")
    model = WaveNetAE.init(cfg.arch(), seed=cfg.run.seed)
    tcfg = cfg.train_config()
    with run_dir(out) as out:
        cfg.save(out / "config.ini")
        extra = {"config_hash": cfg.hash(), "data_config_hash": meta["config_hash"]}
        res = train(model, crops, meta["labels"], div, tcfg, out_dir=out, checkpoint_extra=extra)
        anomalous = sum(v for k, v in res.crops_by_class.items() if k != "Normal")
        write_json(out / "train_meta.json", {
            "config_hash": cfg.hash(), "train_on": tcfg.train_on, "crops_consumed": res.crops_by_class,
            "anomalous_crops_consumed": anomalous, "checkpoints": [p.name for p in res.checkpoints],
            "divergence": {"kind": div.kind, "kernel": div.kernel, "sigma2": div.sigma2, "weight": div.weight},
        })
        log.info("trained %d steps; crops consumed %s", tcfg.steps, res.crops_by_class)
    return res.checkpoints


def encode_means(model: WaveNetAE, crops: np.ndarray, batch_size: int = 10) -> np.ndarray:
    """Deterministic codes: posterior means (GI/GC) or the AE code, eval-mode statistics."""
    parts = []
    with no_grad():
        for i in range(0, len(crops), batch_size):
            parts.append(encode(model, crops[i:i + batch_size], training=False).mean.data)
    C, Tz = model.arch.latent_channels, crops.shape[1] // model.arch.pool_stride
    return np.concatenate(parts) if parts else np.zeros((0, C, Tz), dtype=np.float32)


def cmd_encode(checkpoint, data_dir, out) -> dict:
    """Encode every split's evaluation crops with a frozen checkpoint."""
    checkpoint = Path(checkpoint)
    model = WaveNetAE.load(checkpoint)
    ck_meta = json.loads(checkpoint.with_suffix(".json").read_text())
    shapes = {}
    with run_dir(out) as out:
        for name in SPLITS:
            src = Path(data_dir) / f"{name}_eval_crops"
            if not src.with_suffix(".json").exists():
                continue
            crops, meta = read_array(src)
            z = encode_means(model, crops)
            side = {k: meta[k] for k in ("record_ids", "labels", "paths", "split")}
            side.update({"config_hash": ck_meta.get("config_hash"), "data_config_hash": meta["config_hash"],
                         "checkpoint": str(checkpoint), "step": model.step, "model": model.arch.latent_model})
            write_array(out / f"latents_{name}", z, side)
            shapes[name] = list(z.shape)
    return shapes


def _record_predictions(models, scaler, z, meta):
    X = scaler.apply(feat.fft_features(z))
    scores = feat.ovr_scores(models, X)
    preds = np.asarray(CLASSES)[np.argmax(scores, axis=1)]
    ids = np.asarray(meta["record_ids"])
    rows = []
    for rid in sorted(set(ids.tolist())):
        sel = ids == rid
        k = int(np.flatnonzero(sel)[0])
        vote = feat.majority_vote(list(preds[sel]), scores[sel])
        rows.append({"record_id": rid, "path": meta["paths"][k], "label": meta["labels"][k], "predicted": vote,
                     "anomaly_score": float(feat.anomaly_score(scores[sel]).mean()),
                     **{f"score_{c}": float(scores[sel, j].mean()) for j, c in enumerate(CLASSES)}})
    return rows


def _eval_rows(rows, model="", C=float("nan")) -> MetricsReport:
    return evaluate([r["label"] for r in rows], [r["predicted"] for r in rows],
                    [float(r["anomaly_score"]) for r in rows], model=model, C=C)


def cmd_classify(latents_dir, cfg: ExperimentConfig, out) -> dict:
    """FFT features, scaler, C sweep on validation YI, final models and record predictions."""
    latents_dir = Path(latents_dir)
    data = {}
    for name in SPLITS:
        if (latents_dir / f"latents_{name}.json").exists():
            data[name] = read_array(latents_dir / f"latents_{name}")
    if "train" not in data:
        raise PipelineError(f"{latents_dir}: no training latents")
    z_tr, m_tr = data["train"]
    X_raw = feat.fft_features(z_tr)
    scaler = feat.fit_scaler(X_raw)
    X = scaler.apply(X_raw)
    y = np.asarray(m_tr["labels"])
    missing = [c for c in CLASSES if not (y == c).any()]
    if missing:
        raise PipelineError(f"no training crops for class(es) {missing}")
    c = cfg.classify
    gamma = feat.default_gamma(X) if c.gamma == "auto" else float(c.gamma)
    select_on = "val" if "val" in data and len(data["val"][0]) else "train"
    sweep = []
    best = None
    for C in c.c_grid:
        models = feat.train_one_vs_rest(X, y, C=C, gamma=gamma, tol=c.tol)
        rows = _record_predictions(models, scaler, *data[select_on])
        yi = _eval_rows(rows).yi
        sweep.append({"C": C, "val_yi": yi})
        log.info("C=%g validation YI=%.4f", C, yi)
        if best is None or (not np.isnan(yi) and (np.isnan(best[1]) or yi > best[1])):
            best = (C, yi, models)
    C_best, yi_best, models = best
    with run_dir(out) as out:
        h = cfg.hash()
        write_array(out / "features_train", X, {"config_hash": h, "latent_config_hash": m_tr.get("config_hash"),
                                                "dim": int(X.shape[1]), "scaler": scaler.to_json(),
                                                "record_ids": m_tr["record_ids"]})
        write_json(out / "svm_models.json", {
            "config_hash": h, "pipeline_version": PIPELINE_VERSION, "C": C_best, "gamma": gamma,
            "scaler": scaler.to_json(), "models": {k: v.to_json() for k, v in models.items()}})
        for name in data:
            if name == "train":
                continue
            rows = _record_predictions(models, scaler, *data[name])
            write_csv(out / f"predictions_{name}.csv", PREDICTION_COLUMNS,
                      [[fmt(r[k]) for k in PREDICTION_COLUMNS] for r in rows])
        meta = {"config_hash": h, "model": cfg.model_label(), "best_C": C_best, "best_val_yi": yi_best,
                "selected_on": select_on, "gamma": gamma, "sweep": sweep,
                "checkpoint": data["train"][1].get("checkpoint"), "step": data["train"][1].get("step")}
        write_json(out / "classify_meta.json", meta)
    return meta


def load_models(path) -> tuple[dict, feat.Scaler]:
    d = json.loads(Path(path).read_text())
    return {k: SvmModel.from_json(v) for k, v in d["models"].items()}, feat.Scaler.from_json(d["scaler"])


def _read_predictions(path, truth: dict | None):
    rows = read_csv(path)
    if truth is not None:
        for r in rows:
            if r["path"] not in truth:
                raise PipelineError(f"{path}: record {r['path']} missing from truth file")
            r["label"] = truth[r["path"]]
    return rows


def cmd_evaluate(predictions: list, out, truth=None, model: str | None = None) -> tuple[MetricsReport, dict]:
    """Metrics for one predictions file, or the mean over several (e.g. the last 3 checkpoints)."""
    truth_map = None
    if truth is not None:
        truth_map = {r["path"]: r["label"] for r in read_csv(truth)}
    reports, hashes = [], []
    for p in predictions:
        p = Path(p)
        meta_path = p.parent / "classify_meta.json"
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        hashes.append(meta.get("config_hash"))
        rep = _eval_rows(_read_predictions(p, truth_map), model=model or meta.get("model", ""),
                         C=meta.get("best_C", float("nan")))
        reports.append(rep)
    avg, std = average_reports(reports) if len(reports) > 1 else (reports[0], {})
    with run_dir(out) as out:
        write_json(out / "metrics.json", {"pipeline_version": PIPELINE_VERSION, "config_hashes": hashes,
                                          "report": avg.to_json(), "std": std,
                                          "n_averaged": len(reports), "sources": [str(p) for p in predictions],
                                          "runs": [r.to_json() for r in reports]})
        write_csv(out / "metrics.csv", REPORT_COLUMNS, [[fmt(v) for v in avg.row()]])
    return avg, std


def cmd_report(run_dirs: list, out) -> Path:
    """Merge metrics rows across runs, followed by the literature reference rows."""
    rows, versions = [], set()
    for d in run_dirs:
        d = Path(d)
        mpath = d / "metrics.json"
        if not d.is_dir() or not mpath.exists():
            raise PipelineError(f"run directory {d} missing or has no metrics.json")
        m = json.loads(mpath.read_text())
        versions.add(m.get("pipeline_version"))
        rows.extend(list(r.values()) for r in read_csv(d / "metrics.csv"))
    if len(versions) > 1:
        raise PipelineError(f"refusing to merge rows from pipeline versions {sorted(versions)}")
    for name, (yi, tp, spec, sens, dp) in LITERATURE_ROWS.items():
        rows.append([name, "", fmt(yi), fmt(tp), fmt(spec), fmt(sens), fmt(dp), "N/A"])
    with run_dir(out) as out:
        path = out / "comparison.csv"
        write_csv(path, REPORT_COLUMNS, rows)
    return path


# ---------------------------------------------------------------------- main

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pcg", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="experiment config (INI)")
        p.add_argument("--out", required=True, help="fresh output directory")
        p.add_argument("--seed", type=int, help="override [run] seed")
        p.add_argument("--deterministic", action="store_true", help="force deterministic mode")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    add("preprocess", "split and crop a manifest").add_argument("--manifest", required=True)
    add("train", "train the autoencoder").add_argument("--data", required=True)
    p = add("encode", "encode crops with a frozen checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    add("classify", "train SVMs on latent FFT features").add_argument("--latents", required=True)
    p = add("evaluate", "compute challenge metrics")
    p.add_argument("--predictions", nargs="+", required=True)
    p.add_argument("--truth", help="optional path,label CSV overriding prediction labels")
    p.add_argument("--model", help="model label for the report row")
    add("report", "merge metrics from runs").add_argument("--runs", nargs="+", required=True)
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides["run.seed"] = args.seed
    if args.deterministic:
        overrides["run.deterministic"] = True
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "preprocess":
            print(json.dumps(cmd_preprocess(args.manifest, cfg, args.out)))
        elif args.command == "train":
            for p in cmd_train(cfg, args.data, args.out):
                print(p)
        elif args.command == "encode":
            print(json.dumps(cmd_encode(args.checkpoint, args.data, args.out)))
        elif args.command == "classify":
            meta = cmd_classify(args.latents, cfg, args.out)
            print(json.dumps({"best_C": meta["best_C"], "best_val_yi": meta["best_val_yi"]}))
        elif args.command == "evaluate":
            rep, _ = cmd_evaluate(args.predictions, args.out, truth=args.truth, model=args.model)
            print(",".join(REPORT_COLUMNS))
            print(",".join(fmt(v) for v in rep.row()))
        elif args.command == "report":
            print(cmd_report(args.runs, args.out))
    except (PipelineError, ValueError, OSError) as exc:
        print(f"pcg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
