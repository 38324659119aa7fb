"""``csi2q`` command-line interface.

Every flag may also come from ``--config FILE`` (JSON object keyed by flag
name, dashes or underscores); explicit command-line flags win.  When no seed
is given, ``CSI2Q_SEED`` supplies it.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, io, openmax
from .errors import Csi2qError, InvalidInputError
from .nn.bundle import ModelBundle
from .nn.models import ExtractorSpec
from .preamble import tdsg_batch
from .preprocess import PreprocessConfig, preprocess_batch
from .simulate import ChannelConfig, DatasetConfig, FrameSet, generate_from_config
from .train import LabeledFeatureSet, TrainConfig, predict, stratified_mask, train_source, train_target, write_trace_csv

IQ_FILE, CSI_FILE, MANIFEST_FILE = "iq.iqf", "csi.csq", "manifest.json"


class UsageError(Csi2qError):
    """Contradictory or missing command-line options."""


def _default_seed() -> int:
    raw = os.environ.get("CSI2Q_SEED")
    if raw is None or raw.strip() == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"CSI2Q_SEED must be an integer, got {raw!r}") from None


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _read(path, expect=None) -> FrameSet:
    frames, magic = io.read_container(path)
    if expect is not None and magic != expect:
        raise InvalidInputError(f"{path}: expected a {expect.decode()} container, found {magic.decode()}")
    return frames


def _mode_for(magic_or_len) -> str:
    return "tdsg" if magic_or_len in (b"IQF1", 320) else "csi"


# ------------------------------------------------------------------ commands

def cmd_gen_dataset(a):
    cfg = DatasetConfig(num_devices=a.devices, frames_per_device=a.frames, snr_db=a.snr_db, master_seed=a.seed,
                        channel=ChannelConfig(static=a.static), first_device_id=a.first_device_id,
                        estimator=a.estimator)
    if a.devices < 2 or a.frames < 1:
        raise UsageError("need --devices >= 2 and --frames >= 1")
    iq, csi, manifest = generate_from_config(cfg)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_container(out / IQ_FILE, iq)
    io.write_container(out / CSI_FILE, csi)
    manifest["files"] = {"iq": IQ_FILE, "csi": CSI_FILE}
    io.write_manifest(out / MANIFEST_FILE, manifest)
    io.read_manifest(out / MANIFEST_FILE)
    _emit({"out": str(out), "iq_frames": len(iq), "csi_frames": len(csi), "config_hash": manifest["config_hash"]})


def cmd_preprocess(a):
    csi = _read(a.inp, b"CSQ1")
    res = preprocess_batch(csi.samples, PreprocessConfig(max_jitters=a.max_jitters))
    kept = res.kept
    io.write_container(a.out, FrameSet(res.h_tilde[kept], csi.device_ids[kept]), b"CSQ1")
    report = {
        "input": str(a.inp), "output": str(a.out), "frames_in": len(csi), "frames_kept": int(kept.sum()),
        "discarded": [{"index": int(i), "device_id": int(csi.device_ids[i]), "jitters": int(res.jitter_count[i]),
                       "reason": res.reasons[i]} for i in np.flatnonzero(~kept)],
    }
    report_path = Path(a.report) if a.report else Path(str(a.out) + ".discards.json")
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _emit({k: report[k] for k in ("frames_in", "frames_kept")} | {"report": str(report_path)})


def cmd_transform(a):
    proc = _read(a.inp, b"CSQ1")
    io.write_container(a.out, FrameSet(tdsg_batch(proc.samples), proc.device_ids), b"IQF1")
    _emit({"frames": len(proc), "output": str(a.out)})


def _train_config(a, **over) -> TrainConfig:
    spec = ExtractorSpec(widths=tuple(a.widths), kernel_size=a.kernel_size, dilations=tuple(a.dilations))
    base = dict(batch_size=a.batch_size, seed=a.seed, extractor=spec, hidden=a.hidden)
    base.update(over)
    return TrainConfig(**base)


def cmd_train_source(a):
    iq = _read(a.iq, b"IQF1")
    cfg = _train_config(a, lr_source=a.lr, epochs_source=a.epochs)
    bundle = train_source(LabeledFeatureSet(iq.samples, iq.device_ids, np.ones(len(iq), dtype=bool), "iq"), cfg)
    bundle.save(a.out)
    if a.trace:
        write_trace_csv(bundle, a.trace)
    last = bundle.metadata["trace"][-1]
    _emit({"model": str(a.out), "classes": len(bundle.metadata["classes"]), "final_loss": last["loss_source"],
           "train_accuracy": last["train_accuracy"]})


def cmd_train_target(a):
    frames, magic = io.read_container(a.features)
    mode = _mode_for(magic)
    if a.source is None and a.lam_given:
        raise UsageError("--lambda needs --source (the auxiliary term uses the source extractor)")
    source = ModelBundle.load(a.source) if a.source else None
    cfg = _train_config(a, lr_target=a.lr, lr_aux=a.lr_aux if a.lr_aux is not None else a.lr,
                        epochs_target=a.epochs, lam=a.lam)
    split = stratified_mask(frames.device_ids, a.train_fraction, a.seed)
    fs = LabeledFeatureSet(frames.samples, frames.device_ids, split, mode)
    bundle = train_target(fs, source, cfg)
    bundle.metadata["split"] = {"train_fraction": a.train_fraction, "seed": a.seed}
    bundle.save(a.out)
    if a.trace:
        write_trace_csv(bundle, a.trace)
    last = bundle.metadata["trace"][-1]
    _emit({"model": str(a.out), "classes": len(bundle.metadata["classes"]), "final_loss": last["loss_target"],
           "train_accuracy": last["train_accuracy"], "auxiliary": source is not None})


def _split_mask(bundle, frames, which):
    if which == "all":
        return np.ones(len(frames), dtype=bool)
    sp = bundle.metadata.get("split", {"train_fraction": 1.0, "seed": bundle.seed})
    train = stratified_mask(frames.device_ids, sp["train_fraction"], sp["seed"])
    return train if which == "train" else ~train


def cmd_calibrate(a):
    bundle = ModelBundle.load(a.model)
    frames, _ = io.read_container(a.features)
    classes = bundle.metadata["classes"]
    sel = _split_mask(bundle, frames, "train") & np.isin(frames.device_ids, classes)
    probs, logits = predict(bundle, frames.samples[sel])
    truth = np.searchsorted(classes, frames.device_ids[sel])
    calib = openmax.fit_from_predictions(logits, np.argmax(probs, axis=1), truth, range(len(classes)), a.tail_size)
    openmax.save_calibration(a.out, calib, a.delta)
    _emit({"calibration": str(a.out), "classes": len(calib), "tail_size": a.tail_size})


def cmd_evaluate(a):
    if a.mode == "open" and not a.calib:
        raise UsageError("--mode open requires --calib")
    bundle = ModelBundle.load(a.model)
    frames, _ = io.read_container(a.test)
    classes = bundle.metadata["classes"]
    I = len(classes)
    sel = _split_mask(bundle, frames, a.split)
    known = np.isin(frames.device_ids, classes)
    if a.mode == "closed":
        if not known[sel].all():
            raise UsageError("closed-world evaluation found devices the model was not trained on; use --mode open")
    frames = frames.subset(sel)
    known = known[sel]
    probs, logits = predict(bundle, frames.samples)
    truth = np.where(known, np.searchsorted(classes, frames.device_ids), I)
    if a.mode == "closed":
        report = evaluation.compute_metrics(np.argmax(probs, axis=1), truth, I)
        labels = [str(c) for c in classes]
        doc = {"mode": "closed", "frames": len(frames), **report.to_dict()}
    else:
        calib, delta_file = openmax.load_calibration(a.calib)
        delta = a.delta if a.delta is not None else delta_file
        _, g, pred = openmax.calibrate_batch(probs, logits, calib, delta)
        report = evaluation.compute_metrics(pred, truth, I + 1)
        soft = evaluation.compute_metrics(np.argmax(probs, axis=1), truth, I + 1)
        unk = truth == I
        labels = [str(c) for c in classes] + ["unknown"]
        doc = {"mode": "open", "frames": len(frames), "delta": delta, **report.to_dict(),
               "softmax_accuracy": soft.accuracy, "softmax_macro_f1": soft.macro_f1,
               "unknown_recall": float(np.mean(pred[unk] == I)) if unk.any() else None}
    out = Path(a.report)
    out.mkdir(parents=True, exist_ok=True)
    text = evaluation.report_json(doc)
    (out / "metrics.json").write_text(text)
    evaluation.write_confusion_csv(out / "confusion.csv", report, labels)
    saved = json.loads((out / "metrics.json").read_text())
    print(f"accuracy {saved['accuracy']!r}")
    print(f"macro_f1 {saved['macro_f1']!r}")


def cmd_ablate(a):
    plan = evaluation.ExperimentPlan.from_json(a.plan)
    table = evaluation.run_ablation(plan)
    path = evaluation.write_ablation_report(a.report, table, plan)
    for name, rep in table.items():
        print(f"{name:16s} accuracy {rep.accuracy!r} macro_f1 {rep.macro_f1!r}")
    print(f"report {path}")


def cmd_import_csv(a):
    frames = io.import_csv(a.inp, a.kind)
    io.write_container(a.out, frames, io.KIND_MAGIC[a.kind])
    _emit({"frames": len(frames), "output": str(a.out)})


def cmd_export_csv(a):
    frames, _ = io.read_container(a.inp)
    io.export_csv(a.out, frames)
    _emit({"frames": len(frames), "output": str(a.out)})


# ------------------------------------------------------------------ parser

def _add_model_args(p):
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--widths", type=int, nargs="+", default=list(ExtractorSpec().widths))
    p.add_argument("--kernel-size", type=int, default=ExtractorSpec().kernel_size)
    p.add_argument("--dilations", type=int, nargs="+", default=list(ExtractorSpec().dilations))
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--trace", help="write the per-epoch training trace CSV here")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="csi2q", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON file supplying default flag values")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="simulate paired IQ and CSI datasets")
    p.add_argument("--devices", type=int, default=10)
    p.add_argument("--frames", type=int, default=300)
    p.add_argument("--snr-db", type=float, default=20.0)
    p.add_argument("--seed", type=int)
    p.add_argument("--first-device-id", type=int, default=0)
    p.add_argument("--estimator", choices=["ls", "mmse"], default="ls")
    p.add_argument("--static", action="store_true", help="reuse one channel per device")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser("preprocess", help="jitter repair and cyclic-shift division")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-jitters", type=int, default=5)
    p.add_argument("--report", help="discard report JSON (default OUT.discards.json)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("transform", help="synthesise 320-sample preamble features")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("train-source", help="pretrain the IQ extractor and discriminator")
    p.add_argument("--iq", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _add_model_args(p)
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("train-target", help="train the CSI classifier (optionally with auxiliary alignment)")
    p.add_argument("--features", required=True)
    p.add_argument("--source")
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--lr-aux", type=float)
    p.add_argument("--train-fraction", type=float, default=0.7)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _add_model_args(p)
    p.set_defaults(func=cmd_train_target)

    p = sub.add_parser("calibrate", help="fit OpenMax Weibull models on training activations")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--tail-size", type=int, default=openmax.DEFAULT_TAIL)
    p.add_argument("--delta", type=float, default=openmax.DEFAULT_DELTA)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="closed- or open-world evaluation")
    p.add_argument("--mode", choices=["closed", "open"], default="closed")
    p.add_argument("--model", required=True)
    p.add_argument("--calib")
    p.add_argument("--delta", type=float)
    p.add_argument("--test", required=True)
    p.add_argument("--split", choices=["test", "train", "all"], default="test",
                   help="which frames of --test to use (split stored in the model)")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run the ablation ladder from a plan file")
    p.add_argument("--plan", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("import-csv", help="CSV rows to a binary container")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--kind", choices=["csi", "iq"], required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_csv)

    p = sub.add_parser("export-csv", help="binary container to CSV rows")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_csv)
    return ap


def _config_defaults(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    out = {}
    for k, v in doc.items():
        k = k.replace("-", "_")
        out[{"lambda": "lam", "in": "inp"}.get(k, k)] = v
    return out


def parse_args(argv=None):
    ap = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cfg = _config_defaults(known.config)
        for sp in ap._subparsers._group_actions[0].choices.values():
            dests = {a.dest: a for a in sp._actions}
            hits = {k: v for k, v in cfg.items() if k in dests}
            for k in hits:
                dests[k].required = False  # the config file may supply required flags
            sp.set_defaults(**hits)
    args = ap.parse_args(argv)
    if hasattr(args, "lam"):
        args.lam_given = args.lam is not None
        if args.lam is None:
            args.lam = 0.30
    if hasattr(args, "seed") and args.seed is None:
        args.seed = _default_seed()
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        args.func(args)
        return 0
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if isinstance(exc.code, int) else 2
    except (Csi2qError, OSError, ValueError, KeyError) as exc:
        msg = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(msg), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
