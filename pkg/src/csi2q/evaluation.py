"""Closed-world, open-world and ablation experiments on simulated devices."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import openmax
from .errors import InvalidInputError
from .nn.models import ExtractorSpec
from .preamble import tdsg_batch
from .preprocess import PreprocessConfig, preprocess_batch
from .simulate import ChannelConfig, ImpairmentRanges, generate_dataset
from .train import LabeledFeatureSet, TrainConfig, predict, stratified_mask, train_source, train_target

SOURCE_ID_OFFSET = 1000

#: Ablation ladder, weakest to strongest.
LADDER = (
    ("raw", {"CIM": False, "TDSG": False, "ALIQ": False}),
    ("CIM", {"CIM": True, "TDSG": False, "ALIQ": False}),
    ("CIM+TDSG", {"CIM": True, "TDSG": True, "ALIQ": False}),
    ("CIM+TDSG+ALIQ", {"CIM": True, "TDSG": True, "ALIQ": True}),
)


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    confusion: np.ndarray
    per_class_f1: list
    per_seed: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1,
                "confusion": self.confusion.tolist(), "per_class_f1": self.per_class_f1,
                "per_seed": self.per_seed}


def compute_metrics(predictions, truths, num_classes: int) -> MetricsReport:
    """Accuracy, macro F1 over supported classes, and the confusion matrix.

    ``confusion[t, p]`` counts frames of true class ``t`` predicted as ``p``.
    """
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(truths, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise InvalidInputError("predictions and truths must be equal-length sequences")
    if pred.size == 0:
        raise InvalidInputError("need at least one prediction")
    if pred.min() < 0 or true.min() < 0 or max(pred.max(), true.max()) >= num_classes:
        raise InvalidInputError(f"labels must lie in [0, {num_classes})")
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (true, pred), 1)
    tp = np.diag(conf).astype(np.float64)
    support = conf.sum(axis=1)
    predicted = conf.sum(axis=0)
    f1 = []
    for c in range(num_classes):
        if support[c] == 0:
            f1.append(None)
            continue
        p = tp[c] / predicted[c] if predicted[c] else 0.0
        r = tp[c] / support[c]
        f1.append(2 * p * r / (p + r) if p + r > 0 else 0.0)
    supported = [v for v in f1 if v is not None]
    return MetricsReport(float(tp.sum() / pred.size), float(np.mean(supported)), conf, f1)


def mean_report(reports) -> MetricsReport:
    """Pool per-seed reports: summed confusion, mean accuracy and F1."""
    conf = sum(r.confusion for r in reports)
    per_seed = [{"accuracy": r.accuracy, "macro_f1": r.macro_f1} for r in reports]
    f1 = [None if all(r.per_class_f1[c] is None for r in reports)
          else float(np.mean([r.per_class_f1[c] for r in reports if r.per_class_f1[c] is not None]))
          for c in range(conf.shape[0])]
    return MetricsReport(float(np.mean([r.accuracy for r in reports])),
                         float(np.mean([r.macro_f1 for r in reports])), conf, f1, per_seed)


@dataclass
class ExperimentPlan:
    """Everything needed to reproduce an experiment from scratch."""

    mode: str = "closed"
    num_devices: int = 10
    unknown_devices: list = field(default_factory=list)  # positions within the target population
    frames_per_device: int = 300
    snr_db: float = 20.0
    train_fraction: float = 0.7
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    pipeline: dict = field(default_factory=lambda: {"CIM": True, "TDSG": True, "ALIQ": True, "OpenMax": False})
    source_devices: int = 20
    source_frames: int = 100
    max_jitters: int = 5
    delta: float = openmax.DEFAULT_DELTA
    tail_size: int = openmax.DEFAULT_TAIL
    train: dict = field(default_factory=dict)
    channel: dict = field(default_factory=dict)
    impairments: dict = field(default_factory=dict)  # ImpairmentRanges overrides

    def __post_init__(self):
        if self.mode not in ("closed", "open"):
            raise InvalidInputError(f"mode must be 'closed' or 'open', got {self.mode!r}")
        bad = [u for u in self.unknown_devices if not 0 <= u < self.num_devices]
        if bad:
            raise InvalidInputError(f"unknown device positions out of range: {bad}")
        if len(set(self.unknown_devices)) != len(self.unknown_devices):
            raise InvalidInputError("duplicate unknown devices")
        if self.mode == "open" and not self.unknown_devices:
            raise InvalidInputError("open-world plan needs at least one unknown device")
        if self.mode == "closed" and self.unknown_devices:
            raise InvalidInputError("closed-world plan cannot list unknown devices")
        if self.num_devices - len(self.unknown_devices) < 2:
            raise InvalidInputError("need at least two registered devices")
        if not self.seeds:
            raise InvalidInputError("need at least one seed")

    @property
    def registered_devices(self) -> list[int]:
        return [d for d in range(self.num_devices) if d not in self.unknown_devices]

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig.from_dict({**self.train, "seed": seed})

    def channel_config(self) -> ChannelConfig:
        kw = dict(self.channel)
        for k in ("delay_range",):
            if k in kw:
                kw[k] = tuple(kw[k])
        return ChannelConfig(**kw)

    def impairment_ranges(self) -> ImpairmentRanges:
        return ImpairmentRanges(**{k: tuple(v) if isinstance(v, list) else v for k, v in self.impairments.items()})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    @classmethod
    def from_json(cls, path) -> "ExperimentPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SeedData:
    """Simulated target (IQ + CSI) and source (IQ) populations for one seed."""

    seed: int
    csi: object
    iq_source: object
    csi_kept: np.ndarray
    h_tilde: np.ndarray
    split: np.ndarray  # True for training frames


def prepare_data(plan: ExperimentPlan, seed: int) -> SeedData:
    chan = plan.channel_config()
    ranges = plan.impairment_ranges()
    _, csi, _ = generate_dataset(plan.num_devices, plan.frames_per_device, plan.snr_db, seed, chan, ranges=ranges)
    iq_src = None
    if plan.source_devices >= 2:
        iq_src, _, _ = generate_dataset(plan.source_devices, plan.source_frames, plan.snr_db, seed, chan,
                                        ranges=ranges, first_device_id=SOURCE_ID_OFFSET)
    proc = preprocess_batch(csi.samples, PreprocessConfig(max_jitters=plan.max_jitters))
    split = stratified_mask(csi.device_ids, plan.train_fraction, seed)
    return SeedData(seed, csi, iq_src, proc.kept, proc.h_tilde, split)


def build_features(data: SeedData, flags: dict, keep=None) -> LabeledFeatureSet:
    """Network inputs for one pipeline configuration.

    CIM on: jitter repair plus cyclic-shift division, discarded frames dropped.
    TDSG on: 320-sample synthesis, otherwise the 52-sample vector.  CIM off
    feeds raw CSI as amplitude/phase.
    """
    csi = data.csi
    sel = np.ones(len(csi), dtype=bool) if keep is None else np.asarray(keep, dtype=bool).copy()
    if flags.get("CIM", True):
        sel &= data.csi_kept
        h = data.h_tilde[sel]
        if flags.get("TDSG", True):
            frames, mode = tdsg_batch(h), "tdsg"
        else:
            frames, mode = h, "csi"
    else:
        h = csi.samples[sel]
        if flags.get("TDSG", False):
            frames, mode = tdsg_batch(h), "tdsg"
        else:
            frames, mode = h, "raw"
    return LabeledFeatureSet(frames, csi.device_ids[sel], data.split[sel], mode)


def _source_bundle(plan, data, cfg, cache):
    if cache is not None and data.seed in cache:
        return cache[data.seed]
    if data.iq_source is None:
        raise InvalidInputError("ALIQ needs a source population (source_devices >= 2)")
    src = data.iq_source
    iq = LabeledFeatureSet(src.samples, src.device_ids, np.ones(len(src), dtype=bool), "iq")
    bundle = train_source(iq, cfg)
    if cache is not None:
        cache[data.seed] = bundle
    return bundle


def _train(plan, data, flags, features, source_cache):
    cfg = plan.train_config(data.seed)
    source = _source_bundle(plan, data, cfg, source_cache) if flags.get("ALIQ") else None
    return train_target(features, source, cfg)


def run_closed_world(plan: ExperimentPlan, data: SeedData, flags: dict | None = None, source_cache=None):
    """Train and test one configuration on one seed; returns ``(report, bundle)``."""
    flags = plan.pipeline if flags is None else flags
    fs = build_features(data, flags)
    bundle = _train(plan, data, flags, fs, source_cache)
    frames, labels = fs.test()
    classes = bundle.metadata["classes"]
    probs, _ = predict(bundle, frames)
    pred = np.argmax(probs, axis=1)
    truth = np.searchsorted(classes, labels)
    return compute_metrics(pred, truth, len(classes)), bundle


def run_ablation(plan: ExperimentPlan, datasets=None, ladder=LADDER) -> dict:
    """Mean report per rung over the plan's seeds.  Source models are shared across rungs."""
    table = {name: [] for name, _ in ladder}
    for seed in plan.seeds:
        data = datasets[seed] if datasets is not None else prepare_data(plan, seed)
        cache: dict = {}
        for name, flags in ladder:
            report, _ = run_closed_world(plan, data, flags, cache)
            table[name].append(report)
    return {name: mean_report(reps) for name, reps in table.items()}


@dataclass
class OpenWorldResult:
    softmax: MetricsReport
    openmax: MetricsReport
    unknown_recall: float

    def to_dict(self) -> dict:
        return {"softmax": self.softmax.to_dict(), "openmax": self.openmax.to_dict(),
                "unknown_recall": self.unknown_recall}


def run_open_world_seed(plan: ExperimentPlan, data: SeedData, delta: float | None = None, source_cache=None):
    """Registered devices train; test mixes registered and all unknown-device test frames."""
    delta = plan.delta if delta is None else delta
    flags = plan.pipeline
    registered_ids = np.asarray(plan.registered_devices)
    fs = build_features(data, flags)
    reg_mask = np.isin(fs.labels, registered_ids)
    train_fs = LabeledFeatureSet(fs.frames[reg_mask], fs.labels[reg_mask], fs.is_train[reg_mask], fs.mode)
    bundle = _train(plan, data, flags, train_fs, source_cache)
    classes = bundle.metadata["classes"]
    I = len(classes)

    tr_frames, tr_labels = train_fs.train()
    tr_probs, tr_logits = predict(bundle, tr_frames)
    calib = openmax.fit_from_predictions(tr_logits, np.argmax(tr_probs, axis=1),
                                         np.searchsorted(classes, tr_labels), range(I), plan.tail_size)

    test = ~fs.is_train
    te_frames, te_labels = fs.frames[test], fs.labels[test]
    probs, logits = predict(bundle, te_frames)
    truth = np.where(np.isin(te_labels, registered_ids), np.searchsorted(classes, te_labels), I)
    soft_pred = np.argmax(probs, axis=1)
    _, _, om_pred = openmax.calibrate_batch(probs, logits, calib, delta)
    soft = compute_metrics(soft_pred, truth, I + 1)
    om = compute_metrics(om_pred, truth, I + 1)
    unk = truth == I
    recall = float(np.mean(om_pred[unk] == I)) if unk.any() else float("nan")
    return OpenWorldResult(soft, om, recall), bundle, calib


def run_open_world(plan: ExperimentPlan, datasets=None, delta: float | None = None) -> OpenWorldResult:
    """Seed-averaged open-world comparison of softmax-only and OpenMax decisions."""
    if plan.mode != "open":
        raise InvalidInputError("run_open_world needs an open-world plan")
    results = []
    for seed in plan.seeds:
        data = datasets[seed] if datasets is not None else prepare_data(plan, seed)
        res, _, _ = run_open_world_seed(plan, data, delta)
        results.append(res)
    return OpenWorldResult(mean_report([r.softmax for r in results]), mean_report([r.openmax for r in results]),
                           float(np.mean([r.unknown_recall for r in results])))


# ---------------------------------------------------------------- reporting

def _jsonable(x):
    if isinstance(x, MetricsReport):
        return x.to_dict()
    if isinstance(x, OpenWorldResult):
        return x.to_dict()
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    return x


def report_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_confusion_csv(path, report: MetricsReport, labels=None) -> None:
    n = report.confusion.shape[0]
    labels = labels or [str(i) for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + list(labels))
        for lab, row in zip(labels, report.confusion):
            w.writerow([lab] + [int(v) for v in row])


def ladder_svg(table: dict, title: str = "Ablation ladder") -> str:
    """Plain SVG bar chart of mean accuracy per rung."""
    names = list(table)
    W, H, pad, bar = 120 * len(names) + 80, 320, 50, 70
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
             f'<text x="{W / 2:.0f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
             f'<line x1="{pad}" y1="{H - pad}" x2="{W - 20}" y2="{H - pad}" stroke="black"/>']
    span = H - 2 * pad - 10
    for i, name in enumerate(names):
        acc = table[name].accuracy if isinstance(table[name], MetricsReport) else float(table[name])
        h = span * acc
        x = pad + 20 + 120 * i
        y = H - pad - h
        parts.append(f'<rect x="{x}" y="{y:.1f}" width="{bar}" height="{h:.1f}" fill="#4a7ab5"/>')
        parts.append(f'<text x="{x + bar / 2}" y="{y - 4:.1f}" text-anchor="middle">{100 * acc:.2f}%</text>')
        parts.append(f'<text x="{x + bar / 2}" y="{H - pad + 16}" text-anchor="middle">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_ablation_report(directory, table: dict, plan: ExperimentPlan | None = None) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    doc = {"rungs": table}
    if plan is not None:
        doc["plan"] = plan.to_dict()
    (d / "ablation.json").write_text(report_json(doc))
    for name, rep in table.items():
        write_confusion_csv(d / f"confusion_{name.replace('+', '_')}.csv", rep)
    (d / "ablation.svg").write_text(ladder_svg(table))
    return d / "ablation.json"


def default_acceptance_train() -> dict:
    """Training settings used by the desk-scale acceptance experiments."""
    return {"lr_source": 1e-3, "lr_target": 1e-3, "lr_aux": 1e-3, "epochs_source": 30, "epochs_target": 30,
            "lam": 0.30, "batch_size": 8, "extractor": ExtractorSpec().to_dict(), "hidden": 128}
