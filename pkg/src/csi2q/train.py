"""Source pretraining on IQ frames and target training with auxiliary alignment.

Source step: ``E_S`` and ``D`` minimise cross-entropy on labelled IQ frames.
Target step: ``E_T`` and ``C`` minimise ``L_target + lam * mse(A_T(E_S(U)), E_T(U))``
while ``A_T`` minimises the alignment term alone and ``E_S`` stays frozen.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import InvalidInputError
from .nn.bundle import ModelBundle, params_checksum
from .nn.encode import MODE_LENGTH, encode_batch
from .nn.models import ExtractorSpec, forward_extractor, forward_mlp, init_extractor, init_mlp, mlp_dims
from .nn.optim import Adam, cosine_lr
from .nn.tensor import Tensor, add, cross_entropy, mse, no_grad, scale, softmax

# RNG stream tags, so each component draws from its own stream.
_INIT_EXTRACTOR, _INIT_HEAD, _INIT_AUX, _SHUFFLE, _SPLIT = 11, 12, 13, 14, 15

PREDICT_CHUNK = 256


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


@dataclass
class TrainConfig:
    lr_source: float = 1e-4
    lr_target: float = 1e-4
    lr_aux: float = 1e-4
    epochs_source: int = 100
    epochs_target: int = 100
    lam: float = 0.30
    batch_size: int = 32
    seed: int = 0
    extractor: ExtractorSpec = field(default_factory=ExtractorSpec)
    hidden: int = 128

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidInputError("lambda must be non-negative")
        if self.epochs_source < 1 or self.epochs_target < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidInputError("batch_size must be >= 1")
        if isinstance(self.extractor, dict):
            self.extractor = ExtractorSpec.from_dict(self.extractor)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extractor"] = self.extractor.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class LabeledFeatureSet:
    """Complex frames ``(N, n)``, device labels and a boolean train mask.

    ``mode`` selects the network encoding (see :func:`csi2q.nn.encode.encode_batch`).
    """

    frames: np.ndarray
    labels: np.ndarray
    is_train: np.ndarray
    mode: str = "tdsg"

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.is_train = np.asarray(self.is_train, dtype=bool)
        if self.frames.ndim != 2 or self.frames.shape[0] != self.labels.shape[0]:
            raise InvalidInputError("frames must be (N, n) with one label per frame")
        if self.is_train.shape != self.labels.shape:
            raise InvalidInputError("train mask must match labels")
        if self.mode not in MODE_LENGTH or self.frames.shape[1] != MODE_LENGTH[self.mode]:
            raise InvalidInputError(f"frame length {self.frames.shape[1]} does not fit mode {self.mode!r}")
        if np.any(self.labels < 0):
            raise InvalidInputError("labels must be non-negative")

    @classmethod
    def split(cls, frames, labels, mode="tdsg", train_fraction=0.7, seed=0) -> "LabeledFeatureSet":
        """Stratified per-device split by frame."""
        labels = np.asarray(labels, dtype=np.int64)
        mask = stratified_mask(labels, train_fraction, seed)
        return cls(frames, labels, mask, mode)

    def train(self):
        return self.frames[self.is_train], self.labels[self.is_train]

    def test(self):
        return self.frames[~self.is_train], self.labels[~self.is_train]

    def classes(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.labels[self.is_train]))


def stratified_mask(labels, train_fraction: float = 0.7, seed: int = 0) -> np.ndarray:
    if not 0 < train_fraction <= 1:
        raise InvalidInputError("train_fraction must be in (0, 1]")
    labels = np.asarray(labels)
    mask = np.zeros(labels.shape[0], dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng = _rng(seed, _SPLIT, int(c))
        idx = idx[rng.permutation(idx.size)]
        n_train = max(1, int(round(train_fraction * idx.size)))
        mask[idx[:n_train]] = True
    return mask


def _index_labels(labels, classes):
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([lookup[int(c)] for c in labels], dtype=np.int64)
    except KeyError as exc:
        raise InvalidInputError(f"label {exc.args[0]} not among trained classes") from None


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def _architecture(config: TrainConfig, mode: str, num_classes: int, role: str) -> dict:
    return {"role": role, "extractor": config.extractor.to_dict(), "hidden": config.hidden,
            "num_classes": num_classes, "input_mode": mode, "input_length": MODE_LENGTH[mode]}


def train_source(iq: LabeledFeatureSet, config: TrainConfig) -> ModelBundle:
    """Pretrain ``E_S`` and ``D`` on labelled IQ frames."""
    frames, labels = iq.train()
    classes = iq.classes()
    if len(classes) < 2:
        raise InvalidInputError("source training needs at least two classes")
    if frames.shape[0] == 0:
        raise InvalidInputError("empty training split")
    y = _index_labels(labels, classes)
    x = encode_batch(frames, iq.mode)
    spec = config.extractor
    E_S = init_extractor(spec, _rng(config.seed, _INIT_EXTRACTOR, 0))
    D = init_mlp([spec.feature_dim, config.hidden, len(classes)], _rng(config.seed, _INIT_HEAD, 0))
    opt = Adam({**{f"E_S.{k}": v for k, v in E_S.items()}, **{f"D.{k}": v for k, v in D.items()}})
    shuffle = _rng(config.seed, _SHUFFLE, 0)
    trace = []
    for epoch in range(config.epochs_source):
        lr = cosine_lr(epoch, config.epochs_source, config.lr_source)
        total, correct, n = 0.0, 0, 0
        for idx in _batches(len(y), config.batch_size, shuffle):
            opt.zero_grad()
            probs = softmax(forward_mlp(D, forward_extractor(spec, E_S, x[idx])))
            loss = cross_entropy(probs, y[idx])
            loss.backward()
            opt.step(lr)
            total += float(loss.data) * len(idx)
            correct += int(np.sum(np.argmax(probs.data, axis=1) == y[idx]))
            n += len(idx)
        trace.append({"epoch": epoch + 1, "loss_source": total / n, "loss_target": None,
                      "loss_aux": None, "lr": lr, "train_accuracy": correct / n})
    return ModelBundle(
        groups={"E_S": E_S, "D": D},
        architecture=_architecture(config, iq.mode, len(classes), "source"),
        hyperparameters=config.to_dict(),
        seed=config.seed,
        metadata={"classes": classes, "trace": trace, "num_train": int(len(y))},
    )


def _check_source(source: ModelBundle, config: TrainConfig):
    arch = source.architecture
    if arch.get("role") != "source":
        raise InvalidInputError("auxiliary model must be a source bundle")
    if ExtractorSpec.from_dict(arch["extractor"]) != config.extractor:
        raise InvalidInputError("source extractor architecture does not match the target configuration")


def source_features(source: ModelBundle, x: np.ndarray) -> np.ndarray:
    """``E_S`` features for already encoded inputs (no graph, E_S untouched)."""
    spec = ExtractorSpec.from_dict(source.architecture["extractor"])
    E_S = source.group("E_S")
    with no_grad():
        return np.concatenate([forward_extractor(spec, E_S, x[s:s + PREDICT_CHUNK]).data
                               for s in range(0, len(x), PREDICT_CHUNK)])


def train_target(features: LabeledFeatureSet, source: ModelBundle | None, config: TrainConfig) -> ModelBundle:
    """Train ``E_T`` and ``C``; with a source bundle also ``A_T`` and the alignment term.

    ``source=None`` trains the plain classifier (no auxiliary network).
    """
    frames, labels = features.train()
    classes = features.classes()
    if len(classes) < 2:
        raise InvalidInputError("target training needs at least two classes")
    y = _index_labels(labels, classes)
    x = encode_batch(frames, features.mode)
    spec = config.extractor
    E_T = init_extractor(spec, _rng(config.seed, _INIT_EXTRACTOR, 1))
    C = init_mlp([spec.feature_dim, config.hidden, len(classes)], _rng(config.seed, _INIT_HEAD, 1))
    opt_t = Adam({**{f"E_T.{k}": v for k, v in E_T.items()}, **{f"C.{k}": v for k, v in C.items()}})
    groups = {"E_T": E_T, "C": C}

    use_aux = source is not None
    if use_aux:
        _check_source(source, config)
        before = source.checksum("E_S")
        e_S_all = source_features(source, x)  # E_S frozen: one pass is exact
        A_T = init_mlp([spec.feature_dim, config.hidden, spec.feature_dim], _rng(config.seed, _INIT_AUX, 0))
        opt_a = Adam(A_T)
        groups["A_T"] = A_T

    shuffle = _rng(config.seed, _SHUFFLE, 1)
    trace = []
    for epoch in range(config.epochs_target):
        lr_t = cosine_lr(epoch, config.epochs_target, config.lr_target)
        lr_a = cosine_lr(epoch, config.epochs_target, config.lr_aux)
        tot_t = tot_a = 0.0
        correct = n = 0
        for idx in _batches(len(y), config.batch_size, shuffle):
            opt_t.zero_grad()
            e_T = forward_extractor(spec, E_T, x[idx])
            probs = softmax(forward_mlp(C, e_T))
            loss_t = cross_entropy(probs, y[idx])
            total = loss_t
            if use_aux:
                opt_a.zero_grad()
                e_A = forward_mlp(A_T, Tensor(e_S_all[idx]))
                loss_a = mse(e_A, e_T.detach())
                loss_a.backward()
                opt_a.step(lr_a)
                tot_a += float(loss_a.data) * len(idx)
                if config.lam > 0:
                    total = add(loss_t, scale(mse(e_A.detach(), e_T), config.lam))
            total.backward()
            opt_t.step(lr_t)
            tot_t += float(loss_t.data) * len(idx)
            correct += int(np.sum(np.argmax(probs.data, axis=1) == y[idx]))
            n += len(idx)
        trace.append({"epoch": epoch + 1, "loss_source": None, "loss_target": tot_t / n,
                      "loss_aux": tot_a / n if use_aux else None, "lr": lr_t, "train_accuracy": correct / n})

    meta = {"classes": classes, "trace": trace, "num_train": int(len(y)), "auxiliary": use_aux}
    if use_aux:
        after = source.checksum("E_S")
        if after != before:
            raise RuntimeError("source extractor changed during target training")
        meta["source_fingerprint"] = source.fingerprint
        meta["source_checksum"] = after
    return ModelBundle(
        groups=groups,
        architecture=_architecture(config, features.mode, len(classes), "target"),
        hyperparameters=config.to_dict(),
        seed=config.seed,
        metadata=meta,
    )


def predict(bundle: ModelBundle, frames, encoded: bool = False):
    """Class probabilities and pre-softmax activations of ``C(E_T(x))``.

    ``frames`` are complex ``(N, n)`` unless ``encoded`` is set, in which case
    they are already ``(N, 2, n)`` network inputs.
    """
    arch = bundle.architecture
    spec = ExtractorSpec.from_dict(arch["extractor"])
    if arch["role"] == "source":
        ext, head = bundle.group("E_S"), bundle.group("D")
    else:
        ext, head = bundle.group("E_T"), bundle.group("C")
    x = np.asarray(frames, dtype=np.float64) if encoded else encode_batch(frames, arch["input_mode"])
    logits = []
    with no_grad():
        for s in range(0, len(x), PREDICT_CHUNK):
            logits.append(forward_mlp(head, forward_extractor(spec, ext, x[s:s + PREDICT_CHUNK])).data)
    logits = np.concatenate(logits) if logits else np.zeros((0, mlp_dims(head)[-1]))
    with no_grad():
        probs = softmax(Tensor(logits)).data
    return probs, logits


def predict_labels(bundle: ModelBundle, frames) -> np.ndarray:
    """Argmax predictions mapped back to device ids (lowest index wins ties)."""
    probs, _ = predict(bundle, frames)
    classes = np.asarray(bundle.metadata["classes"])
    return classes[np.argmax(probs, axis=1)]


def write_trace_csv(bundle: ModelBundle, path) -> None:
    cols = ["epoch", "loss_source", "loss_target", "loss_aux", "lr"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in bundle.metadata.get("trace", []):
            w.writerow(["" if row[c] is None else repr(row[c]) for c in cols])


def final_loss_digest(bundle: ModelBundle) -> str:
    """Short hash of all parameters, for determinism checks."""
    h = hashlib.sha256()
    for g in sorted(bundle.groups):
        h.update(params_checksum(bundle.groups[g]).encode())
    return h.hexdigest()[:16]
