"""Model bundles: named parameter groups in a float64 blob plus a JSON sidecar.

The blob is the little-endian concatenation of every parameter array in
sorted (group, name) order.  The sidecar lists names, shapes and offsets
together with the architecture, hyperparameters, seed and training metadata.
Both files are written deterministically, so load-then-save is byte-stable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ContainerFormatError, InvalidInputError
from .tensor import Tensor

BLOB_MAGIC = b"CSQM"
FORMAT_VERSION = 1


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def params_checksum(params: dict) -> str:
    """SHA-256 over names, shapes and raw bytes of a parameter dict."""
    h = hashlib.sha256()
    for name in sorted(params):
        a = params[name].data if isinstance(params[name], Tensor) else np.asarray(params[name])
        h.update(name.encode())
        h.update(repr(a.shape).encode())
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return h.hexdigest()


def architecture_fingerprint(architecture: dict) -> str:
    blob = json.dumps(architecture, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ModelBundle:
    """Parameter groups (e.g. ``E_S``/``D`` or ``E_T``/``A_T``/``C``) and metadata."""

    groups: dict
    architecture: dict
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return architecture_fingerprint(self.architecture)

    def group(self, name: str) -> dict:
        try:
            return self.groups[name]
        except KeyError:
            raise InvalidInputError(f"bundle has no parameter group {name!r} (have {sorted(self.groups)})") from None

    def checksum(self, name: str) -> str:
        return params_checksum(self.group(name))

    def _layout(self):
        entries, offset = [], 0
        for g in sorted(self.groups):
            for name in sorted(self.groups[g]):
                a = self.groups[g][name].data
                entries.append({"group": g, "name": name, "shape": list(a.shape), "offset": offset})
                offset += int(a.size)
        return entries, offset

    def save(self, path) -> Path:
        """Write ``path`` (blob) and ``path + '.json'`` (sidecar)."""
        path = Path(path)
        entries, total = self._layout()
        flat = np.empty(total, dtype="<f8")
        for e in entries:
            a = self.groups[e["group"]][e["name"]].data
            flat[e["offset"]:e["offset"] + a.size] = a.ravel()
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(BLOB_MAGIC)
            fh.write(np.array([FORMAT_VERSION, total], dtype="<u8").tobytes())
            fh.write(flat.tobytes())
        side = {
            "format_version": FORMAT_VERSION,
            "architecture": self.architecture,
            "fingerprint": self.fingerprint,
            "hyperparameters": self.hyperparameters,
            "seed": self.seed,
            "metadata": self.metadata,
            "parameters": entries,
            "blob_sha256": hashlib.sha256(flat.tobytes()).hexdigest(),
        }
        sidecar_path(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "ModelBundle":
        path = Path(path)
        side_file = sidecar_path(path)
        if not path.exists() or not side_file.exists():
            raise ContainerFormatError(f"model files missing: {path} / {side_file}")
        raw = path.read_bytes()
        if raw[:4] != BLOB_MAGIC:
            raise ContainerFormatError(f"{path}: bad magic {raw[:4]!r}")
        version, total = np.frombuffer(raw[4:20], dtype="<u8")
        if version != FORMAT_VERSION:
            raise ContainerFormatError(f"{path}: unsupported version {version}")
        flat = np.frombuffer(raw[20:], dtype="<f8")
        if flat.size != total:
            raise ContainerFormatError(f"{path}: expected {total} values, found {flat.size}")
        side = json.loads(side_file.read_text())
        if side.get("fingerprint") != architecture_fingerprint(side["architecture"]):
            raise ContainerFormatError(f"{side_file}: architecture fingerprint mismatch")
        groups: dict = {}
        for e in side["parameters"]:
            n = int(np.prod(e["shape"])) if e["shape"] else 1
            a = flat[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
            groups.setdefault(e["group"], {})[e["name"]] = Tensor(a, requires_grad=True)
        return cls(groups, side["architecture"], side["hyperparameters"], side["seed"], side["metadata"])
