"""Feature extractors and fully connected heads.

Parameters live in plain ``dict[str, Tensor]`` objects so they can be frozen,
checksummed and serialised without any module machinery.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import InvalidInputError
from .tensor import Tensor, conv1d, linear, mean_time, relu


@dataclass(frozen=True)
class ExtractorSpec:
    """Dilated causal convolution stack followed by temporal mean pooling."""

    in_channels: int = 2
    widths: tuple[int, ...] = (32, 32, 64, 64)
    kernel_size: int = 3
    dilations: tuple[int, ...] = (1, 2, 4, 8)

    def __post_init__(self):
        if len(self.widths) != len(self.dilations):
            raise InvalidInputError("widths and dilations must have the same length")

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]

    @property
    def receptive_field(self) -> int:
        return 1 + (self.kernel_size - 1) * sum(self.dilations)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExtractorSpec":
        d = {**cls().to_dict(), **d}
        return cls(int(d["in_channels"]), tuple(d["widths"]), int(d["kernel_size"]), tuple(d["dilations"]))


MIN_INPUT_LENGTH = 16


def init_extractor(spec: ExtractorSpec, rng: np.random.Generator) -> dict[str, Tensor]:
    params = {}
    c_in = spec.in_channels
    for i, c_out in enumerate(spec.widths):
        fan_in = c_in * spec.kernel_size
        w = rng.standard_normal((c_out, c_in, spec.kernel_size)) * np.sqrt(2.0 / fan_in)
        params[f"conv{i}.weight"] = Tensor(w, requires_grad=True)
        params[f"conv{i}.bias"] = Tensor(np.zeros(c_out), requires_grad=True)
        c_in = c_out
    return params


def extractor_activations(spec: ExtractorSpec, params, x) -> list[Tensor]:
    """Per-layer activations before pooling, shape (B, width, N) each."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.data.ndim != 3 or x.shape[1] != spec.in_channels:
        raise InvalidInputError(f"extractor expects (B, {spec.in_channels}, N) input, got {x.shape}")
    if x.shape[2] < MIN_INPUT_LENGTH:
        raise InvalidInputError(f"input length {x.shape[2]} < {MIN_INPUT_LENGTH}")
    acts = []
    h = x
    for i, d in enumerate(spec.dilations):
        h = relu(conv1d(h, params[f"conv{i}.weight"], params[f"conv{i}.bias"], d))
        acts.append(h)
    return acts


def forward_extractor(spec: ExtractorSpec, params, x) -> Tensor:
    """(B, C, N) input to (B, feature_dim) pooled features."""
    return mean_time(extractor_activations(spec, params, x)[-1])


def init_mlp(dims, rng: np.random.Generator) -> dict[str, Tensor]:
    """Fully connected stack ``dims[0] -> dims[1] -> ... -> dims[-1]``."""
    params = {}
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        gain = 2.0 if i < len(dims) - 2 else 1.0
        params[f"fc{i}.weight"] = Tensor(rng.standard_normal((a, b)) * np.sqrt(gain / a), requires_grad=True)
        params[f"fc{i}.bias"] = Tensor(np.zeros(b), requires_grad=True)
    return params


def forward_mlp(params, x) -> Tensor:
    """Rectifier between layers, none after the last (logits / features out)."""
    n = len(params) // 2
    h = x if isinstance(x, Tensor) else Tensor(x)
    for i in range(n):
        h = linear(h, params[f"fc{i}.weight"], params[f"fc{i}.bias"])
        if i < n - 1:
            h = relu(h)
    return h


def mlp_dims(params) -> list[int]:
    n = len(params) // 2
    dims = [params["fc0.weight"].shape[0]]
    dims += [params[f"fc{i}.weight"].shape[1] for i in range(n)]
    return dims
