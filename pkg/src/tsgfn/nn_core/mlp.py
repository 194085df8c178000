from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from . import autodiff as ad

ACTIVATIONS = {
    "leaky_relu": ad.leaky_relu,
    "relu": ad.relu,
    "tanh": ad.tanh,
    "linear": lambda t: t,
}


@dataclass(frozen=True)
class MLPShape:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    activation: str = "leaky_relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(self.hidden_dims))
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer sizes must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.output_dim)

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1


class ParamStore:
    """Ordered named float64 tensors, each tagged with a learning-rate group."""

    def __init__(self):
        self._arrays: dict[str, np.ndarray] = {}
        self._groups: dict[str, str] = {}

    def add(self, name: str, array, group: str = "model") -> None:
        if name in self._arrays:
            raise KeyError(f"duplicate parameter {name!r}")
        self._arrays[name] = np.array(array, dtype=np.float64)
        self._groups[name] = group

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self) -> Iterator[str]:
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def items(self):
        return self._arrays.items()

    def group(self, name: str) -> str:
        return self._groups[name]

    def groups(self) -> dict[str, str]:
        return dict(self._groups)

    def assign(self, name: str, value) -> None:
        """Overwrite values in place; shapes are fixed at construction."""
        arr = self._arrays[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != arr.shape:
            raise ValueError(f"{name}: shape {value.shape} != {arr.shape}")
        arr[...] = value

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, arr in self._arrays.items():
            out.add(name, arr.copy(), self._groups[name])
        return out

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, arr in self._arrays.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def leaves(self) -> dict[str, ad.Tensor]:
        return {name: ad.Tensor(arr, requires_grad=True, name=name) for name, arr in self._arrays.items()}

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self._arrays.items()}

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._arrays.values()]) if self._arrays else np.zeros(0)


def layer_names(prefix: str, i: int) -> tuple[str, str]:
    return f"{prefix}.{i}.W", f"{prefix}.{i}.b"


def init_params(shape: MLPShape, seed, prefix: str = "mlp", store: ParamStore | None = None,
                group: str = "model") -> ParamStore:
    """Uniform(+-sqrt(1/fan_in)) weights and zero biases; ``seed`` may be an int or a Generator."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    store = ParamStore() if store is None else store
    for i, (fan_in, fan_out) in enumerate(zip(shape.dims[:-1], shape.dims[1:])):
        bound = np.sqrt(1.0 / fan_in)
        w_name, b_name = layer_names(prefix, i)
        store.add(w_name, rng.uniform(-bound, bound, size=(fan_in, fan_out)), group)
        store.add(b_name, np.zeros(fan_out), group)
    return store


def _apply_activation(name: str, x: np.ndarray) -> np.ndarray:
    if name == "leaky_relu":
        return np.where(x > 0, x, 0.01 * x)
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    return x


def mlp_apply(shape: MLPShape, params: Mapping, x: np.ndarray, prefix: str = "mlp",
              final_activation: bool = False) -> np.ndarray:
    """Tape-free forward pass over plain arrays; same arithmetic as :func:`mlp_forward`."""
    h = x
    for i in range(shape.num_layers):
        if i:
            h = _apply_activation(shape.activation, h)
        w, b = layer_names(prefix, i)
        h = h @ params[w] + params[b]
    if final_activation:
        h = _apply_activation(shape.activation, h)
    return h


def mlp_forward(shape: MLPShape, params: Mapping, x, prefix: str = "mlp",
                final_activation: bool = False) -> ad.Tensor:
    """Affine+activation stack with the last layer affine only, recorded on the tape.

    ``params`` maps names to arrays or :class:`Tensor` leaves; gradients flow
    to whichever entries are leaves.
    """
    act = ACTIVATIONS[shape.activation]
    xd = x.data if isinstance(x, ad.Tensor) else np.asarray(x, dtype=np.float64)
    if xd.shape[-1] != shape.input_dim:
        raise ValueError(f"input length {xd.shape[-1]} != input_dim {shape.input_dim}")
    squeeze = xd.ndim == 1
    h = ad.reshape(x, (1, -1)) if squeeze else x
    for i in range(shape.num_layers):
        if i:
            h = act(h)
        w, b = layer_names(prefix, i)
        h = ad.add(ad.matmul(h, params[w]), params[b])
    if final_activation:
        h = act(h)
    if squeeze:
        h = ad.reshape(h, (h.data.shape[-1],))
    return h
