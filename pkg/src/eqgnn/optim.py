"""Parameter containers, initialisation, Adam and checkpoint files."""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Var, param


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class ParamCollection:
    """Named parameters plus their Adam moment buffers."""

    params: dict[str, Var] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value: np.ndarray) -> Var:
        p = param(value, name=name)
        self.params[name] = p
        self.m[name] = np.zeros_like(p.value)
        self.v[name] = np.zeros_like(p.value)
        return p

    def __getitem__(self, name: str) -> Var:
        return self.params[name]

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self):
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(p.value) if p.grad is None else p.grad)
                for k, p in self.params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters {sorted(missing)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.value.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {arr.shape}, model {p.value.shape}")
            p.value = arr.copy()


def adam_step(params: ParamCollection, lr: float = 1e-3, weight_decay: float = 0.0,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
    """One Adam update; weight decay enters as an L2 term on the gradient."""
    b1, b2 = betas
    params.step += 1
    t = params.step
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.params.items():
        g = np.zeros_like(p.value) if p.grad is None else p.grad
        if weight_decay:
            g = g + weight_decay * p.value
        m = params.m[name] = b1 * params.m[name] + (1.0 - b1) * g
        v = params.v[name] = b2 * params.v[name] + (1.0 - b2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)


# Checkpoints are .npz archives: one array per parameter (npz stores dtype and
# shape headers) plus a "__meta__" entry holding a UTF-8 JSON document.

def save_checkpoint(path: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    payload = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    payload["__meta__"] = np.frombuffer(
        json.dumps(meta or {}, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz")
    os.close(fd)
    try:
        np.savez(tmp, **payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k].copy() for k in z.files if k != "__meta__"}
        meta = json.loads(z["__meta__"].tobytes().decode("utf-8")) if "__meta__" in z.files else {}
    return arrays, meta
