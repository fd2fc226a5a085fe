"""Minimal dense network core in float64 numpy.

Provides named parameter storage with Adam state, ReLU MLPs with an
explicit activation tape for exact reverse-mode gradients, stable softmax
cross-entropy, categorical utilities, orthogonal initialization, central
finite-difference checking, and a manifest+blob checkpoint format. There
is deliberately no general autodiff graph: the architectures used here
are small fixed MLP chains, and an explicit tape keeps every gradient
auditable against finite differences.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


@dataclass
class AdamConfig:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip: float | None = None  # global L2 gradient norm bound

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float = 1.0):
    """Orthogonal weight init (QR of a Gaussian, sign-fixed)."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class ParamStore:
    """Named float64 parameter tensors plus Adam moments.

    ``version`` increments on every mutation so cached activations keyed
    to a parameter snapshot can detect staleness. Adam moments and step
    counters are tracked per parameter, which keeps bias correction exact
    when different phases update different parameter subsets.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.adam_t: dict[str, int] = {}
        self.version = 0

    def create(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already exists")
        value = np.ascontiguousarray(value, dtype=np.float64)
        self.params[name] = value
        self.adam_m[name] = np.zeros_like(value)
        self.adam_v[name] = np.zeros_like(value)
        self.adam_t[name] = 0
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self, names=None) -> dict[str, np.ndarray]:
        names = self.params if names is None else names
        return {n: np.zeros_like(self.params[n]) for n in names}

    def adam_step(self, grads: dict[str, np.ndarray], cfg: AdamConfig) -> float:
        """Clipped, bias-corrected Adam update over the parameters named in
        ``grads``. Returns the pre-clip global gradient norm."""
        norm = global_grad_norm(grads)
        scale = 1.0
        if cfg.clip is not None and norm > cfg.clip:
            scale = cfg.clip / norm
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name!r}")
            g = g * scale
            self.adam_t[name] += 1
            t = self.adam_t[name]
            m = self.adam_m[name]
            v = self.adam_v[name]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * np.square(g)
            m_hat = m / (1 - cfg.beta1 ** t)
            v_hat = v / (1 - cfg.beta2 ** t)
            self.params[name] -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        self.version += 1
        return norm


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g)))
    return float(np.sqrt(total))


class MLP:
    """Fully connected ReLU network; the output layer is affine.

    Parameters live in a ``ParamStore`` under ``{name}.W{i}`` /
    ``{name}.b{i}``. ``forward`` returns the batch output together with
    the tape needed by ``backward``.
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        sizes: list[int],
        rng: np.random.Generator,
        hidden_gain: float = np.sqrt(2.0),
        out_gain: float = 1.0,
    ):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        self.name = name
        self.sizes = list(sizes)
        self.n_layers = len(sizes) - 1
        for i in range(self.n_layers):
            gain = out_gain if i == self.n_layers - 1 else hidden_gain
            store.create(f"{name}.W{i}", orthogonal(rng, (sizes[i], sizes[i + 1]), gain))
            store.create(f"{name}.b{i}", np.zeros(sizes[i + 1]))

    def param_names(self) -> list[str]:
        out = []
        for i in range(self.n_layers):
            out += [f"{self.name}.W{i}", f"{self.name}.b{i}"]
        return out

    def forward(self, store: ParamStore, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ValueError(
                f"{self.name}: expected input (*, {self.sizes[0]}), got {x.shape}"
            )
        tape = []
        h = x
        for i in range(self.n_layers):
            z = h @ store[f"{self.name}.W{i}"] + store[f"{self.name}.b{i}"]
            tape.append((h, z))
            h = np.maximum(z, 0.0) if i < self.n_layers - 1 else z
        return h, tape

    def backward(self, store: ParamStore, tape, dout: np.ndarray, grads) -> np.ndarray:
        """Accumulate parameter gradients into ``grads``; return d(input)."""
        dz = np.asarray(dout, dtype=np.float64)
        for i in range(self.n_layers - 1, -1, -1):
            h_in, z = tape[i]
            if i < self.n_layers - 1:
                dz = dz * (z > 0.0)
            grads[f"{self.name}.W{i}"] += h_in.T @ dz
            grads[f"{self.name}.b{i}"] += dz.sum(axis=0)
            dz = dz @ store[f"{self.name}.W{i}"].T
        return dz


def log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_ce(logits: np.ndarray, targets: np.ndarray):
    """Per-row cross-entropy loss and its gradient wrt the logits.

    Gradient rows are softmax(logits) - onehot(target) (unscaled; callers
    fold in their own batch weighting).
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    targets = np.atleast_1d(np.asarray(targets))
    if np.any(targets < 0) or np.any(targets >= logits.shape[1]):
        raise ValueError("target index out of range")
    logp = log_softmax(logits)
    rows = np.arange(len(targets))
    loss = -logp[rows, targets]
    dlogits = np.exp(logp)
    dlogits[rows, targets] -= 1.0
    return loss, dlogits


def categorical_entropy(logits: np.ndarray) -> np.ndarray:
    logp = log_softmax(logits)
    return -(np.exp(logp) * logp).sum(axis=-1)


def entropy_grad(logits: np.ndarray) -> np.ndarray:
    """d entropy / d logits, rows aligned with ``logits``."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    h = -(p * logp).sum(axis=-1, keepdims=True)
    return -p * (logp + h)


def categorical_sample(probs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Inverse-CDF sampling: one uniform draw per row."""
    cdf = np.cumsum(probs, axis=-1)
    u = np.asarray(uniforms)[..., None]
    return np.minimum((u >= cdf).sum(axis=-1), probs.shape[-1] - 1)


def fd_gradient(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function of an array.

    ``x`` is perturbed in place element by element (and restored), so the
    function may close over the same array object.
    """
    grad = np.zeros(x.shape)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = fn(x)
        x[idx] = orig - h
        fm = fn(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def fd_check_store(fn, store: ParamStore, names=None, h: float = 1e-6):
    """Finite-difference gradients of ``fn(store) -> scalar`` for every
    parameter named; returns a dict mirroring analytic gradient dicts."""
    names = store.names() if names is None else names
    out = {}
    for name in names:
        p = store.params[name]

        def wrapped(_arr, _name=name):
            return fn(store)

        out[name] = fd_gradient(wrapped, p, h=h)
    return out


def save_checkpoint(
    path,
    store: ParamStore,
    global_step: int,
    meta: dict | None = None,
    with_optimizer: bool = True,
) -> None:
    """Write a single-file checkpoint: one JSON manifest line, then the
    named tensors as little-endian float64 blobs (params, then Adam m and
    v when optimizer state is included)."""
    names = store.names()
    manifest = {
        "version": CHECKPOINT_VERSION,
        "names": names,
        "shapes": [list(store.params[n].shape) for n in names],
        "optimizer_state": bool(with_optimizer),
        "global_step": int(global_step),
        "meta": meta or {},
    }
    if with_optimizer:
        manifest["adam_t"] = {n: store.adam_t[n] for n in names}
    with open(path, "wb") as f:
        f.write(json.dumps(manifest).encode() + b"\n")
        for n in names:
            f.write(store.params[n].astype("<f8").tobytes())
        if with_optimizer:
            for n in names:
                f.write(store.adam_m[n].astype("<f8").tobytes())
            for n in names:
                f.write(store.adam_v[n].astype("<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (ParamStore, manifest dict)."""
    with open(path, "rb") as f:
        header = f.readline()
        try:
            manifest = json.loads(header.decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"unreadable checkpoint manifest: {e}") from e
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {manifest.get('version')} "
                f"!= supported {CHECKPOINT_VERSION}"
            )
        blob = f.read()
    store = ParamStore()
    reader = io.BytesIO(blob)

    def read_tensor(shape):
        n = int(np.prod(shape)) if shape else 1
        raw = reader.read(8 * n)
        if len(raw) != 8 * n:
            raise CheckpointError("checkpoint blob truncated")
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)

    for name, shape in zip(manifest["names"], manifest["shapes"]):
        store.create(name, read_tensor(shape))
    if manifest.get("optimizer_state"):
        for name, shape in zip(manifest["names"], manifest["shapes"]):
            store.adam_m[name] = read_tensor(shape)
        for name, shape in zip(manifest["names"], manifest["shapes"]):
            store.adam_v[name] = read_tensor(shape)
        store.adam_t = {n: int(t) for n, t in manifest["adam_t"].items()}
    return store, manifest
