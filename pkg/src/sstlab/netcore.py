"""Minimal differentiable feed-forward network: convolution, sum
pooling (LeNet-style subsampling with trainable per-map scale/bias),
fully connected layers, tanh, squared-error loss and plain SGD.

Outputs are raw (no normalization); after supervised training with
one-hot targets they approximate a probability vector but are not one.
All math is float64 numpy.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SSTLABN1"


class ShapeMismatch(Exception):
    pass


class InconsistentArchitecture(Exception):
    pass


class NonFiniteGradient(Exception):
    pass


class CheckpointError(Exception):
    pass


# ---------------------------------------------------------------------------
# layer specs

@dataclass(frozen=True)
class ConvSpec:
    maps: int
    kernel: int
    kind: str = "conv"


@dataclass(frozen=True)
class SumPoolSpec:
    window: int = 2
    trainable: bool = True
    kind: str = "sumpool"


@dataclass(frozen=True)
class FullSpec:
    units: int
    kind: str = "full"


@dataclass(frozen=True)
class ActivationSpec:
    fn: str = "tanh"
    kind: str = "activation"


@dataclass(frozen=True)
class FilterBankSpec:
    """Fixed (non-trainable) frontend of dilobe ordinal filters."""
    n: int = 50
    size: int = 8
    seed: int = 0
    kind: str = "filterbank"


LayerSpec = ConvSpec | SumPoolSpec | FullSpec | ActivationSpec | FilterBankSpec


def default_architecture(n_outputs: int) -> list[LayerSpec]:
    """LeNet-flavoured stack for 32x32 single-channel inputs."""
    return [
        ConvSpec(8, 5), ActivationSpec("tanh"),
        SumPoolSpec(2),
        ConvSpec(24, 5), ActivationSpec("tanh"),
        SumPoolSpec(2),
        ConvSpec(100, 5), ActivationSpec("tanh"),
        FullSpec(n_outputs),
    ]


def small_architecture(n_outputs: int) -> list[LayerSpec]:
    """Reduced stack for fast desk-scale experiments on 32x32 inputs."""
    return [
        ConvSpec(6, 5), ActivationSpec("tanh"),
        SumPoolSpec(2),
        ConvSpec(16, 5), ActivationSpec("tanh"),
        SumPoolSpec(2),
        FullSpec(60), ActivationSpec("tanh"),
        FullSpec(n_outputs),
    ]


# ---------------------------------------------------------------------------
# runtime layers

def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    # x (N,C,H,W) -> (N, C*k*k, Ho*Wo)
    n, c, h, w = x.shape
    ho, wo = h - k + 1, w - k + 1
    view = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    cols = view.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    return np.ascontiguousarray(cols)


class _Conv:
    def __init__(self, w: np.ndarray, b: np.ndarray, trainable: bool = True):
        self.w = w  # (out, in, k, k)
        self.b = b  # (out,)
        self.trainable = trainable
        self.dw = np.zeros_like(w)
        self.db = np.zeros_like(b)

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, cin, k, _ = self.w.shape
        n, c, h, wd = x.shape
        ho, wo = h - k + 1, wd - k + 1
        cols = _im2col(x, k)                       # (n, f, p)
        self._cols2 = cols.transpose(0, 2, 1).reshape(n * ho * wo, -1)
        self._in_shape = x.shape
        y = self._cols2 @ self.w.reshape(out, -1).T + self.b
        return y.reshape(n, ho * wo, out).transpose(0, 2, 1).reshape(n, out, ho, wo)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        n, out, ho, wo = dy.shape
        k = self.w.shape[2]
        dyf2 = dy.reshape(n, out, ho * wo).transpose(0, 2, 1).reshape(-1, out)
        if self.trainable:
            self.dw = (dyf2.T @ self._cols2).reshape(self.w.shape)
            self.db = dyf2.sum(axis=0)
        dcols2 = dyf2 @ self.w.reshape(out, -1)    # (n*p, f)
        _, c, h, wd = self._in_shape
        dcols = dcols2.reshape(n, ho, wo, c, k, k)
        dx = np.zeros(self._in_shape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + ho, j:j + wo] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dx

    def params(self):
        return [self.w, self.b] if self.trainable else []

    def grads(self):
        return [self.dw, self.db] if self.trainable else []


class _SumPool:
    def __init__(self, window: int, scale: np.ndarray | None, bias: np.ndarray | None):
        self.window = window
        self.scale = scale  # (maps,) or None for plain sums
        self.bias = bias
        if scale is not None:
            self.dscale = np.zeros_like(scale)
            self.dbias = np.zeros_like(bias)

    def forward(self, x: np.ndarray) -> np.ndarray:
        n, c, h, wd = x.shape
        w = self.window
        self._in_shape = x.shape
        s = x.reshape(n, c, h // w, w, wd // w, w).sum(axis=(3, 5))
        self._sums = s
        if self.scale is None:
            return s
        return s * self.scale[None, :, None, None] + self.bias[None, :, None, None]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        w = self.window
        if self.scale is not None:
            self.dscale = (dy * self._sums).sum(axis=(0, 2, 3))
            self.dbias = dy.sum(axis=(0, 2, 3))
            dy = dy * self.scale[None, :, None, None]
        ds = np.repeat(np.repeat(dy, w, axis=2), w, axis=3)
        return ds.reshape(self._in_shape)

    def params(self):
        return [] if self.scale is None else [self.scale, self.bias]

    def grads(self):
        return [] if self.scale is None else [self.dscale, self.dbias]


class _Tanh:
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy * (1.0 - self._y * self._y)

    def params(self):
        return []

    def grads(self):
        return []


class _Full:
    def __init__(self, w: np.ndarray, b: np.ndarray):
        self.w = w  # (units, in)
        self.b = b
        self.dw = np.zeros_like(w)
        self.db = np.zeros_like(b)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._in_shape = x.shape
        xf = x.reshape(x.shape[0], -1)
        self._x = xf
        return xf @ self.w.T + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.dw = dy.T @ self._x
        self.db = dy.sum(axis=0)
        return (dy @ self.w).reshape(self._in_shape)

    def params(self):
        return [self.w, self.b]

    def grads(self):
        return [self.dw, self.db]


# ---------------------------------------------------------------------------
# network state

@dataclass
class ClassifierState:
    arch: list[LayerSpec]
    layers: list = field(repr=False, default_factory=list)
    input_size: int = 32
    input_channels: int = 1
    rng_seed: int = 0
    n_outputs: int = 0

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads()]


def dilobe_filter_bank(n: int = 50, size: int = 8, seed: int = 0) -> list[np.ndarray]:
    """Each filter is a positive plus a negative 2d Gaussian with random
    center, extent and orientation, normalized to zero mean."""
    if n < 1 or size < 2:
        raise ValueError("need n >= 1 and size >= 2")
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    filters = []
    for _ in range(n):
        f = np.zeros((size, size))
        for sign in (1.0, -1.0):
            cx = rng.uniform(1.0, size - 2.0)
            cy = rng.uniform(1.0, size - 2.0)
            sx = rng.uniform(0.08, 0.35) * size
            sy = rng.uniform(0.08, 0.35) * size
            theta = rng.uniform(0.0, np.pi)
            ct, st = np.cos(theta), np.sin(theta)
            xr = (xx - cx) * ct + (yy - cy) * st
            yr = -(xx - cx) * st + (yy - cy) * ct
            f += sign * np.exp(-0.5 * ((xr / sx) ** 2 + (yr / sy) ** 2))
        f -= f.mean()
        filters.append(f)
    return filters


def _build_layers(arch, input_size, input_channels, rng):
    layers = []
    c, h, w = input_channels, input_size, input_size
    flat = False
    for spec in arch:
        if isinstance(spec, FilterBankSpec):
            if flat:
                raise InconsistentArchitecture("filter bank after flatten")
            if h < spec.size or w < spec.size:
                raise InconsistentArchitecture(
                    f"filter bank {spec.size}x{spec.size} larger than map {h}x{w}")
            bank = dilobe_filter_bank(spec.n, spec.size, spec.seed)
            wts = np.stack(bank)[:, None, :, :]
            if c != 1:
                raise InconsistentArchitecture("filter bank expects 1 input channel")
            layers.append(_Conv(wts, np.zeros(spec.n), trainable=False))
            c, h, w = spec.n, h - spec.size + 1, w - spec.size + 1
        elif isinstance(spec, ConvSpec):
            if flat:
                raise InconsistentArchitecture("conv after flatten")
            if h < spec.kernel or w < spec.kernel:
                raise InconsistentArchitecture(
                    f"kernel {spec.kernel} larger than map {h}x{w}")
            fan_in = c * spec.kernel * spec.kernel
            bound = 1.0 / np.sqrt(fan_in)
            wts = rng.uniform(-bound, bound, (spec.maps, c, spec.kernel, spec.kernel))
            layers.append(_Conv(wts, np.zeros(spec.maps)))
            c, h, w = spec.maps, h - spec.kernel + 1, w - spec.kernel + 1
        elif isinstance(spec, SumPoolSpec):
            if flat:
                raise InconsistentArchitecture("pool after flatten")
            if h % spec.window or w % spec.window:
                raise InconsistentArchitecture(
                    f"pool window {spec.window} does not divide map {h}x{w}")
            if spec.trainable:
                scale = np.full(c, 1.0 / (spec.window * spec.window))
                bias = np.zeros(c)
            else:
                scale = bias = None
            layers.append(_SumPool(spec.window, scale, bias))
            h, w = h // spec.window, w // spec.window
        elif isinstance(spec, ActivationSpec):
            if spec.fn == "tanh":
                layers.append(_Tanh())
            elif spec.fn == "identity":
                pass
            else:
                raise InconsistentArchitecture(f"unknown activation {spec.fn!r}")
        elif isinstance(spec, FullSpec):
            fan_in = c * h * w if not flat else flat_dim
            bound = 1.0 / np.sqrt(fan_in)
            wts = rng.uniform(-bound, bound, (spec.units, fan_in))
            layers.append(_Full(wts, np.zeros(spec.units)))
            flat, flat_dim = True, spec.units
        else:
            raise InconsistentArchitecture(f"unknown spec {spec!r}")
    if not flat:
        raise InconsistentArchitecture("network must end in a full layer")
    return layers, flat_dim


def init_network(
    arch: list[LayerSpec],
    seed: int = 0,
    input_size: int = 32,
    input_channels: int = 1,
) -> ClassifierState:
    """Weights are uniform in +-1/sqrt(fan_in); pool scales start at the
    window mean, biases at zero. Deterministic per seed."""
    rng = np.random.default_rng(seed)
    layers, n_out = _build_layers(arch, input_size, input_channels, rng)
    return ClassifierState(
        arch=list(arch), layers=layers, input_size=input_size,
        input_channels=input_channels, rng_seed=seed, n_outputs=n_out)


def _as_batch(state: ClassifierState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    s = state.input_size
    if x.shape == (s, s):
        x = x[None, None]
    elif x.ndim == 3 and x.shape[1:] == (s, s):
        x = x[:, None]
    elif x.ndim == 4 and x.shape[1:] == (state.input_channels, s, s):
        pass
    else:
        raise ShapeMismatch(f"expected {s}x{s} input(s), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ShapeMismatch("non-finite input values")
    return x


def forward_batch(state: ClassifierState, inputs: np.ndarray) -> np.ndarray:
    """(N, H, W) -> (N, n_outputs)."""
    y = _as_batch(state, inputs)
    for layer in state.layers:
        y = layer.forward(y)
    return y


def forward(state: ClassifierState, x: np.ndarray) -> np.ndarray:
    """Single frame -> raw output vector of length n_outputs."""
    return forward_batch(state, x)[0]


def _loss_and_backward(state: ClassifierState, x4: np.ndarray,
                       targets: np.ndarray) -> float:
    y = x4
    for layer in state.layers:
        y = layer.forward(y)
    if y.shape != targets.shape:
        raise ShapeMismatch(f"targets {targets.shape} vs outputs {y.shape}")
    diff = y - targets
    loss = 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))
    dy = diff / x4.shape[0]
    for layer in reversed(state.layers):
        dy = layer.backward(dy)
    return loss


def sgd_step(state: ClassifierState, inputs, targets, lr: float) -> float:
    """One gradient step on the mean squared error of the mini-batch.
    Mutates `state` in place; returns the pre-step loss."""
    x4 = _as_batch(state, np.stack([np.asarray(i) for i in inputs])
                   if isinstance(inputs, (list, tuple)) else inputs)
    t = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    loss = _loss_and_backward(state, x4, t)
    for p, g in zip(state.parameters(), state.gradients()):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("non-finite gradient; reduce the learning rate")
        p -= lr * g
    if not np.isfinite(loss):
        raise NonFiniteGradient("non-finite loss")
    return loss


GRAD_FLOOR = 1e-12


def gradient_check(state: ClassifierState, x, target, eps: float = 1e-4,
                   sample_size: int = 500, seed: int = 0) -> float:
    """Max relative error between analytic gradients and central finite
    differences. For large nets a random subsample of >= sample_size
    parameter entries is checked. 0/0 below the absolute floor is 0."""
    if not (1e-6 <= eps <= 1e-3):
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    x4 = _as_batch(state, x)
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))

    _loss_and_backward(state, x4, t)
    analytic = [g.copy() for g in state.gradients()]
    params = state.parameters()

    def loss_only() -> float:
        y = x4
        for layer in state.layers:
            y = layer.forward(y)
        diff = y - t
        return 0.5 * float(np.mean(np.sum(diff * diff, axis=1)))

    entries = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if len(entries) > sample_size:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(entries), size=sample_size, replace=False)
        entries = [entries[k] for k in idx]

    max_err = 0.0
    for i, j in entries:
        flat = params[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        lp = loss_only()
        flat[j] = orig - eps
        lm = loss_only()
        flat[j] = orig
        numeric = (lp - lm) / (2 * eps)
        ga = analytic[i].reshape(-1)[j]
        denom = max(abs(ga), abs(numeric))
        if denom < GRAD_FLOOR:
            continue
        max_err = max(max_err, abs(ga - numeric) / denom)
    return max_err


def output_entropy(outputs) -> float:
    """Mean entropy in bits after clamping each vector to [1e-9, 1] and
    renormalizing it to sum 1."""
    arr = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    p = np.clip(arr, 1e-9, 1.0)
    p = p / p.sum(axis=1, keepdims=True)
    h = -(p * np.log2(p)).sum(axis=1)
    return float(h.mean())


# ---------------------------------------------------------------------------
# checkpoints: magic, json header (arch + shapes), raw little-endian float64

def _spec_to_dict(spec: LayerSpec) -> dict:
    d = dict(spec.__dict__)
    return d


def _spec_from_dict(d: dict) -> LayerSpec:
    kinds = {"conv": ConvSpec, "sumpool": SumPoolSpec, "full": FullSpec,
             "activation": ActivationSpec, "filterbank": FilterBankSpec}
    d = dict(d)
    kind = d.pop("kind")
    try:
        return kinds[kind](**d)
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"bad layer spec {d!r}: {exc}") from exc


def _write_checkpoint(fh, state: ClassifierState) -> None:
    params = state.parameters()
    header = {
        "arch": [_spec_to_dict(s) for s in state.arch],
        "input_size": state.input_size,
        "input_channels": state.input_channels,
        "rng_seed": state.rng_seed,
        "shapes": [list(p.shape) for p in params],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    fh.write(MAGIC)
    fh.write(struct.pack("<I", len(blob)))
    fh.write(blob)
    for p in params:
        fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def save_checkpoint(state: ClassifierState, path) -> None:
    with open(path, "wb") as fh:
        _write_checkpoint(fh, state)


def load_checkpoint(path) -> ClassifierState:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        raw = fh.read(4)
        if len(raw) < 4:
            raise CheckpointError("truncated header length")
        (hlen,) = struct.unpack("<I", raw)
        blob = fh.read(hlen)
        if len(blob) < hlen:
            raise CheckpointError("truncated header")
        try:
            header = json.loads(blob)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"bad header json: {exc}") from exc
        arch = [_spec_from_dict(d) for d in header["arch"]]
        state = init_network(arch, header["rng_seed"], header["input_size"],
                             header["input_channels"])
        for p, shape in zip(state.parameters(), header["shapes"]):
            if list(p.shape) != shape:
                raise CheckpointError(f"shape mismatch {p.shape} vs {shape}")
            nbytes = int(np.prod(shape)) * 8
            raw = fh.read(nbytes)
            if len(raw) < nbytes:
                raise CheckpointError("truncated parameter block")
            p[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return state


def checkpoint_bytes(state: ClassifierState) -> bytes:
    """Canonical serialized form, for bit-identity comparisons."""
    buf = io.BytesIO()
    _write_checkpoint(buf, state)
    return buf.getvalue()
