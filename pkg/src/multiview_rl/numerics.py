"""Dense feed-forward networks on a flat float64 parameter vector.

Every actor, critic and encoder in the package is an :class:`Mlp`.  Networks
are treated as values: the update functions return new instances and never
touch the parameters of their arguments.

Inputs may be a single vector of shape ``(n_in,)`` or a batch of shape
``(batch, n_in)``.  For a batch, ``backward`` sums parameter gradients over
the rows (the cotangent of ``sum_rows <output_row, output_grad_row>``) and
returns one input-gradient row per input row.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "tanh_scaled")

CHECKPOINT_MAGIC = b"MLPCKPT1"
_HIDDEN_CODES = {name: i for i, name in enumerate(HIDDEN_ACTIVATIONS)}
_OUTPUT_CODES = {name: i for i, name in enumerate(OUTPUT_ACTIVATIONS)}


class DimensionError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Raised when a non-finite value shows up in a training update."""


def param_count(layer_sizes) -> int:
    return sum((layer_sizes[i] + 1) * layer_sizes[i + 1] for i in range(len(layer_sizes) - 1))


@dataclass(frozen=True, eq=False)
class Mlp:
    layer_sizes: tuple[int, ...]
    params: np.ndarray
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    output_bound: float = 1.0
    _layers: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"layer_sizes must hold at least two positive ints, got {self.layer_sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        if self.output_activation == "tanh_scaled" and not self.output_bound > 0:
            raise ValueError("tanh_scaled output needs a positive bound")
        params = np.array(self.params, dtype=np.float64).ravel()
        if params.size != param_count(sizes):
            raise DimensionError(
                f"parameter vector has length {params.size}, architecture {sizes} needs {param_count(sizes)}"
            )
        params.setflags(write=False)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "output_bound", float(self.output_bound))
        object.__setattr__(self, "_layers", _split(params, sizes))

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def same_architecture(self, other: "Mlp") -> bool:
        return (
            self.layer_sizes == other.layer_sizes
            and self.hidden_activation == other.hidden_activation
            and self.output_activation == other.output_activation
            and self.output_bound == other.output_bound
        )

    def with_params(self, params) -> "Mlp":
        return Mlp(self.layer_sizes, params, self.hidden_activation, self.output_activation, self.output_bound)

    def layers(self):
        """(weight, bias) pairs; weight has shape (n_out, n_in) and is a read-only view."""
        return list(self._layers)

    def __call__(self, x):
        return forward(self, x)


@dataclass
class GradientReport:
    param_grads: np.ndarray
    input_grads: np.ndarray


def _split(params, sizes):
    layers = []
    offset = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = params[offset:offset + n_in * n_out].reshape(n_out, n_in)
        offset += n_in * n_out
        b = params[offset:offset + n_out]
        offset += n_out
        layers.append((w, b))
    return layers


def init_mlp(layer_sizes, rng: np.random.Generator, hidden_activation="tanh",
             output_activation="identity", output_bound=1.0, final_scale=None) -> Mlp:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer.

    ``final_scale`` optionally replaces the bound of the last layer, which keeps
    freshly initialized actors and critics close to zero output.
    """
    sizes = tuple(int(s) for s in layer_sizes)
    chunks = []
    n_layers = len(sizes) - 1
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(n_in)
        if final_scale is not None and i == n_layers - 1:
            bound = final_scale
        chunks.append(rng.uniform(-bound, bound, size=n_in * n_out))
        chunks.append(rng.uniform(-bound, bound, size=n_out))
    return Mlp(sizes, np.concatenate(chunks), hidden_activation, output_activation, output_bound)


def zeros_like(net: Mlp) -> Mlp:
    return net.with_params(np.zeros_like(net.params))


def _as_batch(net: Mlp, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != net.n_in:
        raise DimensionError(f"input has dim {x.shape[-1] if x.ndim else 0}, network expects {net.n_in}")
    return xb, single


def _hidden(name, z):
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _hidden_grad(name, z, h):
    if name == "tanh":
        return 1.0 - h * h
    return (z > 0.0).astype(np.float64)


def forward_trace(net: Mlp, x):
    """Forward pass keeping every layer input and pre-activation for ``backward_trace``."""
    xb, single = _as_batch(net, x)
    inputs, pre = [], []
    h = xb
    last = len(net._layers) - 1
    for i, (w, b) in enumerate(net._layers):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        if i < last:
            h = _hidden(net.hidden_activation, z)
        elif net.output_activation == "tanh_scaled":
            h = net.output_bound * np.tanh(z)
        else:
            h = z
    return h, (inputs, pre, h, single)


def forward(net: Mlp, x) -> np.ndarray:
    out, trace = forward_trace(net, x)
    return out[0] if trace[3] else out


def backward_trace(net: Mlp, trace, output_grad) -> GradientReport:
    inputs, pre, out, single = trace
    g = np.asarray(output_grad, dtype=np.float64)
    g = g[None, :] if g.ndim == 1 else g
    if g.shape != out.shape:
        raise DimensionError(f"output_grad has shape {np.shape(output_grad)}, output has dim {net.n_out}")
    if net.output_activation == "tanh_scaled":
        t = out / net.output_bound
        g = g * net.output_bound * (1.0 - t * t)
    grads = []
    for i in range(len(net._layers) - 1, -1, -1):
        w, _ = net._layers[i]
        grads.append(g.sum(axis=0))
        grads.append((g.T @ inputs[i]).ravel())
        g = g @ w
        if i > 0:
            h = inputs[i]
            g = g * _hidden_grad(net.hidden_activation, pre[i - 1], h)
    grads.reverse()
    input_grads = g[0] if single else g
    return GradientReport(np.concatenate(grads), input_grads)


def backward(net: Mlp, x, output_grad) -> GradientReport:
    """Reverse-mode derivatives of <forward(net, x), output_grad>."""
    _, trace = forward_trace(net, x)
    return backward_trace(net, trace, output_grad)


def _check_grads(net: Mlp, grads):
    grads = np.asarray(grads, dtype=np.float64).ravel()
    if grads.size != net.params.size:
        raise DimensionError(f"gradient has length {grads.size}, network has {net.params.size} parameters")
    if not np.all(np.isfinite(grads)):
        raise DivergenceError("non-finite gradient component; training diverged")
    return grads


def apply_gradient(net: Mlp, grads, learning_rate: float) -> Mlp:
    """Plain SGD step: params - learning_rate * grads."""
    if learning_rate < 0:
        raise ValueError("learning_rate must be non-negative")
    grads = _check_grads(net, grads)
    return net.with_params(net.params - learning_rate * grads)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_net(cls, net: Mlp) -> "AdamState":
        return cls(np.zeros_like(net.params), np.zeros_like(net.params))


def adam_step(net: Mlp, grads, learning_rate: float, state: AdamState,
              beta1=0.9, beta2=0.999, eps=1e-8) -> tuple[Mlp, AdamState]:
    grads = _check_grads(net, grads)
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = net.with_params(net.params - learning_rate * m_hat / (np.sqrt(v_hat) + eps))
    return new, AdamState(m, v, t)


class Optimizer:
    """Update rule for one parameter block: ``sgd`` or ``adam`` (moments kept here)."""

    def __init__(self, kind: str, learning_rate: float):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.learning_rate = float(learning_rate)
        self.state: AdamState | None = None

    def step(self, net: Mlp, grads) -> Mlp:
        if self.kind == "sgd":
            return apply_gradient(net, grads, self.learning_rate)
        if self.state is None:
            self.state = AdamState.for_net(net)
        net, self.state = adam_step(net, grads, self.learning_rate, self.state)
        return net

    def step_array(self, values: np.ndarray, grads) -> np.ndarray:
        """Same rule for a bare parameter vector (the attention gate)."""
        grads = np.asarray(grads, dtype=np.float64)
        if not np.all(np.isfinite(grads)):
            raise DivergenceError("non-finite gradient component; training diverged")
        if self.kind == "sgd":
            return values - self.learning_rate * grads
        if self.state is None:
            self.state = AdamState(np.zeros_like(values), np.zeros_like(values))
        st = self.state
        t = st.t + 1
        m = 0.9 * st.m + 0.1 * grads
        v = 0.999 * st.v + 0.001 * grads * grads
        self.state = AdamState(m, v, t)
        return values - self.learning_rate * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)


def soft_update(target: Mlp, source: Mlp, tau: float) -> Mlp:
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if not target.same_architecture(source):
        raise DimensionError(f"architecture mismatch: {target.layer_sizes} vs {source.layer_sizes}")
    if tau == 1.0:
        return target.with_params(source.params.copy())
    t, s = target.params, source.params
    # written as a step from the target so source == target is an exact fixed point
    return target.with_params(np.clip(t + tau * (s - t), np.minimum(t, s), np.maximum(t, s)))


# --- checkpoints -----------------------------------------------------------
#
# Binary layout, all little-endian:
#   8 bytes   magic b"MLPCKPT1"
#   u32       n_layer_sizes
#   u32 * n   layer sizes
#   u8        hidden activation code (0 tanh, 1 relu)
#   u8        output activation code (0 identity, 1 tanh_scaled)
#   f64       output bound
#   u32       tag length, then that many UTF-8 bytes (free-form header, e.g. view index)
#   u64       parameter count
#   f64 * p   parameters

def mlp_to_bytes(net: Mlp, tag: str = "") -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(net.layer_sizes)))
    buf.write(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
    buf.write(struct.pack("<BBd", _HIDDEN_CODES[net.hidden_activation],
                          _OUTPUT_CODES[net.output_activation], net.output_bound))
    tag_bytes = tag.encode("utf-8")
    buf.write(struct.pack("<I", len(tag_bytes)))
    buf.write(tag_bytes)
    buf.write(struct.pack("<Q", net.params.size))
    buf.write(net.params.astype("<f8").tobytes())
    return buf.getvalue()


def mlp_from_bytes(data: bytes) -> tuple[Mlp, str]:
    view = memoryview(data)
    if bytes(view[:8]) != CHECKPOINT_MAGIC:
        raise ValueError("not an Mlp checkpoint (bad magic)")
    pos = 8
    (n,) = struct.unpack_from("<I", view, pos)
    pos += 4
    sizes = struct.unpack_from(f"<{n}I", view, pos)
    pos += 4 * n
    hid, outc, bound = struct.unpack_from("<BBd", view, pos)
    pos += 10
    (tag_len,) = struct.unpack_from("<I", view, pos)
    pos += 4
    tag = bytes(view[pos:pos + tag_len]).decode("utf-8")
    pos += tag_len
    (count,) = struct.unpack_from("<Q", view, pos)
    pos += 8
    params = np.frombuffer(bytes(view[pos:pos + 8 * count]), dtype="<f8").astype(np.float64)
    if params.size != count:
        raise ValueError("truncated checkpoint")
    return Mlp(sizes, params, HIDDEN_ACTIVATIONS[hid], OUTPUT_ACTIVATIONS[outc], bound), tag


def mlp_to_json(net: Mlp, tag: str = "") -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
        "output_bound": net.output_bound,
        "tag": tag,
        # repr of a float64 round-trips exactly
        "params": [float(p) for p in net.params],
    }


def mlp_from_json(doc: dict) -> tuple[Mlp, str]:
    net = Mlp(tuple(doc["layer_sizes"]), np.array(doc["params"], dtype=np.float64),
              doc["hidden_activation"], doc["output_activation"], doc["output_bound"])
    return net, doc.get("tag", "")


def save_mlp(net: Mlp, path, tag: str = "") -> Path:
    path = Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(mlp_to_json(net, tag), indent=1))
    else:
        path.write_bytes(mlp_to_bytes(net, tag))
    return path


def load_mlp(path) -> tuple[Mlp, str]:
    path = Path(path)
    if path.suffix == ".json":
        return mlp_from_json(json.loads(path.read_text()))
    return mlp_from_bytes(path.read_bytes())
