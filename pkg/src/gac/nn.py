"""Small feed-forward networks with hand-written reverse mode, Adam, and a
plain-text tensor format.
"""
from __future__ import annotations

import threading

import numpy as np

from . import kernels
from .errors import DimensionMismatch, ShapeMismatch

OUTPUT_INIT = 0.003


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class MLP:
    """Fully connected network ``x -> act(x W0 + b0) -> ... -> x Wk + bk``.

    Weights are stored as ``(fan_in, fan_out)`` so a batch ``X`` of shape
    ``(N, in)`` is propagated with ``X @ W``. The output layer is linear;
    callers apply any squashing themselves.
    """

    def __init__(self, sizes, activation: str = "relu",
                 rng: np.random.Generator | None = None,
                 output_init: float = OUTPUT_INIT):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        if activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {activation!r}")
        self.sizes = tuple(int(s) for s in sizes)
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        n_layers = len(self.sizes) - 1
        for i in range(n_layers):
            fan_in, fan_out = self.sizes[i], self.sizes[i + 1]
            if i == n_layers - 1:
                W = rng.uniform(-output_init, output_init, size=(fan_in, fan_out))
            else:
                W = glorot_uniform(rng, fan_in, fan_out)
            self.params += [W, np.zeros(fan_out)]

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def forward(self, X: np.ndarray):
        """Return ``(output, cache)``.

        The cache holds each layer's input and, per hidden layer, an array
        whose sign pattern matches the pre-activation (for ReLU it is the
        activation itself, computed in place).
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise DimensionMismatch(
                f"input shape {X.shape} does not match width {self.sizes[0]}")
        inputs, pre = [], []
        h = X
        last = self.n_layers - 1
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            inputs.append(h)
            z = h @ W
            if i == last:
                z += b
                h = z
            elif self.activation == "relu":
                h = z
                kernels.bias_relu(h, b)
                pre.append(h)
            else:
                z += b
                pre.append(z)
                h = np.tanh(z)
        return h, (inputs, pre)

    def __call__(self, X):
        return self.forward(X)[0]

    def _workspace(self, n: int) -> list[np.ndarray]:
        local = getattr(self, "_scratch", None)
        if local is None:
            local = self._scratch = threading.local()
        ws = getattr(local, "bufs", None)
        if ws is None or getattr(local, "rows", None) != n:
            ws = local.bufs = [np.empty((n, k)) for k in self.sizes[1:-1]]
            local.rows = n
        return ws

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Forward pass without a backward cache.

        Hidden activations go into per-thread scratch buffers reused across
        calls with the same batch size. This avoids faulting in fresh pages
        for large batches; the target critic sees N * M rows every step.
        """
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.sizes[0]:
            raise DimensionMismatch(
                f"input shape {X.shape} does not match width {self.sizes[0]}")
        ws = self._workspace(X.shape[0])
        h = X
        for i in range(self.n_layers - 1):
            z = np.matmul(h, self.params[2 * i], out=ws[i])
            if self.activation == "relu":
                kernels.bias_relu(z, self.params[2 * i + 1])
            else:
                z += self.params[2 * i + 1]
                np.tanh(z, out=z)
            h = z
        return h @ self.params[-2] + self.params[-1]

    def backward(self, cache, dout: np.ndarray, want_params: bool = True):
        """Pull ``dout`` (gradient w.r.t. the output) back through the net.

        Returns ``(dX, grads)`` where ``grads`` matches ``params`` and is
        summed over the batch; ``grads`` is None when ``want_params`` is False.
        """
        inputs, pre = cache
        grads = [None] * len(self.params) if want_params else None
        delta = dout
        for i in range(self.n_layers - 1, -1, -1):
            W = self.params[2 * i]
            if want_params:
                grads[2 * i] = inputs[i].T @ delta
                grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ W.T
            if i > 0:
                z = pre[i - 1]
                if self.activation == "relu":
                    # subgradient 0 at the kink
                    kernels.relu_mask(delta, z)
                else:
                    t = np.tanh(z)
                    t *= t
                    np.subtract(1.0, t, out=t)
                    delta *= t
        return delta, grads

    def preactivations(self, X) -> list[np.ndarray]:
        """Hidden-layer inputs to the nonlinearity, before clipping."""
        h = np.asarray(X, dtype=np.float64)
        out = []
        for i in range(self.n_layers - 1):
            z = h @ self.params[2 * i] + self.params[2 * i + 1]
            out.append(z)
            h = np.maximum(z, 0.0) if self.activation == "relu" else np.tanh(z)
        return out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != sum(p.size for p in self.params):
            raise ShapeMismatch("flat parameter vector has the wrong length")
        i = 0
        for p in self.params:
            p[...] = flat[i:i + p.size].reshape(p.shape)
            i += p.size

    def copy(self) -> "MLP":
        other = MLP.__new__(MLP)
        other.sizes = self.sizes
        other.activation = self.activation
        other.params = [p.copy() for p in self.params]
        other._scratch = None
        return other

    def tensors(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i in range(self.n_layers):
            out[f"{prefix}W{i}"] = self.params[2 * i]
            out[f"{prefix}b{i}"] = self.params[2 * i + 1]
        return out

    @classmethod
    def from_tensors(cls, tensors: dict, prefix: str = "",
                     activation: str = "relu") -> "MLP":
        params = []
        i = 0
        while f"{prefix}W{i}" in tensors:
            params += [np.array(tensors[f"{prefix}W{i}"], dtype=np.float64),
                       np.array(tensors[f"{prefix}b{i}"], dtype=np.float64)]
            i += 1
        if not params:
            raise ValueError(f"no layers with prefix {prefix!r}")
        net = cls.__new__(cls)
        net.sizes = tuple([params[0].shape[0]] + [W.shape[1] for W in params[::2]])
        net.activation = activation
        net.params = params
        return net


class Adam:
    """Adaptive moment estimation acting in place on a list of arrays."""

    def __init__(self, params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        scale = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= scale * m / (np.sqrt(v) + self.eps)


# --- text tensor format -----------------------------------------------------
#
#   # comment lines
#   tensor <name> <ndim> <dim_1> ... <dim_ndim>
#   <row-major values, %.17g, space separated>

_HEADER = "# gac tensors v1"


def dump_tensors(tensors: dict[str, np.ndarray]) -> str:
    lines = [_HEADER]
    for name, arr in tensors.items():
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"invalid tensor name {name!r}")
        arr = np.asarray(arr, dtype=np.float64)
        dims = " ".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {arr.ndim} {dims}".rstrip())
        lines.append(" ".join("%.17g" % x for x in arr.ravel()))
    return "\n".join(lines) + "\n"


def parse_tensors(text: str) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    i = 0
    while i < len(lines):
        head = lines[i].split()
        if len(head) < 3 or head[0] != "tensor":
            raise ValueError(f"malformed tensor header: {lines[i]!r}")
        name, ndim = head[1], int(head[2])
        shape = tuple(int(d) for d in head[3:3 + ndim])
        if len(shape) != ndim:
            raise ValueError(f"tensor {name}: expected {ndim} dims")
        size = int(np.prod(shape)) if ndim else 1
        if size == 0:
            vals: list[float] = []
            i += 1
        else:
            if i + 1 >= len(lines):
                raise ValueError(f"tensor {name}: missing values")
            vals = [float(v) for v in lines[i + 1].split()]
            i += 2
        if len(vals) != size:
            raise ValueError(f"tensor {name}: expected {size} values, got {len(vals)}")
        out[name] = np.array(vals, dtype=np.float64).reshape(shape)
    return out


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "w") as fh:
        fh.write(dump_tensors(tensors))


def load_tensors(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        return parse_tensors(fh.read())
