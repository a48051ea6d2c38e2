"""Stacked two-layer LSTM with a dense head, written directly in numpy.

Gate order inside every 4H block is (input, forget, candidate, output).
All arrays are float64. Batched evaluation is over the leading axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GATE_ORDER = ("input", "forget", "candidate", "output")


class NonFiniteError(FloatingPointError):
    """Raised when a forward pass produces NaN or inf."""

    def __init__(self, where: str, timestep: int | None = None):
        self.where = where
        self.timestep = timestep
        msg = f"non-finite value in {where}"
        if timestep is not None:
            msg += f" at timestep {timestep}"
        super().__init__(msg)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmLayerWeights:
    W: np.ndarray  # (4H, I) input-to-hidden
    U: np.ndarray  # (4H, H) hidden-to-hidden
    b: np.ndarray  # (4H,)

    def __post_init__(self):
        four_h, n_in = self.W.shape
        if four_h % 4:
            raise ValueError(f"W has {four_h} rows, not a multiple of 4")
        h = four_h // 4
        if self.U.shape != (four_h, h):
            raise ValueError(f"U shape {self.U.shape}, expected {(four_h, h)}")
        if self.b.shape != (four_h,):
            raise ValueError(f"b shape {self.b.shape}, expected {(four_h,)}")

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.U, self.b]

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmLayerWeights":
        h4 = 4 * hidden_size
        return cls(np.zeros((h4, input_size)), np.zeros((h4, hidden_size)), np.zeros(h4))

    @classmethod
    def glorot(cls, input_size: int, hidden_size: int, rng: np.random.Generator) -> "LstmLayerWeights":
        h4 = 4 * hidden_size
        lim_w = np.sqrt(6.0 / (input_size + h4))
        lim_u = np.sqrt(6.0 / (hidden_size + h4))
        b = np.zeros(h4)
        b[hidden_size:2 * hidden_size] = 1.0  # forget-gate bias
        return cls(
            rng.uniform(-lim_w, lim_w, size=(h4, input_size)),
            rng.uniform(-lim_u, lim_u, size=(h4, hidden_size)),
            b,
        )


@dataclass
class DenseWeights:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    def __post_init__(self):
        if self.b.shape != (self.W.shape[0],):
            raise ValueError(f"dense bias shape {self.b.shape} does not match W {self.W.shape}")

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.b]


@dataclass
class Network:
    """Weights of LSTM(I->H1) -> LSTM(H1->H2) -> Dense(H2->horizon)."""

    layer1: LstmLayerWeights
    layer2: LstmLayerWeights
    head: DenseWeights

    def __post_init__(self):
        if self.layer2.input_size != self.layer1.hidden_size:
            raise ValueError("layer2 input size must equal layer1 hidden size")
        if self.head.W.shape[1] != self.layer2.hidden_size:
            raise ValueError("head input size must equal layer2 hidden size")

    @classmethod
    def initialize(cls, n_features: int = 33, hidden1: int = 32, hidden2: int = 16,
                   horizon: int = 24, rng: np.random.Generator | None = None) -> "Network":
        rng = np.random.default_rng(0) if rng is None else rng
        lim = np.sqrt(6.0 / (hidden2 + horizon))
        return cls(
            LstmLayerWeights.glorot(n_features, hidden1, rng),
            LstmLayerWeights.glorot(hidden1, hidden2, rng),
            DenseWeights(rng.uniform(-lim, lim, size=(horizon, hidden2)), np.zeros(horizon)),
        )

    @classmethod
    def zeros(cls, n_features: int = 33, hidden1: int = 32, hidden2: int = 16,
              horizon: int = 24) -> "Network":
        return cls(
            LstmLayerWeights.zeros(n_features, hidden1),
            LstmLayerWeights.zeros(hidden1, hidden2),
            DenseWeights(np.zeros((horizon, hidden2)), np.zeros(horizon)),
        )

    @property
    def n_features(self) -> int:
        return self.layer1.input_size

    @property
    def horizon(self) -> int:
        return self.head.W.shape[0]

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order: W1, U1, b1, W2, U2, b2, Wd, bd."""
        return self.layer1.arrays() + self.layer2.arrays() + self.head.arrays()

    @classmethod
    def from_arrays(cls, arrays) -> "Network":
        w1, u1, b1, w2, u2, b2, wd, bd = arrays
        return cls(LstmLayerWeights(w1, u1, b1), LstmLayerWeights(w2, u2, b2), DenseWeights(wd, bd))

    def copy(self) -> "Network":
        return Network.from_arrays([a.copy() for a in self.arrays()])


def layer_param_count(input_size: int, hidden_size: int) -> int:
    return 4 * hidden_size * (input_size + hidden_size + 1)


def param_count(net: Network) -> int:
    """Number of trainable scalars; 11,992 for the default 33/32/16/24 topology."""
    return (layer_param_count(net.layer1.input_size, net.layer1.hidden_size)
            + layer_param_count(net.layer2.input_size, net.layer2.hidden_size)
            + (net.layer2.hidden_size + 1) * net.horizon)


@dataclass
class DropoutMasks:
    """Per-sequence multiplicative masks, already scaled by 1/(1-rate)."""

    input1: np.ndarray  # (B, I)
    recurrent1: np.ndarray  # (B, H1)
    input2: np.ndarray  # (B, H1)
    recurrent2: np.ndarray  # (B, H2)

    @classmethod
    def sample(cls, rng: np.random.Generator, batch: int, net: Network,
               rates: tuple[float, float, float, float]) -> "DropoutMasks":
        sizes = (net.layer1.input_size, net.layer1.hidden_size,
                 net.layer2.input_size, net.layer2.hidden_size)
        masks = []
        for size, rate in zip(sizes, rates):
            if rate <= 0.0:
                masks.append(np.ones((batch, size)))
            else:
                keep = rng.random((batch, size)) >= rate
                masks.append(keep / (1.0 - rate))
        return cls(*masks)


def lstm_cell_forward(x, h, c, weights: LstmLayerWeights):
    """One LSTM step. Works on vectors or on (B, .) batches.

    Returns ``(h_new, c_new)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("cell input")
    z = x @ weights.W.T + np.asarray(h) @ weights.U.T + weights.b
    H = weights.hidden_size
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return h_new, c_new


@dataclass
class _LayerCache:
    # time-major arrays; T leads so per-step slices are contiguous
    xm: np.ndarray  # masked inputs (T, B, I)
    hm: np.ndarray  # masked previous hidden states (T, B, H)
    gates: np.ndarray  # activated i, f, g, o (T, B, 4H)
    c: np.ndarray  # cell states c_0..c_T (T+1, B, H)
    tanh_c: np.ndarray  # (T, B, H)
    h: np.ndarray  # hidden outputs (T, B, H)


@dataclass
class ForwardCache:
    layer1: _LayerCache
    layer2: _LayerCache
    masks: DropoutMasks | None
    h_last: np.ndarray = field(repr=False)


def _activate(z: np.ndarray, H: int) -> None:
    """In place: logistic on the i, f, o blocks, tanh on the g block.

    Uses sigmoid(x) = (1 + tanh(x/2)) / 2, which never overflows.
    """
    z[:, :2 * H] *= 0.5
    z[:, 3 * H:] *= 0.5
    np.tanh(z, out=z)
    z[:, :2 * H] += 1.0
    z[:, :2 * H] *= 0.5
    z[:, 3 * H:] += 1.0
    z[:, 3 * H:] *= 0.5


def _layer_forward(x: np.ndarray, w: LstmLayerWeights, in_mask, rec_mask, name: str):
    """x is time-major (T, B, I); returns hidden states (T, B, H) and the cache."""
    T, B, _ = x.shape
    H = w.hidden_size
    xm = x if in_mask is None else x * in_mask
    gates = xm @ w.W.T  # input projections for all steps at once
    gates += w.b
    hm_all = np.empty((T, B, H))
    cs = np.zeros((T + 1, B, H))
    tanh_c = np.empty((T, B, H))
    hs = np.empty((T, B, H))
    UT = w.U.T
    h = np.zeros((B, H))
    for t in range(T):
        hm = h if rec_mask is None else h * rec_mask
        hm_all[t] = hm
        z = gates[t]
        z += hm @ UT
        _activate(z, H)
        c = cs[t + 1]
        np.multiply(z[:, H:2 * H], cs[t], out=c)
        c += z[:, :H] * z[:, 2 * H:3 * H]
        tc = tanh_c[t]
        np.tanh(c, out=tc)
        h = hs[t]
        np.multiply(z[:, 3 * H:], tc, out=h)
    if not np.all(np.isfinite(hs)):
        bad = int(np.argmax(~np.isfinite(hs).all(axis=(1, 2))))
        raise NonFiniteError(name, bad)
    return hs, _LayerCache(xm, hm_all, gates, cs, tanh_c, hs)


def forward(net: Network, x: np.ndarray, masks: DropoutMasks | None = None,
            return_cache: bool = False):
    """Run a batch of windows through the network.

    Parameters
    ----------
    x : array (B, T, I) or (T, I)
        Input windows. A 2-D input is treated as a batch of one.
    masks : DropoutMasks, optional
        Training-mode dropout masks. ``None`` means inference: no dropout
        and no rescaling.

    Returns
    -------
    (B, horizon) predictions, or ``(pred, cache)`` with ``return_cache``.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if x.shape[2] != net.n_features:
        raise ValueError(f"window has {x.shape[2]} features, network expects {net.n_features}")
    if not np.all(np.isfinite(x)):
        bad = ~np.isfinite(x).all(axis=(0, 2))
        raise NonFiniteError("input window", int(np.argmax(bad)))
    m = masks
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    h1, c1 = _layer_forward(xt, net.layer1, m and m.input1, m and m.recurrent1, "layer1")
    h2, c2 = _layer_forward(h1, net.layer2, m and m.input2, m and m.recurrent2, "layer2")
    h_last = h2[-1]
    pred = h_last @ net.head.W.T + net.head.b
    if not np.all(np.isfinite(pred)):
        raise NonFiniteError("dense head")
    if squeeze and not return_cache:
        return pred[0]
    if return_cache:
        return pred, ForwardCache(c1, c2, masks, h_last)
    return pred


def mae_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def mae_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    # subgradient 0 at the kink, via np.sign(0) == 0
    return np.sign(pred - target) / pred.size


def _layer_backward(dh_seq: np.ndarray, w: LstmLayerWeights, cache: _LayerCache,
                    in_mask, rec_mask, need_dx: bool = True):
    """BPTT through one layer given dL/dh_t for every t, time-major (T, B, H).

    Returns (dW, dU, db, dx) with dx = dL/d(unmasked input), (T, B, I).
    """
    T, B, H = dh_seq.shape
    g4 = cache.gates.reshape(T, B, 4, H)
    i, f, g, o = g4[:, :, 0], g4[:, :, 1], g4[:, :, 2], g4[:, :, 3]
    tc = cache.tanh_c
    # local derivative factors for every step at once
    k_c = o * (1.0 - tc * tc)  # dc/dh
    k = np.empty((T, B, 4, H))
    k[:, :, 0] = g * i * (1.0 - i)
    k[:, :, 1] = cache.c[:-1] * f * (1.0 - f)
    k[:, :, 2] = i * (1.0 - g * g)
    k[:, :, 3] = tc * o * (1.0 - o)
    dz = np.empty((T, B, 4, H))
    dh_next = np.zeros((B, H))
    dc = np.zeros((B, H))
    U = w.U
    for t in range(T - 1, -1, -1):
        dh = dh_seq[t] + dh_next
        dc *= f[t + 1] if t + 1 < T else 0.0
        dc += dh * k_c[t]
        dz_t = dz[t]
        np.multiply(dc[:, None, :], k[t, :, :3], out=dz_t[:, :3])
        np.multiply(dh, k[t, :, 3], out=dz_t[:, 3])
        dhm = dz_t.reshape(B, 4 * H) @ U
        dh_next = dhm if rec_mask is None else dhm * rec_mask
    dz2 = dz.reshape(T * B, 4 * H)
    dW = dz2.T @ cache.xm.reshape(T * B, -1)
    dU = dz2.T @ cache.hm.reshape(T * B, H)
    db = dz2.sum(axis=0)
    dx = None
    if need_dx:
        dx = dz.reshape(T, B, 4 * H) @ w.W
        if in_mask is not None:
            dx *= in_mask
    return dW, dU, db, dx


def backward(net: Network, cache: ForwardCache, dpred: np.ndarray) -> list[np.ndarray]:
    """Gradients of the loss w.r.t. every parameter array, in ``Network.arrays`` order.

    ``dpred`` is dL/dpred for the batch, shape (B, horizon).
    """
    m = cache.masks
    dWd = dpred.T @ cache.h_last
    dbd = dpred.sum(axis=0)
    dh2 = np.zeros_like(cache.layer2.h)
    dh2[-1] = dpred @ net.head.W
    dW2, dU2, db2, dh1 = _layer_backward(dh2, net.layer2, cache.layer2,
                                         m and m.input2, m and m.recurrent2)
    dW1, dU1, db1, _ = _layer_backward(dh1, net.layer1, cache.layer1,
                                       m and m.input1, m and m.recurrent1, need_dx=False)
    return [dW1, dU1, db1, dW2, dU2, db2, dWd, dbd]


def loss_and_grads(net: Network, x: np.ndarray, target: np.ndarray,
                   masks: DropoutMasks | None = None):
    """Mean batch MAE and its exact gradient."""
    pred, cache = forward(net, x, masks, return_cache=True)
    loss = float(np.mean(np.abs(pred - target)))
    return loss, backward(net, cache, mae_grad(pred, target))
