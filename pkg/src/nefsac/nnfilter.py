"""Minimal-sample scoring network with manual gradients.

The network embeds every correspondence of a sample with a shared MLP,
max-pools the embeddings channel-wise (together with the image-swapped copy
of each correspondence), and maps the pooled feature to ``n`` sigmoid
branch scores. The sample score is the power-weighted product
``prod_i B_i ** w_i`` with ``w_i = softplus(rho_i)``.

Internally each sample becomes ``2m`` rows ordered
``c_0, swap(c_0), c_1, swap(c_1), ...`` so that ``argmax`` (first maximum)
routes max-pool gradients to the lowest correspondence index, unswapped first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ConfigError, EmptyDataset, FormatError, ShapeMismatch

LEAK = 0.01
CLAMP = 1e-7
MAGIC = b"NEFS"
VERSION = 1
_SWAP = [2, 3, 0, 1]
_RHO_ONE = float(np.log(np.expm1(1.0)))  # softplus(_RHO_ONE) == 1


def softplus(x):
    return np.logaddexp(0.0, x)


def _leaky(z):
    return np.where(z > 0, z, LEAK * z)


def _dleaky(z):
    return np.where(z > 0, 1.0, LEAK)


@dataclass(frozen=True)
class ScoreOutput:
    branches: np.ndarray
    aggregate: float | np.ndarray


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 256
    seed: int = 0
    smoothing: float = 1.0
    patience: int = 4
    validation_fraction: float = 0.1

    def __post_init__(self):
        for name in ("learning_rate", "epochs", "batch_size", "smoothing", "patience"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction", "must lie in [0, 1)")


@dataclass(eq=False)
class FilterNetwork:
    """Weights are stored ``(in, out)``; the last two layers form the head."""

    weights: list
    biases: list
    raw_exponents: np.ndarray
    m: int
    width: float
    height: float
    _f32: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        self.raw_exponents = np.asarray(self.raw_exponents, dtype=float)
        if len(self.weights) < 3 or len(self.weights) != len(self.biases):
            raise ShapeMismatch("need at least one backbone layer and a two-layer head")
        fan_in = 4
        for W, b in zip(self.weights, self.biases):
            if W.ndim != 2 or W.shape[0] != fan_in or b.shape != (W.shape[1],):
                raise ShapeMismatch(f"layer shapes inconsistent at fan-in {fan_in}")
            fan_in = W.shape[1]
        if fan_in < 2 or self.raw_exponents.shape != (fan_in,):
            raise ShapeMismatch("need >= 2 branches and one exponent per branch")
        if not all(np.all(np.isfinite(a)) for a in self.parameters()):
            raise ValueError("weights must be finite")
        if self.m < 1 or not (self.width > 0 and self.height > 0):
            raise ValueError("invalid sample size or normalization")

    @property
    def n_branches(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_backbone(self) -> int:
        return len(self.weights) - 2

    @property
    def exponents(self) -> np.ndarray:
        return softplus(self.raw_exponents)

    def parameters(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out + [self.raw_exponents]

    def with_parameters(self, params) -> "FilterNetwork":
        L = len(self.weights)
        return FilterNetwork(
            [params[2 * i] for i in range(L)],
            [params[2 * i + 1] for i in range(L)],
            params[-1],
            self.m,
            self.width,
            self.height,
        )


def init_network(m, n_branches, image_size, rng, backbone=(32, 64, 64), head=32) -> FilterNetwork:
    """He-initialized network; exponents start at ``w_i = 1``."""
    sizes = [4, *backbone, head, n_branches]
    weights, biases = [], []
    for fin, fout in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fin), size=(fin, fout)))
        biases.append(np.zeros(fout))
    return FilterNetwork(weights, biases, np.full(n_branches, _RHO_ONE), m, *map(float, image_size))


def _prepare(net: FilterNetwork, samples, image_size=None) -> np.ndarray:
    X = np.asarray(samples, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != 4 or (len(X) and X.shape[1] != net.m):
        found = X.shape[1] if X.ndim == 3 else X.shape
        raise ShapeMismatch(f"expected samples of {net.m} correspondences, found {found}")
    w, h = (net.width, net.height) if image_size is None else image_size
    scale = np.array([2.0 / w, 2.0 / h, 2.0 / w, 2.0 / h])
    return X * scale - 1.0


def _rows(Xn):
    """``(B, m, 4)`` -> ``(B, 2m, 4)`` with each swapped copy after its original."""
    B, m, _ = Xn.shape
    return np.stack([Xn, Xn[..., _SWAP]], axis=2).reshape(B, 2 * m, 4)


def _forward(net: FilterNetwork, Xn, cache=False):
    nb = net.n_backbone
    h = _rows(Xn)
    acts, pre = [h], []
    for i in range(nb - 1):
        z = h @ net.weights[i] + net.biases[i]
        h = _leaky(z)
        pre.append(z)
        acts.append(h)
    # bias and leaky ReLU are monotone, so they commute with the max
    zl = h @ net.weights[nb - 1]
    idx = np.argmax(zl, axis=1)
    pz = np.take_along_axis(zl, idx[:, None, :], axis=1)[:, 0, :] + net.biases[nb - 1]
    pooled = _leaky(pz)
    zh = pooled @ net.weights[nb] + net.biases[nb]
    ah = _leaky(zh)
    zo = ah @ net.weights[nb + 1] + net.biases[nb + 1]
    branches = expit(zo)
    log_b = -softplus(-zo)
    aggregate = np.exp(log_b @ net.exponents)
    if not cache:
        return branches, aggregate
    return branches, aggregate, dict(acts=acts, pre=pre, idx=idx, pz=pz, pooled=pooled, zh=zh, ah=ah, log_b=log_b)


def forward(net: FilterNetwork, sample, image_size=None) -> ScoreOutput:
    """Score one sample ``(m, 4)`` or a stack ``(B, m, 4)`` in float64."""
    single = np.ndim(sample) == 2
    Xn = _prepare(net, sample, image_size)
    branches, aggregate = _forward(net, Xn)
    if single:
        return ScoreOutput(branches[0], float(aggregate[0]))
    return ScoreOutput(branches, aggregate)


def _f32_params(net):
    if net._f32 is None:
        net._f32 = (
            [w.astype(np.float32) for w in net.weights],
            [b.astype(np.float32) for b in net.biases],
        )
    return net._f32


def score_batch(net: FilterNetwork, samples, image_size=None, precise=False, chunk=8192) -> np.ndarray:
    """Aggregate scores for ``(B, m, 4)`` samples.

    The default path runs in float32 (about 1e-6 relative agreement with
    :func:`forward`); ``precise=True`` reproduces :func:`forward` exactly.
    """
    X = np.asarray(samples, dtype=float)
    if X.size == 0 and X.ndim != 3:
        return np.zeros(0)
    Xn = _prepare(net, X, image_size)
    if len(Xn) == 0:
        return np.zeros(0)
    if precise:
        return np.concatenate([_forward(net, Xn[s : s + chunk])[1] for s in range(0, len(Xn), chunk)])
    Ws, bs = _f32_params(net)
    nb = net.n_backbone
    w = net.exponents
    out = np.empty(len(Xn))
    for s in range(0, len(Xn), chunk):
        Xc = Xn[s : s + chunk].astype(np.float32)
        B = len(Xc)
        h = _rows(Xc).reshape(B * 2 * net.m, 4)
        for i in range(nb - 1):
            h = h @ Ws[i]
            h += bs[i]
            np.maximum(h, LEAK * h, out=h)
        z = (h @ Ws[nb - 1]).reshape(B, 2 * net.m, -1).max(axis=1)
        z += bs[nb - 1]
        np.maximum(z, LEAK * z, out=z)
        z = z @ Ws[nb]
        z += bs[nb]
        np.maximum(z, LEAK * z, out=z)
        zo = (z @ Ws[nb + 1] + bs[nb + 1]).astype(float)
        out[s : s + B] = np.exp(-softplus(-zo) @ w)
    return out


# ---------------------------------------------------------------------------
# loss and gradients


def class_weights_from_counts(counts, smoothing=1.0) -> np.ndarray:
    """Inverse-frequency weights ``(T, 2)`` (negative, positive) from counts ``(T, 2)``.

    A class seen with frequency ``f`` gets weight ``1 / (2 f)`` after additive
    smoothing, so both classes contribute equally in expectation.
    """
    counts = np.asarray(counts, dtype=float)
    total = counts.sum(axis=1, keepdims=True)
    return (total + 2.0 * smoothing) / (2.0 * (counts + smoothing))


def label_counts(targets, aggregate_targets) -> np.ndarray:
    """Negative/positive (``l >= 0.5``) counts per branch and for the aggregate."""
    T = np.column_stack([targets, aggregate_targets])
    present = ~np.isnan(T)
    pos = np.sum(present & (np.nan_to_num(T) >= 0.5), axis=0)
    return np.column_stack([present.sum(axis=0) - pos, pos])


def _bce(p, y):
    p = np.clip(p, CLAMP, 1.0 - CLAMP)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def _term_weights(cw, y):
    """Per-entry class weight; ``y`` may hold NaN for excluded entries."""
    return np.where(np.nan_to_num(y) >= 0.5, cw[:, 1], cw[:, 0])


def loss(output: ScoreOutput, targets, aggregate_targets, class_weights=None, aggregate_weight=1.0):
    """Class-weighted soft cross-entropy over branches plus the aggregate.

    ``targets (B, n)`` holds branch labels with NaN marking excluded terms
    (the pose branch when the sample is not outlier-free, an absent expert
    label); ``aggregate_targets (B,)`` holds ``l1 * l2``. Returns the batch
    mean of the total and the per-term means ``(n + 1,)``.
    """
    Bv = np.atleast_2d(output.branches)
    A = np.atleast_1d(output.aggregate)
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    y = np.atleast_1d(np.asarray(aggregate_targets, dtype=float))
    n = Bv.shape[1]
    cw = np.ones((n + 1, 2)) if class_weights is None else np.asarray(class_weights, dtype=float)
    inc = ~np.isnan(T)
    wb = _term_weights(cw[:n], T)
    tb = np.where(inc, wb * _bce(Bv, np.nan_to_num(T)), 0.0)
    ta = _term_weights(cw[n:], y) * _bce(A, y)
    terms = np.concatenate([tb.sum(axis=0), [aggregate_weight * ta.sum()]]) / len(A)
    return float(terms.sum()), terms


def backward(net: FilterNetwork, samples, targets, aggregate_targets, class_weights=None, aggregate_weight=1.0, image_size=None):
    """Loss, per-term losses and gradients (same order as ``net.parameters()``).

    The aggregate term treats the branch scores as constants, so its
    gradient reaches only the exponent parameters.
    """
    Xn = _prepare(net, samples, image_size)
    T = np.atleast_2d(np.asarray(targets, dtype=float))
    y = np.atleast_1d(np.asarray(aggregate_targets, dtype=float))
    return _gradients(net, Xn, T, y, class_weights, aggregate_weight)


def _gradients(net, Xn, T, y, class_weights, aggregate_weight=1.0):
    branches, aggregate, c = _forward(net, Xn, cache=True)
    total, terms = loss(ScoreOutput(branches, aggregate), T, y, class_weights, aggregate_weight)
    Bsz, n = branches.shape
    cw = np.ones((n + 1, 2)) if class_weights is None else np.asarray(class_weights, dtype=float)
    nb = net.n_backbone

    inc = ~np.isnan(T)
    live = inc & (branches > CLAMP) & (branches < 1.0 - CLAMP)
    g_zo = np.where(live, _term_weights(cw[:n], T) * (branches - np.nan_to_num(T)), 0.0) / Bsz

    # aggregate term: d/dw_j = c (A - y) / (1 - A) * log B_j, B held fixed
    alive = (aggregate > CLAMP) & (aggregate < 1.0 - CLAMP)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(alive, aggregate_weight * _term_weights(cw[n:], y) * (aggregate - y) / (1.0 - aggregate), 0.0)
    g_w = (coef / Bsz) @ c["log_b"]
    g_rho = g_w * expit(net.raw_exponents)

    gW = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    gW[nb + 1] = c["ah"].T @ g_zo
    gb[nb + 1] = g_zo.sum(axis=0)
    g = (g_zo @ net.weights[nb + 1].T) * _dleaky(c["zh"])
    gW[nb] = c["pooled"].T @ g
    gb[nb] = g.sum(axis=0)
    g = (g @ net.weights[nb].T) * _dleaky(c["pz"])
    gb[nb - 1] = g.sum(axis=0)
    h_prev = c["acts"][nb - 1]
    idx = c["idx"]
    # max-pool routes each channel's gradient to its argmax row only
    hsel = np.take_along_axis(h_prev, idx[:, :, None], axis=1)  # (B, C, K)
    gW[nb - 1] = np.einsum("bck,bc->kc", hsel, g)
    if nb > 1:
        G = np.zeros(h_prev.shape[:2] + (g.shape[1],))
        np.put_along_axis(G, idx[:, None, :], g[:, None, :], axis=1)
        gh = G @ net.weights[nb - 1].T
        for i in range(nb - 2, -1, -1):
            gz = gh * _dleaky(c["pre"][i])
            a = c["acts"][i]
            gW[i] = np.einsum("brk,brc->kc", a, gz)
            gb[i] = gz.sum(axis=(0, 1))
            if i > 0:
                gh = gz @ net.weights[i].T
    grads = []
    for W, b in zip(gW, gb):
        grads += [W, b]
    return total, terms, grads + [g_rho]


# ---------------------------------------------------------------------------
# training


class _Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        a = self.lr * np.sqrt(1 - self.b2**self.t) / (1 - self.b1**self.t)
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            out.append(p - a * m / (np.sqrt(v) + self.eps))
        return out


def _eval_loss(net, X, T, y, cw, chunk=8192):
    total = np.zeros(T.shape[1] + 1)
    for s in range(0, len(X), chunk):
        b, a = _forward(net, X[s : s + chunk])
        _, terms = loss(ScoreOutput(b, a), T[s : s + chunk], y[s : s + chunk], cw)
        total += terms * len(a)
    return total / max(len(X), 1)


def train(dataset, config: TrainConfig | None = None, net: FilterNetwork | None = None, backbone=(32, 64, 64), head=32):
    """Train on ``dataset`` (``samples``, ``targets``, ``aggregate_targets``, ``image_size``).

    Returns ``(network, history)``; history holds one dict per epoch with the
    train loss and the per-term validation losses.
    """
    config = config or TrainConfig()
    X_raw = np.asarray(dataset.samples, dtype=float)
    if len(X_raw) == 0:
        raise EmptyDataset("no training samples")
    T = np.asarray(dataset.targets, dtype=float)
    y = np.asarray(dataset.aggregate_targets, dtype=float)
    rng = np.random.default_rng(config.seed)
    if net is None:
        net = init_network(X_raw.shape[1], T.shape[1], dataset.image_size, rng, backbone, head)
    X = _prepare(net, X_raw)

    perm = rng.permutation(len(X))
    n_val = int(round(config.validation_fraction * len(X))) if len(X) > 1 else 0
    val, tr = perm[:n_val], perm[n_val:]

    counts = np.zeros((T.shape[1] + 1, 2))
    params = net.parameters()
    opt = _Adam(params, config.learning_rate)
    best, best_params, stale, history = np.inf, params, 0, []
    for epoch in range(config.epochs):
        order = tr[rng.permutation(len(tr))]
        run, seen = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            bi = order[s : s + config.batch_size]
            counts += label_counts(T[bi], y[bi])
            cw = class_weights_from_counts(counts, config.smoothing)
            cur = net.with_parameters(params)
            total, _, grads = _gradients(cur, X[bi], T[bi], y[bi], cw)
            params = opt.step(params, grads)
            run += total * len(bi)
            seen += len(bi)
        net = net.with_parameters(params)
        cw = class_weights_from_counts(counts, config.smoothing)
        vt = _eval_loss(net, X[val], T[val], y[val], cw) if n_val else None
        score = float(vt.sum()) if vt is not None else run / max(seen, 1)
        history.append(dict(epoch=epoch, train_loss=run / max(seen, 1), val_loss=score, val_terms=vt))
        if score < best:
            best, best_params, stale = score, params, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return net.with_parameters(best_params), history


# ---------------------------------------------------------------------------
# serialization


def save_weights(net: FilterNetwork, path) -> None:
    parts = [MAGIC, struct.pack("<4I", VERSION, net.m, net.n_branches, len(net.weights))]
    for W, b in zip(net.weights, net.biases):
        parts.append(struct.pack("<2I", *W.shape))
        parts.append(np.ascontiguousarray(W, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(net.raw_exponents, dtype="<f8").tobytes())
    parts.append(struct.pack("<2d", net.width, net.height))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError("weight file is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, k=1):
        return struct.unpack(f"<{k}I", self.take(4 * k))

    def f64(self, k):
        return np.frombuffer(self.take(8 * k), dtype="<f8").astype(float)


def load_weights(path, expected_m: int | None = None) -> FilterNetwork:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4) != MAGIC:
        raise FormatError("bad magic; not a weight file")
    version, m, n_branches, n_layers = r.u32(4)
    if version != VERSION:
        raise FormatError(f"unsupported weight format version {version}")
    if expected_m is not None and m != expected_m:
        raise FormatError(f"sample size mismatch: expected m={expected_m}, found m={m}")
    weights, biases = [], []
    for _ in range(n_layers):
        rows, cols = r.u32(2)
        weights.append(r.f64(rows * cols).reshape(rows, cols))
        biases.append(r.f64(cols))
    raw = r.f64(n_branches)
    width, height = r.f64(2)
    if r.pos != len(r.data):
        raise FormatError("trailing bytes after weight data")
    try:
        return FilterNetwork(weights, biases, raw, int(m), float(width), float(height))
    except (ShapeMismatch, ValueError) as exc:
        raise FormatError(f"inconsistent weight file: {exc}") from exc
