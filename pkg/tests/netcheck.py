"""Reference forward pass and finite-difference gradient check for the filter network."""

import numpy as np

from nefsac.nnfilter import ScoreOutput, backward, forward, init_network, loss

from oracles import bce


def leaky(z):
    return np.where(z > 0, z, 0.01 * z)


def reference_forward(net, sample, image_size=None):
    """Straight transcription of the architecture; also reports distances to kinks."""
    w, h = image_size or (net.width, net.height)
    x = np.asarray(sample, dtype=float) / np.array([w, h, w, h]) * 2.0 - 1.0
    nb = net.n_backbone
    kinks = [np.inf]

    def embed(rows):
        pooled = None
        for c in rows:
            a = c
            for i in range(nb):
                z = a @ net.weights[i] + net.biases[i]
                kinks.append(np.abs(z).min())
                a = leaky(z)
            pooled = a if pooled is None else np.maximum(pooled, a)
        return pooled

    feats = embed(x)
    swapped = embed(x[:, [2, 3, 0, 1]])
    pooled = np.maximum(feats, swapped)
    # margin between the best and second best row per channel
    allrows = []
    for c in np.concatenate([x, x[:, [2, 3, 0, 1]]]):
        a = c
        for i in range(nb):
            a = leaky(a @ net.weights[i] + net.biases[i])
        allrows.append(a)
    top2 = np.sort(np.array(allrows), axis=0)[-2:]
    kinks.append((top2[1] - top2[0]).min())
    z = pooled @ net.weights[nb] + net.biases[nb]
    kinks.append(np.abs(z).min())
    zo = leaky(z) @ net.weights[nb + 1] + net.biases[nb + 1]
    branches = 1.0 / (1.0 + np.exp(-zo))
    aggregate = float(np.prod(branches ** net.exponents))
    return branches, aggregate, min(kinks)


def reference_loss(branches, aggregate, targets, agg_target, cw, aggregate_weight=1.0):
    """Loss of one sample written term by term."""
    total = 0.0
    for i, (b, t) in enumerate(zip(branches, targets)):
        if np.isnan(t):
            continue
        total += cw[i, int(t >= 0.5)] * bce(b, t)
    n = len(branches)
    return total + aggregate_weight * cw[n, int(agg_target >= 0.5)] * bce(aggregate, agg_target)


def stopgrad_loss(net, samples, T, y, cw, frozen_branches):
    """Loss where the aggregate term sees frozen branch values (the stop-gradient objective).

    Uses the vectorized forward; the reference forward pins that one down separately.
    """
    out = forward(net, samples)
    agg_frozen = np.exp(np.log(frozen_branches) @ net.exponents)
    total, _ = loss(ScoreOutput(out.branches, agg_frozen), T, y, cw)
    return total


def random_problem(seed, m=5, n_branches=3, batch=3, size=(640.0, 480.0), kink_margin=1e-3):
    """A tiny random net, samples, labels and class weights away from ReLU and max kinks."""
    rng = np.random.default_rng(seed)
    while True:
        net = init_network(m, n_branches, size, rng, backbone=(6, 8, 8), head=6)
        params = [p + rng.normal(0, 0.1, p.shape) for p in net.parameters()]
        net = net.with_parameters(params)
        X = rng.uniform(0, 1, (batch, m, 4)) * np.array(size * 2)
        kinks = min(reference_forward(net, x)[2] for x in X)
        if kinks > kink_margin:
            break
    T = rng.uniform(0, 1, (batch, n_branches))
    T[:, 0] = rng.choice([0.0, 1.0, 0.7], batch)
    T[:, 1] = np.where(T[:, 0] == 1.0, T[:, 1], np.nan)
    y = np.nan_to_num(T[:, 0] * T[:, 1])
    cw = rng.uniform(0.5, 2.0, (n_branches + 1, 2))
    return net, X, T, y, cw


FD_FLOOR = 1e-6


def gradient_check(seed, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    Relative error is ``|a - fd| / max(|a|, |fd|, FD_FLOOR)``; below the floor
    the difference quotient is dominated by roundoff (about eps * loss / h).
    """
    net, X, T, y, cw = random_problem(seed)
    _, _, grads = backward(net, X, T, y, cw)
    frozen = forward(net, X).branches
    params = net.parameters()
    worst = 0.0
    for k, p in enumerate(params):
        for idx in np.ndindex(p.shape):
            up = [q.copy() for q in params]
            dn = [q.copy() for q in params]
            up[k][idx] += h
            dn[k][idx] -= h
            fd = (stopgrad_loss(net.with_parameters(up), X, T, y, cw, frozen)
                  - stopgrad_loss(net.with_parameters(dn), X, T, y, cw, frozen)) / (2 * h)
            a = grads[k][idx]
            err = abs(a - fd) / max(abs(a), abs(fd), FD_FLOOR)
            worst = max(worst, err)
    return worst
