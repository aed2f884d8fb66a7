"""Independent oracles shared by the unit and acceptance tests.

Nothing here calls the code under test to compute an expected value: finite
differences use plain numpy forward passes of the same composition.
"""

from __future__ import annotations

import numpy as np

from mins.diffcore import Graph

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid", "softplus")


def central_difference(fn, params: dict, h: float = 1e-5) -> dict:
    """d fn / d params by central differences; ``fn(params) -> float``."""
    out = {}
    for name, value in params.items():
        grad = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + h
            up = fn(params)
            value[idx] = old - h
            down = fn(params)
            value[idx] = old
            grad[idx] = (up - down) / (2 * h)
        out[name] = grad
    return out


def gradients_close(analytic: dict, numeric: dict, rel: float = 1e-4, abs_: float = 1e-6) -> bool:
    for k in numeric:
        a, n = analytic.get(k, np.zeros_like(numeric[k])), numeric[k]
        if not np.all(np.abs(a - n) <= abs_ + rel * np.abs(n)):
            return False
    return True


def _np_act(name, x, slope):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "leaky_relu":
        return np.where(x > 0, x, slope * x)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    return np.logaddexp(0.0, x)


def random_network(seed: int):
    """A random small composition of the supported ops.

    Returns ``(params, build, reference)``: ``build(g, params)`` puts the net on
    a graph and returns the scalar output; ``reference(params)`` recomputes the
    same value with plain numpy.
    """
    rng = np.random.default_rng(seed)
    batch = int(rng.integers(1, 4))
    d_in = int(rng.integers(1, 4))
    depth = int(rng.integers(1, 4))
    sizes = [d_in] + [int(rng.integers(1, 5)) for _ in range(depth)]
    acts = [ACTIVATIONS[int(rng.integers(len(ACTIVATIONS)))] for _ in range(depth)]
    slope = float(rng.uniform(0.05, 0.5))
    head = ["softmax_log", "square_mean", "exp_sum", "concat_mul"][int(rng.integers(4))]
    params = {"x": rng.normal(size=(batch, d_in))}
    for i in range(depth):
        params[f"W{i}"] = rng.normal(scale=0.7, size=(sizes[i], sizes[i + 1]))
        params[f"b{i}"] = rng.normal(scale=0.3, size=(1, sizes[i + 1]))
    params["skip"] = rng.normal(size=(batch, sizes[-1]))

    def build(g: Graph, p: dict):
        h = g.param("x", p["x"])
        for i in range(depth):
            h = g.add(g.matmul(h, g.param(f"W{i}", p[f"W{i}"])), g.param(f"b{i}", p[f"b{i}"]))
            h = getattr(g, acts[i])(h, slope) if acts[i] == "leaky_relu" else getattr(g, acts[i])(h)
        skip = g.param("skip", p["skip"])
        if head == "softmax_log":
            out = g.sum(g.log(g.softmax(g.sub(h, g.neg(skip)))))
        elif head == "square_mean":
            out = g.mean(g.square(g.sub(h, skip)))
        elif head == "exp_sum":
            out = g.sum(g.exp(g.scale(g.tanh(g.mul(h, skip)), 0.5)))
        else:
            cat = g.concat([h, skip], axis=-1)
            flat = g.reshape(cat, (1, -1))
            out = g.mean(g.mul(flat, flat))
        return out

    def reference(p: dict) -> float:
        h = p["x"]
        for i in range(depth):
            h = _np_act(acts[i], h @ p[f"W{i}"] + p[f"b{i}"], slope)
        skip = p["skip"]
        if head == "softmax_log":
            a = h + skip
            e = np.exp(a - a.max(axis=-1, keepdims=True))
            return float(np.log(e / e.sum(axis=-1, keepdims=True)).sum())
        if head == "square_mean":
            return float(np.mean((h - skip) ** 2))
        if head == "exp_sum":
            return float(np.exp(0.5 * np.tanh(h * skip)).sum())
        flat = np.concatenate([h, skip], axis=-1).reshape(1, -1)
        return float(np.mean(flat * flat))

    return params, build, reference


def check_random_network(seed: int) -> tuple:
    """``(ok, max_abs_err, value_matches)`` for one random composition."""
    params, build, reference = random_network(seed)
    g = Graph()
    out = build(g, params)
    analytic = g.backward(out)
    numeric = central_difference(reference, {k: v.copy() for k, v in params.items()})
    err = max(float(np.max(np.abs(analytic[k] - numeric[k]))) for k in numeric)
    value_ok = abs(float(out.value.item()) - reference(params)) <= 1e-10 * max(1.0, abs(reference(params)))
    return gradients_close(analytic, numeric), err, value_ok


def quadratic_task(n: int, seed: int):
    """The 1-D ``y = -x^2`` task on ``[-1, 1]`` used by several tests."""
    from mins.data import ContinuousSpace, Dataset

    space = ContinuousSpace((-1.0,), (1.0,))
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, 1))
    return Dataset(space, X, -X[:, 0] ** 2)


def two_bin_reference():
    """Hand evaluation of the two-bin reweighting example with plain floats."""
    import math

    f0 = 0.9 / 0.903 * math.exp(-1.0)
    f1 = 0.1 / 0.103
    p0, p1 = f0 / (f0 + f1), f1 / (f0 + f1)
    return p0, p1, p1 / 0.1, p0 / 0.9


def reweight_properties(seed):
    """Check the reweighting invariants on one random bin/count configuration.

    Returns a dict of property name -> bool so the acceptance suite can report
    which property (if any) broke.
    """
    from mins.reweight import build_scheme, compute_bin_weights, importance_weights

    rng = np.random.default_rng(seed)
    bins = int(rng.integers(1, 30))
    counts = rng.integers(0, 50, size=bins) * (rng.random(bins) > 0.3)
    if counts.sum() == 0:
        counts[rng.integers(bins)] = 1
    centers = np.sort(rng.normal(size=bins)) if bins > 1 else np.zeros(1)
    y_star = float(centers.max() + abs(rng.normal()))
    lam = float(10 ** rng.uniform(-4, 0))
    tau = float(10 ** rng.uniform(-2, 1))
    p = compute_bin_weights(counts, centers, y_star, lam, tau)
    out = {}
    out["normalized"] = bool(abs(p.sum() - 1.0) < 1e-12 and (p >= 0).all())
    out["empty_bins_zero"] = bool((p[counts == 0] == 0).all())

    # saturation: more records in a bin never lowers its share, and the count
    # factor tends to one
    j = int(np.flatnonzero(counts)[0])
    bumped = counts.astype(float).copy()
    bumped[j] *= 1000.0
    p_bumped = compute_bin_weights(bumped, centers, y_star, lam, tau)
    dens = counts[j] * 1000.0 / bumped.sum()
    out["saturation"] = bool(p_bumped[j] >= p[j] - 1e-12 and dens / (dens + lam) > 1 - lam / dens - 1e-12)

    # monotonicity: with equal counts the bin nearer y* weighs more
    eq = np.full(bins, 7)
    p_eq = compute_bin_weights(eq, centers, y_star, lam, tau)
    dist = np.abs(centers - y_star)
    order = np.argsort(dist, kind="stable")
    d_sorted, p_sorted = dist[order], p_eq[order]
    strict = np.diff(d_sorted) > 0
    out["monotone"] = bool((p_sorted[1:][strict] < p_sorted[:-1][strict] + 1e-15).all())

    # identity reweighting (lam -> inf makes the count factor proportional to
    # the density, tau -> inf flattens the exponential) and self-normalization
    y = rng.normal(size=int(rng.integers(1, 200)))
    scheme = build_scheme(y, bins, lam=1e300, tau=1e300)
    out["identity_ones"] = bool(np.allclose(importance_weights(scheme, y), 1.0, rtol=0, atol=1e-9))
    w = importance_weights(build_scheme(y, bins, lam, tau), y)
    out["mean_one"] = bool(abs(w.mean() - 1.0) < 1e-9)
    return out
