"""Independent derivations of the regression constants frozen in the test suite.

Nothing here calls package arithmetic: rewards use mpmath at 50 digits, network
outputs use plain-Python loops over the stored weights, and the Adam reference
is a scalar loop. Run ``python3 tests/oracles/derive_constants.py`` to print
every constant again.
"""
from __future__ import annotations

import hashlib
import math

import mpmath as mp

mp.mp.dps = 50


def fourier_raw(x1: int, x2: int, H: int = 64, n: int = 1000, c=-0.5, d=0.5):
    g = lambda x: mp.mpf(x) * (mp.mpf(d) - mp.mpf(c)) / H + mp.mpf(c)
    g1, g2 = g(x1), g(x2)
    total = mp.mpf(0)
    for k in range(1, n + 1):
        a = mp.mpf(4 * k) / n
        total += mp.cos(2 * a * mp.pi * g1) + mp.sin(2 * a * mp.pi * g1)
        total += mp.cos(2 * a * mp.pi * g2) + mp.sin(2 * a * mp.pi * g2)
    return total


def fourier_axis(H: int = 64, n: int = 1000, c=-0.5, d=0.5):
    out = []
    for x in range(H):
        g = mp.mpf(x) * (mp.mpf(d) - mp.mpf(c)) / H + mp.mpf(c)
        s = mp.mpf(0)
        for k in range(1, n + 1):
            a = mp.mpf(4 * k) / n
            s += mp.cos(2 * a * mp.pi * g) + mp.sin(2 * a * mp.pi * g)
        out.append(s)
    return out


def fourier_table(H: int = 64, beta=1.5, floor=1e-8):
    axis = fourier_axis(H)
    fl = mp.mpf(floor)
    return [[max(axis[i] + axis[j], fl) ** mp.mpf(beta) for j in range(H)] for i in range(H)]


def table_summary(table):
    """Normalizer, hash of target probabilities rounded to 12 significant digits, clamped-cell count."""
    Z = mp.fsum(v for row in table for v in row)
    h = hashlib.sha256()
    for row in table:
        for v in row:
            h.update(mp.nstr(v / Z, 12, min_fixed=-100, max_fixed=100).encode())
            h.update(b",")
    return Z, h.hexdigest()


def matvec_layers(x, layers, act):
    """``layers`` is a list of (W rows-by-input, b); activation between layers only."""
    h = list(x)
    for i, (W, b) in enumerate(layers):
        if i:
            h = [act(v) for v in h]
        h = [sum(h[r] * W[r][c] for r in range(len(h))) + b[c] for c in range(len(b))]
    return h


def leaky(v):
    return v if v > 0 else 0.01 * v


def adam_scalar(w=1.0, lr=0.1, steps=100, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = 2.0 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        w = w - lr * mh / (math.sqrt(vh) + eps)
        out.append(w)
    return out


def discovery_expectation(n: int, num_modes: int, radius: int, samples: int) -> float:
    """Expected number of modes hit by ``samples`` uniform strings: each mode independently."""
    p = sum(math.comb(n, r) for r in range(radius + 1)) / 2 ** n
    return num_modes * (1.0 - (1.0 - p) ** samples)


if __name__ == "__main__":
    raw00 = fourier_raw(0, 0)
    print("fourier raw (0,0) H=64:", mp.nstr(raw00, 20))
    print("fourier reward (0,0):", mp.nstr(max(raw00, mp.mpf(1e-8)) ** mp.mpf(1.5), 20))
    raw_mid = fourier_raw(32, 17)
    print("fourier raw (32,17):", mp.nstr(raw_mid, 20))
    table = fourier_table()
    Z, digest = table_summary(table)
    print("H=64 Z:", mp.nstr(Z, 20))
    print("H=64 probs sha256:", digest)
    print("adam w after 100 steps:", repr(adam_scalar()[-1]))
    print("discovery expectation n=8 M=3 r=2 N=1e4:", repr(discovery_expectation(8, 3, 2, 10_000)))
    print("discovery expectation n=8 M=3 r=2 N=8:", repr(discovery_expectation(8, 3, 2, 8)))


def mlp_regression():
    """Seeded MLP (4 -> 5 -> 3, leaky ReLU) at a fixed input, evaluated with list arithmetic."""
    from tsgfn.nn_core.mlp import MLPShape, init_params
    shape = MLPShape(4, (5,), 3)
    store = init_params(shape, 1234, prefix="mlp")
    layers = [([list(r) for r in store[f"mlp.{i}.W"]], list(store[f"mlp.{i}.b"])) for i in range(2)]
    return matvec_layers([0.5, -1.0, 2.0, 0.25], layers, leaky)


def policy_regression():
    """Member-0 logits at s0 of the seed-0 grid TS policy (H=64, hidden 256x2, K=100, prior 12.03)."""
    from tsgfn.environments import make_grid_env
    from tsgfn.policy import EnsemblePolicy
    env = make_grid_env(64)
    pol = EnsemblePolicy(env, (256, 256), ensemble_size=100, prior_weight=12.03, seed=0)
    x = [1.0] + [0.0] * 63 + [1.0] + [0.0] * 63

    def net(store, prefix, head_prefix):
        layers = [([list(r) for r in store[f"{prefix}.{i}.W"]], list(store[f"{prefix}.{i}.b"])) for i in range(2)]
        h = [leaky(v) for v in matvec_layers(x, layers, leaky)]
        W, b = store[f"{head_prefix}.W"], store[f"{head_prefix}.b"]
        return [sum(h[r] * float(W[r][c]) for r in range(len(h))) + float(b[c]) for c in range(3)]

    trainable = net(pol.params, "trunk", "head")
    prior = net(pol.prior, "prior.trunk", "prior.head")
    return [t + 12.03 * p for t, p in zip(trainable, prior)]


if __name__ == "__main__":
    print("mlp regression:", [repr(v) for v in mlp_regression()])
    print("policy regression:", [repr(v) for v in policy_regression()])
