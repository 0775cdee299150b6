"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Times the fused LSTM and conv1d kernels directly, then one forward and
backward pass of the attention model with each backend active. Reports the
best of ``--repeat`` timings per case.
"""

import argparse
import timeit

import numpy as np

import trendlab.tensor as tl
from trendlab import kernels
from trendlab.losses import LossBatch, cross_entropy
from trendlab.models import Model, ModelConfig


def lstm_case(N, T, H):
    rng = np.random.default_rng(0)
    xw = rng.normal(size=(N, T, 4 * H))
    U = rng.normal(scale=0.1, size=(4 * H, H))
    h0, c0 = np.zeros((N, H)), np.zeros((N, H))
    dhs = rng.normal(size=(N, T, H))

    def fwd(be):
        return lambda: be.lstm_forward(xw, U, h0, c0)

    def bwd(be):
        _, cs, gates = be.lstm_forward(xw, U, h0, c0)
        return lambda: be.lstm_backward(dhs, U, c0, cs, gates)

    return f"lstm N={N} T={T} H={H}", fwd, bwd


def conv_case(N, T, C, nk, ks):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(N, T, C))
    K = rng.normal(size=(nk, ks, C))
    b = rng.normal(size=nk)
    g = rng.normal(size=(N, T - ks + 1, nk))

    def fwd(be):
        return lambda: be.conv1d_forward(x, K, b, 1)

    def bwd(be):
        return lambda: be.conv1d_backward(g, x, K, 1)

    return f"conv1d N={N} T={T} C={C} k={nk}x{ks}", fwd, bwd


def model_step(p, F, N):
    rng = np.random.default_rng(2)
    m = Model(ModelConfig("attention", p, F))
    X = rng.normal(size=(N, p, F))
    Y = np.eye(2)[rng.integers(0, 2, size=N)]

    def step():
        m.zero_grad()
        with tl.Tape() as tape:
            probs, _, _ = m.forward_batch(X)
            loss = cross_entropy(LossBatch(probs, Y))
        tape.backward(loss)

    return f"attention model fwd+bwd p={p} F={F} N={N}", step


def best(fn, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5, help="timing repeats per case (default 5)")
    ap.add_argument("--quick", action="store_true", help="small shapes only")
    args = ap.parse_args()

    names = kernels.available_backends()
    print(f"backends: {', '.join(names)} (active {kernels.BACKEND})")
    if "cython" not in names:
        print("compiled extension not built; only the numpy backend is timed")
    cases = [lstm_case(32, 10, 64), conv_case(32, 60, 8, 64, 3)]
    if not args.quick:
        cases += [lstm_case(32, 60, 64), lstm_case(256, 60, 64), conv_case(256, 60, 64, 64, 3)]

    header = f"{'case':<42} {'pass':<8}" + "".join(f"{n + ' ms':>12}" for n in names) + f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, fwd, bwd in cases:
        for which, make in (("forward", fwd), ("backward", bwd)):
            t = [best(make(kernels.get_backend(n)), args.repeat) for n in names]
            speed = f"{t[-1] / t[0]:>9.2f}x" if len(t) == 2 else ""
            print(f"{label:<42} {which:<8}" + "".join(f"{v * 1e3:>12.3f}" for v in t) + speed)

    saved = kernels._active
    for p, F, N in ((10, 8, 32), (60, 8, 32)):
        label, step = model_step(p, F, N)
        t = []
        for n in names:
            kernels._active = kernels.get_backend(n)
            t.append(best(step, args.repeat))
        kernels._active = saved
        speed = f"{t[-1] / t[0]:>9.2f}x" if len(t) == 2 else ""
        print(f"{label:<42} {'step':<8}" + "".join(f"{v * 1e3:>12.3f}" for v in t) + speed)


if __name__ == "__main__":
    main()
