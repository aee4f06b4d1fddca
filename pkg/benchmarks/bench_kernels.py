"""Compare the compiled and numpy kernel backends.

Run ``python benchmarks/bench_kernels.py``. Shapes follow a training batch
of 32 graphs with up to 12 nodes: a few hundred nodes, ~1000 directed edges,
width 16 and 8 serializer tokens. The end-to-end column times one training
step of the full model with each backend forced in a subprocess.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from stgt.kernels import backends

STEP = """
import time
from stgt.config import TrainConfig
from stgt.graph import collate, generate_synthetic
from stgt.autodiff import Tape
from stgt.model import build_model
from stgt.predictor import loss
import stgt
model = build_model(TrainConfig())
data = generate_synthetic("triangle-count", 32, (5, 12), seed=0)
batch = collate(data, list(range(32)))
def step():
    model.store.zero_grad()
    with Tape() as tape:
        value = loss(model.forward(batch, training=True, epoch=1), batch.targets, "regression")
    tape.backward(value)
step()
t = time.perf_counter()
for _ in range({reps}):
    step()
print(stgt.BACKEND, (time.perf_counter() - t) / {reps})
"""


def bench(fn, repeat: int) -> float:
    number = 50
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--steps", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    nodes, edges, d, m = 270, 1100, 16, 8
    values = rng.normal(size=(edges, d))
    index = rng.integers(0, nodes, size=edges).astype(np.int64)
    h, basis = rng.normal(size=(nodes, d)), rng.normal(size=(m, d))

    impls = backends()
    print(f"{'kernel':<18}" + "".join(f"{name:>14}" for name in impls))
    for label, call in (
        ("scatter_add_rows", lambda k: k.scatter_add_rows(values, index, nodes)),
        ("pairwise_sqdist", lambda k: k.pairwise_sqdist(h, basis)),
    ):
        times = [bench(lambda k=k: call(k), args.repeat) for k in impls.values()]
        print(f"{label:<18}" + "".join(f"{t * 1e6:>11.1f} us" for t in times))

    print("\nfull-model training step (batch 32, defaults)")
    for name in impls:
        env = {"STGT_PURE_PYTHON": "1"} if name == "python" else {"STGT_PURE_PYTHON": "0"}
        out = subprocess.run([sys.executable, "-c", STEP.format(reps=args.steps)], capture_output=True, text=True,
                             env={**os.environ, **env}, check=True).stdout.split()
        print(f"  {out[0]:<8} {float(out[1]) * 1e3:8.1f} ms/step")


if __name__ == "__main__":
    main()
