"""A tour of the tensor engine: build a graph, differentiate it, verify it.

The engine is define-by-run: every operation on a Tensor records its parents
and a backward closure, and Tensor.backward() walks the graph in reverse
topological order. This demo builds a small two-layer network by hand,
trains it on a toy regression task with Adam, and cross-checks the
analytic gradients against central finite differences.

Run:  python demos/01_autodiff_basics.py
"""

import numpy as np

from snnet import engine
from snnet.engine import Adam, Tensor, check_gradients

rng = np.random.default_rng(0)

# Toy data: y = sin(3x) on [-1, 1], 64 points.
x_np = np.linspace(-1.0, 1.0, 64).reshape(-1, 1)
y_np = np.sin(3.0 * x_np)

# Parameters of a 1 -> 16 -> 1 MLP. requires_grad marks them as leaves.
w1 = Tensor(rng.standard_normal((1, 16)) * 0.5, requires_grad=True)
b1 = Tensor(np.zeros(16), requires_grad=True)
w2 = Tensor(rng.standard_normal((16, 1)) * 0.5, requires_grad=True)
b2 = Tensor(np.zeros(1), requires_grad=True)
params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}

x = Tensor(x_np)
y = Tensor(y_np)


def loss_fn() -> Tensor:
    h = engine.sigmoid(engine.add(engine.matmul(x, w1), b1))
    pred = engine.add(engine.matmul(h, w2), b2)
    err = engine.add(pred, engine.mul_scalar(y, -1.0))
    return engine.mean(engine.mul(err, err))


# 1. Gradients agree with finite differences before any training.
err, worst = check_gradients(loss_fn, params, rng=np.random.default_rng(1))
print(f"gradcheck: max rel err {err:.2e} (at {worst})")

# 2. Train with Adam for a few hundred steps.
opt = Adam(params, lr=0.02)
for step in range(400):
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    opt.step()
    if step % 100 == 0:
        print(f"step {step:3d}  loss {float(loss.data):.5f}")

print(f"final loss {float(loss_fn().data):.5f}")

# 3. no_grad() skips graph construction entirely — useful for inference,
#    where keeping backward closures alive would just waste memory.
with engine.no_grad():
    pred = engine.add(engine.matmul(engine.sigmoid(
        engine.add(engine.matmul(x, w1), b1)), w2), b2)
assert pred._parents == ()
print("no_grad forward: graph-free prediction, "
      f"rmse {float(np.sqrt(np.mean((pred.data - y_np) ** 2))):.4f}")
