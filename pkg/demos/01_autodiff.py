# %% [markdown]
# # Reverse-mode autodiff on numpy
# Tensors record the ops that made them; `backward` walks the graph in
# reverse and accumulates `.grad` on every leaf that asked for one.

# %%
import numpy as np

from icmoe.tensor import Tensor, backward, grad_check, l2_normalize, linear, reduce, relu

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(4, 3)))
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
b = Tensor(np.zeros(2), requires_grad=True)

loss = reduce("mean", relu(linear(x, w, b)))
tape = backward(loss)
print("loss", loss.item())
print("ops on the tape:", [r.op for r in tape.records])
print("dL/dw\n", w.grad)

# %% [markdown]
# Every op's gradient rule is checked against central differences.

# %%
probe = Tensor(rng.normal(size=(4, 3)))
err = grad_check(lambda v: reduce("sum", l2_normalize(v) * probe), rng.normal(size=(4, 3)))
print(f"l2_normalize max relative error: {err:.2e}")
