"""Walk-through: the autodiff tape, a gradient check, and the selective scan.

Run with ``python demos/01_autodiff_and_scan.py``.
"""

import numpy as np

from vimunet import numerics as nx
from vimunet.numerics import Tensor
from vimunet.numerics.gradcheck import check_gradients
from vimunet.numerics.module import Init
from vimunet.ssm import SsmParams, VimBlockParams, selective_scan_chunked, selective_scan_sequential

rng = np.random.default_rng(0)

# %% A tiny expression and its gradient.
# Operations record on a thread-local tape as they run; backward walks it in reverse.
x = Tensor(rng.normal(size=(3, 4)), dtype=np.float64, requires_grad=True)
w = Tensor(rng.normal(size=(4, 2)), dtype=np.float64, requires_grad=True)
loss = nx.mean(nx.gelu(nx.matmul(x, w)))
nx.backward(loss)
print("loss", float(loss.data))
print("dL/dw\n", w.grad)

# %% Finite differences agree with the tape to float64 precision.
errors = check_gradients(lambda: nx.gelu(nx.matmul(x, w)), [x, w])
print("gradcheck relative errors:", {k: f"{v:.1e}" for k, v in errors.items()})

# %% The selective scan: a sequential recurrence and a chunked evaluation of the same thing.
params = SsmParams(d_inner=8, d_state=4, init=Init(rng, np.float64))
u = Tensor(rng.normal(size=(37, 8)), dtype=np.float64)
seq = selective_scan_sequential(u, params).data
for chunk in (1, 5, 16, 64):
    diff = np.abs(selective_scan_chunked(u, params, chunk).data - seq).max()
    print(f"chunk {chunk:3d}: max |chunked - sequential| = {diff:.1e}")

# %% Bidirectional ViM block.
# Swapping the two directions' weights and reversing the input reverses the output.
block = VimBlockParams(d_model=6, init=Init(rng, np.float64))
tokens = Tensor(rng.normal(size=(10, 6)), dtype=np.float64)
out = block(tokens).data
mirrored = block.swapped()(Tensor(tokens.data[::-1].copy(), dtype=np.float64)).data
print("symmetry error:", np.abs(mirrored[::-1] - out).max())
