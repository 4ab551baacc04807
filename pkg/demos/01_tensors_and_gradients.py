"""A tour of the autodiff tensor core.

Every model in this package is built from a handful of primitives: matmul,
dilated causal convolution, the three activations, softmax, and
cross-entropy. Each records its backward rule on a define-by-run tape, and
`backward` walks the tape once in reverse topological order.
"""

import numpy as np

from sleeplens import autodiff as ad
from sleeplens.autodiff import Tensor

rng = np.random.default_rng(0)

# --- a tiny affine + softmax "model" ---------------------------------------
w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
b = Tensor(np.zeros(3), requires_grad=True)
x = Tensor(rng.normal(size=4))

logits = ad.matmul(w, x) + b
loss = ad.cross_entropy(logits, target=2)
print("loss:", loss.item())

ad.backward(loss)
print("gradient on w has shape", w.grad.shape)
print("cross-entropy gradient equals softmax - onehot:")
probs = ad.softmax(logits).data
print("  softmax:", np.round(probs, 4))
print("  d loss / d logits(analytic):", np.round(probs - np.eye(3)[2], 4))

# --- check one entry against central finite differences ---------------------
h = 1e-5
w_data = w.data.copy()
w.data = w_data.copy()
w.data[0, 0] = w_data[0, 0] + h
up = ad.cross_entropy(ad.matmul(w, x) + b, 2).item()
w.data[0, 0] = w_data[0, 0] - h
down = ad.cross_entropy(ad.matmul(w, x) + b, 2).item()
w.data = w_data
numeric = (up - down) / (2 * h)
print(f"w[0,0]: autodiff {w.grad[0, 0]:+.8f} vs finite difference {numeric:+.8f}")

# --- the causal convolution keeps the future out -----------------------------
signal = Tensor(rng.normal(size=(10, 1)))
kernel = Tensor(np.array([[[1.0]], [[1.0]]]))  # width 2, adds x[t-dilation]
out = ad.conv1d_dilated(signal, kernel, dilation=2, bias=Tensor(np.zeros(1)))
bumped = signal.data.copy()
bumped[7:] += 100.0
out_bumped = ad.conv1d_dilated(Tensor(bumped), kernel, 2, Tensor(np.zeros(1)))
print("outputs before t=7 unchanged by a future bump:",
      bool(np.array_equal(out.data[:7], out_bumped.data[:7])))

# --- numerically safe nonlinearities ----------------------------------------
print("sigmoid(1000) =", ad.sigmoid(Tensor(1000.0)).data, "(no overflow)")
print("softmax([1000, 1000]) =", ad.softmax(Tensor([1000.0, 1000.0])).data)
