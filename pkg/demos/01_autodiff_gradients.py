"""Tour of the reverse-mode tape: forward ops, backward, gradient checking.

Run:  python demos/01_autodiff_gradients.py
"""

import numpy as np

import mmnas.autodiff as ad
from mmnas.autodiff import Tape

# Everything is float64 and define-by-run: build a fresh tape, register
# leaves (the things you want gradients for), compute, call backward.
tape = Tape()
x = tape.leaf([1.0, 2.0, 3.0], "x")
w = tape.leaf(np.full((3, 2), 0.5), "w")

h = ad.relu(ad.matmul(ad.constant([[1.0, 0.0, 2.0]]), w))   # constants stay off-tape
y = ad.tsum(ad.mul(x, x)) + ad.tsum(h)
print("forward value:", float(y.data))

grads = tape.backward(y)
print("d y / d x =", grads.of(x))          # 2x = [2, 4, 6]
print("d y / d w =\n", grads.of(w))

# The gradient of sum(x*x) really is 2x; check any composite against
# central finite differences the same way the test suite does.
def loss_value(x0):
    t = Tape()
    leaf = t.leaf(x0, "x")
    return float(ad.mean(ad.log(ad.softmax(leaf, axis=0))).data)

x0 = np.array([0.3, -1.2, 0.8, 0.0])
t = Tape()
leaf = t.leaf(x0, "x")
analytic = t.backward(ad.mean(ad.log(ad.softmax(leaf, axis=0)))).of(leaf)

step = 1e-5
numeric = np.zeros_like(x0)
for i in range(x0.size):
    up, down = x0.copy(), x0.copy()
    up[i] += step
    down[i] -= step
    numeric[i] = (loss_value(up) - loss_value(down)) / (2 * step)

print("analytic:", analytic)
print("numeric: ", numeric)
print("max abs difference:", np.abs(analytic - numeric).max())

# Numerical guardrails: any op that produces NaN/Inf raises and names itself.
try:
    ad.log(ad.constant([0.0]))
except Exception as e:
    print("caught as expected ->", type(e).__name__, "-", e)
