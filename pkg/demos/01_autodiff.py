"""
Reverse-mode autodiff on a tape
===============================

Build a small graph, backpropagate, and compare with finite differences.
The gradient reversal op is the identity going forward and flips the
gradient going back.
"""
import numpy as np

from morphtag.autodiff import Adam, Graph, gradient_check, parameter

rng = np.random.default_rng(0)
W = parameter(rng.normal(size=(3, 4)), "W")
b = parameter(np.zeros(4), "b")
x = rng.normal(size=(5, 3))
y = rng.integers(4, size=5)

# forward: logits -> cross-entropy
g = Graph()
loss = g.cross_entropy(g.add(g.matmul(g.constant(x), W), b), y)
print("loss", float(loss.value))

# analytic vs central differences
print("relative errors", gradient_check(g, loss, [W, b]))

# the GRL: upstream [1, -2] with lambda 1 arrives as [-1, 2]
v = parameter(np.array([1.5, -2.0]))
g = Graph()
g.backward(g.sum(g.mul(g.grl(v, 1.0), np.array([1.0, -2.0]))))
print("grl grad", v.grad)

# a few Adam steps on the toy problem
opt = Adam([W, b], lr=0.1)
for step in range(50):
    g = Graph()
    loss = g.cross_entropy(g.add(g.matmul(g.constant(x), W), b), y)
    g.backward(loss)
    opt.step()
    opt.zero_grad()
print("loss after 50 steps", float(loss.value))
