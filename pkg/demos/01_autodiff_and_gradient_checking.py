"""Tour of the tensor engine: building graphs, backward, and checking
every gradient against central finite differences."""

import numpy as np

import seqdg.tensor as T
from seqdg.tensor import Tensor, grad_check

print("== building a graph and differentiating it ==")
w = Tensor(np.array([[0.5, -1.0], [2.0, 0.25]]), requires_grad=True)
x = Tensor(np.array([[1.0, 2.0]]))
h = T.relu(T.matmul(x, w))
loss = T.mse(h, Tensor(np.array([[1.0, 0.0]])))
print("forward value:", loss.item())
loss.backward()
print("dL/dw:\n", w.grad)

print()
print("== the same gradient, numerically ==")


def f():
    return T.mse(T.relu(T.matmul(x, w)), Tensor(np.array([[1.0, 0.0]])))


report = grad_check(f, {"w": w}, h=1e-5, tol=1e-6)
print(report.summary())

print()
print("== a corrupted backward rule is caught immediately ==")
theta = Tensor(np.array([0.7, -0.3]), requires_grad=True)


def bad_square(t):
    out = t.data * t.data

    def backward(dout):
        T._acc(t, dout * 3.0 * t.data)  # should be 2x, not 3x

    return T._node(out, (t,), "bad_square", backward)


bad_report = grad_check(lambda: T.sum_all(bad_square(theta)), {"theta": theta})
print(bad_report.summary())
assert not bad_report.passed

print()
print("== numerically robust softmax ==")
cool = T.softmax_rows(Tensor([[1.0, 2.0, 3.0]]))
hot = T.softmax_rows(Tensor([[1000.0, 1000.0, 1000.0]]))
print("softmax([1,2,3])      =", np.round(cool.data[0], 6))
print("softmax([1e3,1e3,1e3]) =", hot.data[0], "(no overflow)")
