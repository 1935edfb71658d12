"""Independent reference computations shared by the tests."""
import numpy as np


def central_diff(fn, arrays, eps=1e-5):
    """Central finite differences of scalar ``fn()`` w.r.t. each array, perturbed in place."""
    grads = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + eps
            plus = fn()
            a[idx] = old - eps
            minus = fn()
            a[idx] = old
            g[idx] = (plus - minus) / (2 * eps)
        grads[name] = g
    return grads


def rel_err(analytic, numeric):
    """max|a - n| scaled by the larger of the two tensors' max magnitudes (floor 1e-6)."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-6)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def lstm_scalar_step(w_x, w_h, b, x, h, c):
    """Scalar LSTM (n = q = 1) written out gate by gate; weights in e, f, o, c order."""
    sig = lambda z: 1.0 / (1.0 + np.exp(-z))
    e = sig(w_x[0] * x + w_h[0] * h + b[0])
    f = sig(w_x[1] * x + w_h[1] * h + b[1])
    o = sig(w_x[2] * x + w_h[2] * h + b[2])
    g = np.tanh(w_x[3] * x + w_h[3] * h + b[3])
    c_new = f * c + e * g
    return o * np.tanh(c_new), c_new
