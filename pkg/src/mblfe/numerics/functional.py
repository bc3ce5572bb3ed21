"""Array-level activations used throughout the model.

All functions accept scalars or numpy arrays and keep the input dtype.
"""
import numpy as np


def softmax(x, axis=-1):
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("softmax of an empty vector is undefined")
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def logsumexp(x, axis=-1):
    x = np.asarray(x)
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softplus(x):
    # ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|), stable at both ends
    x = np.asarray(x)
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    return out[()] if out.ndim == 0 else out


def sigmoid(x):
    x = np.asarray(x)
    # branch on sign so exp never overflows
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + z), z / (1 + z)).astype(np.result_type(x, np.float32), copy=False)
    return out[()] if out.ndim == 0 else out


def log_sigmoid(x):
    return -softplus(-np.asarray(x))


def tanh_act(x):
    out = np.tanh(np.asarray(x))
    return out[()] if out.ndim == 0 else out
