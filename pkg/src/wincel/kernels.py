"""Hot numeric kernels: contrastive loss forward/gradient and the AdamW update.

Two interchangeable backends:

* ``numpy``  - vectorized reference implementation (always available).
* ``numba``  - fused ``@njit`` loops compiled on first use (default when
  numba imports cleanly).

Selection is controlled by the ``WINCEL_BACKEND`` environment variable:
``auto`` (default), ``numba``, or ``numpy``. The active choice is exposed
as :data:`ACTIVE_BACKEND`. Both implementations of every kernel stay
importable for equivalence tests and for ``benchmarks/bench_kernels.py``.

All kernels take float64 C-contiguous arrays and perform no validation;
callers in :mod:`wincel.losses` and :mod:`wincel.train` validate inputs.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "ACTIVE_BACKEND",
    "NUMBA_AVAILABLE",
    "infonce_forward_grad",
    "wincel_forward_grad",
    "adamw_update",
    "get_impl",
]


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _infonce_numpy(V, T, tau):
    """InfoNCE over matched rows: per-sample loss and gradient w.r.t. V.

    per[n] = -log( exp(V_n.T_n/tau) / sum_j exp(V_n.T_j/tau) )
    value  = mean(per);  grad is d(value)/dV.
    """
    n = V.shape[0]
    logits = (V @ T.T) / tau
    mx = logits.max(axis=1)
    lse = mx + np.log(np.exp(logits - mx[:, None]).sum(axis=1))
    per = lse - np.diagonal(logits)
    probs = np.exp(logits - lse[:, None])
    q = (probs - np.eye(n)) / (n * tau)
    grad = q @ T
    return float(per.mean()), per, grad


def _alpha_numpy(raw, mask, literal_pad):
    """Row-wise sentence weights: softmax of raw logits, two padding modes."""
    if literal_pad:
        mx = raw.max(axis=1, keepdims=True)
        e = np.exp(raw - mx)
    else:
        neg = np.where(mask, raw, -np.inf)
        mx = neg.max(axis=1, keepdims=True)
        e = np.exp(raw - mx) * mask
    return e / e.sum(axis=1, keepdims=True)


def _wincel_numpy(V, T, mask, tau, alpha_tau, full_grad, literal_pad):
    """Weighted-text contrastive loss with gradient w.r.t. V.

    T has shape (N, K, D); padded sentence rows are exactly zero. Returns
    (value, per_sample, grad_V, alpha).
    """
    n = V.shape[0]
    raw = np.einsum("nkd,nd->nk", T, V) / alpha_tau
    alpha = _alpha_numpy(raw, mask, literal_pad)
    g_text = np.einsum("nk,nkd->nd", alpha, T)

    logits = (V @ g_text.T) / tau
    mx = logits.max(axis=1)
    lse = mx + np.log(np.exp(logits - mx[:, None]).sum(axis=1))
    per = lse - np.diagonal(logits)
    probs = np.exp(logits - lse[:, None])
    q = (probs - np.eye(n)) / (n * tau)
    grad = q @ g_text

    if full_grad:
        # Each G_m depends on V_m through alpha; chain the softmax Jacobian.
        u = q.T @ V
        c = np.einsum("nkd,nd->nk", T, u)
        cbar = (alpha * c).sum(axis=1, keepdims=True)
        gk = alpha * (c - cbar)
        grad = grad + np.einsum("nk,nkd->nd", gk, T) / alpha_tau
    return float(per.mean()), per, grad, alpha


def _adamw_numpy(param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """One decoupled-weight-decay Adam step, in place. ``step`` counts from 1."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** step)
    vhat = v / (1.0 - beta2 ** step)
    if weight_decay != 0.0:
        param -= lr * weight_decay * param
    param -= lr * mhat / (np.sqrt(vhat) + eps)


_NUMPY_IMPL = {
    "infonce": _infonce_numpy,
    "wincel": _wincel_numpy,
    "adamw": _adamw_numpy,
}


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

NUMBA_AVAILABLE = False
_NUMBA_IMPL = None

try:
    if os.environ.get("WINCEL_BACKEND", "auto") != "numpy":
        from numba import njit

        @njit(cache=True)
        def _infonce_numba(V, T, tau):  # pragma: no cover - jitted
            n, d = V.shape
            logits = np.dot(V, np.ascontiguousarray(T.T)) / tau
            per = np.empty(n)
            probs = np.empty((n, n))
            for i in range(n):
                mx = logits[i, 0]
                for j in range(1, n):
                    if logits[i, j] > mx:
                        mx = logits[i, j]
                s = 0.0
                for j in range(n):
                    e = np.exp(logits[i, j] - mx)
                    probs[i, j] = e
                    s += e
                for j in range(n):
                    probs[i, j] /= s
                per[i] = mx + np.log(s) - logits[i, i]
            q = np.empty((n, n))
            scale = 1.0 / (n * tau)
            for i in range(n):
                for j in range(n):
                    q[i, j] = (probs[i, j] - (1.0 if i == j else 0.0)) * scale
            grad = np.dot(q, T)
            value = 0.0
            for i in range(n):
                value += per[i]
            return value / n, per, grad

        @njit(cache=True)
        def _wincel_numba(V, T, mask, tau, alpha_tau, full_grad, literal_pad):  # pragma: no cover - jitted
            n, k, d = T.shape
            alpha = np.zeros((n, k))
            g_text = np.zeros((n, d))
            for i in range(n):
                raw = np.dot(T[i], V[i]) / alpha_tau
                mx = -1.0e300
                for j in range(k):
                    if (literal_pad or mask[i, j]) and raw[j] > mx:
                        mx = raw[j]
                s = 0.0
                for j in range(k):
                    if literal_pad or mask[i, j]:
                        e = np.exp(raw[j] - mx)
                        alpha[i, j] = e
                        s += e
                for j in range(k):
                    alpha[i, j] /= s
                for j in range(k):
                    if alpha[i, j] != 0.0:
                        for c in range(d):
                            g_text[i, c] += alpha[i, j] * T[i, j, c]

            logits = np.dot(V, np.ascontiguousarray(g_text.T)) / tau
            per = np.empty(n)
            probs = np.empty((n, n))
            for i in range(n):
                mx = logits[i, 0]
                for j in range(1, n):
                    if logits[i, j] > mx:
                        mx = logits[i, j]
                s = 0.0
                for j in range(n):
                    e = np.exp(logits[i, j] - mx)
                    probs[i, j] = e
                    s += e
                for j in range(n):
                    probs[i, j] /= s
                per[i] = mx + np.log(s) - logits[i, i]
            q = np.empty((n, n))
            scale = 1.0 / (n * tau)
            for i in range(n):
                for j in range(n):
                    q[i, j] = (probs[i, j] - (1.0 if i == j else 0.0)) * scale
            grad = np.dot(q, g_text)

            if full_grad:
                u = np.dot(np.ascontiguousarray(q.T), V)
                for i in range(n):
                    c = np.dot(T[i], u[i])
                    cbar = 0.0
                    for j in range(k):
                        cbar += alpha[i, j] * c[j]
                    for j in range(k):
                        gk = alpha[i, j] * (c[j] - cbar) / alpha_tau
                        if gk != 0.0:
                            for cc in range(d):
                                grad[i, cc] += gk * T[i, j, cc]
            value = 0.0
            for i in range(n):
                value += per[i]
            return value / n, per, grad, alpha

        @njit(cache=True)
        def _adamw_numba(param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):  # pragma: no cover - jitted
            bc1 = 1.0 - beta1 ** step
            bc2 = 1.0 - beta2 ** step
            for i in range(param.size):
                g = grad[i]
                m[i] = beta1 * m[i] + (1.0 - beta1) * g
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
                p = param[i]
                if weight_decay != 0.0:
                    p -= lr * weight_decay * p
                p -= lr * (m[i] / bc1) / (np.sqrt(v[i] / bc2) + eps)
                param[i] = p

        def _adamw_numba_flat(param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
            _adamw_numba(
                param.reshape(-1), np.ascontiguousarray(grad).reshape(-1),
                m.reshape(-1), v.reshape(-1),
                step, lr, beta1, beta2, eps, weight_decay,
            )

        _NUMBA_IMPL = {
            "infonce": _infonce_numba,
            "wincel": _wincel_numba,
            "adamw": _adamw_numba_flat,
        }
        NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - depends on environment
    NUMBA_AVAILABLE = False
    _NUMBA_IMPL = None


# ---------------------------------------------------------------------------
# backend selection
# ---------------------------------------------------------------------------

def _select_backend() -> str:
    requested = os.environ.get("WINCEL_BACKEND", "auto").lower()
    if requested not in ("auto", "numba", "numpy"):
        raise ValueError(f"WINCEL_BACKEND must be auto|numba|numpy, got {requested!r}")
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if not NUMBA_AVAILABLE:
            raise ImportError("WINCEL_BACKEND=numba but numba is not importable")
        return "numba"
    return "numba" if NUMBA_AVAILABLE else "numpy"


ACTIVE_BACKEND = _select_backend()


def get_impl(backend: str) -> dict:
    """Return the kernel table for ``backend`` ('numpy' or 'numba')."""
    if backend == "numpy":
        return _NUMPY_IMPL
    if backend == "numba":
        if _NUMBA_IMPL is None:
            raise ImportError("numba backend unavailable")
        return _NUMBA_IMPL
    raise ValueError(f"unknown backend {backend!r}")


_ACTIVE = get_impl(ACTIVE_BACKEND)


def infonce_forward_grad(V, T, tau):
    """(value, per_sample, grad_V) for matched-pair InfoNCE, active backend."""
    return _ACTIVE["infonce"](V, T, tau)


def wincel_forward_grad(V, T, mask, tau, alpha_tau, full_grad, literal_pad):
    """(value, per_sample, grad_V, alpha) for the weighted loss, active backend."""
    return _ACTIVE["wincel"](V, T, mask, tau, alpha_tau, full_grad, literal_pad)


def adamw_update(param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """In-place AdamW step on ``param`` with moment buffers ``m``/``v``."""
    _ACTIVE["adamw"](param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay)
