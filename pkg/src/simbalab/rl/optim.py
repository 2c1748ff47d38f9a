"""AdamW with decoupled weight decay, and Polyak averaging."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

# Below this size the numpy route is as fast and avoids kernel dispatch.
FUSED_MIN_SIZE = 4096


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_init(params: dict[str, np.ndarray]) -> AdamWState:
    return AdamWState({k: np.zeros_like(p) for k, p in params.items()},
                      {k: np.zeros_like(p) for k, p in params.items()}, 0)


def _adamw_numpy(p, g, m, v, b1, b2, step_size, eps_hat, decay):
    m *= b1
    m += (1 - b1) * g
    v *= b2
    gg = g * g
    gg *= 1 - b2
    v += gg
    update = np.sqrt(v)
    update += eps_hat
    update = np.divide(m, update, out=update if update.ndim else None)
    update *= step_size
    out = p * decay
    out -= update
    return np.asarray(out)


if numba is not None:
    # One pass over memory instead of about a dozen; these updates are
    # bandwidth bound on large layers. fastmath lets the loop vectorize, so
    # results agree with the numpy route to rounding, not bitwise.
    @numba.njit(cache=True, fastmath=True)
    def _adamw_kernel(p, g, m, v, out, b1, b2, step_size, eps_hat, decay):
        c1 = 1 - b1
        c2 = 1 - b2
        for i in range(p.size):
            gi = g[i]
            mi = m[i] * b1 + c1 * gi
            vi = v[i] * b2 + c2 * (gi * gi)
            m[i] = mi
            v[i] = vi
            out[i] = p[i] * decay - step_size * (mi / (np.sqrt(vi) + eps_hat))

    @numba.njit(cache=True, fastmath=True)
    def _polyak_kernel(target, online, tau):
        for i in range(target.size):
            target[i] += tau * (online[i] - target[i])


def _fusable(*arrays) -> bool:
    first = arrays[0]
    return (numba is not None and first.size >= FUSED_MIN_SIZE
            and all(a.dtype == first.dtype and a.flags.c_contiguous for a in arrays))


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamWState,
               lr: float, beta1: float = 0.9, beta2: float = 0.999, weight_decay: float = 1e-2,
               eps: float = 1e-8, *, inplace: bool = False, fused: bool = True
               ) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One bias-corrected AdamW step.

    p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)

    The bias corrections are folded into the step size, i.e.
    m_hat / (sqrt(v_hat) + eps) == (sqrt(c2) / c1) * m / (sqrt(v) + eps * sqrt(c2)).
    Parameters always come back as new arrays. With ``inplace`` the moment
    buffers of ``state`` are updated in place and ``state`` itself is
    returned, which saves allocations on large networks. ``fused`` allows
    the compiled single-pass kernel for large arrays when numba is present.
    """
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    step_size = lr * np.sqrt(c2) / c1
    eps_hat = eps * np.sqrt(c2)
    decay = 1.0 - lr * weight_decay
    new_p = {}
    new_m = state.m if inplace else {}
    new_v = state.v if inplace else {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"adamw: grad shape {g.shape} != param shape {p.shape} for {k}")
        m = state.m[k] if inplace else state.m[k].copy()
        v = state.v[k] if inplace else state.v[k].copy()
        # Scalars in the parameter dtype so float32 runs stay float32.
        dt = p.dtype.type
        scalars = (dt(beta1), dt(beta2), dt(step_size), dt(eps_hat), dt(decay))
        if fused and _fusable(p, g, m, v):
            out = np.empty_like(p)
            _adamw_kernel(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1),
                          out.reshape(-1), *scalars)
            new_p[k] = out
        else:
            new_p[k] = _adamw_numpy(p, g, m, v, *scalars)
        new_m[k] = m
        new_v[k] = v
    if inplace:
        state.step = t
        return new_p, state
    return new_p, AdamWState(new_m, new_v, t)


def polyak_update(target: dict[str, np.ndarray], online: dict[str, np.ndarray],
                  tau: float, *, inplace: bool = False) -> dict[str, np.ndarray]:
    """target <- (1 - tau) * target + tau * online.

    Evaluated as target + tau * (online - target) so that target == online
    is an exact fixed point. ``inplace`` overwrites the target arrays.
    """
    if tau == 1.0:
        if inplace:
            for k, v in target.items():
                v[...] = online[k]
            return target
        return {k: online[k].copy() for k in target}
    if not inplace:
        return {k: v + tau * (online[k] - v) for k, v in target.items()}
    for k, v in target.items():
        o = online[k]
        if _fusable(v, o):
            _polyak_kernel(v.reshape(-1), o.reshape(-1), v.dtype.type(tau))
        else:
            d = o - v
            d *= tau
            v += d
    return target
