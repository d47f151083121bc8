"""Layer primitives as ``(forward, vjp)`` pairs.

Every ``*_fwd`` returns ``(out, cache)`` and the matching ``*_vjp(cache, g)``
returns a tuple of cotangents, one per forward argument (``None`` where the
argument is not differentiable).  Vector features are laid out as
``(..., 2, C)``: xy components on axis -2, channels last.
"""

from __future__ import annotations

import numpy as np

_SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))
VLN_EPS = 1e-6
LN_EPS = 1e-5


def r90(v):
    """Rotate every 2-D vector (axis -2) by +90 degrees."""
    return np.stack([-v[..., 1, :], v[..., 0, :]], axis=-2)


def r90_t(v):
    return np.stack([v[..., 1, :], -v[..., 0, :]], axis=-2)


def _sum_to_2d(x, g):
    # contract all leading axes: (..., a) x (..., b) -> (a, b)
    return x.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])


# ----------------------------------------------------------------- pointwise


def _gelu_parts(x):
    # returns (gelu(x), tanh term) so the backward pass can reuse the tanh
    t = np.tanh(_SQRT_2_OVER_PI * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def gelu(x):
    """GELU, tanh approximation."""
    return _gelu_parts(x)[0]


def gelu_grad(x, t=None):
    if t is None:
        t = _gelu_parts(x)[1]
    dinner = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * (x * x))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner


def gelu_fwd(x):
    out, t = _gelu_parts(x)
    return out, (x, t)


def gelu_vjp(cache, g):
    x, t = cache
    return (g * gelu_grad(x, t),)


def add_fwd(a, b):
    return a + b, None


def add_vjp(_, g):
    return g, g


def mean_time_fwd(x, axis=1):
    return x.mean(axis=axis), (x.shape, axis)


def mean_time_vjp(cache, g):
    shape, axis = cache
    return (np.broadcast_to(np.expand_dims(g, axis) / shape[axis], shape).copy(),)


# -------------------------------------------------------------------- dense


def dense_fwd(x, W, b=None):
    out = x @ W
    if b is not None:
        out = out + b
    return out, (x, W, b is not None)


def dense_vjp(cache, g):
    x, W, has_b = cache
    gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if has_b else None
    return g @ W.T, _sum_to_2d(x, g), gb


# ---------------------------------------------------------------- conv 1-D


def same_padding(k: int) -> tuple[int, int]:
    return (k - 1) // 2, k // 2


def conv1d_fwd(x, K, b=None, stride=1):
    """Zero-padded 'same' convolution over time.

    ``x``: ``(N, n, C_in)``, ``K``: ``(k, C_in, C_out)``.  Output length is
    ``(n - 1) // stride + 1``.
    """
    if x.ndim != 3 or K.ndim != 3 or x.shape[-1] != K.shape[1]:
        raise ValueError(f"conv1d shape mismatch: x{x.shape} K{K.shape}")
    k = K.shape[0]
    left, right = same_padding(k)
    N, n, _ = x.shape
    n_out = (n - 1) // stride + 1
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    span = stride * (n_out - 1) + 1
    out = np.zeros((N, n_out, K.shape[2]), dtype=np.result_type(x, K))
    for j in range(k):
        out += xp[:, j:j + span:stride] @ K[j]
    if b is not None:
        out += b
    return out, (xp, K, stride, n, b is not None)


def conv1d_vjp(cache, g):
    xp, K, stride, n, has_b = cache
    k, c_in, c_out = K.shape
    left, _ = same_padding(k)
    span = stride * (g.shape[1] - 1) + 1
    # time-major copies make every tap slice contiguous
    xt = np.ascontiguousarray(xp.transpose(1, 0, 2))
    gt = np.ascontiguousarray(g.transpose(1, 0, 2))
    g2 = gt.reshape(-1, c_out)
    gK = np.empty_like(K)
    gxt = np.zeros_like(xt)
    for j in range(k):
        gK[j] = xt[j:j + span:stride].reshape(-1, c_in).T @ g2
        gxt[j:j + span:stride] += gt @ K[j].T
    gb = g2.sum(axis=0) if has_b else None
    return gxt[left:left + n].transpose(1, 0, 2), gK, gb


# -------------------------------------------------------- equivariant linear


def eq_linear_fwd(v, W1, W2=None):
    """``v W1 + R90(v) W2`` channel mixing; ``W2=None`` is the reflection-safe form."""
    if v.shape[-2] != 2 or v.shape[-1] != W1.shape[0]:
        raise ValueError(f"eq_linear shape mismatch: v{v.shape} W1{W1.shape}")
    out = v @ W1
    rv = None
    if W2 is not None:
        rv = r90(v)
        out = out + rv @ W2
    return out, (v, rv, W1, W2)


def eq_linear_vjp(cache, g):
    v, rv, W1, W2 = cache
    gv = g @ W1.T
    gW1 = _sum_to_2d(v, g)
    gW2 = None
    if W2 is not None:
        gv = gv + r90_t(g @ W2.T)
        gW2 = _sum_to_2d(rv, g)
    return gv, gW1, gW2


# ---------------------------------------------------------- equivariant conv


def _fold(v):
    # (B, n, 2, C) -> (2B, n, C)
    B, n, _, C = v.shape
    return v.transpose(0, 2, 1, 3).reshape(2 * B, n, C)


def _unfold(x, B):
    _, n, C = x.shape
    return x.reshape(B, 2, n, C).transpose(0, 2, 1, 3)


def eq_conv1d_fwd(v, K1, K2=None, stride=1):
    """Temporal convolution whose every tap is an :func:`eq_linear`.

    ``v``: ``(B, n, 2, C_in)``; ``K1``, ``K2``: ``(k, C_in, C_out)``.
    """
    if v.ndim != 4 or v.shape[2] != 2:
        raise ValueError(f"eq_conv1d expects (B, n, 2, C), got {v.shape}")
    B = v.shape[0]
    x, K = v, K1
    if K2 is not None:
        x = np.concatenate([v, r90(v)], axis=-1)
        K = np.concatenate([K1, K2], axis=1)
    out, cache = conv1d_fwd(_fold(x), K, None, stride)
    return _unfold(out, B), (cache, B, v.shape[-1], K2 is not None)


def eq_conv1d_vjp(cache, g):
    conv_cache, B, c_in, has_k2 = cache
    gx, gK, _ = conv1d_vjp(conv_cache, _fold(g))
    gx = _unfold(gx, B)
    if not has_k2:
        return gx, gK, None
    gv = gx[..., :c_in] + r90_t(gx[..., c_in:])
    return gv, gK[:, :c_in], gK[:, c_in:]


# ------------------------------------------------------- gated nonlinearity


def _safe_norm(v):
    return np.sqrt(np.sum(v * v, axis=-2))


def gate_fwd(v, s, W1, b1, W2, b2):
    """Scale vector channels by an mlp of (norms, scalars); GELU the rest.

    ``v``: ``(..., 2, C)``, ``s``: ``(..., C)``, mlp ``2C -> 2C -> 2C``.
    """
    C = v.shape[-1]
    if s.shape[-1] != C or W1.shape[0] != 2 * C or W2.shape[1] != 2 * C:
        raise ValueError("gate widths must be 2C with C vector and C scalar channels")
    norms = _safe_norm(v)
    h = np.concatenate([norms, s], axis=-1)
    z1 = h @ W1 + b1
    a1, t1 = _gelu_parts(z1)
    z2 = a1 @ W2 + b2
    gamma, beta = z2[..., :C], z2[..., C:]
    v_out = gamma[..., None, :] * v
    s_out, tb = _gelu_parts(beta)
    return (v_out, s_out), (v, norms, h, (z1, t1), a1, gamma, (beta, tb), W1, W2)


def gate_vjp(cache, g):
    v, norms, h, z1, a1, gamma, beta, W1, W2 = cache
    gv_out, gs_out = g
    C = v.shape[-1]
    g_gamma = np.sum(gv_out * v, axis=-2)
    gv = gv_out * gamma[..., None, :]
    g_beta = gs_out * gelu_grad(*beta)
    gz2 = np.concatenate([g_gamma, g_beta], axis=-1)
    gW2 = _sum_to_2d(a1, gz2)
    gb2 = gz2.reshape(-1, 2 * C).sum(axis=0)
    gz1 = (gz2 @ W2.T) * gelu_grad(*z1)
    gW1 = _sum_to_2d(h, gz1)
    gb1 = gz1.reshape(-1, 2 * C).sum(axis=0)
    gh = gz1 @ W1.T
    # d|v|/dv = v/|v|, taken as 0 at the origin
    safe = np.where(norms > 0, norms, 1.0)
    unit = np.where((norms > 0)[..., None, :], v / safe[..., None, :], 0.0)
    gv = gv + gh[..., None, :C] * unit
    return gv, gh[..., C:], gW1, gb1, gW2, gb2


# ------------------------------------------------------------ normalization


def vector_ln_fwd(v):
    """Divide all channels by the RMS (over channels) of their norms."""
    C = v.shape[-1]
    rms = np.sqrt(np.sum(v * v, axis=(-2, -1)) / C)
    scale = 1.0 / (rms + VLN_EPS)
    return v * scale[..., None, None], (v, rms, scale)


def vector_ln_vjp(cache, g):
    v, rms, scale = cache
    C = v.shape[-1]
    gdot = np.sum(g * v, axis=(-2, -1))
    safe = np.where(rms > 0, rms, 1.0)
    coef = np.where(rms > 0, gdot * scale**2 / (C * safe), 0.0)
    return (g * scale[..., None, None] - coef[..., None, None] * v,)


def layernorm_fwd(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layernorm_vjp(cache, g):
    xhat, inv, gain = cache
    C = xhat.shape[-1]
    g_gain = (g * xhat).reshape(-1, C).sum(axis=0)
    g_bias = g.reshape(-1, C).sum(axis=0)
    gx_hat = g * gain
    gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
    return gx, g_gain, g_bias


# ------------------------------------------------------------- tape helpers


def _trim(vjp, count):
    return lambda cache, g: vjp(cache, g)[:count]


def t_dense(tape, x, W, b=None):
    args = (x, W) if b is None else (x, W, b)
    return tape.op(dense_fwd, _trim(dense_vjp, len(args)), *args)


def t_conv1d(tape, x, K, b=None, stride=1):
    if b is None:
        return tape.op(lambda xv, Kv: conv1d_fwd(xv, Kv, None, stride), _trim(conv1d_vjp, 2), x, K)
    return tape.op(conv1d_fwd, conv1d_vjp, x, K, b, stride=stride)


def t_eq_linear(tape, v, W1, W2=None):
    args = (v, W1) if W2 is None else (v, W1, W2)
    return tape.op(eq_linear_fwd, _trim(eq_linear_vjp, len(args)), *args)


def t_eq_conv1d(tape, v, K1, K2=None, stride=1):
    if K2 is None:
        return tape.op(lambda vv, Kv: eq_conv1d_fwd(vv, Kv, None, stride), _trim(eq_conv1d_vjp, 2), v, K1)
    return tape.op(eq_conv1d_fwd, eq_conv1d_vjp, v, K1, K2, stride=stride)


def t_gelu(tape, x):
    return tape.op(gelu_fwd, gelu_vjp, x)


def t_add(tape, a, b):
    return tape.op(add_fwd, add_vjp, a, b)


def t_mean_time(tape, x, axis=1):
    return tape.op(lambda a: mean_time_fwd(a, axis), mean_time_vjp, x)


def t_vector_ln(tape, v):
    return tape.op(vector_ln_fwd, vector_ln_vjp, v)


def t_layernorm(tape, x, gain, bias):
    return tape.op(layernorm_fwd, layernorm_vjp, x, gain, bias)


def t_gate(tape, v, s, W1, b1, W2, b2):
    """Returns ``(v_out, s_out)`` vars from one recorded node."""
    parents = (v, s, W1, b1, W2, b2)
    outs, cache = gate_fwd(*[p.value for p in parents])
    return tape.apply_multi(outs, parents, lambda g: gate_vjp(cache, g))
