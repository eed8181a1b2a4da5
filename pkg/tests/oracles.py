"""Slow loop-based reference implementations shared by the test modules."""
import math

import numpy as np


def direct_conv(x, w, b, stride, padding):
    """Brute-force cross-correlation over 2 or 3 spatial dims."""
    nd = w.ndim - 2
    xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p) for p in padding])
    out_size = [(xp.shape[2 + i] - w.shape[2 + i]) // stride[i] + 1 for i in range(nd)]
    out = np.zeros((x.shape[0], w.shape[0], *out_size))
    for bi in range(x.shape[0]):
        for o in range(w.shape[0]):
            for pos in np.ndindex(*out_size):
                sl = tuple(slice(pos[i] * stride[i], pos[i] * stride[i] + w.shape[2 + i]) for i in range(nd))
                out[(bi, o) + pos] = np.sum(xp[(bi, slice(None)) + sl] * w[o]) + (b[o] if b is not None else 0)
    return out


def naive_attention(q, k, v, visible, scale):
    """Per-row loop: exponentiate visible entries only, then weight the values."""
    n = q.shape[0]
    weights = np.zeros((n, n))
    out = np.zeros_like(v)
    for i in range(n):
        sims = {}
        for j in range(n):
            if visible[j]:
                sims[j] = sum(q[i, l] * k[j, l] for l in range(q.shape[1])) / scale
        top = max(sims.values())
        z = sum(math.exp(s - top) for s in sims.values())
        for j, s in sims.items():
            weights[i, j] = math.exp(s - top) / z
        for j in range(n):
            out[i] += weights[i, j] * v[j]
    return weights, out


def _pointwise(x, conv):
    w, b = conv.weight.data[:, :, 0, 0], conv.bias.data
    t, c, h, wd = x.shape
    out = np.zeros((t, w.shape[0], h, wd))
    for ti in range(t):
        for o in range(w.shape[0]):
            for i in range(c):
                out[ti, o] += w[o, i] * x[ti, i]
            out[ti, o] += b[o]
    return out


def _patches(x, r1, r2):
    t, c, h, w = x.shape
    rows = []
    for ti in range(t):
        for gi in range(h // r1):
            for gj in range(w // r2):
                rows.append([x[ti, ch, gi * r1 + a, gj * r2 + bb]
                             for a in range(r1) for bb in range(r2) for ch in range(c)])
    return np.array(rows)


def _unpatch(rows, shape, r1, r2):
    t, c, h, w = shape
    out = np.zeros(shape)
    n = 0
    for ti in range(t):
        for gi in range(h // r1):
            for gj in range(w // r2):
                idx = 0
                for a in range(r1):
                    for bb in range(r2):
                        for ch in range(c):
                            out[ti, ch, gi * r1 + a, gj * r2 + bb] = rows[n][idx]
                            idx += 1
                n += 1
    return out


def slow_layer(f, mask, layer):
    """Reference transformer layer written with explicit loops."""
    q, k, v = (_pointwise(f, m) for m in (layer.query, layer.key, layer.value))
    ch = layer.head_channels
    heads = []
    for hi, (r1, r2) in enumerate(layer.head_patch_shapes):
        sl = slice(hi * ch, (hi + 1) * ch)
        qp, kp, vp = (_patches(x[:, sl], r1, r2) for x in (q, k, v))
        mp = _patches(mask, r1, r2)
        frac = mp.mean(axis=1)
        thr = layer.visibility_threshold
        if not (frac <= thr).any():
            thr = frac.min()
        _, out = naive_attention(qp, kp, vp, frac <= thr, math.sqrt(r1 * r2 * ch))
        heads.append(_unpatch(out, (f.shape[0], ch) + f.shape[2:], r1, r2))
    fused = _pointwise(np.concatenate(heads, axis=1), layer.fusion)
    a = direct_conv(fused, layer.refine.conv_a.weight.data, layer.refine.conv_a.bias.data, (1, 1), (1, 1))
    a = np.where(a > 0, a, 0.2 * a)
    return fused + direct_conv(a, layer.refine.conv_b.weight.data, layer.refine.conv_b.bias.data,
                               (1, 1), (1, 1))
