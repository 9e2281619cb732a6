"""Compiled exploration kernels.

The model is flattened into plain arrays (see :func:`pack_model`) so that the
per-vertex loop runs without Python objects.  Marks are carried as an
``(index, value)`` pair: the atom index for finite alphabets (value = atom
value), or ``-1`` and the mark itself for interval marks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from numba import types
from numba.typed import Dict

from ..model import (BallProfile, BooleanDisc, BoxProfile, Gaussian,
                     ModelSpec, ball_volume)

FAM_BOOLEAN, FAM_GAUSSIAN, FAM_FACTOR = 0, 1, 2
CAP_NONE, CAP_SIZE, CAP_GENERATION, CAP_RADIUS = 0, 1, 2, 3
CAP_NAMES = ("none", "size_cap", "generation_cap", "radius_cap")

_CELL_BITS = 21
_CELL_MASK = (1 << _CELL_BITS) - 1


@dataclass(frozen=True)
class PackedModel:
    ip: np.ndarray      # fam, finite?, n_atoms, d, profile code, product kernel?
    fp: np.ndarray      # low, high, range, profile size, height, profile integral, unit ball volume
    cumw: np.ndarray
    vals: np.ndarray
    dtab: np.ndarray
    dmax: np.ndarray
    ktab: np.ndarray
    chol: np.ndarray
    inv: np.ndarray
    pref: np.ndarray

    def args(self):
        return (self.ip, self.fp, self.cumw, self.vals, self.dtab, self.dmax,
                self.ktab, self.chol, self.inv, self.pref)


def pack_model(model: ModelSpec) -> PackedModel:
    adj, marks, d = model.adjacency, model.marks, model.d
    finite = marks.is_finite
    n = marks.n_atoms if finite else 1
    ip = np.zeros(6, dtype=np.int64)
    fp = np.zeros(7, dtype=np.float64)
    ip[1], ip[2], ip[3] = int(finite), n, d
    fp[0], fp[1] = (marks.low, marks.high) if not finite else marks.value_bounds()
    fp[2] = model.interaction_range()
    fp[6] = float(ball_volume(d, 1.0))
    ktab = np.zeros((1, 1))
    chol = np.zeros((1, 1, 1, 1))
    inv = np.zeros((1, 1, 1, 1))
    pref = np.zeros((1, 1))
    if isinstance(adj, BooleanDisc):
        ip[0] = FAM_BOOLEAN
    elif isinstance(adj, Gaussian):
        ip[0] = FAM_GAUSSIAN
        chol, inv, pref = model._chol.copy(), model._cov_inv.copy(), model._gauss_pref.copy()
    else:
        ip[0] = FAM_FACTOR
        p = adj.profile
        ip[4] = p.code
        fp[3] = p.half_width if isinstance(p, BoxProfile) else (p.radius if isinstance(p, BallProfile) else p.scale)
        fp[4] = p.height
        fp[5] = p.integral(d)
        if adj.kernel_form == "product":
            ip[5] = 1
        else:
            ktab = np.asarray(model._K, dtype=float).copy()
    if finite:
        w = np.asarray(marks.weights, dtype=float)
        cumw = np.cumsum(w)
        cumw[-1] = 1.0
        vals = np.asarray(marks.values, dtype=float)
        idx = np.arange(n)
        dtab = np.asarray(model.degree(idx[:, None], idx[None, :]), dtype=float)
        dmax = np.array([dtab[i, w > 0].max() for i in range(n)])
    else:
        cumw = np.ones(1)
        vals = np.zeros(1)
        dtab = np.zeros((1, 1))
        dmax = np.zeros(1)
    return PackedModel(ip, fp, cumw, vals, dtab, dmax, ktab, chol, inv, pref)


# ---------------------------------------------------------------------------
# model primitives


@nb.njit(nogil=True, cache=True)
def _degree(ip, fp, dtab, ib, vb, ic, vc):
    if ip[1] == 1:
        return dtab[ib, ic]
    if ip[0] == FAM_BOOLEAN:
        return fp[6] * (vb + vc) ** ip[3]
    return fp[5] * vb * vc


@nb.njit(nogil=True, cache=True)
def _degree_max(ip, fp, dtab, dmax, ib, vb):
    if ip[1] == 1:
        return dmax[ib]
    return _degree(ip, fp, dtab, -1, vb, -1, fp[1])


@nb.njit(nogil=True, cache=True)
def _phi(ip, fp, ktab, inv, pref, dx, ib, vb, ic, vc):
    d = ip[3]
    fam = ip[0]
    if fam == FAM_BOOLEAN:
        r = vb + vc
        s = 0.0
        for i in range(d):
            s += dx[i] * dx[i]
        return 1.0 if s < r * r else 0.0
    if fam == FAM_GAUSSIAN:
        q = 0.0
        for i in range(d):
            t = 0.0
            for j in range(d):
                t += inv[ib, ic, i, j] * dx[j]
            q += dx[i] * t
        return pref[ib, ic] * math.exp(-0.5 * q)
    k = vb * vc if ip[5] == 1 else ktab[ib, ic]
    if k == 0.0:
        return 0.0
    code = ip[4]
    size = fp[3]
    if code == 0:
        for i in range(d):
            if abs(dx[i]) > size:
                return 0.0
        return fp[4] * k
    s = 0.0
    for i in range(d):
        s += dx[i] * dx[i]
    if code == 1:
        return fp[4] * k if s < size * size else 0.0
    return fp[4] * k * math.exp(-0.5 * s / (size * size))


@nb.njit(nogil=True, cache=True)
def _sample_mark(ip, fp, cumw, vals, rng):
    if ip[1] == 1:
        u = rng.random()
        i = np.searchsorted(cumw, u, side="right")
        if i >= cumw.shape[0]:
            i = cumw.shape[0] - 1
        return i, vals[i]
    return -1, rng.uniform(fp[0], fp[1])


@nb.njit(nogil=True, cache=True)
def _ball(out, d, r, rng):
    if d == 1:
        out[0] = rng.uniform(-r, r)
        return
    s = 0.0
    for i in range(d):
        out[i] = rng.standard_normal()
        s += out[i] * out[i]
    scale = r * rng.random() ** (1.0 / d) / math.sqrt(s)
    for i in range(d):
        out[i] *= scale


@nb.njit(nogil=True, cache=True)
def _sample_disp(ip, fp, chol, out, ib, vb, ic, vc, rng):
    d = ip[3]
    fam = ip[0]
    if fam == FAM_BOOLEAN:
        _ball(out, d, vb + vc, rng)
    elif fam == FAM_GAUSSIAN:
        z = np.empty(d)
        for i in range(d):
            z[i] = rng.standard_normal()
        for i in range(d):
            t = 0.0
            for j in range(i + 1):
                t += chol[ib, ic, i, j] * z[j]
            out[i] = t
    else:
        code = ip[4]
        size = fp[3]
        if code == 0:
            for i in range(d):
                out[i] = rng.uniform(-size, size)
        elif code == 1:
            _ball(out, d, size, rng)
        else:
            for i in range(d):
                out[i] = size * rng.standard_normal()


# ---------------------------------------------------------------------------
# spatial hash over processed vertices


@nb.njit(nogil=True, cache=True)
def _cell_key(p, d, inv_cell, o0, o1, o2):
    key = 0
    for i in range(min(d, 3)):
        c = int(math.floor(p[i] * inv_cell))
        if i == 0:
            c += o0
        elif i == 1:
            c += o1
        else:
            c += o2
        key = (key << _CELL_BITS) | (c & _CELL_MASK)
    return key


@nb.njit(nogil=True, cache=True)
def _retain_prob_exceeds(ip, fp, ktab, inv, pref, pos, midx, mval, head, nxt,
                         y, ic, vc, u, inv_cell):
    """True iff the product of (1 - phi) over hashed vertices near ``y`` exceeds ``u``."""
    d = ip[3]
    span = 1 if d >= 2 else 0
    span2 = 1 if d >= 3 else 0
    prod = 1.0
    dx = np.empty(d)
    for o0 in range(-1, 2):
        for o1 in range(-span, span + 1):
            for o2 in range(-span2, span2 + 1):
                key = _cell_key(y, d, inv_cell, o0, o1, o2)
                v = head[key] if key in head else -1
                while v >= 0:
                    for i in range(d):
                        dx[i] = y[i] - pos[v, i]
                    f = _phi(ip, fp, ktab, inv, pref, dx, midx[v], mval[v], ic, vc)
                    if f > 0.0:
                        prod *= 1.0 - f
                        if prod <= u:
                            return False
                    v = nxt[v]
    return True


@nb.njit(nogil=True, cache=True)
def _grow(a, n):
    shape = (n,) + a.shape[1:]
    b = np.empty(shape, dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


# ---------------------------------------------------------------------------
# exploration


@nb.njit(nogil=True, cache=True)
def explore_one(ip, fp, cumw, vals, dtab, dmax, ktab, chol, inv, pref,
                lam, root_idx, root_val, thinned, size_cap, gen_cap, radius_cap,
                has_target, tpos, t_idx, t_val, rng, out):
    """One rooted exploration.

    ``out`` receives (size, capped, generations, max_radius, root_degree,
    target_hit).  With ``thinned`` false the retention step is skipped and
    the result is the branching envelope.
    """
    d = ip[3]
    cap = min(size_cap, 256) + 1
    pos = np.zeros((cap, d))
    midx = np.empty(cap, dtype=np.int64)
    mval = np.empty(cap)
    gen = np.empty(cap, dtype=np.int64)
    nxt = np.empty(cap, dtype=np.int64)
    head = Dict.empty(key_type=types.int64, value_type=types.int64)
    rng_cell = fp[2]
    inv_cell = 1.0 / rng_cell if rng_cell > 0 else 1.0
    midx[0] = root_idx
    mval[0] = root_val
    gen[0] = 0
    n = 1
    q = 0
    capped = CAP_NONE
    maxgen = 0
    maxr = 0.0
    root_deg = 0
    hit = False
    if size_cap <= 1:
        capped = CAP_SIZE
        q = n
    y = np.empty(d)
    dx = np.empty(d)
    txd = np.empty(d)
    stop = False
    while q < n and not stop:
        x = q
        q += 1
        if gen[x] >= gen_cap:
            capped = CAP_GENERATION
            continue
        ib = midx[x]
        vb = mval[x]
        if has_target:
            for i in range(d):
                txd[i] = tpos[i] - pos[x, i]
            if rng.random() < _phi(ip, fp, ktab, inv, pref, txd, ib, vb, t_idx, t_val):
                hit = True
                break
        dm = _degree_max(ip, fp, dtab, dmax, ib, vb)
        if dm > 0.0 and lam > 0.0:
            k = rng.poisson(lam * dm)
            for _ in range(k):
                ic, vc = _sample_mark(ip, fp, cumw, vals, rng)
                if rng.random() * dm >= _degree(ip, fp, dtab, ib, vb, ic, vc):
                    continue
                _sample_disp(ip, fp, chol, dx, ib, vb, ic, vc, rng)
                for i in range(d):
                    y[i] = pos[x, i] + dx[i]
                if thinned:
                    u = rng.random()
                    if not _retain_prob_exceeds(ip, fp, ktab, inv, pref, pos, midx, mval,
                                                head, nxt, y, ic, vc, u, inv_cell):
                        continue
                if n >= pos.shape[0]:
                    newcap = min(2 * pos.shape[0], size_cap + 1)
                    pos = _grow(pos, newcap)
                    midx = _grow(midx, newcap)
                    mval = _grow(mval, newcap)
                    gen = _grow(gen, newcap)
                    nxt = _grow(nxt, newcap)
                r2 = 0.0
                for i in range(d):
                    pos[n, i] = y[i]
                    r2 += y[i] * y[i]
                midx[n] = ic
                mval[n] = vc
                gen[n] = gen[x] + 1
                if gen[n] > maxgen:
                    maxgen = gen[n]
                r = math.sqrt(r2)
                if r > maxr:
                    maxr = r
                if x == 0:
                    root_deg += 1
                n += 1
                if n >= size_cap:
                    capped = CAP_SIZE
                    stop = True
                    break
                if radius_cap > 0.0 and r > radius_cap:
                    capped = CAP_RADIUS
                    stop = True
                    break
        if thinned:
            key = _cell_key(pos[x], d, inv_cell, 0, 0, 0)
            nxt[x] = head[key] if key in head else -1
            head[key] = x
    out[0] = n
    out[1] = capped
    out[2] = maxgen
    out[3] = maxr
    out[4] = root_deg
    out[5] = 1.0 if hit else 0.0


@nb.njit(nogil=True, cache=True)
def explore_block(ip, fp, cumw, vals, dtab, dmax, ktab, chol, inv, pref,
                  lam, root_idx, root_val, thinned, size_cap, gen_cap, radius_cap,
                  has_target, tpos, t_idx, t_val, rng, n_runs):
    res = np.empty((n_runs, 6))
    for r in range(n_runs):
        explore_one(ip, fp, cumw, vals, dtab, dmax, ktab, chol, inv, pref,
                    lam, root_idx, root_val, thinned, size_cap, gen_cap, radius_cap,
                    has_target, tpos, t_idx, t_val, rng, res[r])
    return res


@nb.njit(nogil=True, cache=True)
def explore_coupled_one(ip, fp, cumw, vals, dtab, dmax, ktab, chol, inv, pref,
                        lam, root_idx, root_val, size_cap, gen_cap, radius_cap, rng, out):
    """Branching tree with a retention uniform per vertex, giving both laws at once.

    A vertex belongs to the thinned cluster when its parent does and its
    uniform lies below the non-connection probability to every thinned vertex
    processed before the parent.  ``out`` holds the thinned record followed by
    the branching one.
    """
    d = ip[3]
    cap = min(size_cap, 256) + 1
    pos = np.zeros((cap, d))
    midx = np.empty(cap, dtype=np.int64)
    mval = np.empty(cap)
    gen = np.empty(cap, dtype=np.int64)
    keep = np.empty(cap, dtype=np.bool_)
    nxt = np.empty(cap, dtype=np.int64)
    head = Dict.empty(key_type=types.int64, value_type=types.int64)
    rng_cell = fp[2]
    inv_cell = 1.0 / rng_cell if rng_cell > 0 else 1.0
    midx[0] = root_idx
    mval[0] = root_val
    gen[0] = 0
    keep[0] = True
    n = 1
    q = 0
    capped = CAP_NONE
    kn = 1
    kgen = 0
    kmaxr = 0.0
    kdeg = 0
    bgen = 0
    bmaxr = 0.0
    bdeg = 0
    if size_cap <= 1:
        capped = CAP_SIZE
        q = n
    y = np.empty(d)
    dx = np.empty(d)
    stop = False
    while q < n and not stop:
        x = q
        q += 1
        if gen[x] >= gen_cap:
            capped = CAP_GENERATION
            continue
        ib = midx[x]
        vb = mval[x]
        dm = _degree_max(ip, fp, dtab, dmax, ib, vb)
        if dm > 0.0 and lam > 0.0:
            k = rng.poisson(lam * dm)
            for _ in range(k):
                ic, vc = _sample_mark(ip, fp, cumw, vals, rng)
                if rng.random() * dm >= _degree(ip, fp, dtab, ib, vb, ic, vc):
                    continue
                _sample_disp(ip, fp, chol, dx, ib, vb, ic, vc, rng)
                for i in range(d):
                    y[i] = pos[x, i] + dx[i]
                u = rng.random()
                kept = False
                if keep[x]:
                    kept = _retain_prob_exceeds(ip, fp, ktab, inv, pref, pos, midx, mval,
                                                head, nxt, y, ic, vc, u, inv_cell)
                if n >= pos.shape[0]:
                    newcap = min(2 * pos.shape[0], size_cap + 1)
                    pos = _grow(pos, newcap)
                    midx = _grow(midx, newcap)
                    mval = _grow(mval, newcap)
                    gen = _grow(gen, newcap)
                    keep = _grow(keep, newcap)
                    nxt = _grow(nxt, newcap)
                r2 = 0.0
                for i in range(d):
                    pos[n, i] = y[i]
                    r2 += y[i] * y[i]
                r = math.sqrt(r2)
                midx[n] = ic
                mval[n] = vc
                gen[n] = gen[x] + 1
                keep[n] = kept
                bgen = max(bgen, gen[n])
                bmaxr = max(bmaxr, r)
                if x == 0:
                    bdeg += 1
                if kept:
                    kn += 1
                    kgen = max(kgen, gen[n])
                    kmaxr = max(kmaxr, r)
                    if x == 0:
                        kdeg += 1
                n += 1
                if n >= size_cap:
                    capped = CAP_SIZE
                    stop = True
                    break
                if radius_cap > 0.0 and r > radius_cap:
                    capped = CAP_RADIUS
                    stop = True
                    break
        if keep[x]:
            key = _cell_key(pos[x], d, inv_cell, 0, 0, 0)
            nxt[x] = head[key] if key in head else -1
            head[key] = x
    out[0] = kn
    out[1] = capped
    out[2] = kgen
    out[3] = kmaxr
    out[4] = kdeg
    out[5] = 0.0
    out[6] = n
    out[7] = capped
    out[8] = bgen
    out[9] = bmaxr
    out[10] = bdeg
    out[11] = 0.0


@nb.njit(nogil=True, cache=True)
def coupled_block(ip, fp, cumw, vals, dtab, dmax, ktab, chol, inv, pref,
                  lam, root_idx, root_val, size_cap, gen_cap, radius_cap, rng, n_runs):
    res = np.empty((n_runs, 12))
    for r in range(n_runs):
        explore_coupled_one(ip, fp, cumw, vals, dtab, dmax, ktab, chol, inv, pref,
                            lam, root_idx, root_val, size_cap, gen_cap, radius_cap, rng, res[r])
    return res
