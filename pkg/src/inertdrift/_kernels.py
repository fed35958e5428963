"""Compiled inner loops shared by the integrator, renewal, stationary and bounds
modules.

All kernels apply the same discrete Skorohod step

    h* = h + v dt - dB,  dL = max(0, -h*),  h' = h* + dL,
    v' = v - (gamma v + g) dt + dL,  s' = s + v dt,

with the Brownian increment of absolute step ``k`` taken from normal number
``k`` of the Philox stream ``(seed, stream)``.  Keeping the noise index tied to
the absolute step is what lets a path be cut into pieces, or restarted at a
recorded state, without changing a single bit.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np

from .rng import AUX_DOMAIN, normal_pair, uniform_pair

# exit codes of run_exits
TIMEOUT, HIT_V_LO, HIT_V_HI, HIT_H_HI, HIT_CONTACT = 0, 1, 2, 3, 4

# columns of the per-cycle table returned by run_cycles
CYC_FIELDS = ("t_start", "t_end", "n_steps", "max_v", "max_h",
              "end_step", "end_h", "end_v", "end_s", "end_b", "end_l")


@nb.njit(cache=True, inline="always")
def _bin(x, lo, inv_w, n):
    """Slot of ``x`` in a uniform binning with underflow 0 and overflow n+1."""
    if x < lo:
        return 0
    j = int((x - lo) * inv_w)
    return j + 1 if j < n else n + 1


@nb.njit(cache=True, inline="always")
def _bulk_slot(h, v, spec, nh, nv):
    """Flat index into an (nh*nv + 1) array; the last slot holds overflow."""
    if h < spec[0] or v < spec[3]:
        return nh * nv
    ih = int((h - spec[0]) * spec[2])
    iv = int((v - spec[3]) * spec[5])
    if ih >= nh or iv >= nv:
        return nh * nv
    return ih * nv + iv


@nb.njit(cache=True)
def run_path(h, v, s, b, l, k0, n_steps, stride, dt, gamma, g, seed, stream, scale):
    """Integrate ``n_steps`` steps, recording every ``stride``-th state and the
    last one.  Columns: t, h, v, s, x, b, l."""
    n_rec = n_steps // stride + 1
    if n_steps % stride != 0:
        n_rec += 1
    rec = np.empty((n_rec, 7))
    sq = scale * math.sqrt(dt)
    rec[0, 0] = k0 * dt
    rec[0, 1] = h
    rec[0, 2] = v
    rec[0, 3] = s
    rec[0, 4] = s - h
    rec[0, 5] = b
    rec[0, 6] = l
    r = 1
    cur = np.uint64(0xFFFFFFFFFFFFFFFF)
    z0 = 0.0
    z1 = 0.0
    for i in range(n_steps):
        k = k0 + i
        if sq != 0.0:
            pk = np.uint64(k) >> np.uint64(1)
            if pk != cur:
                z0, z1 = normal_pair(seed, stream, pk)
                cur = pk
            dB = (z0 if (k & 1) == 0 else z1) * sq
        else:
            dB = 0.0
        hs = h + v * dt - dB
        dl = -hs if hs < 0.0 else 0.0
        s += v * dt
        v = v - (gamma * v + g) * dt + dl
        h = hs + dl
        b += dB
        l += dl
        if (i + 1) % stride == 0 or i + 1 == n_steps:
            rec[r, 0] = (k + 1) * dt
            rec[r, 1] = h
            rec[r, 2] = v
            rec[r, 3] = s
            rec[r, 4] = s - h
            rec[r, 5] = b
            rec[r, 6] = l
            r += 1
    return rec[:r]


@nb.njit(cache=True)
def run_given(h, v, dB, dt, gamma, g):
    """Terminal (h, v) of a path driven by explicit increments ``dB``."""
    out = np.empty(2)
    for i in range(dB.shape[0]):
        hs = h + v * dt - dB[i]
        dl = -hs if hs < 0.0 else 0.0
        v = v - (gamma * v + g) * dt + dl
        h = hs + dl
    out[0] = h
    out[1] = v
    return out


@nb.njit(cache=True)
def run_segments(h, v, s, b, l, k0, seg_ends, dt, gamma, g, seed, stream, scale,
                 bridge=False):
    """Run to each absolute step in ``seg_ends``; per segment return the end
    state (t, h, v, s, b, l) and the maxima of v and h over the segment.

    With ``bridge`` set the local-time increment is the exact one for the
    step's frozen-drift Brownian path: its running minimum is drawn from the
    Brownian-bridge law instead of being read off the endpoint only.
    """
    m = seg_ends.shape[0]
    out = np.empty((m, 8))
    sq = scale * math.sqrt(dt)
    cur = np.uint64(0xFFFFFFFFFFFFFFFF)
    z0 = 0.0
    z1 = 0.0
    k = k0
    for j in range(m):
        mv = v
        mh = h
        while k < seg_ends[j]:
            if sq != 0.0:
                pk = np.uint64(k) >> np.uint64(1)
                if pk != cur:
                    z0, z1 = normal_pair(seed, stream, pk)
                    cur = pk
                dB = (z0 if (k & 1) == 0 else z1) * sq
            else:
                dB = 0.0
            hs = h + v * dt - dB
            if bridge and sq != 0.0:
                u, _ = uniform_pair(seed, stream, AUX_DOMAIN | np.uint64(k))
                low = 0.5 * (h + hs - math.sqrt((hs - h) ** 2 - 2.0 * sq * sq * math.log(1.0 - u)))
                dl = -low if low < 0.0 else 0.0
            else:
                dl = -hs if hs < 0.0 else 0.0
            s += v * dt
            v = v - (gamma * v + g) * dt + dl
            h = hs + dl
            b += dB
            l += dl
            k += 1
            if v > mv:
                mv = v
            if h > mh:
                mh = h
        out[j, 0] = k * dt
        out[j, 1] = h
        out[j, 2] = v
        out[j, 3] = s
        out[j, 4] = b
        out[j, 5] = l
        out[j, 6] = mv
        out[j, 7] = mh
    return out


@nb.njit(cache=True, inline="always")
def _deposit(row, h, v, w, bspec, nh, nv, vspec, nvm, hspec, nhm, out_b, out_v, out_h):
    """Add weight ``w`` at (h, v) to row ``row`` of the three histograms."""
    out_b[row, _bulk_slot(h, v, bspec, nh, nv)] += w
    out_v[row, _bin(v, vspec[0], vspec[2], nvm)] += w
    out_h[row, _bin(h, hspec[0], hspec[2], nhm)] += w


@nb.njit(cache=True)
def _undo_cycle(row, h, v, k, n_steps, head, dt, gamma, g, seed, stream, scale, rv,
                bspec, nh, nv, vspec, nvm, hspec, nhm, out_b, out_v, out_h):
    """Replay an aborted cycle from its start and remove its deposits.

    The replay draws the same increments, so it retraces the deposits of the
    original pass exactly; ``head`` is the renewal-point weight it began with.
    """
    if head > 0.0:
        _deposit(row, 0.0, rv, -head, bspec, nh, nv, vspec, nvm, hspec, nhm, out_b, out_v, out_h)
    sq = scale * math.sqrt(dt)
    for i in range(n_steps):
        _deposit(row, h, v, -dt, bspec, nh, nv, vspec, nvm, hspec, nhm, out_b, out_v, out_h)
        kk = k + i
        if sq != 0.0:
            z0, z1 = normal_pair(seed, stream, np.uint64(kk) >> np.uint64(1))
            dB = (z0 if (kk & 1) == 0 else z1) * sq
        else:
            dB = 0.0
        hs = h + v * dt - dB
        dl = -hs if hs < 0.0 else 0.0
        v = v - (gamma * v + g) * dt + dl
        h = hs + dl


@nb.njit(cache=True)
def run_cycles(h, v, s, b, l, k0, dt, gamma, g, seed, stream, scale,
               a, bb, rv, n_cycles, max_cycle_steps, max_aborts, discard_first,
               bspec, nh, nv, vspec, nvm, hspec, nhm, out_b, out_v, out_h):
    """Split one path into regeneration cycles.

    Phase 1 waits for v to reach level ``a`` or ``bb``; phase 2 fires on the
    first upcrossing of ``rv`` in a contact step.  Occupation is deposited
    with left-point weights, the firing step split at the interpolated
    crossing so that each cycle's mass equals its duration.  Valid cycle j is
    accumulated into row ``j % n_groups`` of the output histograms, which
    carry one extra trailing row that absorbs discarded partial cycles.

    ``bspec`` = (h_lo, h_hi, 1/h_width, v_lo, v_hi, 1/v_width); ``vspec`` and
    ``hspec`` = (lo, hi, 1/width) for the fine marginals.
    """
    n_groups = out_b.shape[0] - 1
    trash = n_groups
    cyc = np.zeros((n_cycles, 11))
    sq = scale * math.sqrt(dt)
    cur = np.uint64(0xFFFFFFFFFFFFFFFF)
    z0 = 0.0
    z1 = 0.0

    k = k0
    phase = 1
    n_valid = 0
    n_aborted = 0
    n_partial = 0
    row = trash if discard_first else 0
    t_start = k * dt
    csteps = 0
    mv = v
    mh = h
    theta = 0.0
    t_fire = 0.0
    # start of the current cycle, kept for undoing an abort
    h_c = h
    v_c = v
    k_c = k
    head = 0.0
    while n_valid < n_cycles and n_aborted <= max_aborts:
        if sq != 0.0:
            pk = np.uint64(k) >> np.uint64(1)
            if pk != cur:
                z0, z1 = normal_pair(seed, stream, pk)
                cur = pk
            dB = (z0 if (k & 1) == 0 else z1) * sq
        else:
            dB = 0.0
        hs = h + v * dt - dB
        dl = -hs if hs < 0.0 else 0.0
        hn = hs + dl
        vn = v - (gamma * v + g) * dt + dl

        fire = False
        if phase == 1:
            if (v - a) * (vn - a) <= 0.0 or (v - bb) * (vn - bb) <= 0.0:
                phase = 2
        elif dl > 0.0 and v < rv and vn >= rv:
            fire = True

        if v > mv:
            mv = v
        if h > mh:
            mh = h
        csteps += 1
        if fire:
            theta = (rv - v) / (vn - v)
            if theta > 0.0:
                _deposit(row, h, v, theta * dt, bspec, nh, nv, vspec, nvm, hspec, nhm,
                         out_b, out_v, out_h)
            t_fire = (k + theta) * dt
        else:
            _deposit(row, h, v, dt, bspec, nh, nv, vspec, nvm, hspec, nhm,
                     out_b, out_v, out_h)

        s += v * dt
        b += dB
        l += dl
        h = hn
        v = vn
        k += 1

        if fire:
            if row == trash:
                n_partial += 1
            else:
                c = cyc[n_valid]
                c[0] = t_start
                c[1] = t_fire
                c[2] = csteps
                c[3] = mv
                c[4] = mh
                c[5] = k
                c[6] = h
                c[7] = v
                c[8] = s
                c[9] = b
                c[10] = l
                n_valid += 1
            # the next cycle starts at the renewal point
            row = n_valid % n_groups
            phase = 1
            t_start = t_fire
            csteps = 0
            mv = rv
            mh = 0.0
            h_c = h
            v_c = v
            k_c = k
            head = (1.0 - theta) * dt
            if head > 0.0 and n_valid < n_cycles:
                _deposit(row, 0.0, rv, head, bspec, nh, nv, vspec, nvm, hspec, nhm,
                         out_b, out_v, out_h)
        elif csteps >= max_cycle_steps:
            n_aborted += 1
            if row != trash:
                _undo_cycle(row, h_c, v_c, k_c, k - k_c, head, dt, gamma, g, seed, stream,
                            scale, rv, bspec, nh, nv, vspec, nvm, hspec, nhm,
                            out_b, out_v, out_h)
            # the remainder up to the next renewal is not a full cycle
            row = trash
            phase = 1
            t_start = k * dt
            csteps = 0
            mv = v
            mh = h
    return cyc[:n_valid], n_aborted, n_partial, k, h, v, s, b, l


@nb.njit(cache=True)
def run_occupation(h, v, s, b, l, k0, n_steps, dt, gamma, g, seed, stream, scale,
                   bspec, nh, nv, vspec, nvm, hspec, nhm, out_b, out_v, out_h):
    """Time-average occupation of ``n_steps`` steps (left-point weights dt)."""
    sq = scale * math.sqrt(dt)
    cur = np.uint64(0xFFFFFFFFFFFFFFFF)
    z0 = 0.0
    z1 = 0.0
    for i in range(n_steps):
        k = k0 + i
        out_b[_bulk_slot(h, v, bspec, nh, nv)] += dt
        out_v[_bin(v, vspec[0], vspec[2], nvm)] += dt
        out_h[_bin(h, hspec[0], hspec[2], nhm)] += dt
        if sq != 0.0:
            pk = np.uint64(k) >> np.uint64(1)
            if pk != cur:
                z0, z1 = normal_pair(seed, stream, pk)
                cur = pk
            dB = (z0 if (k & 1) == 0 else z1) * sq
        else:
            dB = 0.0
        hs = h + v * dt - dB
        dl = -hs if hs < 0.0 else 0.0
        s += v * dt
        v = v - (gamma * v + g) * dt + dl
        h = hs + dl
        b += dB
        l += dl
    return k0 + n_steps, h, v, s, b, l


@nb.njit(cache=True)
def run_ensemble(h0, v0, n_chains, stream0, seed, scale, dt, gamma, g, check_steps):
    """(h, v) of ``n_chains`` independent chains (streams stream0 + i) at each
    step count in ``check_steps``."""
    m = check_steps.shape[0]
    out = np.empty((m, n_chains, 2))
    sq = scale * math.sqrt(dt)
    for i in range(n_chains):
        st = np.uint64(stream0 + i)
        h = h0
        v = v0
        k = 0
        z0 = 0.0
        z1 = 0.0
        for j in range(m):
            while k < check_steps[j]:
                if sq != 0.0:
                    if (k & 1) == 0:
                        z0, z1 = normal_pair(seed, st, np.uint64(k >> 1))
                        dB = z0 * sq
                    else:
                        dB = z1 * sq
                else:
                    dB = 0.0
                hs = h + v * dt - dB
                dl = -hs if hs < 0.0 else 0.0
                v = v - (gamma * v + g) * dt + dl
                h = hs + dl
                k += 1
            out[j, i, 0] = h
            out[j, i, 1] = v
    return out


@nb.njit(cache=True)
def run_exits(h0, v0, k0, streams, seed, scale, dt, gamma, g,
              v_lo, v_hi, h_hi, stop_contact, max_steps, bridge):
    """First exit of each trial from {v_lo < v < v_hi, h < h_hi, no contact}.

    Returns per trial: exit code, interpolated absolute exit time, the state
    (h, v) and absolute step after the exit step, and maxima of v and h.
    With ``bridge`` set, a Brownian-bridge test also catches contacts and
    h_hi crossings that happen strictly inside a step.
    """
    n = h0.shape[0]
    code = np.zeros(n, np.int8)
    t_exit = np.empty(n)
    hf = np.empty(n)
    vf = np.empty(n)
    kf = np.empty(n, np.int64)
    mvs = np.empty(n)
    mhs = np.empty(n)
    sq = scale * math.sqrt(dt)
    var = sq * sq
    for i in range(n):
        h = h0[i]
        v = v0[i]
        k = k0[i]
        st = np.uint64(streams[i])
        mv = v
        mh = h
        c = TIMEOUT
        te = (k + max_steps) * dt
        if v <= v_lo:
            c = HIT_V_LO
        elif v >= v_hi:
            c = HIT_V_HI
        elif h >= h_hi:
            c = HIT_H_HI
        elif stop_contact and h <= 0.0:
            c = HIT_CONTACT
        if c != TIMEOUT:
            te = k * dt
        cur = np.uint64(0xFFFFFFFFFFFFFFFF)
        z0 = 0.0
        z1 = 0.0
        j = 0
        while c == TIMEOUT and j < max_steps:
            if sq != 0.0:
                pk = np.uint64(k) >> np.uint64(1)
                if pk != cur:
                    z0, z1 = normal_pair(seed, st, pk)
                    cur = pk
                dB = (z0 if (k & 1) == 0 else z1) * sq
            else:
                dB = 0.0
            hs = h + v * dt - dB
            dl = -hs if hs < 0.0 else 0.0
            hn = hs + dl
            vn = v - (gamma * v + g) * dt + dl
            if vn <= v_lo:
                c = HIT_V_LO
                te = (k + (v - v_lo) / (v - vn)) * dt
            elif vn >= v_hi:
                c = HIT_V_HI
                te = (k + (v_hi - v) / (vn - v)) * dt
            elif hn >= h_hi:
                c = HIT_H_HI
                te = (k + (h_hi - h) / (hn - h)) * dt
            elif stop_contact and dl > 0.0:
                c = HIT_CONTACT
                te = (k + h / (h - hs)) * dt
            elif bridge and var > 0.0:
                if stop_contact and h > 0.0:
                    u, _ = uniform_pair(seed, st, AUX_DOMAIN | np.uint64(k))
                    if u < math.exp(-2.0 * h * hn / var):
                        c = HIT_CONTACT
                        te = (k + 0.5) * dt
                if c == TIMEOUT and h_hi < np.inf:
                    _, u = uniform_pair(seed, st, AUX_DOMAIN | np.uint64(k))
                    if u < math.exp(-2.0 * (h_hi - h) * (h_hi - hn) / var):
                        c = HIT_H_HI
                        te = (k + 0.5) * dt
            h = hn
            v = vn
            k += 1
            j += 1
            if v > mv:
                mv = v
            if h > mh:
                mh = h
        code[i] = c
        t_exit[i] = te
        hf[i] = h
        vf[i] = v
        kf[i] = k
        mvs[i] = mv
        mhs[i] = mh
    return code, t_exit, hf, vf, kf, mvs, mhs
