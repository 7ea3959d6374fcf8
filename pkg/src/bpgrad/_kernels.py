"""Compiled inner loops for the Monte Carlo gradient estimator.

Everything here consumes integer generator codes and precomputed cos/sin
half-angle tables; no objects cross the boundary.  Two chunk drivers exist:
a dense statevector path (any entangler) and a per-block product path (only
valid when the entangler is "none", where the state never entangles across
blocks and a register-wide simulation would waste exponential work).

Gradients are parameter-shift values: g = (loss(t + pi/2) - loss(t - pi/2))/2.
The shifted half-angles come from exact quarter-turn identities on the stored
cos/sin pair, so the kernels never call trig functions.  A target index of -1
is a sentinel for "this draw has identically zero gradient" (pruned slot or a
slot outside the observable's light cone); those rows short-circuit to 0.0.

Convention notes (must match `simulator.apply_rotation` / `pauli`):
rotation R = cos(t/2) I - i sin(t/2) P with P|b> = i^{n_Y} (-1)^{pop(b & z)}
|b xor x>; qubit 0 is the most significant amplitude-index bit.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_INV_SQRT2 = 0.7071067811865476


@njit(cache=True, nogil=True)
def _parity(v):
    v ^= v >> 32
    v ^= v >> 16
    v ^= v >> 8
    v ^= v >> 4
    v ^= v >> 2
    v ^= v >> 1
    return v & 1


@njit(cache=True, nogil=True)
def _rotate(state, xg, zg, pref, ypar, c, s):
    """In-place R(t)|state> given cos(t/2), sin(t/2) and the generator masks."""
    dim = state.shape[0]
    if xg == 0:
        if zg == 0:
            # identity generator: global phase exp(-i t/2)
            ph = complex(c, -s)
            for b in range(dim):
                state[b] *= ph
        else:
            for b in range(dim):
                if _parity(b & zg) == 1:
                    state[b] *= complex(c, s)
                else:
                    state[b] *= complex(c, -s)
    else:
        piv = xg & (-xg)
        low = piv - 1
        m = complex(0.0, -s) * pref
        half = dim >> 1
        for i in range(half):
            b0 = ((i & ~low) << 1) | (i & low)
            b1 = b0 ^ xg
            sgn = 1.0 - 2.0 * _parity(b0 & zg)
            a0 = state[b0]
            a1 = state[b1]
            mm = m * sgn
            state[b0] = c * a0 + mm * ypar * a1
            state[b1] = c * a1 + mm * a0


@njit(cache=True, nogil=True)
def _entangle(state, scratch, kind, signs, src):
    dim = state.shape[0]
    if kind == 1:  # cz brick: diagonal signs
        for b in range(dim):
            state[b] *= signs[b]
    elif kind == 2:  # cx brick: basis permutation
        for b in range(dim):
            scratch[b] = state[src[b]]
        for b in range(dim):
            state[b] = scratch[b]


@njit(cache=True, nogil=True)
def _expect(state, ox, oz, opref):
    """<state| P |state> for the Pauli string with masks (ox, oz)."""
    dim = state.shape[0]
    acc = 0.0 + 0.0j
    for b in range(dim):
        sgn = 1.0 - 2.0 * _parity(b & oz)
        acc += np.conj(state[b ^ ox]) * (sgn * state[b])
    return (opref * acc).real


@njit(cache=True, nogil=True)
def _apply_slots(state, scratch, slot_lo, slot_hi, p, skip_first_rotation,
                 active_slots, codes_r, coss_r, sins_r,
                 pool_x, pool_z, pool_pref, pool_ypar, shifts, nblocks,
                 ent_kind, cz_signs, cx_src):
    """Apply slots [slot_lo, slot_hi): active rotations plus layer-end bricks.

    `p` points at the next active-slot position; the updated value is
    returned so callers can resume.  With skip_first_rotation the rotation at
    slot_lo is assumed already applied (branch runs), but a layer boundary at
    slot_lo still fires.
    """
    na = active_slots.shape[0]
    for slot in range(slot_lo, slot_hi):
        if slot > slot_lo or not skip_first_rotation:
            if p < na and active_slots[p] == slot:
                code = codes_r[p]
                sh = shifts[slot % nblocks]
                _rotate(state, pool_x[code] << sh, pool_z[code] << sh,
                        pool_pref[code], pool_ypar[code], coss_r[p], sins_r[p])
                p += 1
        if slot % nblocks == nblocks - 1:
            _entangle(state, scratch, ent_kind, cz_signs, cx_src)
    return p


@njit(cache=True, nogil=True)
def _chunk_dense(codes, coss, sins, ks, active_slots, total_slots, nblocks, n,
                 pool_x, pool_z, pool_pref, pool_ypar, shifts,
                 ent_kind, cz_signs, cx_src, obs_x, obs_z, obs_pref,
                 init_plus, out):
    rows = codes.shape[0]
    dim = 1 << n
    amp0 = 1.0 / np.sqrt(dim)
    state = np.empty(dim, np.complex128)
    branch = np.empty(dim, np.complex128)
    scratch = np.empty(dim, np.complex128)
    for r in range(rows):
        k = ks[r]
        if k < 0:
            out[r] = 0.0
            continue
        if init_plus == 1:
            for b in range(dim):
                state[b] = amp0
        else:
            for b in range(dim):
                state[b] = 0.0
            state[0] = 1.0
        k_slot = active_slots[k]
        _apply_slots(state, scratch, 0, k_slot, 0, False, active_slots,
                     codes[r], coss[r], sins[r], pool_x, pool_z, pool_pref,
                     pool_ypar, shifts, nblocks, ent_kind, cz_signs, cx_src)
        code = codes[r, k]
        sh = shifts[k_slot % nblocks]
        xg = pool_x[code] << sh
        zg = pool_z[code] << sh
        pref = pool_pref[code]
        ypar = pool_ypar[code]
        c = coss[r, k]
        s = sins[r, k]
        for b in range(dim):
            branch[b] = state[b]
        _rotate(branch, xg, zg, pref, ypar,
                (c - s) * _INV_SQRT2, (s + c) * _INV_SQRT2)
        _apply_slots(branch, scratch, k_slot, total_slots, k + 1, True,
                     active_slots, codes[r], coss[r], sins[r], pool_x, pool_z,
                     pool_pref, pool_ypar, shifts, nblocks, ent_kind,
                     cz_signs, cx_src)
        e_plus = _expect(branch, obs_x, obs_z, obs_pref)
        _rotate(state, xg, zg, pref, ypar,
                (c + s) * _INV_SQRT2, (s - c) * _INV_SQRT2)
        _apply_slots(state, scratch, k_slot, total_slots, k + 1, True,
                     active_slots, codes[r], coss[r], sins[r], pool_x, pool_z,
                     pool_pref, pool_ypar, shifts, nblocks, ent_kind,
                     cz_signs, cx_src)
        e_minus = _expect(state, obs_x, obs_z, obs_pref)
        out[r] = 0.5 * (e_plus - e_minus)


@njit(cache=True, nogil=True)
def _chunk_product(codes, coss, sins, ks, active_slots, nblocks, s_width,
                   block_ptr, block_pos,
                   pool_x, pool_z, pool_pref, pool_ypar,
                   obs_x_loc, obs_z_loc, obs_pref_loc, init_plus, out):
    """Entangler-free path: the loss is a product of per-block expectations.

    block_ptr/block_pos form a CSR layout: block b's active positions, in
    circuit order, are block_pos[block_ptr[b]:block_ptr[b+1]].  Blocks where
    the observable restricts to identity contribute an exact factor 1 (the
    chain is norm-preserving) and are skipped.
    """
    rows = codes.shape[0]
    dim = 1 << s_width
    amp0 = 1.0 / np.sqrt(dim)
    chi = np.empty(dim, np.complex128)
    chib = np.empty(dim, np.complex128)
    for r in range(rows):
        k = ks[r]
        if k < 0:
            out[r] = 0.0
            continue
        bk = active_slots[k] % nblocks
        other = 1.0
        gk = 0.0
        for b in range(nblocks):
            if b != bk and obs_x_loc[b] == 0 and obs_z_loc[b] == 0:
                continue
            if init_plus == 1:
                for i in range(dim):
                    chi[i] = amp0
            else:
                for i in range(dim):
                    chi[i] = 0.0
                chi[0] = 1.0
            if b == bk:
                idx = block_ptr[b]
                while block_pos[idx] != k:
                    p = block_pos[idx]
                    code = codes[r, p]
                    _rotate(chi, pool_x[code], pool_z[code], pool_pref[code],
                            pool_ypar[code], coss[r, p], sins[r, p])
                    idx += 1
                code = codes[r, k]
                c = coss[r, k]
                s = sins[r, k]
                for i in range(dim):
                    chib[i] = chi[i]
                _rotate(chi, pool_x[code], pool_z[code], pool_pref[code],
                        pool_ypar[code],
                        (c - s) * _INV_SQRT2, (s + c) * _INV_SQRT2)
                _rotate(chib, pool_x[code], pool_z[code], pool_pref[code],
                        pool_ypar[code],
                        (c + s) * _INV_SQRT2, (s - c) * _INV_SQRT2)
                idx += 1
                while idx < block_ptr[b + 1]:
                    p = block_pos[idx]
                    code = codes[r, p]
                    _rotate(chi, pool_x[code], pool_z[code], pool_pref[code],
                            pool_ypar[code], coss[r, p], sins[r, p])
                    _rotate(chib, pool_x[code], pool_z[code], pool_pref[code],
                            pool_ypar[code], coss[r, p], sins[r, p])
                    idx += 1
                ep = _expect(chi, obs_x_loc[b], obs_z_loc[b], obs_pref_loc[b])
                em = _expect(chib, obs_x_loc[b], obs_z_loc[b], obs_pref_loc[b])
                gk = 0.5 * (ep - em)
            else:
                for idx in range(block_ptr[b], block_ptr[b + 1]):
                    p = block_pos[idx]
                    code = codes[r, p]
                    _rotate(chi, pool_x[code], pool_z[code], pool_pref[code],
                            pool_ypar[code], coss[r, p], sins[r, p])
                other *= _expect(chi, obs_x_loc[b], obs_z_loc[b],
                                 obs_pref_loc[b])
        out[r] = other * gk
