"""Pure numpy implementation of the Euler-Maruyama ensemble kernel.

Same signature and semantics as :func:`ppcat._kernels.advance`; vectorized
across trajectories instead of looping over them.
"""

from __future__ import annotations

import math

import numpy as np

from .rng import normal_pairs

DECOMP_DIAG, DECOMP_SPLIT = 0, 1
GAUGE_NONE, GAUGE_CHOICE1, GAUGE_CHOICE2 = 0, 1, 2


def _noise(seed, traj, step, pair, scale):
    z0, z1 = normal_pairs(seed, traj, step, pair)
    return z0 * scale, z1 * scale


def advance(alpha, beta, weight, diverged_step, eps, kappa2, onsite, ridx, rcoef, lidx, lcoef,
            decomp, gauge, dt, noise_scale, seed, traj_offset, step0, nsteps, threshold,
            nthreads=1):
    """Advance every live trajectory in place by ``nsteps`` steps."""
    if nsteps <= 0 or alpha.shape[0] == 0:
        return
    live = np.flatnonzero(diverged_step < 0)
    if live.size == 0:
        return
    a = alpha[live].copy()
    b = beta[live].copy()
    w = weight[live].copy()
    traj = (np.uint64(traj_offset) + live.astype(np.uint64))[:, None]
    sites = np.arange(a.shape[1], dtype=np.uint64)[None, :]
    scale = math.sqrt(dt) * noise_scale
    sk2 = math.sqrt(kappa2)
    eps_c = np.conj(eps)
    rc_c, lc_c = np.conj(rcoef), np.conj(lcoef)
    active = np.ones(live.size, dtype=bool)
    failed_at = np.full(live.size, -1, dtype=np.int64)
    for s in range(nsteps):
        step = np.uint64(step0 + s)
        lin_a = -onsite * a + rcoef * a[:, ridx] + lcoef * a[:, lidx]
        lin_b = -onsite * b + rc_c * b[:, ridx] + lc_c * b[:, lidx]
        dw_sum = None
        if decomp == DECOMP_DIAG:
            z0, z1 = _noise(seed, traj, step, sites, scale)
            sa = np.sqrt(-kappa2 * a * a - 2j * eps)
            sb = np.sqrt(-kappa2 * b * b + 2j * eps_c)
            if gauge == GAUGE_CHOICE2:
                da = -np.abs(2j * eps + kappa2 * a * a) * a
                db = -np.abs(2j * eps_c - kappa2 * b * b) * b
                g0 = b * sa + a * np.conj(sa)
                g1 = a * sb + b * np.conj(sb)
                dw_sum = (g0 * z0 + g1 * z1).sum(axis=1)
            else:
                da = (-kappa2 * a * a - 2j * eps) * b
                db = (-kappa2 * b * b + 2j * eps_c) * a
            na = a + (da + lin_a) * dt + sa * z0
            nb = b + (db + lin_b) * dt + sb * z1
        else:
            z0, z1 = _noise(seed, traj, step, 2 * sites, scale)
            z2, z3 = _noise(seed, traj, step, 2 * sites + np.uint64(1), scale)
            s0 = np.sqrt(-2j * eps)
            s1 = np.sqrt(2j * eps_c)
            if gauge == GAUGE_CHOICE1:
                r = np.abs(a * b)
                da = -kappa2 * a * r
                db = -kappa2 * b * r
                cubic = 1j * sk2 * (a * b - r)
                dw_sum = (b * s0 * z0 + a * s1 * z1 + cubic * (z2 + z3)).sum(axis=1)
            else:
                da = (-kappa2 * a * a - 2j * eps) * b
                db = (-kappa2 * b * b + 2j * eps_c) * a
            na = a + (da + lin_a) * dt + s0 * z0 + 1j * a * sk2 * z2
            nb = b + (db + lin_b) * dt + s1 * z1 + 1j * b * sk2 * z3
        with np.errstate(all="ignore"):
            ok = (np.isfinite(na) & np.isfinite(nb)
                  & (np.abs(na) <= threshold) & (np.abs(nb) <= threshold)).all(axis=1)
            if dw_sum is not None:
                nw = w * (1.0 + dw_sum)
                ok &= np.isfinite(nw)
        newly = active & ~ok
        failed_at[newly] = step0 + s
        active &= ok
        a = np.where(active[:, None], na, a)
        b = np.where(active[:, None], nb, b)
        if dw_sum is not None:
            w = np.where(active, nw, w)
        if not active.any():
            break
    alpha[live] = a
    beta[live] = b
    weight[live] = w
    diverged_step[live] = np.where(failed_at >= 0, failed_at, diverged_step[live])
