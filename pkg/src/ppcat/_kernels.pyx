# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Euler-Maruyama kernel for positive-P / gauge-P ensembles.

Mirrors :mod:`ppcat._fallback` operation for operation.  Noise comes from
the Philox4x32-10 counter mapping of :mod:`ppcat.rng`, evaluated inline, so
each trajectory is an independent work item and the thread count never
changes the result.
"""

from cython.parallel cimport prange
from libc.math cimport sqrt, log, sin, cos, isfinite, M_PI
from libc.stdlib cimport malloc, free
from libc.stdint cimport uint32_t, uint64_t, int64_t

cdef extern from "<complex.h>" nogil:
    double complex csqrt(double complex)
    double cabs(double complex)
    double creal(double complex)
    double cimag(double complex)
    double complex conj(double complex)

cdef enum:
    DECOMP_DIAG = 0
    DECOMP_SPLIT = 1
    GAUGE_NONE = 0
    GAUGE_CHOICE1 = 1
    GAUGE_CHOICE2 = 2


cdef inline void philox(uint32_t c0, uint32_t c1, uint32_t c2, uint32_t c3,
                        uint32_t k0, uint32_t k1, uint32_t* out) noexcept nogil:
    cdef uint64_t p0, p1
    cdef int r
    for r in range(10):
        if r:
            k0 = k0 + <uint32_t>0x9E3779B9
            k1 = k1 + <uint32_t>0xBB67AE85
        p0 = <uint64_t>0xD2511F53 * c0
        p1 = <uint64_t>0xCD9E8D57 * c2
        c0, c1, c2, c3 = (<uint32_t>(p1 >> 32)) ^ c1 ^ k0, <uint32_t>p1, \
                         (<uint32_t>(p0 >> 32)) ^ c3 ^ k1, <uint32_t>p0
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


cdef inline double uniform53(uint32_t hi, uint32_t lo) noexcept nogil:
    return ((<double>(hi >> 5)) * 67108864.0 + <double>(lo >> 6) + 0.5) * (1.0 / 9007199254740992.0)


cdef inline void normal_pair(uint64_t seed, uint64_t traj, uint64_t step, uint32_t pair,
                             double* z) noexcept nogil:
    cdef uint32_t x[4]
    cdef double u1, u2, r
    philox(<uint32_t>traj, <uint32_t>step, pair, <uint32_t>(step >> 32),
           <uint32_t>seed, <uint32_t>(seed >> 32), x)
    u1 = uniform53(x[0], x[1])
    u2 = uniform53(x[2], x[3])
    r = sqrt(-2.0 * log(u1))
    z[0] = r * cos(2.0 * M_PI * u2)
    z[1] = r * sin(2.0 * M_PI * u2)


def normal_pairs_c(uint64_t seed, uint64_t traj, uint64_t step, uint32_t pair):
    """Two standard normals for one counter value (test hook)."""
    cdef double z[2]
    normal_pair(seed, traj, step, pair, z)
    return z[0], z[1]


cdef int advance_one(double complex* a, double complex* b, double complex* w,
                     double complex* na, double complex* nb,
                     Py_ssize_t nsite, const double complex* eps,
                     double kappa2, const double* onsite,
                     const int64_t* ridx, const double complex* rcoef,
                     const int64_t* lidx, const double complex* lcoef,
                     int decomp, int gauge, double dt, double noise_scale,
                     uint64_t seed, uint64_t traj, int64_t step0, int64_t nsteps,
                     double threshold) noexcept nogil:
    """Advance one trajectory; return the number of completed steps.

    A return value below ``nsteps`` means the trajectory diverged on the next
    step and has been left at its last finite state.
    """
    cdef int64_t s
    cdef Py_ssize_t j
    cdef double sq_dt = sqrt(dt)
    cdef double sk2 = sqrt(kappa2)
    cdef double z[2]
    cdef double z2[2]
    cdef double complex aj, bj, ej, lin_a, lin_b, da, db, sa, sb, g0, g1, g2, s0, s1, cubic
    cdef double complex dw_sum, nw
    cdef double r
    cdef int bad
    for s in range(nsteps):
        dw_sum = 0
        bad = 0
        for j in range(nsite):
            aj = a[j]
            bj = b[j]
            ej = eps[j]
            lin_a = -onsite[j] * aj + rcoef[j] * a[ridx[j]] + lcoef[j] * a[lidx[j]]
            lin_b = -onsite[j] * bj + conj(rcoef[j]) * b[ridx[j]] + conj(lcoef[j]) * b[lidx[j]]
            if decomp == DECOMP_DIAG:
                normal_pair(seed, traj, <uint64_t>(step0 + s), <uint32_t>j, z)
                z[0] *= sq_dt * noise_scale
                z[1] *= sq_dt * noise_scale
                sa = csqrt(-kappa2 * aj * aj - 2j * ej)
                sb = csqrt(-kappa2 * bj * bj + 2j * conj(ej))
                if gauge == GAUGE_CHOICE2:
                    da = -cabs(2j * ej + kappa2 * aj * aj) * aj
                    db = -cabs(2j * conj(ej) - kappa2 * bj * bj) * bj
                    g0 = bj * sa + aj * conj(sa)
                    g1 = aj * sb + bj * conj(sb)
                    dw_sum = dw_sum + g0 * z[0] + g1 * z[1]
                else:
                    da = (-kappa2 * aj * aj - 2j * ej) * bj
                    db = (-kappa2 * bj * bj + 2j * conj(ej)) * aj
                na[j] = aj + (da + lin_a) * dt + sa * z[0]
                nb[j] = bj + (db + lin_b) * dt + sb * z[1]
            else:
                normal_pair(seed, traj, <uint64_t>(step0 + s), <uint32_t>(2 * j), z)
                normal_pair(seed, traj, <uint64_t>(step0 + s), <uint32_t>(2 * j + 1), z2)
                z[0] *= sq_dt * noise_scale
                z[1] *= sq_dt * noise_scale
                z2[0] *= sq_dt * noise_scale
                z2[1] *= sq_dt * noise_scale
                s0 = csqrt(-2j * ej)
                s1 = csqrt(2j * conj(ej))
                if gauge == GAUGE_CHOICE1:
                    r = cabs(aj * bj)
                    da = -kappa2 * aj * r
                    db = -kappa2 * bj * r
                    cubic = 1j * sk2 * (aj * bj - r)
                    g0 = bj * s0
                    g1 = aj * s1
                    dw_sum = dw_sum + g0 * z[0] + g1 * z[1] + cubic * (z2[0] + z2[1])
                else:
                    da = (-kappa2 * aj * aj - 2j * ej) * bj
                    db = (-kappa2 * bj * bj + 2j * conj(ej)) * aj
                na[j] = aj + (da + lin_a) * dt + s0 * z[0] + 1j * aj * sk2 * z2[0]
                nb[j] = bj + (db + lin_b) * dt + s1 * z[1] + 1j * bj * sk2 * z2[1]
            if not (isfinite(creal(na[j])) and isfinite(cimag(na[j]))
                    and isfinite(creal(nb[j])) and isfinite(cimag(nb[j]))
                    and cabs(na[j]) <= threshold and cabs(nb[j]) <= threshold):
                bad = 1
        if gauge != GAUGE_NONE:
            nw = w[0] * (1.0 + dw_sum)
            if not (isfinite(creal(nw)) and isfinite(cimag(nw))):
                bad = 1
        if bad:
            return <int>s
        for j in range(nsite):
            a[j] = na[j]
            b[j] = nb[j]
        if gauge != GAUGE_NONE:
            w[0] = nw
    return <int>nsteps


def advance(double complex[:, ::1] alpha, double complex[:, ::1] beta,
            double complex[::1] weight, int64_t[::1] diverged_step,
            const double complex[::1] eps, double kappa2,
            const double[::1] onsite,
            const int64_t[::1] ridx, const double complex[::1] rcoef,
            const int64_t[::1] lidx, const double complex[::1] lcoef,
            int decomp, int gauge, double dt, double noise_scale,
            uint64_t seed, int64_t traj_offset, int64_t step0, int64_t nsteps,
            double threshold, int nthreads=1):
    """Advance every live trajectory in place by ``nsteps`` steps.

    ``diverged_step[i] >= 0`` marks a frozen trajectory; newly diverged ones
    get the global index of the step that failed.
    """
    cdef Py_ssize_t ntraj = alpha.shape[0]
    cdef Py_ssize_t nsite = alpha.shape[1]
    cdef Py_ssize_t i
    cdef int done
    cdef double complex* buf
    if nsteps <= 0 or ntraj == 0:
        return
    with nogil:
        for i in prange(ntraj, num_threads=nthreads, schedule="dynamic", chunksize=64):
            if diverged_step[i] >= 0:
                continue
            buf = <double complex*> malloc(2 * nsite * sizeof(double complex))
            done = advance_one(&alpha[i, 0], &beta[i, 0], &weight[i], buf, buf + nsite,
                               nsite, &eps[0], kappa2, &onsite[0],
                               &ridx[0], &rcoef[0], &lidx[0], &lcoef[0],
                               decomp, gauge, dt, noise_scale,
                               seed, <uint64_t>(traj_offset + i), step0, nsteps, threshold)
            if done < nsteps:
                diverged_step[i] = step0 + done
            free(buf)
