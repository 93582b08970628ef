# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled path integrator for the built-in scalar examples.

Mirrors ``engine._run_python`` operation by operation. Coefficient codes:
1 = example 1, 2 = example 2, 3 = example 3. Solver codes follow
``steppers.SOLVERS``. The step function is ``scale / (1 + x^2)``.
"""

from libc.math cimport floor, fabs, sqrt, pow, sin, isfinite
from libc.stdint cimport int64_t, int8_t

cdef enum:
    ADAPTIVE_MILSTEIN = 0
    ADAPTIVE_EULER = 1
    TAMED_MILSTEIN = 2
    UNIFORM_MILSTEIN = 3
    BACKWARD_EULER = 4
    BACKWARD_MILSTEIN = 5


cdef inline double _drift(int code, double x, double y) noexcept nogil:
    if code == 1:
        return -x * x * x + y
    elif code == 2:
        return -x * x * x + x + y
    return -x * x * x + sin(y)


cdef inline double _drift_dx(int code, double x) noexcept nogil:
    if code == 2:
        return 1.0 - 3.0 * x * x
    return -3.0 * x * x


cdef inline int _diffusion(int code, double x, double y, double* g, double* dg) noexcept nogil:
    """Fill diffusion columns and their x-derivatives; returns the noise dimension."""
    if code == 1:
        g[0] = x + y
        dg[0] = 1.0
        return 1
    elif code == 2:
        g[0] = 5.0 * x + y
        g[1] = 0.5 * x + 0.1 * y
        dg[0] = 5.0
        dg[1] = 0.5
        return 2
    g[0] = x + y
    g[1] = -x + y
    dg[0] = 1.0
    dg[1] = -1.0
    return 2


cdef int _one_path(int code, int solver, const double[:, ::1] path, const double[:, ::1] area,
                   double x0, int64_t tpu, int64_t K, int64_t M, double scale,
                   int64_t uniform_ticks, double tame_step, bint want_cost,
                   double lb_a, double lb_b, double lb_q, double tol, int max_iter, double blowup,
                   double* terminal, double[::1] ints, int64_t* steps, double* cost,
                   int64_t* min_t, int64_t* max_t, int64_t* fail) noexcept nogil:
    cdef double tick = 1.0 / <double>tpu
    cdef double x = x0, y = x0, xn, h, f, dv, raw, J, A, gdb, corr, rhs, z, F, c = 0.0
    cdef double g[2]
    cdef double dg[2]
    cdef double dB[2]
    cdef double Bs[2]
    cdef double I[2][2]
    cdef int64_t t = 0, te, dt, lim, k = 0, mn = K + 1, mx = 0
    cdef int d, j, r, it
    cdef bint adaptive = solver == ADAPTIVE_MILSTEIN or solver == ADAPTIVE_EULER
    cdef bint milstein = solver != ADAPTIVE_EULER and solver != BACKWARD_EULER
    cdef bint converged
    cdef int status = 0

    ints[0] = x0
    while t < K:
        lim = (t // tpu + 1) * tpu - t
        if K - t < lim:
            lim = K - t
        if adaptive:
            dv = scale / (1.0 + x * x)
            if not (isfinite(dv) and dv > 0):
                status = 3
                break
            raw = floor(dv / <double>M * <double>tpu)
            if raw < <double>lim:
                dt = <int64_t>raw
            else:
                dt = lim
            if dt < 1:
                dt = 1
        else:
            dt = uniform_ticks if uniform_ticks < lim else lim
        te = t + dt
        h = <double>dt * tick

        d = _diffusion(code, x, y, g, dg)
        for j in range(d):
            Bs[j] = path[j, t]
            dB[j] = path[j, te] - Bs[j]
        for j in range(d):
            I[j][j] = 0.5 * (dB[j] * dB[j] - h)
        if d == 2:
            J = (area[0, te] - area[0, t]) - Bs[0] * dB[1] + Bs[1] * dB[0]
            A = 0.5 * J
            I[0][1] = 0.5 * (dB[0] * dB[1]) + A
            I[1][0] = 0.5 * (dB[1] * dB[0]) - A

        gdb = 0.0
        for j in range(d):
            gdb += g[j] * dB[j]
        corr = 0.0
        if milstein:
            for j in range(d):
                for r in range(d):
                    corr += (dg[j] * g[r]) * I[r][j]

        if want_cost:
            c += (lb_a * pow(sqrt(x * x), lb_q) + lb_b) * h

        if solver == BACKWARD_EULER or solver == BACKWARD_MILSTEIN:
            rhs = x + gdb
            if milstein:
                rhs = rhs + corr
            z = rhs + _drift(code, x, y) * h
            converged = False
            for it in range(max_iter + 1):
                F = z - _drift(code, z, y) * h - rhs
                if fabs(F) <= tol:
                    converged = True
                    break
                if it == max_iter:
                    break
                z = z - F / (1.0 - _drift_dx(code, z) * h)
            if not converged:
                terminal[0] = z
                fail[0] = k
                status = 2
                break
            xn = z
        else:
            f = _drift(code, x, y)
            if solver == TAMED_MILSTEIN:
                f = f / (1.0 + tame_step * (x * x + y * y))
            xn = x + f * h + gdb
            if milstein:
                xn = xn + corr

        if not (isfinite(xn) and fabs(xn) <= blowup):
            terminal[0] = xn
            fail[0] = k
            status = 1
            break

        k += 1
        if dt < mn:
            mn = dt
        if dt > mx:
            mx = dt
        x = xn
        t = te
        if t % tpu == 0:
            y = x
            ints[t // tpu] = x

    if status == 0:
        terminal[0] = x
    steps[0] = k
    cost[0] = c
    min_t[0] = mn
    max_t[0] = mx
    return status


def integrate(int code, int solver, const double[:, :, ::1] path, const double[:, :, ::1] area,
              double x0, int64_t tpu, int64_t K, int64_t M, double scale, int64_t uniform_ticks,
              double tame_step, bint want_cost, double lb_a, double lb_b, double lb_q,
              double tol, int max_iter, double blowup,
              double[::1] terminal, double[:, ::1] ints, int64_t[::1] steps, double[::1] cost,
              int64_t[::1] min_t, int64_t[::1] max_t, int8_t[::1] status, int64_t[::1] fail):
    """Integrate every path of a batch; results are written into the output arrays."""
    cdef Py_ssize_t p, P = path.shape[0]
    if code < 1 or code > 3:
        raise ValueError("unknown coefficient code")
    if solver < 0 or solver > 5:
        raise ValueError("unknown solver code")
    with nogil:
        for p in range(P):
            status[p] = <int8_t>_one_path(
                code, solver, path[p], area[p], x0, tpu, K, M, scale, uniform_ticks, tame_step,
                want_cost, lb_a, lb_b, lb_q, tol, max_iter, blowup,
                &terminal[p], ints[p], &steps[p], &cost[p], &min_t[p], &max_t[p], &fail[p])
