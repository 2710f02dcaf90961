"""Compiled log-posterior, gradient and leapfrog kernels.

Both error models share one kernel: the normal model is the LPTN model with
``tau = inf`` (every standardized residual falls in the Gaussian core).
The returned log density excludes the model prior; callers add it.
"""

import math

import numpy as np
from numba import njit

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@njit(cache=True)
def logpost_grad(x, Ck, y, tau, lam, log_tail_const, log_log_tau):
    """Log unnormalized posterior of (beta, eta) and its gradient.

    ``log_tail_const`` is ``log phi(tau) + log tau``; both tail constants are
    ignored when ``tau`` is infinite.
    """
    n, d = Ck.shape
    eta = x[d]
    s = math.exp(-eta)
    lp = -n * eta
    grad = np.zeros(d + 1)
    grad[d] = -n
    for i in range(n):
        fit = 0.0
        for j in range(d):
            fit += Ck[i, j] * x[j]
        r = y[i] - fit
        z = r * s
        az = abs(z)
        if az <= tau:
            lp += -0.5 * z * z - HALF_LOG_2PI
            w = z * s
            for j in range(d):
                grad[j] += w * Ck[i, j]
            grad[d] += z * z
        else:
            lz = math.log(az)
            lp += log_tail_const - lz + (lam + 1.0) * (log_log_tau - math.log(lz))
            f = 1.0 + (lam + 1.0) / lz
            w = f / r
            for j in range(d):
                grad[j] += w * Ck[i, j]
            grad[d] += f
    return lp, grad


@njit(cache=True)
def logpost_grad_batch(X, Ck, y, tau, lam, log_tail_const, log_log_tau):
    B = X.shape[0]
    lps = np.empty(B)
    grads = np.empty_like(X)
    for b in range(B):
        lp, g = logpost_grad(X[b], Ck, y, tau, lam, log_tail_const, log_log_tau)
        lps[b] = lp
        grads[b] = g
    return lps, grads


@njit(cache=True)
def leapfrog(q, p, lp, grad, step, n_steps, inv_mass, Ck, y, tau, lam,
             log_tail_const, log_log_tau):
    """Integrate ``n_steps`` leapfrog steps; returns the end point and its density."""
    q = q.copy()
    p = p.copy()
    g = grad.copy()
    for _ in range(n_steps):
        p += 0.5 * step * g
        q += step * inv_mass * p
        lp, g = logpost_grad(q, Ck, y, tau, lam, log_tail_const, log_log_tau)
        p += 0.5 * step * g
    return q, p, lp, g


@njit(cache=True)
def logpost_grad_smooth(x, Ck, y, tau, lam, log_tail_const, log_log_tau, lo, hi, width):
    """``logpost_grad`` with the kink at ``tau`` replaced by a soft minimum.

    Inside ``(lo, hi)`` the core and tail branches are combined as
    ``-width * log(exp(-core / width) + exp(-tail / width))``; outside that
    window the exact branch is used. Used only to locate posterior modes.
    """
    n, d = Ck.shape
    eta = x[d]
    s = math.exp(-eta)
    lp = -n * eta
    grad = np.zeros(d + 1)
    grad[d] = -n
    for i in range(n):
        fit = 0.0
        for j in range(d):
            fit += Ck[i, j] * x[j]
        r = y[i] - fit
        z = r * s
        az = abs(z)
        # value and derivative in |z| of the two branches
        core = -0.5 * az * az - HALF_LOG_2PI
        dcore = -az
        if az > lo:
            lz = math.log(az)
            tail = log_tail_const - lz + (lam + 1.0) * (log_log_tau - math.log(lz))
            dtail = -(1.0 + (lam + 1.0) / lz) / az
        if az <= lo:
            val, dval = core, dcore
        elif az >= hi:
            val, dval = tail, dtail
        else:
            m = min(core, tail)
            ec = math.exp(-(core - m) / width)
            et = math.exp(-(tail - m) / width)
            val = m - width * math.log(ec + et)
            dval = (ec * dcore + et * dtail) / (ec + et)
        lp += val
        # chain rule: d|z|/dbeta = -sign(r) s c, d|z|/deta = -|z|
        sg = 1.0 if r >= 0 else -1.0
        for j in range(d):
            grad[j] += -dval * sg * s * Ck[i, j]
        grad[d] += -dval * az
    return lp, grad


@njit(cache=True)
def logpost_hessian(x, Ck, y, tau, lam, log_tail_const, log_log_tau):
    """Hessian of ``logpost_grad``'s log density, branch chosen per residual."""
    n, d = Ck.shape
    eta = x[d]
    s = math.exp(-eta)
    H = np.zeros((d + 1, d + 1))
    for i in range(n):
        fit = 0.0
        for j in range(d):
            fit += Ck[i, j] * x[j]
        r = y[i] - fit
        z = r * s
        if abs(z) <= tau:
            for j in range(d):
                for m in range(d):
                    H[j, m] -= s * s * Ck[i, j] * Ck[i, m]
                H[j, d] -= 2.0 * z * s * Ck[i, j]
            H[d, d] -= 2.0 * z * z
        else:
            u = math.log(abs(z))
            f = 1.0 + (lam + 1.0) / u
            q = (lam + 1.0) / (u * u)
            for j in range(d):
                for m in range(d):
                    H[j, m] += (q + f) * Ck[i, j] * Ck[i, m] / (r * r)
                H[j, d] += q * Ck[i, j] / r
            H[d, d] += q
    for j in range(d):
        H[d, j] = H[j, d]
    return H


@njit(cache=True)
def _bridge_terms(a, b, src_map, src_L, src_C, src_prior, src_qconst,
                  dst_map, dst_L, dst_C, dst_prior, dst_qconst,
                  y, tau, lam, ltc, llt):
    """Endpoint log densities of the bridge in whitened coordinates.

    ``A = log pi(k, x) + log q_k'(y)`` and ``B = log pi(k', y) + log q_k(x)``
    with ``x = src_map + src_L a`` and ``y = dst_map + dst_L b``. Also returns
    the whitened gradients of ``log pi(k, x)`` and ``log pi(k', y)``.
    """
    x = src_map + src_L @ a
    yv = dst_map + dst_L @ b
    lp_src, g_src = logpost_grad(x, src_C, y, tau, lam, ltc, llt)
    lp_dst, g_dst = logpost_grad(yv, dst_C, y, tau, lam, ltc, llt)
    A = lp_src + src_prior + dst_qconst - 0.5 * (b @ b)
    B = lp_dst + dst_prior + src_qconst - 0.5 * (a @ a)
    return A, B, src_L.T @ g_src, dst_L.T @ g_dst


@njit(cache=True)
def ais_paths(a0, b0, xi, u, T, step,
              src_map, src_L, src_C, src_prior, src_qconst,
              dst_map, dst_L, dst_C, dst_prior, dst_qconst,
              y, tau, lam, ltc, llt):
    """Run annealed bridges for a batch of replicates.

    ``a0`` (R, dx) and ``b0`` (R, dy) are whitened starting points, ``xi`` is
    (R, T-1, dx+dy) standard normals and ``u`` (R, T-1) uniforms for the MALA
    moves. Returns whitened endpoints, ``log r`` per replicate and the number
    of accepted MALA moves.
    """
    R, dx = a0.shape
    dy = b0.shape[1]
    a_end = a0.copy()
    b_end = b0.copy()
    log_r = np.zeros(R)
    n_acc = 0
    h2 = 0.5 * step * step
    for rep in range(R):
        a = a0[rep].copy()
        b = b0[rep].copy()
        A, B, ga, gb = _bridge_terms(a, b, src_map, src_L, src_C, src_prior, src_qconst,
                                     dst_map, dst_L, dst_C, dst_prior, dst_qconst,
                                     y, tau, lam, ltc, llt)
        acc = 0.0
        for t in range(T):
            acc += B - A
            if t == T - 1:
                break
            gamma = (t + 1.0) / T
            # gradient of the annealed density at the current point
            da = (1.0 - gamma) * ga - gamma * a
            db = gamma * gb - (1.0 - gamma) * b
            cur = (1.0 - gamma) * A + gamma * B
            pa = a + h2 * da + step * xi[rep, t, :dx]
            pb = b + h2 * db + step * xi[rep, t, dx:]
            A2, B2, ga2, gb2 = _bridge_terms(pa, pb, src_map, src_L, src_C, src_prior, src_qconst,
                                             dst_map, dst_L, dst_C, dst_prior, dst_qconst,
                                             y, tau, lam, ltc, llt)
            new = (1.0 - gamma) * A2 + gamma * B2
            if not math.isfinite(new):
                continue
            da2 = (1.0 - gamma) * ga2 - gamma * pa
            db2 = gamma * gb2 - (1.0 - gamma) * pb
            fwd = 0.0
            bwd = 0.0
            for j in range(dx):
                e = pa[j] - a[j] - h2 * da[j]
                fwd += e * e
                e = a[j] - pa[j] - h2 * da2[j]
                bwd += e * e
            for j in range(dy):
                e = pb[j] - b[j] - h2 * db[j]
                fwd += e * e
                e = b[j] - pb[j] - h2 * db2[j]
                bwd += e * e
            log_alpha = new - cur + (fwd - bwd) / (2.0 * step * step)
            if math.log(u[rep, t]) < log_alpha:
                a, b, A, B, ga, gb = pa, pb, A2, B2, ga2, gb2
                n_acc += 1
        a_end[rep] = a
        b_end[rep] = b
        log_r[rep] = acc / T
    return a_end, b_end, log_r, n_acc
