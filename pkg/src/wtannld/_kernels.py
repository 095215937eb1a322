"""Compiled inner loops. Callers own every array; nothing here allocates per step."""
import math

import numpy as np
from numba import njit


@njit(cache=True, fastmath={"reassoc", "contract", "nsz", "arcp"})
def run_dense(
    nsteps, dt,
    ev_step, ev_line, ev_time,
    line_ptr, line_unit, line_amp,
    unit_ds, unit_df, unit_tau_s, unit_tau_f, uniform_tau,
    n_neurons, m, upb,
    x_thr, cb, vthr, dm, use_threshold,
    inh_on, I0_inh, inh_ds, inh_df,
    I0, tr_ds, tr_df, tau_s, tau_f,
    plastic, c, cc,
    us, uf, tr_s, tr_f, ps, pf, V, inh,
    Ib, Iin, ebar,
    post_step, post_neuron,
    max_v, sum_iin, sum_ib,
    record, trace,
):
    """Advance one pattern. Returns ``(n_post, bad_step, bad_neuron)``; ``bad_step >= 0`` flags divergence.

    Step order: decay, inject pre-spikes, depression, membrane update,
    winner selection, potentiation, inhibition restart and post-trace bump.
    """
    n_units = us.shape[0]
    n_branch = n_neurons * m
    ds0 = unit_ds[0]
    df0 = unit_df[0]
    d = tr_s.shape[0]
    n_ev = ev_step.shape[0]
    inv_x = 1.0 / x_thr
    ev = 0
    n_post = 0
    for k in range(nsteps):
        t = k * dt
        if uniform_tau:
            for u in range(n_units):
                us[u] *= ds0
                uf[u] *= df0
        else:
            for u in range(n_units):
                us[u] *= unit_ds[u]
                uf[u] *= unit_df[u]
        for i in range(d):
            tr_s[i] *= tr_ds
            tr_f[i] *= tr_df
        for n in range(n_neurons):
            ps[n] *= tr_ds
            pf[n] *= tr_df
        inh[0] *= inh_ds
        inh[1] *= inh_df

        ev0 = ev
        while ev < n_ev and ev_step[ev] == k:
            i = ev_line[ev]
            lag = t - ev_time[ev]
            if lag < 0.0:
                lag = 0.0
            gs = math.exp(-lag / tau_s)
            gf = math.exp(-lag / tau_f)
            tr_s[i] += I0 * gs
            tr_f[i] += I0 * gf
            for q in range(line_ptr[i], line_ptr[i + 1]):
                u = line_unit[q]
                a = line_amp[q]
                if uniform_tau:
                    us[u] += a * gs
                    uf[u] += a * gf
                else:
                    us[u] += a * math.exp(-lag / unit_tau_s[u])
                    uf[u] += a * math.exp(-lag / unit_tau_f[u])
            ev += 1

        tot = 0.0
        if upb == 1:
            for b in range(n_branch):
                Ib[b] = us[b] - uf[b]
        else:
            for b in range(n_branch):
                z = 0.0
                for u in range(b * upb, b * upb + upb):
                    z += us[u] - uf[u]
                Ib[b] = z
        for b in range(n_branch):
            tot += Ib[b]
        for n in range(n_neurons):
            s = 0.0
            for b in range(n * m, n * m + m):
                s += cb[b] * Ib[b] * Ib[b]
            Iin[n] = s
        sum_ib[0] += tot

        if plastic:
            for e in range(ev0, ev):
                i = ev_line[e]
                for n in range(n_neurons):
                    fb = ps[n] - pf[n]
                    if fb != 0.0:
                        for j in range(m):
                            b = n * m + j
                            c[n, j, i] -= cc[b] * 2.0 * Ib[b] * inv_x * fb

        i_inh = inh[0] - inh[1] if inh_on else 0.0
        for n in range(n_neurons):
            Iin[n] *= inv_x
            sum_iin[n] += Iin[n]
            V[n] = V[n] * dm + (1.0 - dm) * (Iin[n] - i_inh)
            if not math.isfinite(V[n]):
                return n_post, k, n
            if V[n] > max_v[n]:
                max_v[n] = V[n]

        winner = -1
        if use_threshold:
            best = 0.0
            for n in range(n_neurons):
                over = V[n] - vthr[n]
                if over >= 0.0 and (winner < 0 or over > best):
                    winner = n
                    best = over

        if record:
            for n in range(n_neurons):
                trace[k, n] = V[n]
            trace[k, n_neurons] = i_inh

        if winner >= 0:
            post_step[n_post] = k
            post_neuron[n_post] = winner
            n_post += 1
            V[winner] = 0.0
            if record:
                trace[k, winner] = 0.0
            if plastic:
                for i in range(d):
                    ebar[i] = tr_s[i] - tr_f[i]
                for j in range(m):
                    b = winner * m + j
                    g = cc[b] * 2.0 * Ib[b] * inv_x
                    if g != 0.0:
                        for i in range(d):
                            c[winner, j, i] += g * ebar[i]
            inh[0] = I0_inh
            inh[1] = I0_inh
            ps[winner] += I0
            pf[winner] += I0
    return n_post, -1, -1


@njit(cache=True, fastmath={"reassoc", "contract", "nsz", "arcp"})
def run_shared(
    nsteps, dt,
    ev_step, ev_line, ev_time,
    line_ptr, line_unit, line_amp,
    n_neurons, m,
    x_thr, cb, vthr, dm, use_threshold,
    inh_on, I0_inh, inh_ds, inh_df,
    I0, tau_s, tau_f,
    plastic, c, cc,
    S, F, A, B, D, Ps, Pf, Qs, Qf, V, inh, ebar,
    post_step, post_neuron,
    max_v, sum_iin, sum_ib,
    record, trace,
):
    """Same dynamics as :func:`run_dense` when every filter shares ``tau_s``/``tau_f``.

    Filter states are held rescaled to a reference time ``t_ref`` (so they
    only change at spikes), and each neuron keeps the three sums
    ``A = sum cb*S^2``, ``B = sum cb*S*F``, ``D = sum cb*F^2`` from which
    ``sum_j cb*z_j^2 = A*a^2 - 2*B*a*b + D*b^2`` with ``a, b`` the decay
    since ``t_ref``.  Per-step cost is O(N) instead of O(N*m).  The
    reference time is moved forward before the fast factor under- or
    overflows.  Returns ``(n_post, bad_step, bad_neuron, k_ref)``.
    """
    d = Ps.shape[0]
    n_ev = ev_step.shape[0]
    inv_x = 1.0 / x_thr
    horizon = 150.0 * tau_f
    k_ref = 0
    tot_s = 0.0
    tot_f = 0.0
    ev = 0
    n_post = 0
    for k in range(nsteps):
        t = k * dt
        el = (k - k_ref) * dt
        if el > horizon:
            ra = math.exp(-el / tau_s)
            rb = math.exp(-el / tau_f)
            for u in range(S.shape[0]):
                S[u] *= ra
                F[u] *= rb
            for n in range(n_neurons):
                A[n] *= ra * ra
                B[n] *= ra * rb
                D[n] *= rb * rb
                Qs[n] *= ra
                Qf[n] *= rb
            for i in range(d):
                Ps[i] *= ra
                Pf[i] *= rb
            tot_s *= ra
            tot_f *= rb
            k_ref = k
            el = 0.0
        t_ref = k_ref * dt
        al = math.exp(-el / tau_s)
        be = math.exp(-el / tau_f)
        inh[0] *= inh_ds
        inh[1] *= inh_df

        ev0 = ev
        while ev < n_ev and ev_step[ev] == k:
            i = ev_line[ev]
            te = ev_time[ev]
            if te > t:
                te = t
            gs = math.exp((te - t_ref) / tau_s)
            gf = math.exp((te - t_ref) / tau_f)
            Ps[i] += I0 * gs
            Pf[i] += I0 * gf
            for q in range(line_ptr[i], line_ptr[i + 1]):
                b = line_unit[q]
                n = b // m
                xs = line_amp[q] * gs
                xf = line_amp[q] * gf
                A[n] += cb[b] * (2.0 * S[b] + xs) * xs
                B[n] += cb[b] * (S[b] * xf + F[b] * xs + xs * xf)
                D[n] += cb[b] * (2.0 * F[b] + xf) * xf
                S[b] += xs
                F[b] += xf
                tot_s += xs
                tot_f += xf
            ev += 1
        sum_ib[0] += tot_s * al - tot_f * be

        if plastic:
            for e in range(ev0, ev):
                i = ev_line[e]
                for n in range(n_neurons):
                    fb = Qs[n] * al - Qf[n] * be
                    if fb != 0.0:
                        for j in range(m):
                            b = n * m + j
                            z = S[b] * al - F[b] * be
                            c[n, j, i] -= cc[b] * 2.0 * z * inv_x * fb

        i_inh = inh[0] - inh[1] if inh_on else 0.0
        a2 = al * al
        ab = 2.0 * al * be
        b2 = be * be
        winner = -1
        best = 0.0
        for n in range(n_neurons):
            iin = (A[n] * a2 - B[n] * ab + D[n] * b2) * inv_x
            sum_iin[n] += iin
            v = V[n] * dm + (1.0 - dm) * (iin - i_inh)
            V[n] = v
            if not math.isfinite(v):
                return n_post, k, n, k_ref
            if v > max_v[n]:
                max_v[n] = v
            if use_threshold:
                over = v - vthr[n]
                if over >= 0.0 and (winner < 0 or over > best):
                    winner = n
                    best = over

        if record:
            for n in range(n_neurons):
                trace[k, n] = V[n]
            trace[k, n_neurons] = i_inh

        if winner >= 0:
            post_step[n_post] = k
            post_neuron[n_post] = winner
            n_post += 1
            V[winner] = 0.0
            if record:
                trace[k, winner] = 0.0
            if plastic:
                for i in range(d):
                    ebar[i] = Ps[i] * al - Pf[i] * be
                for j in range(m):
                    b = winner * m + j
                    g = cc[b] * 2.0 * (S[b] * al - F[b] * be) * inv_x
                    if g != 0.0:
                        for i in range(d):
                            c[winner, j, i] += g * ebar[i]
            inh[0] = I0_inh
            inh[1] = I0_inh
            Qs[winner] += I0 / al
            Qf[winner] += I0 / be
    return n_post, -1, -1, k_ref
