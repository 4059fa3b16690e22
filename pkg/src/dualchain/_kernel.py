"""Compiled Euler-Maruyama kernel advancing many sector trajectories at once.

State layout: ``R``/``I`` hold real and imaginary parts of the upper
triangle of each density matrix, flattened over a zero-padded
``(N+2) x (N+2)`` grid, shape ``(grid, lanes)``.  Lanes (trajectories) sit
on the fastest axis so the per-entry update vectorizes across
trajectories.  Every lane runs the exact same floating-point sequence
regardless of how many lanes share the batch, which is what makes
ensembles bit-identical under any batching or worker count.

No fastmath: contraction or reassociation would break lane/batch
bit-identity and the J -> -J sign symmetry.
"""

import numpy as np
from numba import njit

RUNNING = 0
FINISHED = 1
FAILED = 2
NEED_NOISE = 3
IDLE = 4


def layout(n: int):
    """Index tables for the padded upper-triangle layout.

    Returns ``(grid_size, offdiag_tab, diag_tab)`` where ``offdiag_tab``
    rows are ``(p, up, down, left, right)`` and ``diag_tab`` rows are
    ``(p, up, right)``.
    """
    w = n + 2

    def pos(i, j):
        return (i + 1) * w + (j + 1)

    off = [(pos(i, j), pos(i - 1, j), pos(i + 1, j), pos(i, j - 1), pos(i, j + 1))
           for i in range(n) for j in range(i + 1, n)]
    diag = [(pos(i, i), pos(i - 1, i), pos(i, i + 1)) for i in range(n)]
    return w * w, np.array(off, dtype=np.int64).reshape(-1, 5), np.array(diag, dtype=np.int64)


def coefficient_table(n, diag_h, parity, k, dt):
    """Per-entry ``(dt*(d_i - d_j), dt*k*(x_i - x_j)**2, x_i + x_j)`` for i < j."""
    rows = []
    for i in range(n):
        for j in range(i + 1, n):
            xd = parity[i] - parity[j]
            rows.append((dt * (diag_h[i] - diag_h[j]), dt * k * xd * xd, parity[i] + parity[j]))
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


@njit(cache=True, boundscheck=False, nogil=True, error_model="numpy")
def advance(R, I, NR, NI, tab, ftab, dtab, par, hdt, amp, dt, rec_scale,
            noise, ptr, steps, max_steps, status, thr, next_thr, arr_step, arr_fid,
            peak, nsteps, trace, trace_stride, trace_count, dr_acc):
    """Advance all RUNNING lanes by up to ``nsteps`` steps.

    Returns early (after completing the current step) when any lane
    finishes, fails, or runs out of noise.  Returns the number of steps
    executed.
    """
    B = R.shape[1]
    E = tab.shape[0]
    n = dtab.shape[0]
    T = thr.shape[0]
    L = noise.shape[1]
    qn = dtab[n - 1, 0]
    ex = np.empty(B)
    ex2 = np.empty(B)
    dw = np.empty(B)
    sw = np.empty(B)
    tr = np.empty(B)
    for it in range(nsteps):
        starve = False
        for b in range(B):
            if status[b] == RUNNING and ptr[b] >= L:
                status[b] = NEED_NOISE
                starve = True
        if starve:
            return it
        run0 = status[0] == RUNNING
        for b in range(B):
            if status[b] == RUNNING:
                dw[b] = noise[b, ptr[b]]
                ptr[b] += 1
            else:
                dw[b] = 0.0
            ex[b] = 0.0
        for i in range(n):
            x = par[i]
            q = dtab[i, 0]
            for b in range(B):
                ex[b] += x * R[q, b]
        for b in range(B):
            sw[b] = amp * dw[b]
            ex2[b] = 2.0 * ex[b]
        for i in range(n):
            q = dtab[i, 0]
            qu = dtab[i, 1]
            qr = dtab[i, 2]
            ps = 2.0 * par[i]
            Rq = R[q]
            Iu = I[qu]
            Ir = I[qr]
            Nq = NR[q]
            for b in range(B):
                r = Rq[b]
                Nq[b] = r + (2.0 * hdt) * (Iu[b] - Ir[b]) + sw[b] * (ps - ex2[b]) * r
        for e in range(E):
            p = tab[e, 0]
            pu = tab[e, 1]
            pd = tab[e, 2]
            pl = tab[e, 3]
            pr = tab[e, 4]
            a = ftab[e, 0]
            dp = ftab[e, 1]
            ps = ftab[e, 2]
            Rp = R[p]
            Ip = I[p]
            Ru = R[pu]
            Rd = R[pd]
            Rl = R[pl]
            Rr = R[pr]
            Iu = I[pu]
            Id = I[pd]
            Il = I[pl]
            Ir = I[pr]
            Np = NR[p]
            Mp = NI[p]
            for b in range(B):
                r = Rp[b]
                m = Ip[b]
                sr = Ru[b] + Rd[b] - Rl[b] - Rr[b]
                si = Iu[b] + Id[b] - Il[b] - Ir[b]
                f = sw[b] * (ps - ex2[b]) - dp
                Np[b] = r + (a * m + hdt * si) + f * r
                Mp[b] = m - (a * r + hdt * sr) + f * m
        for b in range(B):
            tr[b] = 0.0
        for i in range(n):
            q = dtab[i, 0]
            for b in range(B):
                tr[b] += NR[q, b]
        for b in range(B):
            tr[b] = 1.0 / tr[b]
        for i in range(n):
            q = dtab[i, 0]
            for b in range(B):
                R[q, b] = NR[q, b] * tr[b]
        for e in range(E):
            p = tab[e, 0]
            for b in range(B):
                R[p, b] = NR[p, b] * tr[b]
                I[p, b] = NI[p, b] * tr[b]

        event = False
        for b in range(B):
            if status[b] != RUNNING:
                continue
            steps[b] += 1
            if not np.isfinite(tr[b]):
                status[b] = FAILED
                event = True
                continue
            fid = R[qn, b]
            if fid > peak[b]:
                peak[b] = fid
            while next_thr[b] < T and fid >= thr[next_thr[b]]:
                arr_step[b, next_thr[b]] = steps[b]
                arr_fid[b, next_thr[b]] = fid
                next_thr[b] += 1
            if (T > 0 and next_thr[b] == T) or steps[b] >= max_steps:
                status[b] = FINISHED
                event = True
        if trace_stride > 0 and run0:
            dr_acc[0] += ex[0] * dt + dw[0] * rec_scale
            if steps[0] % trace_stride == 0 and trace_count[0] < trace.shape[0]:
                c = trace_count[0]
                trace[c, 0] = steps[0]
                trace[c, 1] = R[qn, 0]
                xe = 0.0
                for i in range(n):
                    xe += par[i] * R[dtab[i, 0], 0]
                trace[c, 2] = xe
                trace[c, 3] = dr_acc[0]
                dr_acc[0] = 0.0
                trace_count[0] = c + 1
        if event:
            return it + 1
    return nsteps
