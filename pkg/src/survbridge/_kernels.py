"""Numba kernels for the group coordinate descent inner loop."""

import numpy as np
from numba import njit


@njit(cache=True, fastmath=True)
def sweep_blocks(xt, r, beta, starts, ends, weights, lips, eigvals, eigvecs,
                 vec_offsets, n_total, block_ids, zbuf, bbuf, gbuf):
    """One cyclic pass of exact block minimizations.

    ``xt`` is one subtype's transposed design (p_m x n_m); ``r`` and ``beta``
    (that subtype's residual and coefficient slice) are updated in place. Each
    visited block jumps straight to the minimizer of its subproblem
    (1/2) b'Ab - b'h + w ||b||, using the cached eigendecomposition of
    A = X_b'X_b / n and a Newton solve of the secular equation for ||b||,
    then applies the move to the residual once. Returns the largest L2 block
    move of the pass.
    """
    nm = r.shape[0]
    max_chg2 = 0.0
    for t in range(block_ids.shape[0]):
        b = block_ids[t]
        c0 = starts[b]
        c1 = ends[b]
        d = c1 - c0
        w = weights[b]
        if lips[b] <= 0.0 or not np.isfinite(w):
            # dead columns or a locked block: the minimizer is zero
            chg2 = 0.0
            for c in range(c0, c1):
                v = beta[c]
                if v != 0.0:
                    chg2 += v * v
                    if lips[b] > 0.0:
                        row = xt[c]
                        for i in range(nm):
                            r[i] += row[i] * v
                    beta[c] = 0.0
            if chg2 > max_chg2:
                max_chg2 = chg2
            continue

        vo = vec_offsets[b]
        # h = (X_b' r)/n + A beta_b: the linear term of the block subproblem
        for c in range(c0, c1):
            row = xt[c]
            g = 0.0
            for i in range(nm):
                g += row[i] * r[i]
            gbuf[c - c0] = g / n_total
        # c = V'h in the eigenbasis; the A beta part is diagonal there
        cnorm2 = 0.0
        for i in range(d):
            proj = 0.0
            pb = 0.0
            for j in range(d):
                v_ji = eigvecs[vo + j * d + i]
                proj += v_ji * gbuf[j]
                pb += v_ji * beta[c0 + j]
            proj += eigvals[c0 + i] * pb
            zbuf[i] = proj
            cnorm2 += proj * proj
        cnorm = np.sqrt(cnorm2)

        if cnorm <= w:
            # the origin satisfies the block optimality condition
            for i in range(d):
                bbuf[i] = 0.0
        elif w == 0.0:
            lmax = eigvals[c0 + d - 1] if eigvals[c0 + d - 1] > eigvals[c0] else eigvals[c0]
            for i in range(d):
                lam = eigvals[c0 + i]
                bbuf[i] = zbuf[i] / lam if lam > 1e-14 * lmax else 0.0
        else:
            # solve sum_i c_i^2 / (lam_i t + w)^2 = 1 for t = ||b||; the
            # function is convex decreasing, Newton from the left is monotone
            lmax = 0.0
            for i in range(d):
                if eigvals[c0 + i] > lmax:
                    lmax = eigvals[c0 + i]
            tcur = (cnorm - w) / lmax if lmax > 0.0 else 0.0
            if tcur <= 0.0:
                tcur = 1e-300
            for _ in range(100):
                gval = 0.0
                gder = 0.0
                for i in range(d):
                    lam = eigvals[c0 + i]
                    den = lam * tcur + w
                    ci2 = zbuf[i] * zbuf[i]
                    gval += ci2 / (den * den)
                    gder -= 2.0 * ci2 * lam / (den * den * den)
                diff = gval - 1.0
                if diff <= 0.0 or gder == 0.0:
                    break
                step = -diff / gder
                tcur = tcur + step
                if step <= 1e-14 * tcur:
                    break
            for i in range(d):
                bbuf[i] = zbuf[i] * tcur / (eigvals[c0 + i] * tcur + w)

        # rotate back: b* = V bbuf, then apply the move
        chg2 = 0.0
        for i in range(d):
            nb = 0.0
            base = vo + i * d
            for j in range(d):
                nb += eigvecs[base + j] * bbuf[j]
            delta = nb - beta[c0 + i]
            if delta != 0.0:
                chg2 += delta * delta
                row = xt[c0 + i]
                for k in range(nm):
                    r[k] -= row[k] * delta
                beta[c0 + i] = nb
        if chg2 > max_chg2:
            max_chg2 = chg2
    return np.sqrt(max_chg2)
