"""Pure-Python generator recursions, used when the compiled module is absent."""

import numpy as np


def arma_filter(eps, ar, ma, regime, level):
    """ARMA recursion around a time-varying level.

    ``dev[t] = sum_j ar[r, j] dev[t-j] + eps[t] + sum_j ma[r, j] eps[t-j]``
    with ``r = regime[t]`` and zero pre-sample values.  Returns
    ``(level + dev, level + dev - eps)``, the series and its conditional
    mean given the past.
    """
    eps = np.ascontiguousarray(eps, dtype=float)
    ar = np.ascontiguousarray(ar, dtype=float)
    ma = np.ascontiguousarray(ma, dtype=float)
    n, p, q = len(eps), ar.shape[1], ma.shape[1]
    e = eps.tolist()
    lv = np.asarray(level, dtype=float).tolist()
    arl, mal = ar.tolist(), ma.tolist()
    reg = np.asarray(regime, dtype=np.int64).tolist()
    dev = [0.0] * n
    y = [0.0] * n
    truth = [0.0] * n
    for t in range(n):
        phi, theta = arl[reg[t]], mal[reg[t]]
        acc = 0.0
        for j in range(1, min(p, t) + 1):
            acc = acc + phi[j - 1] * dev[t - j]
        for j in range(1, min(q, t) + 1):
            acc = acc + theta[j - 1] * e[t - j]
        truth[t] = lv[t] + acc
        dev[t] = acc + e[t]
        y[t] = lv[t] + dev[t]
    return np.array(y), np.array(truth)


def mar_filter(z, comp, ar, sd, probs, level):
    """Mixture autoregression on one shared history.

    Component ``comp[t]`` drives the draw at ``t``; the conditional mean
    mixes every component's AR prediction by ``probs``.
    """
    ar = np.ascontiguousarray(ar, dtype=float)
    K, p = ar.shape
    zl = np.asarray(z, dtype=float).tolist()
    cl = np.asarray(comp, dtype=np.int64).tolist()
    arl = ar.tolist()
    sdl = np.asarray(sd, dtype=float).tolist()
    pl = np.asarray(probs, dtype=float).tolist()
    lv = np.asarray(level, dtype=float).tolist()
    n = len(zl)
    dev = [0.0] * n
    y = [0.0] * n
    truth = [0.0] * n
    for t in range(n):
        c = cl[t]
        mix = 0.0
        own = 0.0
        for k in range(K):
            acc = 0.0
            for j in range(1, min(p, t) + 1):
                acc = acc + arl[k][j - 1] * dev[t - j]
            mix = mix + pl[k] * acc
            if k == c:
                own = acc
        truth[t] = lv[t] + mix
        dev[t] = own + sdl[c] * zl[t]
        y[t] = lv[t] + dev[t]
    return np.array(y), np.array(truth)
