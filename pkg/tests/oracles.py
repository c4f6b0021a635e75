"""Independent reference implementations used as test oracles.

These deliberately share no code with the package: they re-derive results by
brute force (exhaustive recounts, dense eigensolvers) or by evaluating the
same formula on a separate code path in extended precision.
"""

from __future__ import annotations

import numpy as np

LD = np.longdouble


def _dense(W, b, act, x):
    a = x @ W.T + b
    if act == "rectifier":
        return np.maximum(a, LD(0))
    if act == "logistic":
        return LD(1) / (LD(1) + np.exp(-a))
    return a


def elbo_reference(weights, acts, latent, x, c, eps, beta, clip=1e-7):
    """Batch-mean negative ELBO in long double.

    ``weights`` is the flat list ``[W0, b0, W1, b1, ...]`` (encoder layers then
    decoder layers) and ``acts`` their activation names; the encoder's last layer
    is recognised as the one whose width is ``2 * latent``.
    """
    ws = [np.asarray(w, dtype=LD) for w in weights]
    pairs = list(zip(ws[0::2], ws[1::2], acts))
    split = next(k for k, (W, _, a) in enumerate(pairs) if W.shape[0] == 2 * latent and a == "identity") + 1
    x = np.asarray(x, dtype=LD)
    cond = None if c is None else np.asarray(c, dtype=LD)
    h = x if cond is None else np.concatenate([x, cond], axis=1)
    for W, b, a in pairs[:split]:
        h = _dense(W, b, a, h)
    mu, logvar = h[:, :latent], h[:, latent:]
    z = mu + np.exp(logvar / 2) * np.asarray(eps, dtype=LD)
    h = z if cond is None else np.concatenate([z, cond], axis=1)
    for W, b, a in pairs[split:]:
        h = _dense(W, b, a, h)
    p = np.clip(h, LD(clip), LD(1) - LD(clip))
    recon = -np.sum(x * np.log(p) + (1 - x) * np.log(1 - p))
    kl = -np.sum(1 + logvar - mu * mu - np.exp(logvar)) / 2
    return (recon + LD(beta) * kl) / x.shape[0]


def central_difference(f, params, h=1e-5):
    """Central-difference gradient of ``f()`` w.r.t. every entry of ``params`` (in place)."""
    out = []
    for P in params:
        G = np.zeros(P.shape)
        for idx in np.ndindex(P.shape):
            orig = P[idx]
            P[idx] = orig + h
            up = f()
            P[idx] = orig - h
            down = f()
            P[idx] = orig
            G[idx] = float((up - down) / (LD(2) * LD(h)))
        out.append(G)
    return out


def relative_error(a, n):
    """Largest |a - n| / max(|a|, |n|), taking 0/0 as 0."""
    a, n = np.asarray(a, dtype=float), np.asarray(n, dtype=float)
    den = np.maximum(np.abs(a), np.abs(n))
    num = np.abs(a - n)
    rel = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return float(rel.max(initial=0.0))


def naive_metrics(valid_smiles, n_total, training):
    """Validity / uniqueness / novelty by explicit pairwise comparison."""
    valid = list(valid_smiles)
    distinct = []
    for s in valid:
        if all(s != t for t in distinct):
            distinct.append(s)
    novel = [s for s in valid if all(s != t for t in training)]
    nv = len(valid)
    return (nv / n_total, len(distinct) / nv if nv else 0.0, len(novel) / nv if nv else 0.0)


def dense_top2(points):
    """Top-2 principal axes via a full symmetric eigendecomposition."""
    X = np.asarray(points, dtype=float)
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (len(X) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:2]
    return vals[order], vecs[:, order].T
