"""k-means / diagonal-GMM codebooks with VLAD and Fisher Vector encoding."""

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DimensionMismatchError, EmptySetError, TooFewSamplesError

logger = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-6
WEIGHT_FLOOR = 1e-12
KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-6
EM_MAX_ITER = 200
EM_TOL = 1e-7
_CANCEL_TOL = 1e-10


@dataclass(eq=False)
class KMeansCodebook:
    centers: np.ndarray
    inertia_history: list = field(default_factory=list)

    @property
    def k(self):
        return self.centers.shape[0]

    @property
    def dim(self):
        return self.centers.shape[1]

    def to_json(self):
        return json.dumps({"type": "kmeans", "k": self.k, "D": self.dim,
                           "centers": self.centers.tolist()})


@dataclass(eq=False)
class GmmCodebook:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik_history: list = field(default_factory=list)

    @property
    def k(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def to_json(self):
        return json.dumps({"type": "gmm", "k": self.k, "D": self.dim,
                           "weights": self.weights.tolist(), "means": self.means.tolist(),
                           "variances": self.variances.tolist()})


def codebook_from_json(text):
    d = json.loads(text)
    if d.get("type") == "kmeans":
        return KMeansCodebook(np.asarray(d["centers"], dtype=np.float64).reshape(d["k"], d["D"]))
    return GmmCodebook(np.asarray(d["weights"], dtype=np.float64),
                       np.asarray(d["means"], dtype=np.float64).reshape(d["k"], d["D"]),
                       np.asarray(d["variances"], dtype=np.float64).reshape(d["k"], d["D"]))


def _as_samples(X, k):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatchError(f"descriptors must be a 2-D array, got shape {X.shape}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(X) < k:
        raise TooFewSamplesError(f"need at least k={k} samples, got {len(X)}")
    return X


def _sq_dists(X, C):
    d2 = np.sum(X**2, axis=1)[:, None] + np.sum(C**2, axis=1)[None, :] - 2.0 * X @ C.T
    return np.maximum(d2, 0.0)


def _kmeans_pp(X, k, rng):
    n = len(X)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = closest.sum()
        # all remaining mass on already chosen points: fall back to uniform
        i = rng.choice(n, p=closest / total) if total > 0 else rng.integers(n)
        centers[j] = X[i]
        closest = np.minimum(closest, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def _assign(X, centers):
    d2 = _sq_dists(X, centers)
    labels = np.argmin(d2, axis=1)  # first minimum: ties -> lower center index
    return labels, d2[np.arange(len(X)), labels]


def fit_kmeans(descriptors, k, seed=0):
    """Lloyd's algorithm from k-means++ seeds.

    Stops when inertia improves by less than ``1e-6`` relative, or after 300
    iterations. An emptied cluster is moved onto the sample farthest from its
    current centre.

    Raises:
        TooFewSamplesError: fewer samples than clusters.
    """
    X = _as_samples(descriptors, k)
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(X, k, rng)
    labels, d2 = _assign(X, centers)
    history = [float(d2.sum())]
    for _ in range(KMEANS_MAX_ITER):
        new = centers.copy()
        counts = np.bincount(labels, minlength=k)
        for j in range(k):
            if counts[j]:
                new[j] = X[labels == j].mean(axis=0)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(np.sum((X - new[labels]) ** 2, axis=1)))
            new[j] = X[far]
            labels[far] = j
        new_labels, new_d2 = _assign(X, new)
        inertia = float(new_d2.sum())
        if inertia > history[-1]:
            # a reseed can in principle make things worse; keep the old solution
            break
        centers, labels, d2 = new, new_labels, new_d2
        history.append(inertia)
        prev = history[-2]
        if prev == 0 or (prev - inertia) / prev < KMEANS_TOL:
            break
    return KMeansCodebook(centers, history)


def _log_joint(X, weights, means, variances):
    """``log w_j + log N(x_i | mu_j, diag var_j)`` as an (N, k) array."""
    inv = 1.0 / variances
    maha = (X**2) @ inv.T - 2.0 * X @ (means * inv).T + np.sum(means**2 * inv, axis=1)
    log_det = np.sum(np.log(variances), axis=1)
    d = X.shape[1]
    return np.log(weights) - 0.5 * (d * np.log(2 * np.pi) + log_det + maha)


def posteriors(codebook, X):
    lj = _log_joint(X, codebook.weights, codebook.means, codebook.variances)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


def fit_gmm(descriptors, k, seed=0, variance_floor=VARIANCE_FLOOR):
    """Diagonal-covariance GMM fitted by EM from a k-means initialisation.

    Stops when the log-likelihood improves by less than ``1e-7`` relative or
    after 200 iterations. Variances are floored at ``variance_floor`` (never
    below 1e-6) and weights at 1e-12, then renormalised.

    Sparse descriptors leave whole dimensions empty inside a component; at
    the minimal floor such dimensions turn any stray non-zero test value into
    a huge Fisher Vector entry, so callers encoding histograms usually want a
    floor tied to the data variance.
    """
    X = _as_samples(descriptors, k)
    floor = max(float(variance_floor), VARIANCE_FLOOR)
    n = len(X)
    km = fit_kmeans(X, k, seed)
    labels, _ = _assign(X, km.centers)
    means = km.centers.copy()
    variances = np.empty_like(means)
    counts = np.bincount(labels, minlength=k).astype(float)
    for j in range(k):
        members = X[labels == j]
        variances[j] = members.var(axis=0) if len(members) else X.var(axis=0)
    variances = np.maximum(variances, floor)
    weights = _floor_weights(counts / n)

    history = []
    for _ in range(EM_MAX_ITER):
        lj = _log_joint(X, weights, means, variances)
        norm = logsumexp(lj, axis=1, keepdims=True)
        ll = float(norm.sum())
        if history:
            prev = history[-1]
            if ll - prev < EM_TOL * abs(prev):
                history.append(ll)
                break
        history.append(ll)
        gamma = np.exp(lj - norm)
        nk = gamma.sum(axis=0)
        safe = np.maximum(nk, np.finfo(float).tiny)
        weights = _floor_weights(nk / n)
        means = (gamma.T @ X) / safe[:, None]
        variances = (gamma.T @ X**2) / safe[:, None] - means**2
        variances = np.maximum(variances, floor)
    logger.debug("GMM k=%d: %d EM iterations, loglik %.6g", k, len(history), history[-1])
    return GmmCodebook(weights, means, variances, history)


def _floor_weights(w):
    w = np.maximum(w, WEIGHT_FLOOR)
    # renormalising can nudge a floored weight just under the floor
    return np.maximum(w / w.sum(), WEIGHT_FLOOR)


def _check(codebook, descriptors):
    X = np.asarray(descriptors, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptySetError("cannot encode an empty descriptor set")
    if X.shape[1] != codebook.dim:
        raise DimensionMismatchError(
            f"descriptor dimension {X.shape[1]} != codebook dimension {codebook.dim}")
    return X


def _l2(v):
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def encode_fv(codebook, descriptors, normalize=True):
    """Fisher Vector of a descriptor set: mean and variance gradients (2kD).

    With ``normalize`` the signed square root and a global L2 normalisation
    are applied; a zero vector stays zero.
    """
    X = _check(codebook, descriptors)
    n = len(X)
    gamma = posteriors(codebook, X)
    sigma = np.sqrt(codebook.variances)
    w = codebook.weights
    g_mu = np.empty_like(codebook.means)
    g_var = np.empty_like(codebook.means)
    for j in range(codebook.k):
        z = (X - codebook.means[j]) / sigma[j]
        g_mu[j] = gamma[:, j] @ z / (n * np.sqrt(w[j]))
        g_var[j] = gamma[:, j] @ (z**2 - 1.0) / (n * np.sqrt(2 * w[j]))
    fv = np.concatenate([g_mu.ravel(), g_var.ravel()])
    if normalize:
        fv = _l2(np.sign(fv) * np.sqrt(np.abs(fv)))
    return fv


def encode_vlad(codebook, descriptors):
    """VLAD: per-centre residual sums, intra-normalised, then L2 normalised."""
    X = _check(codebook, descriptors)
    labels, _ = _assign(X, codebook.centers)
    res = X - codebook.centers[labels]
    blocks = np.zeros_like(codebook.centers)
    np.add.at(blocks, labels, res)
    mass = np.zeros(codebook.k)
    np.add.at(mass, labels, np.linalg.norm(res, axis=1))
    norms = np.linalg.norm(blocks, axis=1)
    # residuals that cancel down to rounding noise count as an empty block;
    # intra-normalising them would amplify order-dependent noise to unit length
    live = norms > _CANCEL_TOL * mass
    blocks[~live] = 0.0
    blocks[live] /= norms[live, None]
    return _l2(blocks.ravel())
