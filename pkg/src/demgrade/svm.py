"""Polynomial-kernel soft-margin SVM trained with SMO, combined one-vs-one.

The binary solver works on the standard dual

    min_a  1/2 a^T Q a - e^T a   s.t.  y^T a = 0,  0 <= a_i <= C,

with ``Q_ij = y_i y_j K(x_i, x_j)``. Each step picks the maximal violating
index ``i`` and a partner ``j`` by second-order gain, then solves the
two-variable subproblem analytically. Selection is by argmax/argmin with
first-index tie-breaking, so training is fully deterministic.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, replace
from itertools import combinations

import numpy as np

from .errors import ArgumentError

TAU = 1e-12


@dataclass(frozen=True)
class KernelParams:
    degree: int = 3
    gamma: float | None = None  # None -> 1 / (n_features * var(X)) at fit time
    coef0: float = 0.0
    C: float = 1.0
    tol: float = 1e-3

    def __post_init__(self):
        if self.degree < 1:
            raise ArgumentError("degree must be >= 1")
        if self.C <= 0:
            raise ArgumentError("C must be positive")
        if not 0 < self.tol < 1:
            raise ArgumentError("tol must lie in (0, 1)")
        if self.gamma is not None and self.gamma <= 0:
            raise ArgumentError("gamma must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class BinarySvm:
    support_vectors: np.ndarray  # float32, standardized feature space
    dual_coefs: np.ndarray  # alpha_i * y_i
    bias: float
    params: KernelParams
    sv_indices: np.ndarray  # rows of the training matrix this machine saw
    converged: bool = True
    iterations: int = 0

    def decision(self, X) -> np.ndarray:
        K = poly_gram(np.atleast_2d(X), self.support_vectors, self.params)
        return K @ self.dual_coefs + self.bias


@dataclass(frozen=True)
class SvmModel:
    classes: tuple[int, ...]
    class_pairs: tuple[tuple[int, int], ...]
    machines: tuple[BinarySvm, ...]
    mean: np.ndarray
    scale: np.ndarray
    params: KernelParams
    strategy: str = "ovo"

    @property
    def n_features(self):
        return len(self.mean)

    def transform(self, X) -> np.ndarray:
        return standardize(X, self.mean, self.scale)


# -- kernel ------------------------------------------------------------------


def poly_kernel(x, z, p: KernelParams) -> float:
    """``(gamma * <x, z> + coef0) ** degree``; an unset gamma counts as 1."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ArgumentError(f"kernel arguments differ in shape: {x.shape} vs {z.shape}")
    gamma = 1.0 if p.gamma is None else p.gamma
    return float((gamma * np.dot(x, z) + p.coef0) ** p.degree)


def poly_gram(X, Z, p: KernelParams) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if X.shape[1] != Z.shape[1]:
        raise ArgumentError(f"feature dimensions differ: {X.shape[1]} vs {Z.shape[1]}")
    gamma = 1.0 if p.gamma is None else p.gamma
    return (gamma * (X @ Z.T) + p.coef0) ** p.degree


def default_gamma(X) -> float:
    var = float(np.var(np.asarray(X, dtype=np.float64)))
    n_features = np.asarray(X).shape[1]
    return 1.0 / (n_features * var) if var > 0 else 1.0


def fit_standardizer(X):
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def standardize(X, mean, scale) -> np.ndarray:
    # float32 storage keeps saved models bit-identical to in-memory ones
    Z = (np.asarray(X, dtype=np.float64) - mean) / scale
    return Z.astype(np.float32)


class _KernelRows:
    """Row access to the training Gram matrix with a bounded LRU cache."""

    def __init__(self, X, p, budget_bytes=1 << 30):
        self.X = np.asarray(X, dtype=np.float64)
        self.p = p
        n = len(self.X)
        if n * n * 8 <= budget_bytes:
            self.full = poly_gram(self.X, self.X, p)
            self.diag = np.diag(self.full).copy()
        else:
            self.full = None
            self.capacity = max(2, budget_bytes // (8 * n))
            self.cache = OrderedDict()
            gamma = 1.0 if p.gamma is None else p.gamma
            self.diag = (gamma * np.einsum("ij,ij->i", self.X, self.X) + p.coef0) ** p.degree

    def row(self, i):
        if self.full is not None:
            return self.full[i]
        hit = self.cache.get(i)
        if hit is not None:
            self.cache.move_to_end(i)
            return hit
        r = poly_gram(self.X[i : i + 1], self.X, self.p)[0]
        self.cache[i] = r
        if len(self.cache) > self.capacity:
            self.cache.popitem(last=False)
        return r


# -- binary SMO --------------------------------------------------------------


def _select_working_set(alpha, y, G, C, kernel, tol):
    yG = -y * G
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
    if not up.any() or not low.any():
        return None
    cand = np.where(up, yG, -np.inf)
    i = int(np.argmax(cand))
    m = cand[i]
    low_vals = np.where(low, yG, np.inf)
    M = low_vals.min()
    if m - M < tol:
        return None
    Ki = kernel.row(i)
    b = m - yG
    ok = low & (yG < m)
    a = kernel.diag[i] + kernel.diag - 2.0 * Ki
    a = np.where(a > 0, a, TAU)
    gain = np.where(ok, -(b * b) / a, np.inf)
    j = int(np.argmin(gain))
    return i, j


def _bias(alpha, y, G, C):
    yG = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        rho = yG[free].mean()
    else:
        ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2.0 if np.isfinite(ub) and np.isfinite(lb) else (ub if np.isfinite(ub) else lb)
    return -float(rho)


def smo_solve(X, y, p: KernelParams, max_passes=1000):
    """Run SMO and return ``(alpha, bias, converged, iterations)``."""
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    C = float(p.C)
    kernel = _KernelRows(X, p)
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of the dual objective, Q alpha - e
    max_iter = max(1, int(max_passes)) * max(n, 10)
    converged = False
    it = 0
    while it < max_iter:
        ws = _select_working_set(alpha, y, G, C, kernel, p.tol)
        if ws is None:
            converged = True
            break
        i, j = ws
        Ki, Kj = kernel.row(i), kernel.row(j)
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(Ki[i] + Kj[j] - 2.0 * Ki[j], TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = max(Ki[i] + Kj[j] - 2.0 * Ki[j], TAU)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0:
                ni, nj = 0.0, total
        dai, daj = ni - ai, nj - aj
        alpha[i], alpha[j] = ni, nj
        # Q_i = y_i * y * K_i
        G += (y[i] * dai) * y * Ki + (y[j] * daj) * y * Kj
        it += 1
    return alpha, _bias(alpha, y, G, C), converged, it


def dual_objective(alpha, y, K) -> float:
    """Dual value ``sum(a) - 1/2 sum_ij a_i a_j y_i y_j K_ij`` (to be maximized)."""
    ay = np.asarray(alpha) * np.asarray(y, dtype=np.float64)
    return float(np.sum(alpha) - 0.5 * ay @ K @ ay)


def smo_fit_binary(X, y, p: KernelParams, max_passes=1000, sv_eps=0.0) -> BinarySvm:
    """Fit one soft-margin machine on labels in {-1, +1}.

    ``p.gamma`` must already be resolved or is taken as 1. When the iteration
    cap is hit the current iterate is returned with ``converged=False``.
    """
    X = np.asarray(X, dtype=np.float32)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ArgumentError(f"X {X.shape} and y {y.shape} are not aligned")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ArgumentError("binary labels must be -1 or +1")
    if not ((y > 0).any() and (y < 0).any()):
        raise ArgumentError("binary SVM needs both classes present")
    if p.gamma is None:
        p = replace(p, gamma=1.0)
    alpha, bias, converged, iters = smo_solve(X, y, p, max_passes)
    sv = np.flatnonzero(alpha > sv_eps)
    return BinarySvm(
        support_vectors=X[sv],
        dual_coefs=alpha[sv] * y[sv],
        bias=bias,
        params=p,
        sv_indices=sv,
        converged=converged,
        iterations=iters,
    )


# -- multiclass --------------------------------------------------------------


def fit_multiclass(
    X, y, p: KernelParams | None = None, strategy="ovo", max_passes=1000, standardize_features=False
) -> SvmModel:
    """Train one machine per class pair (``ovo``) or per class against the
    rest (``ovr``); pairs run in ascending order.

    With ``standardize_features`` each feature is shifted and scaled to zero
    mean and unit variance using training statistics. Otherwise features are
    used as given (pixel inputs are already in [0, 1]). Note that a
    homogeneous odd-degree kernel (``coef0=0``) on centred data is an odd
    function of the input and tends to underfit.
    """
    p = p or KernelParams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ArgumentError(f"X {X.shape} and y {y.shape} are not aligned")
    classes = tuple(int(c) for c in np.unique(y))
    if len(classes) < 2:
        raise ArgumentError(f"need at least two classes, found {len(classes)}")
    if standardize_features:
        mean, scale = fit_standardizer(X)
    else:
        mean, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Z = standardize(X, mean, scale)
    if p.gamma is None:
        p = replace(p, gamma=default_gamma(Z))
    if strategy == "ovo":
        pairs = tuple(combinations(classes, 2))
    elif strategy == "ovr":
        pairs = tuple((c, -1) for c in classes)
    else:
        raise ArgumentError(f"unknown multiclass strategy {strategy!r}")
    machines = []
    for a, b in pairs:
        rows = np.flatnonzero((y == a) | (y == b)) if b >= 0 else np.arange(len(y))
        yy = np.where(y[rows] == a, 1.0, -1.0)
        m = smo_fit_binary(Z[rows], yy, p, max_passes)
        machines.append(replace(m, sv_indices=rows[m.sv_indices]))
    return SvmModel(classes, pairs, tuple(machines), mean, scale, p, strategy)


def decision_values(model: SvmModel, X) -> np.ndarray:
    """Per-machine decision values, shape ``(n_samples, n_machines)``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise ArgumentError(f"expected {model.n_features} features, got {X.shape[1]}")
    Z = model.transform(X)
    return np.stack([m.decision(Z) for m in model.machines], axis=1)


def _vote(model: SvmModel, dec, n_classes):
    votes = np.zeros(n_classes, dtype=np.int64)
    if model.strategy == "ovr":
        best = int(np.argmax(dec))
        votes[model.class_pairs[best][0]] = 1
        return model.class_pairs[best][0], votes
    strength = np.zeros(n_classes)
    for (a, b), d in zip(model.class_pairs, dec):
        votes[a if d >= 0 else b] += 1
        strength[a] += abs(d)
        strength[b] += abs(d)
    top = np.flatnonzero(votes == votes.max())
    if len(top) > 1:
        s = strength[top]
        top = top[s == s.max()]
    return int(top[0]), votes


def svm_predict(model: SvmModel, x, n_classes=4):
    """Return ``(class, votes)``.

    Each pairwise machine votes for its first class when the decision value
    is >= 0. Vote ties go to the tied class with the largest summed
    ``|decision value|`` over the machines it takes part in, then to the
    lowest index.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ArgumentError(f"expected a single feature vector, got shape {x.shape}")
    dec = decision_values(model, x[None, :])[0]
    cls, votes = _vote(model, dec, max(n_classes, max(model.classes) + 1))
    return cls, votes.tolist()


def predict(model: SvmModel, X, n_classes=4) -> np.ndarray:
    dec = decision_values(model, X)
    k = max(n_classes, max(model.classes) + 1)
    return np.array([_vote(model, d, k)[0] for d in dec], dtype=np.int64)
