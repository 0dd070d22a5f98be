"""Greedy coreset solvers: facility-location cover greedy, orthogonal
matching pursuit with nonnegative ridge refits, a random baseline, and a
brute-force oracle for small instances.

Weight conventions: the cover greedy and the random baseline emit weights
summing to the number of units m; OMP emits whatever the nonnegative ridge
fit produces. Consumers that need normalized weights rescale themselves.
"""

import hashlib
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import (DimensionError, EmptyInputError, SizeLimitError,
                     SolverConvergenceError)

METHODS = ("craig", "gradmatch-omp", "random")


@dataclass(frozen=True)
class SolverConfig:
    method: str = "gradmatch-omp"
    budget: float = 0.5        # float in (0,1] = fraction; int = unit count
    omp_lambda: float = 0.0
    tolerance: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise DimensionError(f"method must be one of {METHODS}")
        if isinstance(self.budget, bool) or (
            isinstance(self.budget, float) and not 0.0 < self.budget <= 1.0
        ):
            raise DimensionError("fractional budget must lie in (0, 1]")
        if isinstance(self.budget, int) and self.budget < 1:
            raise DimensionError("absolute budget must be >= 1")
        if self.omp_lambda < 0 or self.tolerance < 0:
            raise DimensionError("omp_lambda and tolerance must be >= 0")

    def resolve_budget(self, m):
        """Unit count k with 1 <= k <= m."""
        if isinstance(self.budget, int):
            k = self.budget
        else:
            k = int(np.floor(self.budget * m + 0.5))
        k = max(1, min(k, m))
        return k

    def digest(self):
        text = f"{self.method}|{self.budget!r}|{self.omp_lambda!r}|{self.tolerance!r}|{self.seed}"
        return hashlib.sha256(text.encode()).hexdigest()[:12]


@dataclass
class Coreset:
    """Selected unit indices with nonnegative weights, in selection order."""

    indices: np.ndarray
    weights: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.indices.shape != self.weights.shape or self.indices.ndim != 1:
            raise DimensionError("indices and weights must be matching vectors")
        if len(np.unique(self.indices)) != len(self.indices):
            raise DimensionError("coreset indices must be unique")
        if self.indices.size and (np.any(self.weights < 0) or not np.all(np.isfinite(self.weights))):
            raise DimensionError("weights must be finite and >= 0")

    @property
    def size(self):
        return int(self.indices.size)


def _provenance(name, cfg, epoch):
    tag = f"{name} cfg={cfg.digest()}"
    if epoch is not None:
        tag += f" epoch={epoch}"
    return tag


def pairwise_gradient_distances(rows, block=None):
    """Exact m x m Euclidean distance matrix between feature rows.

    Computed from explicit differences in row blocks (no squared-norm
    shortcut) so the result is accurate near zero; symmetrized exactly and
    the diagonal pinned to 0. Block size keeps the temporary difference
    tensor around 32 MB.
    """
    rows = np.asarray(rows, dtype=np.float64)
    m = rows.shape[0]
    if block is None:
        block = max(1, min(m, int(4e6 / max(1, m * rows.shape[1]))))
    dist = np.empty((m, m))
    for start in range(0, m, block):
        stop = min(start + block, m)
        diff = rows[start:stop, None, :] - rows[None, :, :]
        dist[start:stop] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist


def craig_select(features, cfg, epoch=None):
    """Facility-location cover greedy with a phantom anchor element.

    The anchor sits at distance max_ij d_ij from every unit, which makes the
    cover value F(S) = L({anchor}) - L(S + anchor) nonnegative and monotone.
    Greedy adds the unit with the largest marginal cover gain (ties to the
    lowest index) until the budget is reached or the remaining cover mass
    drops to the tolerance. Weight of a selected unit = number of units whose
    nearest selected unit it is (ties to the lowest selected index), so the
    weights sum to m.
    """
    m = features.m
    if m == 0:
        raise EmptyInputError("craig_select needs at least one unit")
    k = cfg.resolve_budget(m)
    dist = pairwise_gradient_distances(features.rows)
    dmax = float(dist.max())

    nearest = np.full(m, dmax)          # distance to S + {anchor}
    selected = []
    selectable = np.ones(m, dtype=bool)
    while len(selected) < k:
        if selected and nearest.sum() <= cfg.tolerance:
            break
        gains = np.maximum(nearest[:, None] - dist, 0.0).sum(axis=0)
        gains[~selectable] = -np.inf
        j = int(np.argmax(gains))       # first max = lowest index
        selected.append(j)
        selectable[j] = False
        nearest = np.minimum(nearest, dist[:, j])

    order = np.array(selected, dtype=np.int64)
    by_index = np.argsort(order, kind="stable")
    sub = dist[:, order[by_index]]
    assigned = order[by_index][np.argmin(sub, axis=1)]  # ties -> lowest unit index
    weights = np.array([np.count_nonzero(assigned == j) for j in order], dtype=np.float64)
    return Coreset(indices=order, weights=weights,
                   provenance=_provenance("craig", cfg, epoch))


def _omp_objective(A, b, gamma, lam):
    resid = b - A @ gamma
    return float(np.linalg.norm(resid) + lam * gamma @ gamma)


_SWAP_POLISH_MAX_UNITS = 32


def _omp_greedy(A, b, k, lam, tolerance):
    """Greedy support growth with nonnegative ridge refits.

    Scores candidates by the positive part of the descent direction of the
    regularized objective, normalized by the atom's component orthogonal to
    the current span (a matching-pursuit greedy on an unnormalized
    dictionary; anti-correlated atoms are useless under the nonnegative
    refit and score zero). Ties break to the lowest index. Returns the
    selection order, fitted weights, and the residual-objective trace.
    """
    m = A.shape[1]
    gamma = np.zeros(m)
    selected = []
    warm = None
    trace = []
    while len(selected) < k:
        residual = b - A @ gamma
        correlation = A.T @ residual - lam * gamma
        if selected:
            q, _ = np.linalg.qr(A[:, selected])
            ortho = A - q @ (q.T @ A)
        else:
            ortho = A
        den = np.sqrt(np.einsum("ij,ij->j", ortho, ortho) + lam)
        score = np.where(den > 1e-12,
                         np.maximum(correlation, 0.0) / np.where(den > 1e-12, den, 1.0),
                         0.0)
        score[selected] = -np.inf
        j = int(np.argmax(score))
        selected.append(j)
        warm = np.append(warm, 0.0) if warm is not None else None
        fitted = nonneg_ridge_fit(A[:, selected], b, lam, warm_start=warm)
        warm = fitted
        gamma = np.zeros(m)
        gamma[selected] = fitted
        trace.append(_omp_objective(A, b, gamma, lam))
        if trace[-1] <= tolerance:
            break
    return selected, gamma, trace


def _omp_swap_polish(A, b, selected, gamma, lam):
    """First-improvement single-swap local search over the support.

    Deterministic scan order; each accepted swap strictly decreases the
    residual objective, so the loop terminates at a swap-local optimum.
    """
    m = A.shape[1]
    best = _omp_objective(A, b, gamma, lam)
    for _ in range(4 * len(selected) + 8):
        improved = False
        for pos in range(len(selected)):
            for unit in range(m):
                if unit in selected:
                    continue
                cand = selected[:pos] + [unit] + selected[pos + 1:]
                fitted = nonneg_ridge_fit(A[:, cand], b, lam)
                trial_gamma = np.zeros(m)
                trial_gamma[cand] = fitted
                value = _omp_objective(A, b, trial_gamma, lam)
                if value < best - 1e-12:
                    selected, gamma, best = cand, trial_gamma, value
                    improved = True
        if not improved:
            break
    return selected, gamma


def omp_select(features, cfg, epoch=None):
    """Orthogonal matching pursuit on the summed-gradient matching problem.

    Target is the sum of all rows; weights are nonnegative ridge refits over
    the support after every greedy step. Stops at the budget or when the
    residual objective falls to the tolerance. Small instances (m <= 32) get
    a deterministic swap polish, which keeps the greedy competitive with
    exhaustive search there.
    """
    m = features.m
    if m == 0:
        raise EmptyInputError("omp_select needs at least one unit")
    k = cfg.resolve_budget(m)
    A = features.rows.T                      # (p, m), columns are units
    b = features.rows.sum(axis=0)
    lam = cfg.omp_lambda

    selected, gamma, _ = _omp_greedy(A, b, k, lam, cfg.tolerance)
    if m <= _SWAP_POLISH_MAX_UNITS:
        selected, gamma = _omp_swap_polish(A, b, selected, gamma, lam)

    order = np.array(selected, dtype=np.int64)
    return Coreset(indices=order, weights=gamma[order],
                   provenance=_provenance("gradmatch-omp", cfg, epoch))


def nonneg_ridge_fit(A, b, lam=0.0, warm_start=None, kkt_tol=1e-8, max_iter=None):
    """min ||b - A @ g||^2 + lam ||g||^2 subject to g >= 0.

    Lawson-Hanson active set on the ridge normal equations, optionally warm
    started from a previous support. Deterministic; raises
    SolverConvergenceError with the final KKT residual if the tolerance is
    not met within the iteration cap.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError("A must be a p x s matrix")
    p, s = A.shape
    if s < 1:
        raise DimensionError("need at least one column")
    b = np.asarray(b, dtype=np.float64).reshape(p)
    gram = A.T @ A + lam * np.eye(s)
    lin = A.T @ b
    scale = max(1.0, float(np.abs(lin).max(initial=0.0)))
    tol = kkt_tol * scale
    if max_iter is None:
        max_iter = 10 * s + 50

    def solve_passive(passive):
        idx = np.flatnonzero(passive)
        sub = gram[np.ix_(idx, idx)]
        try:
            sol = np.linalg.solve(sub, lin[idx])
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(sub, lin[idx], rcond=None)[0]
        full = np.zeros(s)
        full[idx] = sol
        return full

    gamma = np.zeros(s)
    passive = np.zeros(s, dtype=bool)
    if warm_start is not None:
        passive = np.asarray(warm_start, dtype=np.float64).reshape(s) > 0
        if np.any(passive):
            gamma = _clip_to_feasible(solve_passive(passive), passive, gamma, solve_passive)
            passive = gamma > 0

    stalled = np.zeros(s, dtype=bool)   # degenerate entries that add nothing
    for _ in range(max_iter):
        w = lin - gram @ gamma          # negative gradient (dual residual)
        w_active = np.where(passive | stalled, -np.inf, w)
        if np.max(w_active, initial=-np.inf) <= tol:
            break
        j = int(np.argmax(w_active))
        before = gamma.copy()
        passive[j] = True
        trial = solve_passive(passive)
        gamma = _clip_to_feasible(trial, passive, gamma, solve_passive)
        passive = gamma > 0
        if not passive[j] and np.array_equal(gamma, before):
            stalled[j] = True           # singular face: re-adding j cannot help

    kkt = _kkt_residual(gram, lin, gamma)
    if kkt > tol:
        # rank-deficient faces can stall the active set; accelerated
        # projected gradient converges on any convex instance
        gamma = _fista_nnls(gram, lin, gamma, tol)
        kkt = _kkt_residual(gram, lin, gamma)
    if kkt > tol:
        raise SolverConvergenceError(
            f"nonnegative ridge fit stalled with KKT residual {kkt:.3e}", residual=kkt
        )
    return gamma


def _kkt_residual(gram, lin, gamma):
    w = lin - gram @ gamma
    return max(float(np.max(np.where(gamma > 0, np.abs(w), w), initial=0.0)), 0.0)


def _fista_nnls(gram, lin, gamma0, tol, max_iter=200000):
    lipschitz = float(np.linalg.eigvalsh(gram)[-1])
    if lipschitz <= 0.0:
        return np.zeros_like(gamma0)
    step = 1.0 / lipschitz
    x = np.maximum(gamma0, 0.0)
    z = x.copy()
    momentum = 1.0
    for it in range(max_iter):
        x_new = np.maximum(z - step * (gram @ z - lin), 0.0)
        momentum_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum * momentum))
        z = x_new + (momentum - 1.0) / momentum_new * (x_new - x)
        x, momentum = x_new, momentum_new
        if it % 64 == 0 and _kkt_residual(gram, lin, x) <= tol:
            break
    return x


def _clip_to_feasible(trial, passive, gamma, solve_passive):
    """Inner Lawson-Hanson loop: walk toward `trial`, dropping variables that hit 0.

    Exactly the variables defining the feasibility step (and any that land
    nonpositive) leave the passive set, so each pass shrinks it by at least
    one and the loop terminates.
    """
    while np.any(trial[passive] <= 0.0):
        idx = np.flatnonzero(passive & (trial <= 0.0))
        denom = gamma[idx] - trial[idx]
        steps = np.where(denom > 0, gamma[idx] / np.where(denom > 0, denom, 1.0), 0.0)
        alpha = float(np.min(steps))
        gamma = gamma + alpha * (trial - gamma)
        gamma[idx[steps <= alpha]] = 0.0
        passive &= gamma > 0.0
        gamma[~passive] = 0.0
        if not np.any(passive):
            return np.zeros_like(gamma)
        trial = solve_passive(passive)
    return trial


def random_select(m, cfg, epoch=None):
    """Uniform sample without replacement; uniform weights m/k so the total
    weight mass matches the cover greedy's convention."""
    if m < 1:
        raise EmptyInputError("random_select needs at least one unit")
    k = cfg.resolve_budget(m)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 0x5e1ec7]))
    indices = np.sort(rng.choice(m, size=k, replace=False))
    weights = np.full(k, m / k)
    return Coreset(indices=indices, weights=weights,
                   provenance=_provenance("random", cfg, epoch))


def select(features, cfg, epoch=None):
    """Dispatch on cfg.method."""
    if cfg.method == "craig":
        return craig_select(features, cfg, epoch)
    if cfg.method == "gradmatch-omp":
        return omp_select(features, cfg, epoch)
    return random_select(features.m, cfg, epoch)


def brute_force_subset_oracle(features, k):
    """Exhaustive minimum-residual size-k subset (unconstrained fit, then
    clamped to >= 0). Limited to m <= 12, k <= 4 by design."""
    m = features.m
    if m > 12 or k > 4:
        raise SizeLimitError("oracle limited to m <= 12 and k <= 4")
    if k < 1 or k > m:
        raise DimensionError("need 1 <= k <= m")
    A = features.rows.T
    b = features.rows.sum(axis=0)
    best = None
    for combo in itertools.combinations(range(m), k):
        cols = A[:, combo]
        fit = np.linalg.lstsq(cols, b, rcond=None)[0]
        fit = np.maximum(fit, 0.0)
        resid = float(np.linalg.norm(b - cols @ fit))
        if best is None or resid < best[2]:
            best = (np.array(combo, dtype=np.int64), fit, resid)
    return best


def expand_coreset(coreset, index_map, provenance=None):
    """Map a unit-level coreset to sample level: every sample of a selected
    unit inherits that unit's weight."""
    sample_idx, sample_w = [], []
    for unit, weight in zip(coreset.indices, coreset.weights):
        members = index_map[int(unit)]
        sample_idx.append(members)
        sample_w.append(np.full(len(members), weight))
    indices = np.concatenate(sample_idx) if sample_idx else np.empty(0, dtype=np.int64)
    weights = np.concatenate(sample_w) if sample_w else np.empty(0)
    return Coreset(indices=indices, weights=weights,
                   provenance=provenance or coreset.provenance)


def save_coreset(path, coreset):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# provenance: {coreset.provenance}\n")
        for idx, w in zip(coreset.indices, coreset.weights):
            fh.write(f"{int(idx)} {float(w)!r}\n")


def load_coreset(path):
    provenance = ""
    indices, weights = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# provenance:"):
                    provenance = line[len("# provenance:"):].strip()
                continue
            left, right = line.split()
            indices.append(int(left))
            weights.append(float(right))
    return Coreset(indices=np.array(indices, dtype=np.int64),
                   weights=np.array(weights), provenance=provenance)
