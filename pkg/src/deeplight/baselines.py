"""Reference analyses the decoder is compared against: voxelwise GLM with
contrast statistics, searchlight decoding with linear SVMs, and sparse
(L1-regularized) logistic regression over the whole volume.

Estimation choices kept deliberately simple and deterministic: OLS for the
GLM, full-batch subgradient descent for the SVMs, FISTA for the subject-level
lasso and proximal SGD for the group-level lasso.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.special import expit
from scipy.stats import gamma

from .errors import ConfigurationError, InputError

# ---------------------------------------------------------------------------
# hemodynamic response
# ---------------------------------------------------------------------------

HRF_SUPPORT_S = 32.0


def hrf_samples(tr_s, duration_s=HRF_SUPPORT_S):
    """Double-gamma response sampled every tr_s, peak-normalized to 1.

    Gamma shapes 7 and 17 (unit scale) put the response peak at 6s and the
    undershoot trough near 16s; the undershoot is weighted 1/6.
    """
    t = np.arange(0.0, duration_s + 1e-9, tr_s)
    h = gamma.pdf(t, 7.0) - gamma.pdf(t, 17.0) / 6.0
    return h / h.max()


def hrf_convolve(boxcar, tr_s):
    """Convolve a per-TR indicator with the response, truncated to its length."""
    boxcar = np.asarray(boxcar, dtype=np.float64)
    h = hrf_samples(tr_s)
    return np.convolve(boxcar, h)[: boxcar.shape[0]]


# ---------------------------------------------------------------------------
# GLM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignMatrix:
    matrix: np.ndarray        # (T, P)
    names: tuple              # P column names
    confound_idx: tuple       # indices of the no-interest columns

    @property
    def n_task(self):
        return self.matrix.shape[1] - len(self.confound_idx)


def build_design(run_boxcars, tr_s, state_names=None):
    """Stack per-run HRF-convolved stimulus boxcars plus per-run confounds.

    run_boxcars: one (T_r, K) array of {0,1} stimulus indicators per run.
    Confounds: one intercept and one centered linear drift per run (the
    intercept doubles as the run indicator).
    """
    if not run_boxcars:
        raise InputError("no run boxcars given")
    run_boxcars = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in run_boxcars]
    n_states = run_boxcars[0].shape[1]
    if any(b.shape[1] != n_states for b in run_boxcars):
        raise InputError("runs disagree on the number of stimulus conditions")
    total_t = sum(b.shape[0] for b in run_boxcars)
    task = np.zeros((total_t, n_states))
    confounds = []
    if state_names is None:
        state_names = [f"state{k}" for k in range(n_states)]
    names = list(state_names)
    row = 0
    for r, box in enumerate(run_boxcars):
        t_run = box.shape[0]
        for k in range(n_states):
            task[row:row + t_run, k] = hrf_convolve(box[:, k], tr_s)
        intercept = np.zeros(total_t)
        intercept[row:row + t_run] = 1.0
        drift = np.zeros(total_t)
        drift[row:row + t_run] = np.linspace(-1.0, 1.0, t_run)
        confounds.extend([intercept, drift])
        names.extend([f"run{r}/intercept", f"run{r}/drift"])
        row += t_run
    matrix = np.column_stack([task] + confounds)
    confound_idx = tuple(range(n_states, matrix.shape[1]))
    return DesignMatrix(matrix=matrix, names=tuple(names), confound_idx=confound_idx)


@dataclass
class GlmResult:
    beta: np.ndarray        # (P, N)
    resid_var: np.ndarray   # (N,) with T - P degrees of freedom
    dof: int
    xtx_inv: np.ndarray     # (P, P)
    design: DesignMatrix
    grid_shape: tuple = ()


def glm_fit(data, design):
    """Ordinary least squares per voxel; data is (T, N) or (T, X, Y, Z)."""
    y = np.asarray(data, dtype=np.float64)
    grid_shape = y.shape[1:]
    y = y.reshape(y.shape[0], -1)
    x = design.matrix
    t_len, p = x.shape
    if y.shape[0] != t_len:
        raise InputError(f"data has {y.shape[0]} timepoints, design expects {t_len}")
    if t_len <= p:
        raise ConfigurationError(f"need more timepoints ({t_len}) than predictors ({p})")
    rank = np.linalg.matrix_rank(x)
    if rank < p:
        _, r, piv = sla.qr(x, mode="economic", pivoting=True)
        bad = sorted(piv[rank:])
        bad_names = ", ".join(design.names[i] for i in bad)
        raise ConfigurationError(f"design matrix is rank deficient; collinear columns: {bad_names}")
    xtx = x.T @ x
    xtx_inv = np.linalg.inv(xtx)
    beta = xtx_inv @ (x.T @ y)
    resid = y - x @ beta
    resid_var = (resid * resid).sum(axis=0) / (t_len - p)
    return GlmResult(beta=beta, resid_var=resid_var, dof=t_len - p,
                     xtx_inv=xtx_inv, design=design, grid_shape=grid_shape)


def one_vs_rest_contrast(design, state, n_states=4):
    """This state against the average of the other states; confounds get 0."""
    c = np.zeros(design.matrix.shape[1])
    c[state] = 1.0
    for k in range(n_states):
        if k != state:
            c[k] = -1.0 / (n_states - 1)
    return c


def glm_contrast(result, c):
    """First-level Z map for a contrast vector: cᵀβ over its standard error."""
    c = np.asarray(c, dtype=np.float64)
    num = c @ result.beta
    var_scale = float(c @ result.xtx_inv @ c)
    se = np.sqrt(result.resid_var * var_scale)
    z = np.divide(num, se, out=np.zeros_like(num), where=se > 0)
    return z.reshape(result.grid_shape) if result.grid_shape else z


def second_level(contrast_maps):
    """One-sample t-test across subjects, per voxel."""
    maps = np.asarray(contrast_maps, dtype=np.float64)
    if maps.ndim < 2 or maps.shape[0] < 2:
        raise InputError("second-level test needs at least 2 subject maps")
    n = maps.shape[0]
    mean = maps.mean(axis=0)
    sd = maps.std(axis=0, ddof=1)
    se = sd / np.sqrt(n)
    return np.divide(mean, se, out=np.zeros_like(mean), where=se > 0)


# ---------------------------------------------------------------------------
# linear SVM (primal, deterministic subgradient descent)
# ---------------------------------------------------------------------------

@dataclass
class SvmModel:
    weights: np.ndarray   # (d,) binary or (d, K) one-vs-rest
    bias: np.ndarray
    c: float

    def scores(self, features):
        return np.asarray(features) @ self.weights + self.bias

    def predict(self, features):
        s = self.scores(features)
        if s.ndim == 1:
            return np.where(s >= 0, 1, -1)
        return np.argmax(s, axis=1)


def _svm_descend(x, y_signed, c, iters):
    """Full-batch Pegasos-style updates on (n, d) data, (n, K) ±1 targets."""
    n, d = x.shape
    k = y_signed.shape[1]
    lam = 1.0 / (c * n)
    w = np.zeros((d, k))
    b = np.zeros(k)
    radius = 1.0 / np.sqrt(lam)
    for t in range(1, iters + 1):
        margins = y_signed * (x @ w + b)
        viol = (margins < 1.0).astype(np.float64) * y_signed
        eta = 1.0 / (lam * t)
        w = (1.0 - 1.0 / t) * w + (eta / n) * (x.T @ viol)
        b = b + (eta / n) * viol.sum(axis=0)
        norms = np.sqrt((w * w).sum(axis=0))
        shrink = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
        w = w * shrink
    return w, b


def svm_train(features, labels, c=1.0, iters=200):
    """Binary max-margin classifier; labels in {-1, +1} (or {0, 1})."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if set(np.unique(y)) <= {0, 1}:
        y = 2 * y - 1
    y = y.astype(np.float64)
    if np.unique(y).size < 2:
        raise InputError("svm training needs both classes present")
    w, b = _svm_descend(x, y[:, None], c, iters)
    return SvmModel(weights=w[:, 0], bias=b[0], c=c)


def svm_train_multiclass(features, labels, n_classes, c=1.0, iters=200):
    """One separating hyperplane per class against the rest, argmax decides."""
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    present = np.unique(labels)
    if present.size < 2:
        raise InputError("svm training needs at least two classes present")
    y_signed = np.where(labels[:, None] == np.arange(n_classes), 1.0, -1.0)
    w, b = _svm_descend(x, y_signed, c, iters)
    return SvmModel(weights=w, bias=b, c=c)


# ---------------------------------------------------------------------------
# searchlight
# ---------------------------------------------------------------------------

def sphere_offsets(radius_mm, voxel_mm):
    """All integer voxel offsets within radius_mm of the center, sorted."""
    if radius_mm <= 0 or voxel_mm <= 0:
        raise ConfigurationError("sphere radius and voxel size must be positive")
    reach = int(np.floor(radius_mm / voxel_mm))
    axis = np.arange(-reach, reach + 1)
    dx, dy, dz = np.meshgrid(axis, axis, axis, indexing="ij")
    offsets = np.stack([dx.ravel(), dy.ravel(), dz.ravel()], axis=1)
    dist2 = (offsets.astype(np.float64) ** 2).sum(axis=1) * voxel_mm ** 2
    offsets = offsets[dist2 <= radius_mm ** 2]
    order = np.lexsort((offsets[:, 2], offsets[:, 1], offsets[:, 0]))
    return offsets[order]


@dataclass
class SearchlightMap:
    accuracy: np.ndarray   # NaN outside the mask
    radius_mm: float
    n_centers: int


def searchlight(train_data, train_labels, test_data, test_labels, mask_grid,
                radius_mm, voxel_mm, n_classes=4, c=1.0, iters=120):
    """Accuracy map: one multi-class SVM per in-mask center over its sphere.

    Data arrays are (n_samples, X, Y, Z); spheres are clipped to the mask and
    the grid.
    """
    train_data = np.asarray(train_data, dtype=np.float64)
    test_data = np.asarray(test_data, dtype=np.float64)
    mask_grid = np.asarray(mask_grid, dtype=bool)
    grid_shape = mask_grid.shape
    if train_data.shape[1:] != grid_shape or test_data.shape[1:] != grid_shape:
        raise InputError("searchlight data and mask grids disagree")
    offsets = sphere_offsets(radius_mm, voxel_mm)
    train_flat = train_data.reshape(train_data.shape[0], -1)
    test_flat = test_data.reshape(test_data.shape[0], -1)
    strides = np.array([grid_shape[1] * grid_shape[2], grid_shape[2], 1])
    acc = np.full(grid_shape, np.nan)
    centers = np.argwhere(mask_grid)
    test_labels = np.asarray(test_labels, dtype=int)
    for cx, cy, cz in centers:
        pos = offsets + (cx, cy, cz)
        ok = np.all((pos >= 0) & (pos < grid_shape), axis=1)
        pos = pos[ok]
        pos = pos[mask_grid[pos[:, 0], pos[:, 1], pos[:, 2]]]
        flat_idx = pos @ strides
        model = svm_train_multiclass(train_flat[:, flat_idx], train_labels,
                                     n_classes, c=c, iters=iters)
        pred = model.predict(test_flat[:, flat_idx])
        acc[cx, cy, cz] = float(np.mean(pred == test_labels))
    return SearchlightMap(accuracy=acc, radius_mm=radius_mm, n_centers=len(centers))


# ---------------------------------------------------------------------------
# sparse logistic regression (lasso)
# ---------------------------------------------------------------------------

# the regularization strengths screened for the group-level model
GROUP_LAMBDA_GRID = (1e-7, 1e-6, 1e-5, 1e-4, 2e-4, 3e-4, 5e-4, 8e-4, 1e-3,
                     2e-3, 4e-3, 7e-3, 0.01, 0.02, 0.03, 0.06, 0.1, 0.2, 0.3, 0.5)


def subject_c_grid(n=100, lo=1e-6, hi=100.0):
    """The inverse-regularization grid screened for subject-level fits."""
    return np.logspace(np.log10(lo), np.log10(hi), n)


@dataclass
class LassoModel:
    coef: np.ndarray        # (d, K)
    intercept: np.ndarray   # (K,)
    lam: float

    def scores(self, features):
        return np.asarray(features) @ self.coef + self.intercept

    def predict(self, features):
        return np.argmax(self.scores(features), axis=1)


def _onehot(labels, n_classes):
    labels = np.asarray(labels, dtype=int)
    return (labels[:, None] == np.arange(n_classes)).astype(np.float64)


def lasso_objective(coef, intercept, x, y_onehot, lam):
    """Summed one-vs-rest logistic loss plus the L1 penalty on the weights."""
    z = x @ coef + intercept
    nll = np.logaddexp(0.0, z) - y_onehot * z
    return float(nll.sum() + lam * np.abs(coef).sum())


def lasso_lambda_max(x, labels, n_classes):
    """Smallest λ at which the all-zero coefficient vector is optimal
    (intercept-free model)."""
    y = _onehot(labels, n_classes)
    grad0 = np.asarray(x).T @ (0.5 - y)
    return float(np.abs(grad0).max())


def _soft_threshold(v, amount):
    return np.sign(v) * np.maximum(np.abs(v) - amount, 0.0)


def lasso_fit(features, labels, lam, n_classes=None, iters=500, tol=1e-9,
              fit_intercept=False):
    """One-vs-rest L1 logistic regression by accelerated proximal gradient.

    Objective per class: Σ_t [softplus(z_t) − y_t z_t] + λ‖β‖₁ with
    z = βᵀx (+ optional unpenalized intercept).  Deterministic.
    """
    if lam < 0:
        raise ConfigurationError(f"lasso lambda must be >= 0, got {lam}")
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    y = _onehot(labels, n_classes)
    n, d = x.shape
    # Lipschitz constant of the summed logistic loss gradient
    lip = sla.svdvals(x)[0] ** 2 / 4.0 if min(n, d) > 0 else 1.0
    lip = max(lip, 1e-12)
    step = 1.0 / lip
    coef = np.zeros((d, n_classes))
    intercept = np.zeros(n_classes)
    momentum = coef.copy()
    momentum_b = intercept.copy()
    t_acc = 1.0
    prev_obj = np.inf
    for _ in range(iters):
        z = x @ momentum + momentum_b
        resid = expit(z) - y
        grad = x.T @ resid
        new_coef = _soft_threshold(momentum - step * grad, step * lam)
        new_intercept = momentum_b - step * resid.sum(axis=0) if fit_intercept else intercept
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t_acc * t_acc)) / 2.0
        gamma_acc = (t_acc - 1.0) / t_next
        momentum = new_coef + gamma_acc * (new_coef - coef)
        momentum_b = new_intercept + gamma_acc * (new_intercept - intercept)
        coef, intercept, t_acc = new_coef, new_intercept, t_next
        obj = lasso_objective(coef, intercept, x, y, lam)
        if abs(prev_obj - obj) <= tol * max(1.0, abs(prev_obj)):
            break
        if obj > prev_obj:  # restart acceleration when it overshoots
            momentum, momentum_b, t_acc = coef.copy(), intercept.copy(), 1.0
        prev_obj = obj
    return LassoModel(coef=coef, intercept=intercept, lam=lam)


def lasso_fit_sgd(subject_data, lam, epochs, seed, n_classes=4,
                  subjects_per_epoch=5, batches_per_epoch=50, batch_size=50,
                  lr=0.01, total_t=None):
    """Group-level fit on data too large to batch fully: each epoch samples a
    few subjects, then draws fixed-size TR batches from their pooled samples
    and takes proximal gradient steps.

    subject_data: list of (features (T_s, d), labels (T_s,)) per subject.
    The penalty is rescaled by batch/total sample count so λ keeps the same
    meaning as in the full-batch objective.
    """
    if lam < 0:
        raise ConfigurationError(f"lasso lambda must be >= 0, got {lam}")
    if not subject_data:
        raise InputError("no subjects given to the group-level lasso")
    rng = np.random.default_rng(seed)
    d = subject_data[0][0].shape[1]
    if total_t is None:
        total_t = sum(x.shape[0] for x, _ in subject_data)
    coef = np.zeros((d, n_classes))
    n_subj = len(subject_data)
    take = min(subjects_per_epoch, n_subj)
    for _ in range(epochs):
        chosen = rng.choice(n_subj, size=take, replace=False)
        pool_x = np.concatenate([subject_data[s][0] for s in chosen], axis=0)
        pool_y = _onehot(np.concatenate([subject_data[s][1] for s in chosen]), n_classes)
        pool_n = pool_x.shape[0]
        for _ in range(batches_per_epoch):
            idx = rng.choice(pool_n, size=min(batch_size, pool_n), replace=False)
            xb, yb = pool_x[idx], pool_y[idx]
            grad = xb.T @ (expit(xb @ coef) - yb) / xb.shape[0]
            coef = _soft_threshold(coef - lr * grad, lr * lam / total_t)
    return LassoModel(coef=coef, intercept=np.zeros(n_classes), lam=lam)


def lasso_nonzero_counts(model, tol=1e-10):
    return int(np.count_nonzero(np.abs(model.coef) > tol))
