"""Empirical verification of the regularized log-linear interpolation bound.

Tasks are triples (g, l, y) with indicator features for each g value, each l
value, and each (g, l) conjunction observed in training.  Three models are
trained on the same data with the same regularizer: the full feature set, a
global-only restriction, and a local-only restriction.  The claims checked:

* weight closeness: if two models sharing feature i make similar predictions
  on the training data, their weights on i differ by at most eps_i / lambda
  (plus optimization slack);
* prediction closeness: on (g, l) pairs never seen in training (where no
  conjunction feature exists), the full model's prediction lies within
  exp(4 * eps / lambda) - 1 of the renormalized product of the two restricted
  models' predictions.

The training objective is ``-sum log p(y|x) + lambda * ||theta||^2`` whose
regularizer gradient is ``2 * lambda * theta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

FEATURE_SETS = ("full", "global_only", "local_only")


class ConvergenceError(RuntimeError):
    def __init__(self, grad_norm: float, tol: float, iterations: int):
        self.grad_norm = grad_norm
        self.tol = tol
        self.iterations = iterations
        super().__init__(
            f"optimizer stopped after {iterations} iterations with gradient "
            f"sup-norm {grad_norm:.3e} (tolerance {tol:.0e})"
        )


@dataclass
class FeatureSpec:
    """Indicator features: one per g value, one per l value, one per observed pair.

    Columns are laid out [g indicators | l indicators | conjunctions]; the
    conjunction map only contains pairs seen in training, so unseen pairs
    activate exactly two features.
    """

    num_global: int
    num_local: int
    conj_index: dict = field(default_factory=dict)

    @classmethod
    def from_observed(cls, g, l, num_global: int, num_local: int) -> "FeatureSpec":
        pairs = sorted(set(zip(np.asarray(g).tolist(), np.asarray(l).tolist())))
        base = num_global + num_local
        conj = {pair: base + i for i, pair in enumerate(pairs)}
        return cls(num_global=num_global, num_local=num_local, conj_index=conj)

    @property
    def num_features(self) -> int:
        return self.num_global + self.num_local + len(self.conj_index)

    def global_feature(self, g: int) -> int:
        if not 0 <= g < self.num_global:
            raise ValueError(f"global value {g} out of range [0, {self.num_global})")
        return int(g)

    def local_feature(self, l: int) -> int:
        if not 0 <= l < self.num_local:
            raise ValueError(f"local value {l} out of range [0, {self.num_local})")
        return self.num_global + int(l)

    def feature_columns(self, feature_set: str) -> np.ndarray:
        if feature_set == "full":
            return np.arange(self.num_features)
        if feature_set == "global_only":
            return np.arange(self.num_global)
        if feature_set == "local_only":
            return np.arange(self.num_global, self.num_global + self.num_local)
        raise ValueError(f"unknown feature set {feature_set!r}")

    def active_indices(self, g: int, l: int) -> list:
        idx = [self.global_feature(g), self.local_feature(l)]
        conj = self.conj_index.get((int(g), int(l)))
        if conj is not None:
            idx.append(conj)
        return idx

    def featurize(self, g: int, l: int) -> np.ndarray:
        vec = np.zeros(self.num_features, dtype=np.float64)
        vec[self.active_indices(g, l)] = 1.0
        return vec

    def design_matrix(self, g, l) -> np.ndarray:
        g = np.asarray(g, dtype=np.int64)
        l = np.asarray(l, dtype=np.int64)
        phi = np.zeros((g.size, self.num_features), dtype=np.float64)
        rows = np.arange(g.size)
        phi[rows, g] = 1.0
        phi[rows, self.num_global + l] = 1.0
        for i, pair in enumerate(zip(g.tolist(), l.tolist())):
            col = self.conj_index.get(pair)
            if col is not None:
                phi[i, col] = 1.0
        return phi


@dataclass
class SyntheticTask:
    """Training triples plus the held-out pairs that never co-occur."""

    num_global: int
    num_local: int
    num_classes: int
    g: np.ndarray
    l: np.ndarray
    y: np.ndarray
    unseen_pairs: list
    feature_spec: FeatureSpec

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.int64)
        self.l = np.asarray(self.l, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)


def make_synthetic_task(
    rng: np.random.Generator,
    num_global: int = 20,
    num_local: int = 20,
    num_classes: int = 10,
    num_samples: int = 5000,
    num_unseen: int = 20,
    max_tries: int = 50,
) -> SyntheticTask:
    """Random task whose labels depend additively on g and l effects.

    Held-out pairs are excluded from the sampler; resamples until every g and
    every l value appears in training so all restricted-model features carry
    evidence.
    """
    total_pairs = num_global * num_local
    if num_unseen >= total_pairs:
        raise ValueError("cannot hold out every pair")
    for _ in range(max_tries):
        unseen_flat = rng.choice(total_pairs, size=num_unseen, replace=False)
        unseen = sorted((int(p // num_local), int(p % num_local)) for p in unseen_flat)
        unseen_set = set(unseen)
        seen = [
            (g, l)
            for g in range(num_global)
            for l in range(num_local)
            if (g, l) not in unseen_set
        ]
        w_g = rng.normal(0.0, 1.0, size=(num_global, num_classes))
        w_l = rng.normal(0.0, 1.0, size=(num_local, num_classes))
        picks = rng.integers(len(seen), size=num_samples)
        g = np.array([seen[i][0] for i in picks], dtype=np.int64)
        l = np.array([seen[i][1] for i in picks], dtype=np.int64)
        logits = w_g[g] + w_l[l]
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        u = rng.random(num_samples)
        y = (p.cumsum(axis=1) < u[:, None]).sum(axis=1)
        if len(set(g.tolist())) < num_global or len(set(l.tolist())) < num_local:
            continue
        spec = FeatureSpec.from_observed(g, l, num_global, num_local)
        return SyntheticTask(
            num_global=num_global,
            num_local=num_local,
            num_classes=num_classes,
            g=g,
            l=l,
            y=y,
            unseen_pairs=unseen,
            feature_spec=spec,
        )
    raise RuntimeError(f"no full-coverage task found in {max_tries} draws")


def make_redundant_task(
    num_values: int = 5, num_samples: int = 500, rng: np.random.Generator | None = None
) -> SyntheticTask:
    """g, l, and y are identical copies; local and global carry the same information."""
    rng = rng if rng is not None else np.random.default_rng(0)
    v = rng.integers(num_values, size=num_samples)
    # ensure coverage deterministically
    v[:num_values] = np.arange(num_values)
    spec = FeatureSpec.from_observed(v, v, num_values, num_values)
    unseen = [(a, b) for a in range(num_values) for b in range(num_values) if a != b]
    return SyntheticTask(
        num_global=num_values,
        num_local=num_values,
        num_classes=num_values,
        g=v.copy(),
        l=v.copy(),
        y=v.copy(),
        unseen_pairs=unseen,
        feature_spec=spec,
    )


# -- model and objective -------------------------------------------------


@dataclass
class LogLinearModel:
    """Softmax-linear classifier over the indicator features.

    ``weights`` is (num_features, num_classes); restricted models keep the
    full shape with structurally zero rows outside their feature set.
    """

    feature_spec: FeatureSpec
    num_classes: int
    reg_lambda: float
    feature_set: str = "full"
    weights: np.ndarray | None = None
    converged: bool = False
    grad_norm: float | None = None
    iterations: int = 0

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.zeros(
                (self.feature_spec.num_features, self.num_classes), dtype=np.float64
            )
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.feature_spec.num_features, self.num_classes):
            raise ValueError("weight shape does not match the feature spec")
        if self.reg_lambda <= 0:
            raise ValueError("reg_lambda must be positive")
        if self.feature_set not in FEATURE_SETS:
            raise ValueError(f"unknown feature set {self.feature_set!r}")

    def scores(self, g, l) -> np.ndarray:
        g = np.atleast_1d(np.asarray(g, dtype=np.int64))
        l = np.atleast_1d(np.asarray(l, dtype=np.int64))
        spec = self.feature_spec
        s = self.weights[g] + self.weights[spec.num_global + l]
        for i, pair in enumerate(zip(g.tolist(), l.tolist())):
            col = spec.conj_index.get(pair)
            if col is not None:
                s[i] = s[i] + self.weights[col]
        return s

    def predict_proba_pairs(self, g, l) -> np.ndarray:
        s = self.scores(g, l)
        s = s - s.max(axis=1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=1, keepdims=True)

    def predict_proba(self, g: int, l: int) -> np.ndarray:
        return self.predict_proba_pairs([g], [l])[0]


def _grouped(data_g, data_l, data_y, spec: FeatureSpec, num_classes: int):
    """Collapse examples into unique (g, l) patterns with label-count rows."""
    g = np.asarray(data_g, dtype=np.int64)
    l = np.asarray(data_l, dtype=np.int64)
    y = np.asarray(data_y, dtype=np.int64)
    codes = g * (spec.num_local + 1) + l
    uniq, inverse = np.unique(codes, return_inverse=True)
    n_pat = uniq.size
    pg = (uniq // (spec.num_local + 1)).astype(np.int64)
    pl = (uniq % (spec.num_local + 1)).astype(np.int64)
    counts = np.bincount(inverse, minlength=n_pat).astype(np.float64)
    label_counts = np.zeros((n_pat, num_classes), dtype=np.float64)
    np.add.at(label_counts, (inverse, y), 1.0)
    phi = spec.design_matrix(pg, pl)
    return phi, counts, label_counts


def objective_for_weights(
    weights: np.ndarray, spec: FeatureSpec, g, l, y, num_classes: int, reg_lambda: float
) -> float:
    """Full-data objective at arbitrary weights (used by convexity checks)."""
    phi, counts, label_counts = _grouped(g, l, y, spec, num_classes)
    s = phi @ weights
    z = s - s.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1)) + s.max(axis=1)
    nll = float((counts * lse).sum() - (label_counts * s).sum())
    return nll + reg_lambda * float((weights * weights).sum())


def loglinear_grad(
    weights: np.ndarray, spec: FeatureSpec, g, l, y, num_classes: int, reg_lambda: float
) -> np.ndarray:
    """Analytic gradient of the objective; 2*lambda*theta with empty data."""
    g = np.asarray(g)
    if g.size == 0:
        return 2.0 * reg_lambda * np.asarray(weights, dtype=np.float64)
    phi, counts, label_counts = _grouped(g, l, y, spec, num_classes)
    s = phi @ weights
    z = s - s.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return phi.T @ (counts[:, None] * p - label_counts) + 2.0 * reg_lambda * weights


def train_loglinear(
    data,
    spec: FeatureSpec,
    num_classes: int,
    reg_lambda: float,
    feature_set: str = "full",
    tol: float = 1e-8,
    max_iter: int = 10_000,
) -> LogLinearModel:
    """Minimize the convex objective restricted to a feature subset.

    ``data`` is (g, l, y) arrays or a SyntheticTask.  Deterministic from zero
    init.  A trust-region Newton phase gets near the optimum, then pure
    Newton steps (conjugate-gradient solves, judged only by the gradient
    norm) finish the job: objective-value acceptance tests bottom out on
    float64 noise around 1e-6 gradient norms, and plain gradient descent
    cannot reach the tolerance at small ``reg_lambda`` in any workable
    iteration budget.  Raises ConvergenceError if the gradient sup-norm does
    not fall below ``tol``.
    """
    g, l, y = _data_arrays(data)
    if g.size == 0:
        raise ValueError("empty training data")
    if reg_lambda <= 0:
        raise ValueError("reg_lambda must be positive")
    phi_full, counts, label_counts = _grouped(g, l, y, spec, num_classes)
    cols = spec.feature_columns(feature_set)
    phi = phi_full[:, cols]
    n_feat = cols.size

    def unpack(x: np.ndarray) -> np.ndarray:
        return x.reshape(n_feat, num_classes)

    def probs(x: np.ndarray) -> np.ndarray:
        s = phi @ unpack(x)
        s -= s.max(axis=1, keepdims=True)
        e = np.exp(s)
        return e / e.sum(axis=1, keepdims=True)

    def fun_and_grad(x: np.ndarray):
        w = unpack(x)
        s = phi @ w
        mx = s.max(axis=1, keepdims=True)
        e = np.exp(s - mx)
        sums = e.sum(axis=1)
        lse = np.log(sums) + mx[:, 0]
        nll = float((counts * lse).sum() - (label_counts * s).sum())
        val = nll + reg_lambda * float((w * w).sum())
        p = e / sums[:, None]
        grad = phi.T @ (counts[:, None] * p - label_counts) + 2.0 * reg_lambda * w
        return val, grad.reshape(-1)

    def grad_only(x: np.ndarray) -> np.ndarray:
        p = probs(x)
        return (
            phi.T @ (counts[:, None] * p - label_counts) + 2.0 * reg_lambda * unpack(x)
        ).reshape(-1)

    def hessp_at(p: np.ndarray):
        cp = counts[:, None] * p

        def hv(v: np.ndarray) -> np.ndarray:
            d = unpack(v)
            u = phi @ d
            jd = cp * u - p * (cp * u).sum(axis=1, keepdims=True)
            return (phi.T @ jd + 2.0 * reg_lambda * d).reshape(-1)

        return hv

    coarse = minimize(
        fun_and_grad,
        np.zeros(n_feat * num_classes),
        jac=True,
        hessp=lambda x, v: hessp_at(probs(x))(v),
        method="trust-ncg",
        options={"gtol": max(tol, 1e-6), "maxiter": max_iter},
    )
    x = coarse.x
    iterations = int(coarse.nit)
    target = 0.3 * tol
    for _ in range(50):
        grad = grad_only(x)
        grad_norm = float(np.abs(grad).max())
        if grad_norm < target:
            break
        p = probs(x)
        hv = hessp_at(p)
        precond = (
            phi.T @ (counts[:, None] * (p * (1.0 - p))) + 2.0 * reg_lambda
        ).reshape(-1)
        step = _cg_solve(hv, -grad, precond, rtol=1e-8)
        # backtrack on the gradient norm; near the optimum the full Newton
        # step is accepted immediately
        for _ in range(30):
            cand = x + step
            if float(np.abs(grad_only(cand)).max()) < grad_norm:
                x = cand
                break
            step = 0.5 * step
        else:
            break
        iterations += 1
    grad_norm = float(np.abs(grad_only(x)).max())
    if grad_norm >= tol:
        raise ConvergenceError(grad_norm, tol, iterations)
    weights = np.zeros((spec.num_features, num_classes), dtype=np.float64)
    weights[cols] = unpack(x)
    return LogLinearModel(
        feature_spec=spec,
        num_classes=num_classes,
        reg_lambda=reg_lambda,
        feature_set=feature_set,
        weights=weights,
        converged=True,
        grad_norm=grad_norm,
        iterations=iterations,
    )


def _cg_solve(hv, b: np.ndarray, diag: np.ndarray, rtol: float, max_iter: int = 20_000):
    """Preconditioned conjugate gradients for the Newton system H x = b.

    Jacobi preconditioning with the Hessian diagonal; the Hessian is positive
    definite (regularizer bounds it away from singular) so CG converges.
    """
    x = np.zeros_like(b)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(r @ z)
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return x
    for _ in range(max_iter):
        hp = hv(p)
        alpha = rz / float(p @ hp)
        x += alpha * p
        r -= alpha * hp
        if float(np.linalg.norm(r)) <= rtol * b_norm:
            break
        z = r / diag
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


def _data_arrays(data):
    if isinstance(data, SyntheticTask):
        return data.g, data.l, data.y
    g, l, y = data
    return (
        np.asarray(g, dtype=np.int64),
        np.asarray(l, dtype=np.int64),
        np.asarray(y, dtype=np.int64),
    )


def grad_check_loglinear(
    spec: FeatureSpec,
    data,
    num_classes: int,
    reg_lambda: float = 0.1,
    seed: int = 0,
    h: float = 1e-5,
) -> float:
    """Central-difference check of the objective gradient at random weights."""
    g, l, y = _data_arrays(data)
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.5, size=(spec.num_features, num_classes))
    analytic = loglinear_grad(w, spec, g, l, y, num_classes, reg_lambda)
    worst = 0.0
    flat = w.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = objective_for_weights(w, spec, g, l, y, num_classes, reg_lambda)
        flat[i] = orig - h
        down = objective_for_weights(w, spec, g, l, y, num_classes, reg_lambda)
        flat[i] = orig
        numeric = (up - down) / (2 * h)
        a = analytic.reshape(-1)[i]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1.0))
    return worst


# -- epsilon measurement and bound checks --------------------------------


def _shared_columns(model_a: LogLinearModel, model_b: LogLinearModel) -> np.ndarray:
    spec = model_a.feature_spec
    cols_a = set(spec.feature_columns(model_a.feature_set).tolist())
    cols_b = set(spec.feature_columns(model_b.feature_set).tolist())
    shared = sorted(cols_a & cols_b)
    if not shared:
        raise ValueError("models share no features")
    return np.array(shared, dtype=np.int64)


def measure_epsilon(model_a: LogLinearModel, model_b: LogLinearModel, data) -> dict:
    """Per-shared-feature prediction gaps on the training data.

    For each shared feature i: the sum over training examples activating i of
    the L1 prediction gap (the quantity the weight-closeness proof uses), and
    the per-example max variant for reporting.
    """
    g, l, y = _data_arrays(data)
    shared = _shared_columns(model_a, model_b)
    spec = model_a.feature_spec
    phi, counts, _ = _grouped(g, l, y, spec, model_a.num_classes)
    uniq_g = phi[:, : spec.num_global].argmax(axis=1)
    uniq_l = phi[:, spec.num_global : spec.num_global + spec.num_local].argmax(axis=1)
    pa = model_a.predict_proba_pairs(uniq_g, uniq_l)
    pb = model_b.predict_proba_pairs(uniq_g, uniq_l)
    l1 = np.abs(pa - pb).sum(axis=1)
    eps_sum = {}
    eps_max = {}
    for col in shared:
        active = phi[:, col] > 0
        eps_sum[int(col)] = float((counts[active] * l1[active]).sum())
        eps_max[int(col)] = float(l1[active].max()) if active.any() else 0.0
    return {"sum": eps_sum, "max": eps_max}


@dataclass
class LemmaReport:
    lam: float
    tol: float
    holds: bool
    worst_margin: float
    per_feature: list
    counterexample: dict | None = None

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "tol": self.tol,
            "holds": self.holds,
            "worst_margin": self.worst_margin,
            "per_feature": self.per_feature,
            "counterexample": self.counterexample,
        }


def verify_lemma(
    model_a: LogLinearModel,
    model_b: LogLinearModel,
    data,
    lam: float,
    tol: float = 1e-8,
) -> LemmaReport:
    """Check |theta_a - theta_b| <= eps_i / lambda + 2*tol/lambda per shared (class, feature)."""
    eps = measure_epsilon(model_a, model_b, data)
    slack = 2.0 * tol / lam
    per_feature = []
    holds = True
    worst = np.inf
    counterexample = None
    for col, eps_i in eps["sum"].items():
        bound = eps_i / lam + slack
        gap = np.abs(model_a.weights[col] - model_b.weights[col])
        max_gap = float(gap.max())
        margin = bound - max_gap
        ok = max_gap <= bound
        per_feature.append(
            {"feature": col, "epsilon": eps_i, "bound": bound, "max_gap": max_gap, "holds": ok}
        )
        if margin < worst:
            worst = margin
        if not ok:
            holds = False
            if counterexample is None:
                cls = int(np.argmax(gap))
                counterexample = {
                    "feature": col,
                    "class": cls,
                    "theta_a": float(model_a.weights[col, cls]),
                    "theta_b": float(model_b.weights[col, cls]),
                    "bound": bound,
                }
    return LemmaReport(
        lam=lam,
        tol=tol,
        holds=holds,
        worst_margin=float(worst),
        per_feature=per_feature,
        counterexample=counterexample,
    )


@dataclass
class PropositionReport:
    lam: float
    tol: float
    bound_exponent: float
    epsilon: float
    bound: float
    max_deviation: float
    holds: bool
    per_pair: list

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "tol": self.tol,
            "bound_exponent": self.bound_exponent,
            "epsilon": self.epsilon,
            "bound": self.bound,
            "max_deviation": self.max_deviation,
            "holds": self.holds,
            "per_pair": self.per_pair,
        }


def product_approximation(
    model_global: LogLinearModel, model_local: LogLinearModel, g: int, l: int
) -> np.ndarray:
    """Renormalized elementwise product of the restricted models' predictions."""
    p = model_global.predict_proba(g, l) * model_local.predict_proba(g, l)
    total = p.sum()
    if total <= 0:
        raise ValueError("product approximation has zero mass")
    return p / total


def train_trio(task: SyntheticTask, lam: float, tol: float = 1e-8) -> dict:
    """Full, global-only, and local-only models on the same data and regularizer."""
    return {
        fs: train_loglinear(
            task, task.feature_spec, task.num_classes, lam, feature_set=fs, tol=tol
        )
        for fs in FEATURE_SETS
    }


def verify_proposition(
    task: SyntheticTask,
    lam: float,
    tol: float = 1e-8,
    bound_exponent: float = 4.0,
    models: dict | None = None,
) -> PropositionReport:
    """Check the surprising-context bound for every held-out pair and class.

    epsilon is the max measured per-feature sum over both restricted
    comparisons; the asserted bound is exp(bound_exponent * (eps/lam +
    2*tol/lam)) - 1.  ``bound_exponent`` exists so the self-test can inject a
    deliberately weakened bound.
    """
    if not task.unseen_pairs:
        raise ValueError("task has no surprising pairs")
    if models is None:
        models = train_trio(task, lam, tol=tol)
    full = models["full"]
    mg = models["global_only"]
    ml = models["local_only"]
    eps_g = measure_epsilon(full, mg, task)["sum"]
    eps_l = measure_epsilon(full, ml, task)["sum"]
    epsilon = max(max(eps_g.values(), default=0.0), max(eps_l.values(), default=0.0))
    # capped at ~1e299 so vacuously large bounds stay JSON-representable floats
    exponent = bound_exponent * (epsilon / lam + 2.0 * tol / lam)
    bound = float(np.exp(min(exponent, 690.0)) - 1.0)
    per_pair = []
    max_dev = 0.0
    for g_val, l_val in task.unseen_pairs:
        if (g_val, l_val) in task.feature_spec.conj_index:
            raise ValueError(f"pair ({g_val}, {l_val}) is not surprising: seen in training")
        p_full = full.predict_proba(g_val, l_val)
        p_prod = product_approximation(mg, ml, g_val, l_val)
        dev = float(np.abs(p_full - p_prod).max())
        per_pair.append({"pair": [int(g_val), int(l_val)], "deviation": dev})
        max_dev = max(max_dev, dev)
    return PropositionReport(
        lam=lam,
        tol=tol,
        bound_exponent=bound_exponent,
        epsilon=float(epsilon),
        bound=bound,
        max_deviation=max_dev,
        holds=max_dev < bound,
        per_pair=per_pair,
    )


def run_theory_trial(
    task: SyntheticTask, lam: float, tol: float = 1e-8, bound_exponent: float = 4.0
) -> dict:
    """Train one trio and evaluate both claims on it."""
    models = train_trio(task, lam, tol=tol)
    lemma_g = verify_lemma(models["full"], models["global_only"], task, lam, tol=tol)
    lemma_l = verify_lemma(models["full"], models["local_only"], task, lam, tol=tol)
    prop = verify_proposition(
        task, lam, tol=tol, bound_exponent=bound_exponent, models=models
    )
    return {
        "lambda": lam,
        "lemma_global": lemma_g.to_dict(),
        "lemma_local": lemma_l.to_dict(),
        "proposition": prop.to_dict(),
        "pass": lemma_g.holds and lemma_l.holds and prop.holds,
    }


# -- self-test: demonstrate the checker can fail -------------------------


def make_adversarial_setup(c: float = 1.5, amplitude: float = 4.0) -> tuple:
    """Hand-set weights that break the bound while measuring epsilon = 0.

    The full model hides a large weight difference on one global feature
    inside a canceling conjunction weight, so training-data predictions agree
    exactly with both restricted models (epsilon = 0) while the surprising
    pair (0, 1) exposes the difference.  Regularized training can never
    produce this configuration; it exists to prove the bound checker reports
    violations.
    """
    g = np.array([0, 1])
    l = np.array([0, 1])
    y = np.array([0, 1])
    spec = FeatureSpec.from_observed(g, l, 2, 2)
    task = SyntheticTask(
        num_global=2,
        num_local=2,
        num_classes=2,
        g=g,
        l=l,
        y=y,
        unseen_pairs=[(0, 1), (1, 0)],
        feature_spec=spec,
    )
    eta0 = np.array([c, -c])
    eta1 = np.array([-c, c])
    w_global = np.zeros((spec.num_features, 2))
    w_global[spec.global_feature(0)] = eta0
    w_global[spec.global_feature(1)] = eta1
    w_local = np.zeros((spec.num_features, 2))
    w_local[spec.local_feature(0)] = eta0
    w_local[spec.local_feature(1)] = eta1
    shift = np.array([amplitude, -amplitude])
    w_full = np.zeros((spec.num_features, 2))
    w_full[spec.global_feature(0)] = eta0 + shift
    w_full[spec.global_feature(1)] = eta1
    w_full[spec.local_feature(0)] = eta0
    w_full[spec.local_feature(1)] = eta1
    w_full[spec.conj_index[(0, 0)]] = -shift - eta0
    w_full[spec.conj_index[(1, 1)]] = -eta1
    common = dict(feature_spec=spec, num_classes=2, reg_lambda=1.0)
    models = {
        "full": LogLinearModel(**common, feature_set="full", weights=w_full),
        "global_only": LogLinearModel(**common, feature_set="global_only", weights=w_global),
        "local_only": LogLinearModel(**common, feature_set="local_only", weights=w_local),
    }
    return task, models


def self_test_mutation(
    rng: np.random.Generator | None = None,
    num_real_trials: int = 3,
    lam: float = 1.0,
    tol: float = 1e-8,
    weakened_exponent: float = 2.0,
) -> dict:
    """Run the bound check with a deliberately weakened exponent.

    Trials cover freshly trained random tasks plus a hand-built adversarial
    weight configuration.  Converged regularized trios satisfy even the
    weakened bound (their true deviations sit far below it), so the
    adversarial trial is what demonstrates the checker has teeth.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    failures = []
    trials = []
    for i in range(num_real_trials):
        task = make_synthetic_task(
            rng, num_global=6, num_local=6, num_classes=4, num_samples=400, num_unseen=4
        )
        report = verify_proposition(task, lam, tol=tol, bound_exponent=weakened_exponent)
        trials.append({"trial": f"random-{i}", **report.to_dict()})
        if not report.holds:
            failures.append(f"random-{i}")
    task, models = make_adversarial_setup()
    report = verify_proposition(
        task, lam, tol=tol, bound_exponent=weakened_exponent, models=models
    )
    trials.append({"trial": "adversarial", **report.to_dict()})
    if not report.holds:
        failures.append("adversarial")
    return {
        "weakened_exponent": weakened_exponent,
        "trials": trials,
        "failures": failures,
        "mutation_detected": len(failures) > 0,
    }


def theory_sweep(
    lams=(0.01, 0.1, 1.0, 10.0),
    num_tasks: int = 20,
    seed: int = 0,
    tol: float = 1e-8,
    task_kwargs: dict | None = None,
    bound_exponent: float = 4.0,
) -> list:
    """Every task crossed with every regularizer value; list of trial dicts."""
    rng = np.random.default_rng(seed)
    kwargs = task_kwargs or {}
    tasks = [make_synthetic_task(rng, **kwargs) for _ in range(num_tasks)]
    out = []
    for t_idx, task in enumerate(tasks):
        for lam in lams:
            trial = run_theory_trial(task, lam, tol=tol, bound_exponent=bound_exponent)
            trial["task"] = t_idx
            out.append(trial)
    return out
