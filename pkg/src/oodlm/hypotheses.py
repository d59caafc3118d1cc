"""Candidate predictors of model behavior in surprising contexts.

Each hypothesis maps a SurprisingContext to a next-token distribution:

* local: condition only on the surprising token (exact DFA mixture or bigram
  counts), ignoring the prefix;
* global: condition only on the prefix, marginalizing over one unknown
  intervening token (exact DFA computation or one beam-search step in a
  helper model);
* unigram: the context-free marginal;
* ignore: the evaluated model's own distribution just before the surprising
  token;
* restart: a separately seeded model's prediction for the full context;
* linear / log-linear interpolations of local and global, with weights fitted
  by grid search against the evaluated model.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .automata import Dfa, SurprisingContext, ground_truth_global, ground_truth_local
from .corpus import CountTable, bigram_dist
from .util import UnseenTokenError, check_dist

LOGLINEAR_FLOOR = 1e-10


def _tv_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise total variation; local copy to keep this module import-light."""
    return 0.5 * np.abs(p - q).sum(axis=-1)


@dataclass
class InterpolationParams:
    """Fitted interpolation weights.

    ``lam`` is the linear mixing weight on the local distribution; ``lam1``
    and ``lam2`` are the log-linear exponents on the global and local
    distributions respectively (global first, matching the subscripts).
    """

    family: str
    lam: float | None = None
    lam1: float | None = None
    lam2: float | None = None
    tie_mode: str | None = None

    def validate(self) -> None:
        if self.family not in ("linear", "loglinear"):
            raise ValueError(f"unknown interpolation family {self.family!r}")
        for v in (self.lam, self.lam1, self.lam2):
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"interpolation weight {v} outside [0, 1]")
        if self.family == "linear" and self.lam is None:
            raise ValueError("linear interpolation requires lam")
        if self.family == "loglinear" and (self.lam1 is None or self.lam2 is None):
            raise ValueError("loglinear interpolation requires lam1 and lam2")

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def interp_linear(p_local: np.ndarray, p_global: np.ndarray, lam: float) -> np.ndarray:
    """lam * p_local + (1 - lam) * p_global (row-wise for matrices)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lam must lie in [0, 1], got {lam}")
    return lam * np.asarray(p_local, dtype=np.float64) + (1.0 - lam) * np.asarray(
        p_global, dtype=np.float64
    )


def interp_loglinear(
    p_local: np.ndarray,
    p_global: np.ndarray,
    lam1: float,
    lam2: float,
    floor: float = LOGLINEAR_FLOOR,
) -> np.ndarray:
    """Renormalized p_global^lam1 * p_local^lam2 with a probability floor.

    The floor keeps exact zeros (common in bigram estimates) out of the log
    without materially moving mass.  The pure endpoints (lam1, lam2) = (0, 1)
    and (1, 0) bypass the floor entirely so they reproduce the base
    distributions bit-for-bit, which keeps sweep endpoints identical to the
    standalone local/global computations.
    """
    for v in (lam1, lam2):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"loglinear exponent {v} outside [0, 1]")
    p_local = np.asarray(p_local, dtype=np.float64)
    p_global = np.asarray(p_global, dtype=np.float64)
    if (lam1, lam2) == (0.0, 1.0):
        return p_local.copy()
    if (lam1, lam2) == (1.0, 0.0):
        return p_global.copy()
    logs = lam1 * np.log(np.maximum(p_global, floor)) + lam2 * np.log(
        np.maximum(p_local, floor)
    )
    logs -= logs.max(axis=-1, keepdims=True)
    m = np.exp(logs)
    return m / m.sum(axis=-1, keepdims=True)


# -- hypothesis objects --------------------------------------------------


class Hypothesis:
    """Base: a named predictor over surprising contexts."""

    kind: str = "hypothesis"
    source: str = "unknown"

    def predict_proba(self, ctx: SurprisingContext) -> np.ndarray:
        dist, _ = self.predict_with_info(ctx)
        return dist

    def predict_with_info(self, ctx: SurprisingContext):
        raise NotImplementedError


class LocalDfaHypothesis(Hypothesis):
    """Exact bigram-style predictor from the automaton and its occupancy measure.

    A surprising token may label no edge at all; with a ``fallback``
    distribution supplied (typically the unigram), those contexts back off to
    it and are flagged in the returned info.
    """

    kind = "local"
    source = "dfa_exact"

    def __init__(self, dfa: Dfa, mu: np.ndarray | None = None, fallback: np.ndarray | None = None):
        from .automata import occupancy_measure

        self.dfa = dfa
        self.mu = mu if mu is not None else occupancy_measure(dfa)
        self.fallback = None if fallback is None else check_dist(fallback)

    def predict_with_info(self, ctx: SurprisingContext):
        try:
            return check_dist(ground_truth_local(self.dfa, int(ctx.local_token), self.mu)), {
                "fallback": False
            }
        except UnseenTokenError:
            if self.fallback is None:
                raise
            return self.fallback.copy(), {"fallback": True}


class LocalCountsHypothesis(Hypothesis):
    """Bigram-count predictor; same backoff contract as the exact variant."""

    kind = "local"
    source = "bigram_counts"

    def __init__(self, counts: CountTable, fallback: np.ndarray | None = None):
        self.counts = counts
        self.fallback = None if fallback is None else check_dist(fallback)

    def predict_with_info(self, ctx: SurprisingContext):
        try:
            return check_dist(bigram_dist(self.counts, int(ctx.local_token))), {"fallback": False}
        except UnseenTokenError:
            if self.fallback is None:
                raise
            return self.fallback.copy(), {"fallback": True}


class GlobalDfaHypothesis(Hypothesis):
    kind = "global"
    source = "dfa_exact"

    def __init__(self, dfa: Dfa):
        self.dfa = dfa

    def predict_with_info(self, ctx: SurprisingContext):
        return check_dist(ground_truth_global(self.dfa, ctx.global_ctx)), {}


class GlobalBeamHypothesis(Hypothesis):
    """One beam-search step in a helper model.

    Takes the ``beam_width`` most likely next symbols after the prefix
    (EOS cannot extend a context and is never a candidate), advances the
    helper one step with each, and averages the resulting distributions
    weighted by the candidates' renormalized probabilities.  Zero-probability
    candidates are skipped: they contribute no mass and may be invalid
    continuations for exact helpers.
    """

    kind = "global"
    source = "beam_lm"

    def __init__(self, helper_lm, beam_width: int = 15):
        if helper_lm is None:
            raise ValueError("beam-based global hypothesis requires a helper model")
        if beam_width < 1:
            raise ValueError("beam_width must be positive")
        self.helper_lm = helper_lm
        self.beam_width = beam_width

    def predict_with_info(self, ctx: SurprisingContext):
        prefix = np.asarray(ctx.global_ctx, dtype=np.int64)
        step = self.helper_lm.predict_proba(prefix)
        vocab = step.size - 1
        symbol_probs = step[:vocab]
        k = min(self.beam_width, vocab)
        top = np.argsort(-symbol_probs, kind="stable")[:k]
        top = top[symbol_probs[top] > 0.0]
        total = symbol_probs[top].sum()
        if top.size == 0 or total <= 0:
            raise ValueError("helper model puts no mass on any continuation")
        dist = np.zeros_like(step)
        for v in top:
            w = symbol_probs[v] / total
            dist += w * self.helper_lm.predict_proba(np.concatenate([prefix, [v]]))
        return check_dist(dist), {"beam_mass": float(total)}


class UnigramHypothesis(Hypothesis):
    kind = "unigram"
    source = "bigram_counts"

    def __init__(self, dist: np.ndarray):
        self.dist = check_dist(dist)

    def predict_with_info(self, ctx: SurprisingContext):
        return self.dist.copy(), {}


class IgnoreHypothesis(Hypothesis):
    """The evaluated model's own prediction just before the surprising token."""

    kind = "ignore"
    source = "lm"

    def __init__(self, lm):
        self.lm = lm

    def predict_with_info(self, ctx: SurprisingContext):
        return check_dist(self.lm.predict_proba(ctx.global_ctx)), {}


class RestartHypothesis(Hypothesis):
    """A from-scratch retrain with a different seed, fed the full context."""

    kind = "restart"
    source = "lm"

    def __init__(self, lm):
        self.lm = lm

    def predict_with_info(self, ctx: SurprisingContext):
        return check_dist(self.lm.predict_proba(ctx.full_context)), {}


class LinearInterpolation(Hypothesis):
    kind = "interp_linear"

    def __init__(self, local: Hypothesis, global_: Hypothesis, lam: float):
        self.local = local
        self.global_ = global_
        self.params = InterpolationParams(family="linear", lam=float(lam))
        self.params.validate()

    def predict_with_info(self, ctx: SurprisingContext):
        p_l, info_l = self.local.predict_with_info(ctx)
        p_g, _ = self.global_.predict_with_info(ctx)
        return check_dist(interp_linear(p_l, p_g, self.params.lam)), info_l


class LogLinearInterpolation(Hypothesis):
    kind = "interp_loglinear"

    def __init__(self, local: Hypothesis, global_: Hypothesis, lam1: float, lam2: float):
        self.local = local
        self.global_ = global_
        self.params = InterpolationParams(
            family="loglinear", lam1=float(lam1), lam2=float(lam2)
        )
        self.params.validate()

    def predict_with_info(self, ctx: SurprisingContext):
        p_l, info_l = self.local.predict_with_info(ctx)
        p_g, _ = self.global_.predict_with_info(ctx)
        return (
            check_dist(interp_loglinear(p_l, p_g, self.params.lam1, self.params.lam2)),
            info_l,
        )


def hypothesis_matrix(hyp: Hypothesis, contexts) -> tuple:
    """Stack a hypothesis's distributions over contexts; returns (matrix, info).

    ``info['fallback_contexts']`` counts contexts that used a backoff
    distribution.
    """
    rows = []
    fallback = 0
    for ctx in contexts:
        dist, info = hyp.predict_with_info(ctx)
        rows.append(dist)
        if info.get("fallback"):
            fallback += 1
    return np.stack(rows), {"fallback_contexts": fallback}


# -- interpolation weight fitting ----------------------------------------


@dataclass
class FitResult:
    params: InterpolationParams
    acc: float
    err: float
    grid: np.ndarray
    accs: np.ndarray  # aligned with grid (1-D) or (grid x grid) for free mode


def _grid(step: float) -> np.ndarray:
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-12:
        raise ValueError(f"grid step {step} does not divide 1 evenly")
    return np.linspace(0.0, 1.0, n + 1)


def fit_lambda_from_dists(
    targets: np.ndarray,
    p_local: np.ndarray,
    p_global: np.ndarray,
    family: str = "linear",
    tie_mode: str = "complementary",
    grid_step: float | None = None,
) -> FitResult:
    """Exhaustive grid search minimizing mean TV against the target rows.

    Ties break toward the first grid point in iteration order: ascending
    lambda for 1-D sweeps, lexicographically ascending (lam1, lam2) for the
    free log-linear search.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[0] < 1:
        raise ValueError("need at least one context to fit")
    if family == "linear":
        grid = _grid(grid_step if grid_step is not None else 0.01)
        errs = np.array(
            [_tv_rows(targets, interp_linear(p_local, p_global, lam)).mean() for lam in grid]
        )
        best = int(np.argmin(errs))
        params = InterpolationParams(family="linear", lam=float(grid[best]))
        return FitResult(params, 1.0 - float(errs[best]), float(errs[best]), grid, 1.0 - errs)
    if family != "loglinear":
        raise ValueError(f"unknown interpolation family {family!r}")
    if tie_mode == "complementary":
        grid = _grid(grid_step if grid_step is not None else 0.01)
        errs = np.array(
            [
                _tv_rows(targets, interp_loglinear(p_local, p_global, lam1, 1.0 - lam1)).mean()
                for lam1 in grid
            ]
        )
        best = int(np.argmin(errs))
        params = InterpolationParams(
            family="loglinear",
            lam1=float(grid[best]),
            lam2=float(1.0 - grid[best]),
            tie_mode="complementary",
        )
        return FitResult(params, 1.0 - float(errs[best]), float(errs[best]), grid, 1.0 - errs)
    if tie_mode != "free":
        raise ValueError(f"unknown tie_mode {tie_mode!r}")
    grid = _grid(grid_step if grid_step is not None else 0.05)
    errs = np.empty((grid.size, grid.size))
    for i, lam1 in enumerate(grid):
        for j, lam2 in enumerate(grid):
            errs[i, j] = _tv_rows(
                targets, interp_loglinear(p_local, p_global, lam1, lam2)
            ).mean()
    flat = int(np.argmin(errs))
    i, j = divmod(flat, grid.size)
    params = InterpolationParams(
        family="loglinear", lam1=float(grid[i]), lam2=float(grid[j]), tie_mode="free"
    )
    return FitResult(params, 1.0 - float(errs[i, j]), float(errs[i, j]), grid, 1.0 - errs)


def fit_lambda(
    family: str,
    contexts,
    lm,
    local_hyp: Hypothesis,
    global_hyp: Hypothesis,
    grid_step: float | None = None,
    tie_mode: str = "complementary",
) -> FitResult:
    """Fit interpolation weights against a model over a set of contexts."""
    targets = np.stack([lm.predict_proba(ctx.full_context) for ctx in contexts])
    p_local, _ = hypothesis_matrix(local_hyp, contexts)
    p_global, _ = hypothesis_matrix(global_hyp, contexts)
    return fit_lambda_from_dists(
        targets, p_local, p_global, family=family, tie_mode=tie_mode, grid_step=grid_step
    )
