"""Metrics and the multi-hypothesis evaluation harness.

``err`` is the mean total variation distance between a hypothesis's
predictions and the model's actual next-token distributions over a shared set
of surprising contexts; ``acc = 1 - err``.  ``evaluate_suite`` assembles the
full comparison: static hypotheses (unigram, local, global, restart),
per-model hypotheses (ignore), and interpolations fitted per seed, all on the
same paired contexts.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import rel_entr

from . import hypotheses as hyp_mod
from .hypotheses import Hypothesis, fit_lambda_from_dists, hypothesis_matrix
from .util import check_dist, write_atomic

REPORT_FORMAT = "suite-report-v1"


def tv_distance(p, q) -> float:
    """Total variation distance between categorical distributions."""
    p = check_dist(p)
    q = check_dist(q)
    if p.shape != q.shape:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    return 0.5 * float(np.abs(p - q).sum())


def jsd(p, q) -> float:
    """Jensen-Shannon divergence, log base 2, bounded in [0, 1]."""
    p = check_dist(p)
    q = check_dist(q)
    if p.shape != q.shape:
        raise ValueError(f"support mismatch: {p.shape} vs {q.shape}")
    m = 0.5 * (p + q)
    val = 0.5 * (rel_entr(p, m).sum() + rel_entr(q, m).sum()) / np.log(2.0)
    return float(min(max(val, 0.0), 1.0))


def err(hypothesis: Hypothesis, lm, contexts) -> float:
    """Mean TV between the model's and the hypothesis's predictions."""
    if not contexts:
        raise ValueError("need at least one context")
    total = 0.0
    for ctx in contexts:
        total += tv_distance(lm.predict_proba(ctx.full_context), hypothesis.predict_proba(ctx))
    return total / len(contexts)


def acc(hypothesis: Hypothesis, lm, contexts) -> float:
    return 1.0 - err(hypothesis, lm, contexts)


def _tv_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return 0.5 * np.abs(p - q).sum(axis=-1)


@dataclass
class HypothesisRow:
    name: str
    kind: str
    per_seed_distances: dict = field(default_factory=dict)  # seed -> (N,) array
    params_by_seed: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    error: str | None = None

    def acc_by_seed(self) -> dict:
        return {s: 1.0 - float(np.mean(d)) for s, d in self.per_seed_distances.items()}

    def mean_acc(self) -> float:
        accs = list(self.acc_by_seed().values())
        return float(np.mean(accs)) if accs else float("nan")

    def std_acc(self) -> float:
        accs = list(self.acc_by_seed().values())
        return float(np.std(accs)) if accs else float("nan")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "per_seed_distances": {
                str(s): [float(x) for x in d] for s, d in self.per_seed_distances.items()
            },
            "acc_by_seed": {str(s): a for s, a in self.acc_by_seed().items()},
            "mean_acc": self.mean_acc(),
            "std_acc": self.std_acc(),
            "params_by_seed": {str(s): p for s, p in self.params_by_seed.items()},
            "info": self.info,
            "error": self.error,
        }


@dataclass
class SuiteReport:
    meta: dict
    rows: dict
    sweep: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "meta": self.meta,
            "rows": {name: row.to_dict() for name, row in self.rows.items()},
            "sweep": self.sweep,
        }

    def save_json(self, path: str) -> None:
        write_atomic(path, json.dumps(self.to_dict(), sort_keys=True, indent=1))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["language", "arch", "noise", "hypothesis", "seed", "acc"])
        language = self.meta.get("language", "")
        arch = self.meta.get("arch", "")
        noise = self.meta.get("noise", "none")
        for name in sorted(self.rows):
            row = self.rows[name]
            for seed, a in sorted(row.acc_by_seed().items()):
                writer.writerow([language, arch, noise, name, seed, f"{a:.6f}"])
        return buf.getvalue()

    def save_csv(self, path: str) -> None:
        write_atomic(path, self.to_csv())


DEFAULT_ROWS = (
    "unigram",
    "local",
    "global",
    "ignore",
    "restart",
    "interp_linear",
    "interp_loglinear",
    "interp_loglinear_free",
)


def evaluate_suite(
    models: dict,
    contexts,
    local_hyp: Hypothesis,
    global_hyp: Hypothesis,
    unigram: np.ndarray,
    restart_lm=None,
    include=None,
    grid_step: float = 0.01,
    grid_step_free: float = 0.05,
    sweep: bool = True,
    meta: dict | None = None,
) -> SuiteReport:
    """Evaluate every hypothesis against every seed's model on shared contexts.

    ``models`` maps seed -> trained model.  Interpolation weights are fitted
    per seed on these same contexts (matching the protocol of choosing lambda
    on the evaluation set).  A failing hypothesis is recorded as a flagged row
    rather than dropped.
    """
    contexts = list(contexts)
    if not contexts:
        raise ValueError("need at least one context")
    if not models:
        raise ValueError("need at least one model")
    include = set(include) if include is not None else set(DEFAULT_ROWS)
    full_ctx = [c.full_context for c in contexts]
    global_ctx = [c.global_ctx for c in contexts]
    targets = {
        seed: _predict_many(model, full_ctx) for seed, model in models.items()
    }

    rows: dict[str, HypothesisRow] = {}
    need_interp = include & {"interp_linear", "interp_loglinear", "interp_loglinear_free"}

    def static_row(name: str, kind: str, build) -> np.ndarray | None:
        """Compute a model-independent hypothesis matrix and (maybe) report it.

        Interpolations need the local/global matrices even when those rows are
        not themselves requested, so the matrix is built whenever anything
        downstream wants it; failures flag the reporting row if there is one.
        """
        wanted_as_row = name in include
        wanted_as_input = name in ("local", "global") and need_interp
        if not (wanted_as_row or wanted_as_input):
            return None
        row = HypothesisRow(name=name, kind=kind)
        if wanted_as_row:
            rows[name] = row
        try:
            mat, info = build()
        except Exception as e:  # noqa: BLE001 - flagged, never dropped
            row.error = f"{type(e).__name__}: {e}"
            return None
        row.info.update(info)
        for seed, q in targets.items():
            row.per_seed_distances[seed] = _tv_rows(q, mat)
        return mat

    static_row("unigram", "unigram", lambda: (np.tile(check_dist(unigram), (len(contexts), 1)), {}))
    p_local = static_row("local", "local", lambda: hypothesis_matrix(local_hyp, contexts))
    p_global = static_row("global", "global", lambda: hypothesis_matrix(global_hyp, contexts))

    if "ignore" in include:
        row = HypothesisRow(name="ignore", kind="ignore")
        rows["ignore"] = row
        for seed, model in models.items():
            row.per_seed_distances[seed] = _tv_rows(
                targets[seed], _predict_many(model, global_ctx)
            )

    if "restart" in include:
        row = HypothesisRow(name="restart", kind="restart")
        rows["restart"] = row
        if restart_lm is None:
            row.error = "ValueError: no restart model supplied"
        else:
            mat = _predict_many(restart_lm, full_ctx)
            for seed, q in targets.items():
                row.per_seed_distances[seed] = _tv_rows(q, mat)

    sweep_data: dict = {}
    if need_interp and (p_local is None or p_global is None):
        missing = [
            name
            for name, mat in (("local", p_local), ("global", p_global))
            if mat is None
        ]
        reason = f"ValueError: {' and '.join(missing)} hypothesis unavailable"
        for name in sorted(need_interp):
            rows[name] = HypothesisRow(name=name, kind=name, error=reason)
    elif need_interp:
        for name, family, tie, step in (
            ("interp_linear", "linear", "complementary", grid_step),
            ("interp_loglinear", "loglinear", "complementary", grid_step),
            ("interp_loglinear_free", "loglinear", "free", grid_step_free),
        ):
            if name not in include:
                continue
            row = HypothesisRow(name=name, kind=name)
            rows[name] = row
            for seed, q in targets.items():
                fit = fit_lambda_from_dists(
                    q, p_local, p_global, family=family, tie_mode=tie, grid_step=step
                )
                row.params_by_seed[seed] = fit.params.to_dict()
                row.per_seed_distances[seed] = _fitted_distances(
                    q, p_local, p_global, fit.params
                )
                if sweep and name == "interp_loglinear":
                    sweep_data.setdefault("grid", [float(x) for x in fit.grid])
                    sweep_data.setdefault("acc_by_seed", {})[str(seed)] = [
                        float(a) for a in fit.accs
                    ]

    report_meta = dict(meta or {})
    report_meta.setdefault("num_contexts", len(contexts))
    report_meta.setdefault("seeds", sorted(int(s) for s in models))
    return SuiteReport(meta=report_meta, rows=rows, sweep=sweep_data)


def _fitted_distances(q, p_local, p_global, params) -> np.ndarray:
    if params.family == "linear":
        mixed = hyp_mod.interp_linear(p_local, p_global, params.lam)
    else:
        mixed = hyp_mod.interp_loglinear(p_local, p_global, params.lam1, params.lam2)
    return _tv_rows(q, mixed)


def _predict_many(model, contexts) -> np.ndarray:
    if hasattr(model, "predict_proba_many"):
        return np.asarray(model.predict_proba_many(contexts), dtype=np.float64)
    return np.stack([model.predict_proba(c) for c in contexts]).astype(np.float64)
