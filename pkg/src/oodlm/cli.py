"""Command-line entry points for the experiment pipeline.

Config-driven commands read a JSON experiment file (see experiment.py for the
schema); flags override config fields.  Paths given relative are resolved
under ``$OODLM_OUTPUT_ROOT`` when that variable is set.  Every command that
draws randomness requires a seed, either via ``--seed`` or the config file.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from . import __version__
from .automata import Dfa, SurprisingContext, make_surprising_contexts, sample_walks
from .corpus import count_corpus, load_tokens, make_surprising_natural, save_tokens
from .experiment import (
    ConfigError,
    ExperimentConfig,
    run_gen_language,
    run_suite_pipeline,
    run_verify_theory,
)
from .hypotheses import GlobalDfaHypothesis, LocalDfaHypothesis, fit_lambda
from .lm import LmConfig, NoiseConfig, TrainConfig, load_lm, save_lm, train_lm
from .plots import plot_accuracy_bars, plot_lambda_sweep, plot_noise_comparison
from .util import canonical_json, write_atomic

OUTPUT_ROOT_ENV = "OODLM_OUTPUT_ROOT"


def _resolve(path: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _load_config(config_path, overrides: dict) -> ExperimentConfig:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    try:
        if config_path:
            cfg = ExperimentConfig.load(config_path, overrides)
        else:
            cfg = ExperimentConfig.from_dict(overrides)
    except ConfigError as e:
        raise click.ClickException(str(e)) from e
    return cfg


def _require_seed(seed, config_has: bool) -> None:
    if seed is None and not config_has:
        raise click.ClickException("a seed is required: pass --seed or set it in the config")


def _read_dfa(path: str) -> Dfa:
    with open(path) as fh:
        return Dfa.from_dict(json.load(fh))


@click.group()
@click.version_option(version=__version__)
def main():
    """Laboratory for out-of-distribution behavior of small language models."""


@main.command("gen-language")
@click.option("--config", "config_path", type=click.Path(exists=True), help="Experiment JSON.")
@click.option("--seed", type=int, help="Master seed (required unless set in config).")
@click.option("--output", "-o", "output_dir", type=str, help="Output directory.")
@click.option("--num-states", type=int, help="DFA state count.")
@click.option("--alphabet-size", type=int, help="DFA alphabet size.")
@click.option("--num-neighbors", type=int, help="Max distinct successor states per state.")
@click.option("--num-symbol-uses", type=int, help="Max edges per symbol across the DFA.")
@click.option("--accept-prob", type=float, help="Accepting-state probability.")
@click.option("--num-examples", type=int, help="Training walks to sample.")
@click.option("--num-val", type=int, help="Validation walks to sample.")
@click.option("--max-len", type=int, help="Walk truncation length.")
def cmd_gen_language(config_path, seed, output_dir, num_states, alphabet_size, num_neighbors,
                     num_symbol_uses, accept_prob, num_examples, num_val, max_len):
    """Generate a random regular language and its train/val walk corpora."""
    dfa_over = {
        k: v
        for k, v in {
            "num_states": num_states,
            "alphabet_size": alphabet_size,
            "num_neighbors": num_neighbors,
            "num_symbol_uses": num_symbol_uses,
            "accept_prob": accept_prob,
        }.items()
        if v is not None
    }
    corpus_over = {
        k: v
        for k, v in {
            "num_train": num_examples,
            "num_val": num_val,
            "max_len": max_len,
        }.items()
        if v is not None
    }
    overrides: dict = {}
    if dfa_over:
        overrides["language"] = {"dfa": dfa_over}
    if corpus_over:
        overrides["corpus"] = corpus_over
    if seed is not None:
        overrides["seed"] = seed
    if output_dir is not None:
        overrides["output_dir"] = _resolve(output_dir)
    if not config_path:
        overrides.setdefault("language", {"dfa": dfa_over})
        overrides.setdefault("hypotheses", ["local", "global"])
        overrides.setdefault("seeds", [0])
        if "output_dir" not in overrides:
            raise click.ClickException("--output is required without a config file")
    _require_seed(seed, config_path is not None)
    cfg = _load_config(config_path, overrides)
    hashes = run_gen_language(cfg)
    for rel, digest in sorted(hashes.items()):
        click.echo(f"{digest[:12]}  {rel}")
    click.echo(f"artifacts written to {cfg.output_dir}")


@main.command("sample-corpus")
@click.option("--dfa", "dfa_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, required=True)
@click.option("--num", "num_walks", type=int, default=8000, show_default=True)
@click.option("--max-len", type=int, default=64, show_default=True)
@click.option("--output", "-o", "out_path", type=str, required=True)
def cmd_sample_corpus(dfa_path, seed, num_walks, max_len, out_path):
    """Sample random walks from a saved DFA into a token file."""
    dfa = _read_dfa(dfa_path)
    rng = np.random.default_rng(seed)
    walks = sample_walks(dfa, num_walks, rng, max_len=max_len)
    out_path = _resolve(out_path)
    save_tokens(
        out_path,
        walks,
        {"seed": seed, "max_len": max_len, "vocab_size": dfa.alphabet_size,
         "dfa": os.path.basename(dfa_path)},
    )
    truncated = sum(0 if w.terminated else 1 for w in walks)
    click.echo(f"wrote {len(walks)} walks ({truncated} truncated) to {out_path}")


@main.command("train-lm")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True), required=True)
@click.option("--arch", type=click.Choice(["gru", "transformer"]), default="gru",
              show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--vocab-size", type=int, help="Defaults to the corpus header, else max id + 1.")
@click.option("--embed-dim", type=int)
@click.option("--hidden-dim", type=int)
@click.option("--num-layers", type=int)
@click.option("--num-heads", type=int)
@click.option("--max-seq-len", type=int)
@click.option("--num-examples", type=int, default=128_000, show_default=True,
              help="Training presentations (the corpus is cycled).")
@click.option("--batch-size", type=int, default=32, show_default=True)
@click.option("--lr", type=float, default=3e-4, show_default=True)
@click.option("--noise-kind", type=click.Choice(["none", "token", "state_dropout"]),
              default="none", show_default=True)
@click.option("--noise-p", type=float, default=0.0, show_default=True)
@click.option("--log-every", type=int, default=0)
@click.option("--output", "-o", "out_path", type=str, required=True)
def cmd_train_lm(corpus_path, arch, seed, vocab_size, embed_dim, hidden_dim, num_layers,
                 num_heads, max_seq_len, num_examples, batch_size, lr, noise_kind, noise_p,
                 log_every, out_path):
    """Train a single language model on a token corpus and save a checkpoint."""
    walks, header = load_tokens(corpus_path)
    if vocab_size is None:
        vocab_size = header.get("vocab_size")
    if vocab_size is None:
        vocab_size = 1 + max((int(t) for w in walks for t in w.tokens), default=0)
    if noise_kind != "none" and noise_p <= 0:
        raise click.ClickException("--noise-p must be positive when --noise-kind is set")
    defaults = (
        dict(embed_dim=128, hidden_dim=256, num_layers=1)
        if arch == "gru"
        else dict(embed_dim=128, hidden_dim=128, num_layers=2, num_heads=4)
    )
    for name, val in (
        ("embed_dim", embed_dim),
        ("hidden_dim", hidden_dim),
        ("num_layers", num_layers),
        ("num_heads", num_heads),
        ("max_seq_len", max_seq_len),
    ):
        if val is not None:
            defaults[name] = val
    lm_cfg = LmConfig(arch=arch, vocab_size=vocab_size, **defaults)
    noise = NoiseConfig(
        token_prob=noise_p if noise_kind == "token" else 0.0,
        dropout_prob=noise_p if noise_kind == "state_dropout" else 0.0,
    )
    train_cfg = TrainConfig(
        seed=seed,
        num_examples=num_examples,
        batch_size=batch_size,
        learning_rate=lr,
        noise=noise,
    )
    model = train_lm(walks, lm_cfg, train_cfg, log_every=log_every)
    out_path = _resolve(out_path)
    save_lm(model, out_path)
    final = model.provenance["final_loss"]
    click.echo(f"trained {arch} (seed {seed}) final loss {final:.4f}; saved to {out_path}")


@main.command("make-surprising")
@click.option("--dfa", "dfa_path", type=click.Path(exists=True),
              help="DFA for exact zero-probability contexts.")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True),
              help="Token corpus for the model-certified variant.")
@click.option("--lm", "lm_path", type=click.Path(exists=True),
              help="Checkpoint used to certify surprise on a corpus.")
@click.option("--num", "num_contexts", type=int, default=100, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--max-len", type=int, default=64, show_default=True)
@click.option("--output", "-o", "out_path", type=str, required=True)
def cmd_make_surprising(dfa_path, corpus_path, lm_path, num_contexts, seed, max_len, out_path):
    """Build surprising contexts: plausible prefixes ending in an impossible token."""
    rng = np.random.default_rng(seed)
    if (dfa_path is None) == (corpus_path is None):
        raise click.ClickException("pass exactly one of --dfa or --corpus")
    if dfa_path:
        dfa = _read_dfa(dfa_path)
        ctxs = make_surprising_contexts(dfa, num_contexts, rng, max_len=max_len)
    else:
        if lm_path is None:
            raise click.ClickException("--corpus mode requires --lm to certify surprise")
        walks, header = load_tokens(corpus_path)
        vocab = header.get("vocab_size") or 1 + max(
            (int(t) for w in walks for t in w.tokens), default=0
        )
        model = load_lm(lm_path)
        counts = count_corpus(walks, vocab)
        ctxs = make_surprising_natural(model, walks, counts, rng, num_contexts=num_contexts)
    out_path = _resolve(out_path)
    write_atomic(out_path, canonical_json([c.to_dict() for c in ctxs]) + "\n")
    click.echo(f"wrote {len(ctxs)} surprising contexts to {out_path}")


@main.command("run-suite")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, help="Override the config master seed.")
@click.option("--output", "-o", "output_dir", type=str, help="Override the output directory.")
@click.option("--resume/--no-resume", default=True, show_default=True,
              help="Reuse artifacts already present in the output directory.")
@click.option("--log-every", type=int, default=0)
def cmd_run_suite(config_path, seed, output_dir, resume, log_every):
    """Run the full pipeline and evaluate every configured hypothesis."""
    overrides: dict = {}
    if seed is not None:
        overrides["seed"] = seed
    if output_dir is not None:
        overrides["output_dir"] = _resolve(output_dir)
    cfg = _load_config(config_path, overrides)
    reports = run_suite_pipeline(cfg, resume=resume, log_every=log_every)
    for label, report in reports.items():
        click.echo(f"[{label}]")
        for name in sorted(report.rows):
            row = report.rows[name]
            if row.error is not None:
                click.echo(f"  {name:24s} flagged: {row.error}")
            else:
                click.echo(f"  {name:24s} acc {row.mean_acc():.4f} +- {row.std_acc():.4f}")
    click.echo(f"reports written under {cfg.output_dir}/reports")


@main.command("fit-lambda")
@click.option("--dfa", "dfa_path", type=click.Path(exists=True), required=True)
@click.option("--contexts", "contexts_path", type=click.Path(exists=True), required=True)
@click.option("--lm", "lm_path", type=click.Path(exists=True), required=True)
@click.option("--family", type=click.Choice(["linear", "loglinear", "loglinear-free"]),
              default="loglinear", show_default=True)
@click.option("--grid-step", type=float, help="Defaults: 0.01 (1-D), 0.05 (free 2-D).")
@click.option("--output", "-o", "out_path", type=str, help="Optionally save the fit as JSON.")
def cmd_fit_lambda(dfa_path, contexts_path, lm_path, family, grid_step, out_path):
    """Grid-search interpolation weights against a trained model."""
    dfa = _read_dfa(dfa_path)
    with open(contexts_path) as fh:
        ctxs = [SurprisingContext.from_dict(d) for d in json.load(fh)]
    model = load_lm(lm_path)
    tie_mode = "free" if family == "loglinear-free" else "complementary"
    fam = "loglinear" if family.startswith("loglinear") else "linear"
    fit = fit_lambda(
        fam,
        ctxs,
        model,
        LocalDfaHypothesis(dfa),
        GlobalDfaHypothesis(dfa),
        grid_step=grid_step,
        tie_mode=tie_mode,
    )
    result = {"family": family, "params": fit.params.to_dict(), "acc": fit.acc, "err": fit.err}
    click.echo(json.dumps(result, indent=1, sort_keys=True))
    if out_path:
        write_atomic(_resolve(out_path), canonical_json(result) + "\n")


@main.command("verify-theory")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", type=int, help="Master seed (required unless set in config).")
@click.option("--output", "-o", "output_dir", type=str)
@click.option("--lambda", "lambdas", type=float, multiple=True,
              help="Regularizer values (repeatable); default 0.01 0.1 1 10.")
@click.option("--num-tasks", type=int, help="Synthetic tasks per lambda.")
@click.option("--self-test/--no-self-test", default=None,
              help="Also run the weakened-bound mutation check (default: config, else off).")
def cmd_verify_theory(config_path, seed, output_dir, lambdas, num_tasks, self_test):
    """Train log-linear model trios and verify the interpolation bound.

    Exits nonzero if any bound fails, or if the self-test cannot catch the
    deliberately weakened bound.
    """
    theory_over: dict = {}
    if self_test is not None:
        theory_over["self_test"] = self_test
    if lambdas:
        theory_over["lambdas"] = list(lambdas)
    if num_tasks is not None:
        theory_over["num_tasks"] = num_tasks
    overrides: dict = {"theory": theory_over}
    if seed is not None:
        overrides["seed"] = seed
    if output_dir is not None:
        overrides["output_dir"] = _resolve(output_dir)
    if not config_path:
        overrides.setdefault("language", {"dfa": {}})
        overrides.setdefault("hypotheses", ["local"])
        overrides.setdefault("seeds", [0])
        if "output_dir" not in overrides:
            raise click.ClickException("--output is required without a config file")
    _require_seed(seed, config_path is not None)
    cfg = _load_config(config_path, overrides)
    summary = run_verify_theory(cfg)
    click.echo(
        f"proposition bound: {summary['num_passed']}/{summary['num_trials']} trials hold"
    )
    failed = not summary["all_pass"]
    if "self_test" in summary:
        st = summary["self_test"]
        caught = st["mutation_detected"]
        click.echo(
            "self-test: weakened bound "
            + ("caught in trials " + ", ".join(st["failures"]) if caught else "NOT caught")
        )
        failed = failed or not caught
    if failed:
        sys.exit(1)


@main.command("plot")
@click.option("--report", "report_paths", type=click.Path(exists=True), multiple=True,
              required=True, help="Suite report JSON (repeat for noise comparison).")
@click.option("--kind", type=click.Choice(["bars", "sweep", "noise"]), default="bars",
              show_default=True)
@click.option("--output", "-o", "out_path", type=str, required=True)
def cmd_plot(report_paths, kind, out_path):
    """Regenerate an SVG chart from saved suite reports."""
    reports = []
    for p in report_paths:
        with open(p) as fh:
            reports.append(json.load(fh))
    out_path = _resolve(out_path)
    if kind == "bars":
        plot_accuracy_bars(reports[0], path=out_path)
    elif kind == "sweep":
        plot_lambda_sweep(reports[0], path=out_path)
    else:
        if len(reports) < 2:
            raise click.ClickException("noise comparison needs at least two --report files")
        labeled = {r.get("meta", {}).get("noise", f"report{i}"): r for i, r in enumerate(reports)}
        plot_noise_comparison(labeled, path=out_path)
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
