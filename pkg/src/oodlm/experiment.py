"""End-to-end experiment orchestration with full seed provenance.

A single JSON config drives generate -> sample -> train -> evaluate -> plot.
Every random draw traces to the top-level seed through labeled child seeds,
artifacts are written atomically, and a manifest records the hash of every
file so a rerun can be checked for bit-identical outputs.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from . import theory as theory_mod
from .automata import (
    Dfa,
    DfaConfig,
    generate_dfa,
    make_surprising_contexts,
    sample_walks,
)
from .corpus import count_corpus, load_tokens, make_surprising_natural, save_tokens, unigram_dist
from .evaluation import SuiteReport, evaluate_suite
from .hypotheses import (
    GlobalBeamHypothesis,
    GlobalDfaHypothesis,
    LocalCountsHypothesis,
    LocalDfaHypothesis,
)
from .automata import SurprisingContext
from .lm import LmConfig, NoiseConfig, TrainConfig, load_lm, save_lm, train_lm
from .plots import plot_accuracy_bars, plot_lambda_sweep, plot_noise_comparison
from .util import canonical_json, derive_seed, sha256_hex, write_atomic

MANIFEST_NAME = "manifest.json"

HYPOTHESIS_NAMES = (
    "unigram",
    "local",
    "global",
    "ignore",
    "restart",
    "interp_linear",
    "interp_loglinear",
    "interp_loglinear_free",
)

EXPERIMENT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["seed", "output_dir", "language", "hypotheses", "seeds"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "language": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dfa": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "num_states": {"type": "integer", "minimum": 1},
                        "alphabet_size": {"type": "integer", "minimum": 1},
                        "num_neighbors": {"type": "integer", "minimum": 1},
                        "num_symbol_uses": {"type": "integer", "minimum": 1},
                        "accept_prob": {"type": "number", "minimum": 0, "maximum": 1},
                    },
                },
                "corpus_path": {"type": "string", "minLength": 1},
                "vocab_size": {"type": "integer", "minimum": 1},
            },
        },
        "corpus": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_train": {"type": "integer", "minimum": 1},
                "num_val": {"type": "integer", "minimum": 0},
                "max_len": {"type": "integer", "minimum": 1},
            },
        },
        "lm": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "arch": {"enum": ["gru", "transformer"]},
                "embed_dim": {"type": "integer", "minimum": 1},
                "hidden_dim": {"type": "integer", "minimum": 1},
                "num_layers": {"type": "integer", "minimum": 1},
                "num_heads": {"type": "integer", "minimum": 1},
                "ff_multiplier": {"type": "integer", "minimum": 1},
                "max_seq_len": {"type": "integer", "minimum": 2},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "num_examples": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "dtype": {"enum": ["float32", "float64"]},
            },
        },
        "noise": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": ["none", "token", "state_dropout"]},
                    "p": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                },
            },
        },
        "hypotheses": {
            "type": "array",
            "minItems": 1,
            "items": {"enum": list(HYPOTHESIS_NAMES)},
        },
        "num_contexts": {"type": "integer", "minimum": 1},
        "seeds": {"type": "array", "minItems": 1, "items": {"type": "integer"}},
        "restart_seed": {"type": "integer"},
        "beam_width": {"type": "integer", "minimum": 1},
        "grid_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "grid_step_free": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "theory": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambdas": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "number", "exclusiveMinimum": 0},
                },
                "num_tasks": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "exclusiveMinimum": 0},
                "bound_exponent": {"type": "number", "exclusiveMinimum": 0},
                "self_test": {"type": "boolean"},
                "task": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "num_global": {"type": "integer", "minimum": 2},
                        "num_local": {"type": "integer", "minimum": 2},
                        "num_classes": {"type": "integer", "minimum": 2},
                        "num_samples": {"type": "integer", "minimum": 1},
                        "num_unseen": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
    },
}

DEFAULTS = {
    "language": {"dfa": {}},
    "corpus": {"num_train": 8000, "num_val": 1000, "max_len": 64},
    "lm": {"arch": "gru"},
    "train": {"num_examples": 128_000, "batch_size": 32},
    "noise": [{"kind": "none"}],
    "num_contexts": 100,
    "beam_width": 15,
    "grid_step": 0.01,
    "grid_step_free": 0.05,
    "theory": {
        "lambdas": [0.01, 0.1, 1.0, 10.0],
        "num_tasks": 20,
        "tol": 1e-8,
        "bound_exponent": 4.0,
        "self_test": False,
        "task": {},
    },
}


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending field."""


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment description; ``data`` holds the merged JSON."""

    data: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        data = _merge(DEFAULTS, raw)
        # the default language is a DFA; a corpus-path language replaces it
        # rather than conflicting with it
        raw_lang = raw.get("language", {})
        if "corpus_path" in raw_lang and "dfa" not in raw_lang:
            data["language"].pop("dfa", None)
        try:
            jsonschema.validate(data, EXPERIMENT_SCHEMA)
        except jsonschema.ValidationError as e:
            path = ".".join(str(p) for p in e.absolute_path) or "(top level)"
            raise ConfigError(f"config field {path}: {e.message}") from e
        lang = data["language"]
        if ("dfa" in lang) == ("corpus_path" in lang):
            raise ConfigError(
                "config field language: exactly one of 'dfa' or 'corpus_path' required"
            )
        if "corpus_path" in lang and "vocab_size" not in lang:
            raise ConfigError("config field language.vocab_size: required with corpus_path")
        return cls(data=data)

    @classmethod
    def load(cls, path: str, overrides: dict | None = None) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path} is not valid JSON: {e}") from e
        if overrides:
            raw = _merge(raw, overrides)
        return cls.from_dict(raw)

    def __getitem__(self, key):
        return self.data[key]

    def get(self, key, default=None):
        return self.data.get(key, default)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    @property
    def is_dfa_language(self) -> bool:
        return "dfa" in self.data["language"]

    @property
    def output_dir(self) -> str:
        return self.data["output_dir"]

    def child_seed(self, label: str) -> int:
        return derive_seed(self.data["seed"], label)

    def dfa_config(self) -> DfaConfig:
        if not self.is_dfa_language:
            raise ConfigError("config has no language.dfa section")
        return DfaConfig(seed=self.child_seed("language"), **self.data["language"]["dfa"])

    def vocab_size(self) -> int:
        lang = self.data["language"]
        if "dfa" in lang:
            return lang["dfa"].get("alphabet_size", DfaConfig.alphabet_size)
        return lang["vocab_size"]

    def lm_config(self) -> LmConfig:
        lm = dict(self.data["lm"])
        arch = lm.pop("arch")
        if arch == "gru":
            base = dict(embed_dim=128, hidden_dim=256, num_layers=1)
        else:
            base = dict(embed_dim=128, hidden_dim=128, num_layers=2, num_heads=4)
        base.update(lm)
        return LmConfig(arch=arch, vocab_size=self.vocab_size(), **base)

    def train_config(self, seed: int, noise: dict) -> TrainConfig:
        t = dict(self.data["train"])
        kind = noise.get("kind", "none")
        p = noise.get("p", 0.0)
        if kind != "none" and not p:
            raise ConfigError(f"config field noise: kind {kind!r} requires a probability p")
        nc = NoiseConfig(
            token_prob=p if kind == "token" else 0.0,
            dropout_prob=p if kind == "state_dropout" else 0.0,
        )
        return TrainConfig(seed=seed, noise=nc, **t)


def noise_label(noise: dict) -> str:
    if noise.get("kind", "none") == "none":
        return "none"
    return f"{noise['kind']}-{noise['p']:g}"


# -- artifact bookkeeping ------------------------------------------------


class ArtifactStore:
    """Paths under the output dir plus a hash ledger for the manifest."""

    def __init__(self, root: str):
        self.root = root
        self.hashes: dict[str, str] = {}

    def path(self, rel: str) -> str:
        return os.path.join(self.root, rel)

    def record(self, rel: str) -> None:
        with open(self.path(rel), "rb") as fh:
            self.hashes[rel] = sha256_hex(fh.read())

    def exists(self, rel: str) -> bool:
        return os.path.exists(self.path(rel))

    def write_manifest(self, config: ExperimentConfig) -> None:
        from . import __version__

        manifest = {
            "format_version": 1,
            "package_version": __version__,
            "config": config.to_dict(),
            "artifacts": dict(sorted(self.hashes.items())),
        }
        write_atomic(self.path(MANIFEST_NAME), canonical_json(manifest) + "\n")


# -- pipeline stages -----------------------------------------------------


def stage_language(config: ExperimentConfig, store: ArtifactStore, resume: bool = True) -> Dfa:
    """Generate (or reload) the DFA and write dfa.json."""
    rel = "dfa.json"
    if resume and store.exists(rel):
        with open(store.path(rel)) as fh:
            dfa = Dfa.from_dict(json.load(fh))
    else:
        dfa = generate_dfa(config.dfa_config())
        write_atomic(store.path(rel), canonical_json(dfa.to_dict()) + "\n")
    store.record(rel)
    return dfa


def stage_corpus(
    config: ExperimentConfig, dfa: Dfa, store: ArtifactStore, resume: bool = True
) -> tuple:
    """Sample train/val walk corpora and write token files."""
    cc = config["corpus"]
    out = {}
    for split, n in (("train", cc["num_train"]), ("val", cc["num_val"])):
        rel = f"corpus/{split}.tokens"
        if n == 0:
            out[split] = []
            continue
        if resume and store.exists(rel):
            seqs, _ = load_tokens(store.path(rel))
        else:
            rng = np.random.default_rng(config.child_seed(f"corpus/{split}"))
            seqs = sample_walks(dfa, n, rng, max_len=cc["max_len"])
            meta = {
                "seed": config.child_seed(f"corpus/{split}"),
                "language": config["language"],
                "split": split,
                "max_len": cc["max_len"],
            }
            save_tokens(store.path(rel), seqs, meta)
        store.record(rel)
        out[split] = seqs
    return out["train"], out["val"]


def stage_contexts(
    config: ExperimentConfig,
    store: ArtifactStore,
    dfa: Dfa | None = None,
    corpus=None,
    helper_lm=None,
    resume: bool = True,
) -> list:
    """Surprising contexts: exact zero-probability tokens in the DFA case."""
    rel = "contexts.json"
    if resume and store.exists(rel):
        with open(store.path(rel)) as fh:
            ctxs = [SurprisingContext.from_dict(d) for d in json.load(fh)]
    else:
        rng = np.random.default_rng(config.child_seed("contexts"))
        if dfa is not None:
            ctxs = make_surprising_contexts(
                dfa, config["num_contexts"], rng, max_len=config["corpus"]["max_len"]
            )
        else:
            counts = count_corpus(corpus, config.vocab_size())
            ctxs = make_surprising_natural(
                helper_lm, corpus, counts, rng, num_contexts=config["num_contexts"]
            )
        write_atomic(
            store.path(rel), canonical_json([c.to_dict() for c in ctxs]) + "\n"
        )
    store.record(rel)
    return ctxs


def _model_rel(noise: dict, arch: str, seed: int) -> str:
    return f"models/{noise_label(noise)}/{arch}-seed{seed}.ckpt"


def stage_train_one(
    config: ExperimentConfig,
    corpus,
    noise: dict,
    seed: int,
    store: ArtifactStore,
    resume: bool = True,
    log_every: int = 0,
):
    lm_cfg = config.lm_config()
    rel = _model_rel(noise, lm_cfg.arch, seed)
    if resume and store.exists(rel):
        model = load_lm(store.path(rel))
    else:
        model = train_lm(corpus, lm_cfg, config.train_config(seed, noise), log_every=log_every)
        save_lm(model, store.path(rel))
    store.record(rel)
    return model


def stage_suite(
    config: ExperimentConfig,
    models: dict,
    contexts,
    local_hyp,
    global_hyp,
    unigram: np.ndarray,
    noise: dict,
    store: ArtifactStore,
    restart_lm=None,
) -> SuiteReport:
    label = noise_label(noise)
    meta = {
        "language": "dfa" if config.is_dfa_language else "corpus",
        "arch": config["lm"]["arch"],
        "noise": label,
        "num_contexts": len(contexts),
        "seeds": sorted(models),
    }
    report = evaluate_suite(
        models,
        contexts,
        local_hyp,
        global_hyp,
        unigram,
        restart_lm=restart_lm,
        include=config["hypotheses"],
        grid_step=config["grid_step"],
        grid_step_free=config["grid_step_free"],
        meta=meta,
    )
    base = f"reports/{label}"
    report.save_json(store.path(f"{base}/report.json"))
    report.save_csv(store.path(f"{base}/report.csv"))
    store.record(f"{base}/report.json")
    store.record(f"{base}/report.csv")
    plot_accuracy_bars(report, store.path(f"{base}/accuracy.svg"))
    store.record(f"{base}/accuracy.svg")
    if report.sweep:
        plot_lambda_sweep(report, store.path(f"{base}/sweep.svg"))
        store.record(f"{base}/sweep.svg")
    return report


def run_suite_pipeline(
    config: ExperimentConfig, resume: bool = True, log_every: int = 0
) -> dict:
    """The full generate -> train -> evaluate pipeline for one config.

    Returns {noise label -> SuiteReport} plus writes every artifact and the
    manifest.  With ``resume`` (default) existing artifacts are reloaded, so
    an interrupted run picks up where it stopped.
    """
    store = ArtifactStore(config.output_dir)
    if config.is_dfa_language:
        dfa = stage_language(config, store, resume=resume)
        train_walks, _ = stage_corpus(config, dfa, store, resume=resume)
        contexts = stage_contexts(config, store, dfa=dfa, resume=resume)
        local_hyp = LocalDfaHypothesis(dfa)
        global_hyp = GlobalDfaHypothesis(dfa)
    else:
        dfa = None
        train_walks, header = load_tokens(config["language"]["corpus_path"])
        counts = count_corpus(train_walks, config.vocab_size())
        local_hyp = LocalCountsHypothesis(counts)
        global_hyp = None  # needs a trained helper model; built after training
    counts = count_corpus(train_walks, config.vocab_size())
    unigram = unigram_dist(counts)

    reports = {}
    want_restart = "restart" in config["hypotheses"]
    for noise in config["noise"]:
        label = noise_label(noise)
        models = {
            seed: stage_train_one(
                config, train_walks, noise, seed, store, resume=resume, log_every=log_every
            )
            for seed in config["seeds"]
        }
        restart_lm = None
        if want_restart and "restart_seed" in config.data:
            restart_lm = stage_train_one(
                config,
                train_walks,
                noise,
                config["restart_seed"],
                store,
                resume=resume,
                log_every=log_every,
            )
        if dfa is None:
            helper = restart_lm if restart_lm is not None else models[config["seeds"][0]]
            global_hyp = GlobalBeamHypothesis(helper, beam_width=config["beam_width"])
            if label == noise_label(config["noise"][0]) and not store.exists("contexts.json"):
                contexts = stage_contexts(
                    config, store, corpus=train_walks, helper_lm=helper, resume=resume
                )
            elif store.exists("contexts.json"):
                contexts = stage_contexts(config, store, resume=resume)
        reports[label] = stage_suite(
            config,
            models,
            contexts,
            local_hyp,
            global_hyp,
            unigram,
            noise,
            store,
            restart_lm=restart_lm,
        )
    if len(reports) > 1:
        plot_noise_comparison(reports, path=store.path("reports/noise_comparison.svg"))
        store.record("reports/noise_comparison.svg")
    store.write_manifest(config)
    return reports


def run_gen_language(config: ExperimentConfig, resume: bool = True) -> dict:
    """Just the language + corpus stages; returns the artifact hash map."""
    store = ArtifactStore(config.output_dir)
    dfa = stage_language(config, store, resume=resume)
    stage_corpus(config, dfa, store, resume=resume)
    store.write_manifest(config)
    return dict(store.hashes)


def run_verify_theory(config: ExperimentConfig) -> dict:
    """Theory sweep (plus optional mutation self-test); writes reports.

    The summary dict's ``all_pass`` covers the sweep; ``self_test`` reports
    whether the weakened bound was caught.
    """
    store = ArtifactStore(config.output_dir)
    tc = config["theory"]
    trials = theory_mod.theory_sweep(
        lams=tuple(tc["lambdas"]),
        num_tasks=tc["num_tasks"],
        seed=config.child_seed("theory"),
        tol=tc["tol"],
        task_kwargs=tc["task"],
        bound_exponent=tc["bound_exponent"],
    )
    all_pass = all(t["pass"] for t in trials)
    summary = {
        "num_trials": len(trials),
        "num_passed": sum(t["pass"] for t in trials),
        "all_pass": all_pass,
        "lambdas": tc["lambdas"],
        "trials": trials,
    }
    if tc["self_test"]:
        summary["self_test"] = theory_mod.self_test_mutation(
            np.random.default_rng(config.child_seed("theory-selftest")), tol=tc["tol"]
        )
    write_atomic(store.path("theory/report.json"), canonical_json(summary) + "\n")
    store.record("theory/report.json")
    rows = ["task,lambda,epsilon,bound,max_deviation,holds"]
    for t in trials:
        p = t["proposition"]
        rows.append(
            f"{t['task']},{t['lambda']},{p['epsilon']:.6g},{p['bound']:.6g},"
            f"{p['max_deviation']:.6g},{p['holds']}"
        )
    write_atomic(store.path("theory/report.csv"), "\n".join(rows) + "\n")
    store.record("theory/report.csv")
    store.write_manifest(config)
    return summary
