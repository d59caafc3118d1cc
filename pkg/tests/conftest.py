"""Shared fixtures: one reference automaton and a session-scoped model zoo.

Training the zoo from scratch takes a while on one core, so when the
OODLM_TEST_CACHE environment variable names a directory, trained checkpoints
are stored there keyed by corpus digest and training protocol and reloaded on
later runs.  Leave it unset for a fully fresh run.
"""

import hashlib
import os
import time

import numpy as np
import pytest

from oodlm.automata import (
    DfaConfig,
    ExactDfaLm,
    generate_dfa,
    make_surprising_contexts,
    occupancy_measure,
    sample_walks,
    symbol_marginal,
)
from oodlm.corpus import corpus_digest
from oodlm.hypotheses import GlobalDfaHypothesis, LocalDfaHypothesis
from oodlm.lm import (
    NoiseConfig,
    TrainConfig,
    default_gru_config,
    default_transformer_config,
    load_lm,
    save_lm,
    train_lm,
)
from oodlm.evaluation import evaluate_suite

MASTER_DFA_SEED = 7
CORPUS_SEED = 1234
CONTEXT_SEED = 4321
NUM_WALKS = 8_000
NUM_CONTEXTS = 100
MAX_LEN = 64
NUM_PRESENTATIONS = 128_000
BATCH_SIZE = 32

GRU_SEEDS = (11, 12, 13, 14, 15)
TF_SEEDS = (21, 22, 23, 24)
RESTART_GRU_SEED = 99
RESTART_TF_SEED = 98
NOISE_P = 0.1


@pytest.fixture(scope="session")
def dfa():
    return generate_dfa(DfaConfig(seed=MASTER_DFA_SEED))


@pytest.fixture(scope="session")
def corpus8k(dfa):
    rng = np.random.default_rng(CORPUS_SEED)
    return sample_walks(dfa, NUM_WALKS, rng, max_len=MAX_LEN)


@pytest.fixture(scope="session")
def contexts100(dfa):
    rng = np.random.default_rng(CONTEXT_SEED)
    return make_surprising_contexts(dfa, NUM_CONTEXTS, rng, max_len=MAX_LEN)


@pytest.fixture(scope="session")
def mu(dfa):
    return occupancy_measure(dfa)


@pytest.fixture(scope="session")
def unigram_exact(dfa, mu):
    return symbol_marginal(dfa, mu)


@pytest.fixture(scope="session")
def exact_lm(dfa):
    return ExactDfaLm(dfa)


def _cache_dir():
    path = os.environ.get("OODLM_TEST_CACHE")
    if path:
        os.makedirs(path, exist_ok=True)
    return path


def _train_cached(name, corpus, lm_config, train_config, digest, timings):
    cache = _cache_dir()
    path = os.path.join(cache, f"{name}-{digest[:12]}.ckpt") if cache else None
    if path and os.path.exists(path):
        timings[name] = 0.0
        return load_lm(path)
    t0 = time.time()
    model = train_lm(corpus, lm_config, train_config, log_every=0)
    timings[name] = time.time() - t0
    if path:
        save_lm(model, path)
    return model


def _protocol_digest(corpus, lm_config, train_config):
    parts = [
        corpus_digest(corpus),
        repr(lm_config),
        repr(train_config),
    ]
    return hashlib.sha256("|".join(parts).encode()).hexdigest()


class Zoo:
    """Trained models for the reference automaton, grouped by condition."""

    def __init__(self, corpus, vocab_size):
        self.corpus = corpus
        self.vocab_size = vocab_size
        self.timings = {}
        self.gru = {}
        self.tf = {}
        self.gru_token = {}
        self.gru_dropout = {}
        self.restart_gru = None
        self.restart_tf = None

    def _train(self, name, lm_config, seed, noise=None):
        tc = TrainConfig(
            seed=seed,
            num_examples=NUM_PRESENTATIONS,
            batch_size=BATCH_SIZE,
            noise=noise or NoiseConfig(),
        )
        digest = _protocol_digest(self.corpus, lm_config, tc)
        return _train_cached(name, self.corpus, lm_config, tc, digest, self.timings)

    def build(self):
        gru_cfg = default_gru_config(self.vocab_size)
        tf_cfg = default_transformer_config(self.vocab_size)
        for s in GRU_SEEDS:
            self.gru[s] = self._train(f"gru-{s}", gru_cfg, s)
        self.restart_gru = self._train(f"gru-restart-{RESTART_GRU_SEED}", gru_cfg, RESTART_GRU_SEED)
        for s in TF_SEEDS:
            self.tf[s] = self._train(f"tf-{s}", tf_cfg, s)
        self.restart_tf = self._train(f"tf-restart-{RESTART_TF_SEED}", tf_cfg, RESTART_TF_SEED)
        token = NoiseConfig(token_prob=NOISE_P)
        dropout = NoiseConfig(dropout_prob=NOISE_P)
        for s in GRU_SEEDS:
            self.gru_token[s] = self._train(f"gru-token-{s}", gru_cfg, s, noise=token)
            self.gru_dropout[s] = self._train(f"gru-dropout-{s}", gru_cfg, s, noise=dropout)
        return self


@pytest.fixture(scope="session")
def zoo(corpus8k, dfa):
    return Zoo(corpus8k, dfa.alphabet_size).build()


def _suite(dfa, mu, unigram, models, contexts, restart_lm, include=None):
    local = LocalDfaHypothesis(dfa, mu=mu, fallback=unigram)
    global_ = GlobalDfaHypothesis(dfa)
    return evaluate_suite(
        models,
        contexts,
        local,
        global_,
        unigram,
        restart_lm=restart_lm,
        include=include,
    )


@pytest.fixture(scope="session")
def gru_report(dfa, mu, unigram_exact, zoo, contexts100):
    return _suite(dfa, mu, unigram_exact, zoo.gru, contexts100, zoo.restart_gru)


@pytest.fixture(scope="session")
def tf_report(dfa, mu, unigram_exact, zoo, contexts100):
    return _suite(dfa, mu, unigram_exact, zoo.tf, contexts100, zoo.restart_tf)


@pytest.fixture(scope="session")
def grad_checks():
    """Finite-difference gradient audits, shared between module and acceptance tests."""
    from oodlm.lm import grad_check_lm, tiny_lm_config
    from oodlm.theory import grad_check_loglinear, make_synthetic_task

    task = make_synthetic_task(
        np.random.default_rng(0), num_global=5, num_local=4, num_classes=3,
        num_samples=400, num_unseen=3,
    )
    data = (task.g, task.l, task.y)
    return {
        "gru": grad_check_lm(tiny_lm_config("gru")),
        "transformer": grad_check_lm(tiny_lm_config("transformer")),
        "loglinear": grad_check_loglinear(task.feature_spec, data, task.num_classes),
    }


@pytest.fixture(scope="session")
def noise_reports(dfa, mu, unigram_exact, zoo, contexts100, gru_report):
    rows = ("unigram", "local", "global")
    return {
        "clean": gru_report,
        "token": _suite(dfa, mu, unigram_exact, zoo.gru_token, contexts100, None, include=rows),
        "dropout": _suite(
            dfa, mu, unigram_exact, zoo.gru_dropout, contexts100, None, include=rows
        ),
    }
