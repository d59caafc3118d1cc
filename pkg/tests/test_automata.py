"""Automaton generation, walk process, exact distributions, surprising contexts.

Oracles: tiny automata with hand-derived closed forms, brute-force
re-derivations from the edge dict, and small Monte Carlo cross-checks.  The
million-walk Monte Carlo agreement lives in the acceptance suite.
"""

import numpy as np
import pytest

from oodlm.automata import (
    Dfa,
    DfaConfig,
    DfaReject,
    ExactDfaLm,
    certify_zero_probability,
    generate_dfa,
    ground_truth_global,
    ground_truth_local,
    make_surprising_context,
    make_surprising_contexts,
    next_token_distribution,
    occupancy_measure,
    prune_unreachable,
    run,
    sample_walk,
    sample_walks,
    symbol_marginal,
    validate_dfa,
    walk_state_visits,
)
from oodlm.util import UnseenTokenError, check_dist

EOS_TOL = 1e-9


def chain_dfa():
    """S0 -a-> S1 -b-> S2(accept, no out-edges): the language is exactly {ab}."""
    return Dfa(3, 3, 0, frozenset({2}), {(0, 0): 1, (1, 1): 2})


def branch_dfa():
    """S0 -a-> S1(accept) -c-> S2(accept); S0 -b-> S2.  Walks: ab? no: a, ac, b."""
    return Dfa(3, 3, 0, frozenset({1, 2}), {(0, 0): 1, (0, 1): 2, (1, 2): 2})


def loop_dfa():
    """Single accepting state with one self-loop: geometric walk lengths."""
    return Dfa(1, 1, 0, frozenset({0}), {(0, 0): 0})


# -- structure and generation --------------------------------------------


def test_generated_dfa_satisfies_caps():
    config = DfaConfig(seed=3)
    dfa = generate_dfa(config)
    validate_dfa(dfa, config)
    uses = np.zeros(config.alphabet_size, dtype=int)
    for s in range(dfa.num_states):
        syms = dfa.out_symbols(s)
        assert len(set(syms.tolist())) == syms.size, "duplicate symbol on one state"
        assert syms.size <= config.symbols_per_state
        dsts = {dfa.successor(s, int(sym)) for sym in syms}
        assert len(dsts) <= config.num_neighbors
        for sym in syms:
            uses[sym] += 1
    assert uses.max() <= config.num_symbol_uses


def test_generated_dfa_deterministic_and_seed_sensitive():
    a = generate_dfa(DfaConfig(seed=5))
    b = generate_dfa(DfaConfig(seed=5))
    c = generate_dfa(DfaConfig(seed=6))
    assert a.to_dict() == b.to_dict()
    assert a.to_dict() != c.to_dict()


def test_every_state_reachable_and_terminating():
    for seed in range(20):
        dfa = generate_dfa(DfaConfig(seed=seed))
        assert set(dfa.reachable_states().tolist()) == set(range(dfa.num_states))
        # every reachable state admits a path to acceptance: occupancy is finite
        mu = occupancy_measure(dfa)
        assert np.all(np.isfinite(mu))


def test_prune_unreachable_drops_islands():
    # state 2 is an island; state 1 accepting
    dfa = Dfa(3, 2, 0, frozenset({1, 2}), {(0, 0): 1, (2, 1): 2})
    pruned = prune_unreachable(dfa)
    assert pruned.num_states == 2
    validate_dfa(pruned)


def test_validate_rejects_stranded_state():
    # state 1 has no out-edges and is not accepting
    dfa = Dfa(2, 2, 0, frozenset(), {(0, 0): 1})
    with pytest.raises(ValueError, match="strand|terminate"):
        validate_dfa(dfa)


def test_validate_rejects_nonterminating_cycle():
    # two states cycling forever, never accepting
    dfa = Dfa(2, 2, 0, frozenset(), {(0, 0): 1, (1, 1): 0})
    with pytest.raises(ValueError, match="terminate"):
        validate_dfa(dfa)


def test_dfa_round_trip(tmp_path):
    dfa = generate_dfa(DfaConfig(seed=9))
    path = tmp_path / "dfa.json"
    dfa.save(str(path))
    loaded = Dfa.load(str(path))
    assert loaded.to_dict() == dfa.to_dict()


def test_run_rejects_bad_token():
    dfa = chain_dfa()
    assert run(dfa, [0, 1]) == 2
    with pytest.raises(DfaReject):
        run(dfa, [1])


# -- walk process --------------------------------------------------------


def test_sample_walk_chain_is_deterministic_language():
    dfa = chain_dfa()
    rng = np.random.default_rng(0)
    for _ in range(10):
        w = sample_walk(dfa, rng)
        assert w.terminated
        assert list(w) == [0, 1]


def test_sample_walks_are_valid_and_end_accepting():
    dfa = generate_dfa(DfaConfig(seed=7))
    walks = sample_walks(dfa, 200, np.random.default_rng(0))
    for w in walks:
        state = run(dfa, w.tokens)  # raises DfaReject on an invalid step
        if w.terminated:
            assert dfa.is_accepting(state)


def test_sample_walks_deterministic_given_seed():
    dfa = generate_dfa(DfaConfig(seed=7))
    a = sample_walks(dfa, 50, np.random.default_rng(42))
    b = sample_walks(dfa, 50, np.random.default_rng(42))
    assert all(np.array_equal(x.tokens, y.tokens) for x, y in zip(a, b))


def test_truncation_flag():
    dfa = loop_dfa()
    rng = np.random.default_rng(0)
    walks = sample_walks(dfa, 500, rng, max_len=3)
    lens = np.array([len(w) for w in walks])
    cut = np.array([not w.terminated for w in walks])
    assert np.all(lens[cut] == 3)
    assert cut.any() and (~cut).any()
    # geometric(1/2) lengths among terminated walks
    frac0 = np.mean(lens[~cut] == 0)
    assert abs(frac0 - 4 / 7) < 0.1  # P(len=0 | len<3) = (1/2)/(7/8)


# -- exact distributions, closed-form oracles ----------------------------


def test_next_token_distribution_uniform_over_options():
    dfa = branch_dfa()
    np.testing.assert_allclose(next_token_distribution(dfa, 0), [0.5, 0.5, 0, 0])
    np.testing.assert_allclose(next_token_distribution(dfa, 1), [0, 0, 0.5, 0.5])
    np.testing.assert_allclose(next_token_distribution(dfa, 2), [0, 0, 0, 1.0])


def test_occupancy_chain():
    np.testing.assert_allclose(occupancy_measure(chain_dfa()), [1.0, 1.0, 1.0])


def test_occupancy_branch():
    # mu0 = 1; mu1 = 1/2 (edge a); mu2 = 1/2 (edge b) + 1/4 (a then c)
    np.testing.assert_allclose(occupancy_measure(branch_dfa()), [1.0, 0.5, 0.75])


def test_occupancy_loop_geometric():
    # mu = 1 + mu/2  =>  expected visits 2
    np.testing.assert_allclose(occupancy_measure(loop_dfa()), [2.0])


def test_occupancy_raises_when_walks_cannot_terminate():
    dfa = Dfa(2, 2, 0, frozenset(), {(0, 0): 1, (1, 1): 0})
    with pytest.raises(ValueError, match="infinite|terminat"):
        occupancy_measure(dfa)


def test_symbol_marginal_branch():
    # expected emissions: a 1/2, b 1/2, c 1/4, EOS 1; total 9/4
    np.testing.assert_allclose(
        symbol_marginal(branch_dfa()), [2 / 9, 2 / 9, 1 / 9, 4 / 9]
    )


def test_ground_truth_local_branch():
    dfa = branch_dfa()
    # after 'a' the walk sits in S1: uniform over {c, EOS}
    np.testing.assert_allclose(ground_truth_local(dfa, 0), [0, 0, 0.5, 0.5])
    # after 'c' (only edge S1->S2): S2 emits EOS
    np.testing.assert_allclose(ground_truth_local(dfa, 2), [0, 0, 0, 1.0])


def test_ground_truth_local_mixes_by_occupancy():
    # two edges share symbol 0 from states with different occupancy:
    # S0 -0-> S1(accept, -1-> S2), S2(accept) -0-> S2
    dfa = Dfa(3, 2, 0, frozenset({1, 2}), {(0, 0): 1, (1, 1): 2, (2, 0): 2})
    mu = occupancy_measure(dfa)
    w0 = mu[0] / 1.0  # S0 has 1 option
    w2 = mu[2] / 2.0  # S2 has 2 options (edge + EOS)
    expect = (
        w0 * next_token_distribution(dfa, 1) + w2 * next_token_distribution(dfa, 2)
    ) / (w0 + w2)
    np.testing.assert_allclose(ground_truth_local(dfa, 0), expect, atol=1e-12)


def test_ground_truth_local_unseen_symbol_raises():
    with pytest.raises(UnseenTokenError):
        ground_truth_local(chain_dfa(), 2)


def test_ground_truth_global_branch():
    dfa = branch_dfa()
    # from S0, one unknown step leads to S1 or S2 with weight 1/2 each
    expect = 0.5 * next_token_distribution(dfa, 1) + 0.5 * next_token_distribution(dfa, 2)
    np.testing.assert_allclose(ground_truth_global(dfa, []), expect)


def test_ground_truth_global_brute_force_enumeration(dfa):
    """Re-derive the skip-step marginal from the raw edge dict."""
    ctx_rng = np.random.default_rng(5)
    checked = 0
    while checked < 5:
        walk = sample_walk(dfa, ctx_rng)
        state = run(dfa, walk.tokens)
        dists = [
            next_token_distribution(dfa, t)
            for (s, _), t in sorted(dfa.edges.items())
            if s == state
        ]
        if not dists:
            continue
        np.testing.assert_allclose(
            ground_truth_global(dfa, walk.tokens), np.mean(dists, axis=0), atol=1e-12
        )
        checked += 1


def test_exact_distributions_are_distributions(dfa, mu):
    for s in range(dfa.num_states):
        check_dist(next_token_distribution(dfa, s))
    check_dist(symbol_marginal(dfa, mu))
    for sym in range(dfa.alphabet_size):
        try:
            check_dist(ground_truth_local(dfa, sym, mu=mu))
        except UnseenTokenError:
            pass


# -- small Monte Carlo cross-checks (the large one is in acceptance) -----


def test_occupancy_matches_visits_small_mc():
    dfa = branch_dfa()
    visits = walk_state_visits(dfa, 40_000, np.random.default_rng(1))
    mean = visits.mean(axis=0)
    se = visits.std(axis=0, ddof=1) / np.sqrt(visits.shape[0])
    mu = occupancy_measure(dfa)
    assert np.all(np.abs(mean - mu) <= 4 * se + 1e-12)


def test_walk_next_token_frequencies_small_mc():
    dfa = branch_dfa()
    walks = sample_walks(dfa, 40_000, np.random.default_rng(2), max_len=16)
    counts = np.zeros(dfa.alphabet_size + 1)
    after_a = np.zeros(dfa.alphabet_size + 1)
    for w in walks:
        toks = list(w)
        emissions = toks + ([dfa.alphabet_size] if w.terminated else [])
        for e in emissions:
            counts[e] += 1
        for i, t in enumerate(toks):
            if t == 0 and i + 1 < len(emissions):
                after_a[emissions[i + 1]] += 1
    np.testing.assert_allclose(counts / counts.sum(), symbol_marginal(dfa), atol=0.01)
    np.testing.assert_allclose(
        after_a / after_a.sum(), ground_truth_local(dfa, 0), atol=0.015
    )


# -- surprising contexts -------------------------------------------------


def test_surprising_context_certified_zero(dfa):
    rng = np.random.default_rng(11)
    for _ in range(20):
        ctx = make_surprising_context(dfa, rng)
        assert certify_zero_probability(dfa, ctx)
        assert ctx.epsilon == 0.0
        state = run(dfa, ctx.global_ctx)
        assert state == ctx.final_state
        dist = next_token_distribution(dfa, state)
        assert dist[ctx.local_token] == 0.0
        # the appended token is unknown HERE but not unknown to the language
        assert len(dfa.edges_labeled(int(ctx.local_token))) > 0


def test_surprising_context_tau_is_min_step_probability(dfa):
    rng = np.random.default_rng(12)
    ctx = make_surprising_context(dfa, rng)
    probs = []
    s = dfa.start
    for tok in ctx.global_ctx:
        d = dfa.out_degree(s) + (1 if dfa.is_accepting(s) else 0)
        probs.append(1.0 / d)
        s = dfa.successor(s, int(tok))
    assert ctx.tau == pytest.approx(min(probs) if probs else 1.0)
    assert ctx.tau > 0


def test_surprising_context_full_context_shape(dfa):
    ctx = make_surprising_context(dfa, np.random.default_rng(13))
    full = ctx.full_context
    assert full[-1] == ctx.local_token
    np.testing.assert_array_equal(full[:-1], ctx.global_ctx)


def test_surprising_contexts_batch(dfa):
    ctxs = make_surprising_contexts(dfa, 10, np.random.default_rng(14))
    assert len(ctxs) == 10
    assert all(certify_zero_probability(dfa, c) for c in ctxs)


def test_surprising_round_trip(dfa):
    ctx = make_surprising_context(dfa, np.random.default_rng(15))
    back = type(ctx).from_dict(ctx.to_dict())
    assert np.array_equal(back.global_ctx, ctx.global_ctx)
    assert back.local_token == ctx.local_token
    assert back.tau == ctx.tau


def test_exact_lm_matches_truth_and_rejects(dfa, exact_lm):
    walk = sample_walk(dfa, np.random.default_rng(16))
    state = run(dfa, walk.tokens)
    np.testing.assert_allclose(
        exact_lm.predict_proba(walk.tokens), next_token_distribution(dfa, state)
    )
    ctx = make_surprising_context(dfa, np.random.default_rng(17))
    with pytest.raises(DfaReject):
        exact_lm.predict_proba(ctx.full_context)
