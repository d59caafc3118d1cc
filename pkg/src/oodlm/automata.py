"""Random regular languages as DFAs, walk sampling, and exact predictive distributions.

A language is a deterministic finite automaton sampled under degree caps:
each state has at most ``num_neighbors`` distinct successor states, carries at
most ``ceil(alphabet_size / num_states)`` outgoing symbols, and each symbol
labels at most ``num_symbol_uses`` edges globally.  Strings are produced by a
uniform random walk: from state ``s`` with out-degree ``d``, each out-edge has
probability ``1 / (d + a)`` where ``a`` is 1 if ``s`` is accepting (the EOS
option) and 0 otherwise.

Next-token distributions are float64 arrays of length ``alphabet_size + 1``
with the EOS slot last (see the package docstring for conventions).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .util import UnseenTokenError, check_dist, write_atomic

DFA_FORMAT_VERSION = 1


class DfaReject(Exception):
    """A token sequence left the DFA's transition function.

    ``index`` is the position of the first invalid token.
    """

    def __init__(self, index: int, state: int, token: int):
        self.index = index
        self.state = state
        self.token = token
        super().__init__(f"token {token} at position {index} has no edge from state {state}")


class GenerationError(RuntimeError):
    """Random DFA generation failed to satisfy its constraints within the retry budget."""


@dataclass
class DfaConfig:
    num_states: int = 8
    alphabet_size: int = 128
    num_neighbors: int = 4
    num_symbol_uses: int = 4
    accept_prob: float = 0.5
    seed: int = 0
    max_attempts: int = 1000

    def validate(self) -> None:
        for name in ("num_states", "alphabet_size", "num_neighbors", "num_symbol_uses"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not 0.0 <= self.accept_prob <= 1.0:
            raise ValueError(f"accept_prob must lie in [0, 1], got {self.accept_prob!r}")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")

    @property
    def symbols_per_state(self) -> int:
        return math.ceil(self.alphabet_size / self.num_states)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "alphabet_size": self.alphabet_size,
            "num_neighbors": self.num_neighbors,
            "num_symbol_uses": self.num_symbol_uses,
            "accept_prob": self.accept_prob,
            "seed": self.seed,
        }


@dataclass
class Dfa:
    """Immutable-by-convention DFA with per-state caches for fast sampling.

    ``edges`` maps ``(state, symbol) -> successor``; determinism is inherent in
    the keying.  Mutating ``edges`` after construction leaves the caches stale,
    so treat instances as frozen.
    """

    num_states: int
    alphabet_size: int
    start: int
    accepting: frozenset
    edges: dict

    def __post_init__(self):
        self.accepting = frozenset(int(s) for s in self.accepting)
        self._build_caches()

    def _build_caches(self) -> None:
        per_state: list[list[tuple[int, int]]] = [[] for _ in range(self.num_states)]
        for (s, sym), t in self.edges.items():
            per_state[s].append((int(sym), int(t)))
        self._out_syms = []
        self._out_dsts = []
        for s in range(self.num_states):
            per_state[s].sort()
            syms = np.array([sym for sym, _ in per_state[s]], dtype=np.int64)
            dsts = np.array([t for _, t in per_state[s]], dtype=np.int64)
            self._out_syms.append(syms)
            self._out_dsts.append(dsts)
        self._degree = np.array([len(p) for p in per_state], dtype=np.int64)
        self._accept_mask = np.zeros(self.num_states, dtype=bool)
        for s in self.accepting:
            self._accept_mask[s] = True
        self._options = self._degree + self._accept_mask.astype(np.int64)
        width = max(1, int(self._degree.max(initial=0)))
        self._sym_pad = np.full((self.num_states, width), -1, dtype=np.int64)
        self._dst_pad = np.full((self.num_states, width), -1, dtype=np.int64)
        for s in range(self.num_states):
            d = self._degree[s]
            self._sym_pad[s, :d] = self._out_syms[s]
            self._dst_pad[s, :d] = self._out_dsts[s]
        by_symbol: dict[int, list[tuple[int, int]]] = {}
        for (s, sym), t in sorted(self.edges.items()):
            by_symbol.setdefault(int(sym), []).append((int(s), int(t)))
        self._edges_by_symbol = by_symbol

    # -- basic queries ----------------------------------------------------

    def out_degree(self, state: int) -> int:
        return int(self._degree[state])

    def out_symbols(self, state: int) -> np.ndarray:
        return self._out_syms[state]

    def successor(self, state: int, symbol: int) -> int:
        key = (int(state), int(symbol))
        if key not in self.edges:
            raise KeyError(f"no edge from state {state} on symbol {symbol}")
        return int(self.edges[key])

    def is_accepting(self, state: int) -> bool:
        return bool(self._accept_mask[state])

    def edges_labeled(self, symbol: int) -> list:
        """All ``(src, dst)`` pairs whose edge carries ``symbol``."""
        return self._edges_by_symbol.get(int(symbol), [])

    def reachable_states(self) -> np.ndarray:
        seen = {self.start}
        frontier = [self.start]
        while frontier:
            nxt = []
            for s in frontier:
                for t in self._out_dsts[s]:
                    t = int(t)
                    if t not in seen:
                        seen.add(t)
                        nxt.append(t)
            frontier = nxt
        return np.array(sorted(seen), dtype=np.int64)

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format_version": DFA_FORMAT_VERSION,
            "num_states": self.num_states,
            "alphabet_size": self.alphabet_size,
            "start": self.start,
            "accepting": sorted(int(s) for s in self.accepting),
            "edges": [[s, sym, int(t)] for (s, sym), t in sorted(self.edges.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dfa":
        version = d.get("format_version", 1)
        if version != DFA_FORMAT_VERSION:
            raise ValueError(f"unsupported DFA format version {version!r}")
        num_states = int(d["num_states"])
        alphabet = int(d["alphabet_size"])
        edges = {}
        for s, sym, t in d["edges"]:
            s, sym, t = int(s), int(sym), int(t)
            if not (0 <= s < num_states and 0 <= t < num_states):
                raise ValueError(f"edge ({s},{sym},{t}) references a state out of range")
            if not 0 <= sym < alphabet:
                raise ValueError(f"edge symbol {sym} outside alphabet of size {alphabet}")
            if (s, sym) in edges:
                raise ValueError(f"duplicate edge for state {s} symbol {sym} breaks determinism")
            edges[(s, sym)] = t
        accepting = frozenset(int(s) for s in d["accepting"])
        if any(not 0 <= s < num_states for s in accepting):
            raise ValueError("accepting state out of range")
        start = int(d["start"])
        if not 0 <= start < num_states:
            raise ValueError("start state out of range")
        return cls(num_states, alphabet, start, accepting, edges)

    def save(self, path: str) -> None:
        write_atomic(path, json.dumps(self.to_dict(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path: str) -> "Dfa":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class TokenSeq:
    """A sampled walk: symbol ids without EOS, plus whether EOS was actually drawn.

    ``terminated`` is False only when the walk hit the length cap, in which
    case the final position is not a valid EOS-prediction target.
    """

    tokens: np.ndarray
    terminated: bool = True

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.tokens.shape[0])

    def __iter__(self):
        return iter(self.tokens.tolist())

    def __getitem__(self, i):
        return self.tokens[i]


@dataclass
class SurprisingContext:
    """A context ``X_G`` ending in a token ``X_L`` the data process cannot produce there.

    ``epsilon`` is the certified bound on the true probability of ``local_token``
    after ``global_ctx`` (exactly 0.0 for DFA-derived contexts).  ``tau`` is the
    smallest single-step probability along ``X_G``, witnessing that the context
    itself is plausible.  ``final_state`` is the DFA state reached by ``X_G``
    (None for contexts built from an opaque corpus).
    """

    global_ctx: np.ndarray
    local_token: int
    epsilon: float
    tau: float
    source: str = "dfa"
    final_state: int | None = None

    def __post_init__(self):
        self.global_ctx = np.asarray(self.global_ctx, dtype=np.int64)

    @property
    def full_context(self) -> np.ndarray:
        return np.concatenate([self.global_ctx, [self.local_token]])

    def to_dict(self) -> dict:
        return {
            "global_ctx": [int(t) for t in self.global_ctx],
            "local_token": int(self.local_token),
            "epsilon": self.epsilon,
            "tau": self.tau,
            "source": self.source,
            "final_state": self.final_state,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurprisingContext":
        return cls(
            global_ctx=np.array(d["global_ctx"], dtype=np.int64),
            local_token=int(d["local_token"]),
            epsilon=float(d["epsilon"]),
            tau=float(d["tau"]),
            source=d.get("source", "dfa"),
            final_state=d.get("final_state"),
        )


# -- generation ----------------------------------------------------------


def _build_candidate(config: DfaConfig, rng: np.random.Generator) -> Dfa:
    """One unconstrained-draw attempt; callers validate and retry."""
    V, S = config.alphabet_size, config.num_states
    uses_left = np.full(V, config.num_symbol_uses, dtype=np.int64)
    edges: dict = {}
    per_state_cap = config.symbols_per_state
    for s in range(S):
        k = min(config.num_neighbors, S)
        neighbors = rng.choice(S, size=k, replace=False)
        taken = np.zeros(V, dtype=bool)
        # round-robin over the chosen neighbors so each gets a fair share of
        # the state's symbol budget
        for slot in range(per_state_cap):
            target = int(neighbors[slot % k])
            avail = np.flatnonzero((uses_left > 0) & ~taken)
            if avail.size == 0:
                break
            sym = int(avail[rng.integers(avail.size)])
            edges[(s, sym)] = target
            taken[sym] = True
            uses_left[sym] -= 1
    accepting = frozenset(int(s) for s in np.flatnonzero(rng.random(S) < config.accept_prob))
    return Dfa(S, V, 0, accepting, edges)


def prune_unreachable(dfa: Dfa) -> Dfa:
    """Drop states unreachable from the start and renumber by discovery order."""
    order = [dfa.start]
    seen = {dfa.start}
    i = 0
    while i < len(order):
        s = order[i]
        i += 1
        for t in dfa._out_dsts[s]:
            t = int(t)
            if t not in seen:
                seen.add(t)
                order.append(t)
    remap = {old: new for new, old in enumerate(order)}
    edges = {
        (remap[s], sym): remap[t] for (s, sym), t in dfa.edges.items() if s in remap
    }
    accepting = frozenset(remap[s] for s in dfa.accepting if s in remap)
    return Dfa(len(order), dfa.alphabet_size, remap[dfa.start], accepting, edges)


def _terminable_states(dfa: Dfa) -> set:
    """States from which an accepting state is reachable (including itself)."""
    incoming: dict[int, set] = {s: set() for s in range(dfa.num_states)}
    for (s, _), t in dfa.edges.items():
        incoming[t].add(s)
    good = set(dfa.accepting)
    frontier = list(good)
    while frontier:
        t = frontier.pop()
        for s in incoming[t]:
            if s not in good:
                good.add(s)
                frontier.append(s)
    return good


def validate_dfa(dfa: Dfa, config: DfaConfig | None = None) -> None:
    """Structural checks; with a config, also the generation degree caps.

    Raises ValueError describing the first violated constraint.
    """
    if dfa.num_states < 1:
        raise ValueError("DFA has no states")
    if not dfa.edges:
        raise ValueError("DFA has no edges")
    for (s, sym), t in dfa.edges.items():
        if not (0 <= s < dfa.num_states and 0 <= t < dfa.num_states):
            raise ValueError(f"edge ({s},{sym},{t}) out of state range")
        if not 0 <= sym < dfa.alphabet_size:
            raise ValueError(f"edge symbol {sym} outside alphabet")
    reachable = set(dfa.reachable_states().tolist())
    if reachable != set(range(dfa.num_states)):
        raise ValueError("DFA contains unreachable states")
    for s in range(dfa.num_states):
        if dfa.out_degree(s) == 0 and not dfa.is_accepting(s):
            raise ValueError(f"state {s} strands walks: no out-edges and not accepting")
    terminable = _terminable_states(dfa)
    if reachable - terminable:
        bad = sorted(reachable - terminable)
        raise ValueError(f"walks cannot terminate from states {bad}")
    if config is not None:
        symbol_uses = np.zeros(dfa.alphabet_size, dtype=np.int64)
        for s in range(dfa.num_states):
            dsts = dfa._out_dsts[s]
            if np.unique(dsts).size > config.num_neighbors:
                raise ValueError(f"state {s} exceeds the successor cap")
            if dsts.size > config.symbols_per_state:
                raise ValueError(f"state {s} exceeds the out-symbol cap")
            for sym in dfa._out_syms[s]:
                symbol_uses[sym] += 1
        if symbol_uses.max(initial=0) > config.num_symbol_uses:
            sym = int(np.argmax(symbol_uses))
            raise ValueError(f"symbol {sym} exceeds the global use cap")


def generate_dfa(config: DfaConfig) -> Dfa:
    """Sample a DFA satisfying the degree caps whose walks always terminate.

    Retries fresh draws (same RNG stream) until the pruned automaton is
    nonempty, strands no walk, and can reach an accepting state from every
    state.  Deterministic given ``config.seed``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    last_reason = "no attempts made"
    for _ in range(config.max_attempts):
        candidate = prune_unreachable(_build_candidate(config, rng))
        try:
            validate_dfa(candidate, config)
        except ValueError as e:
            last_reason = str(e)
            continue
        return candidate
    raise GenerationError(
        f"no valid DFA in {config.max_attempts} attempts (last failure: {last_reason})"
    )


# -- running and sampling ------------------------------------------------


def run(dfa: Dfa, tokens) -> int:
    """Final state after consuming ``tokens`` from the start state.

    Raises DfaReject (carrying the offending index) on the first token with no
    edge.
    """
    state = dfa.start
    for i, tok in enumerate(tokens):
        key = (state, int(tok))
        if key not in dfa.edges:
            raise DfaReject(i, state, int(tok))
        state = dfa.edges[key]
    return state


def next_token_distribution(dfa: Dfa, state: int) -> np.ndarray:
    """Exact one-step emission distribution from ``state`` (EOS slot last)."""
    d = dfa.out_degree(state)
    a = 1 if dfa.is_accepting(state) else 0
    if d + a == 0:
        raise ValueError(f"state {state} has no outgoing options")
    dist = np.zeros(dfa.alphabet_size + 1, dtype=np.float64)
    p = 1.0 / (d + a)
    dist[dfa._out_syms[state]] = p
    if a:
        dist[-1] = p
    return dist


def sample_walk(dfa: Dfa, rng: np.random.Generator, max_len: int = 64) -> TokenSeq:
    """One uniform random walk; stops at EOS or at the length cap."""
    state = dfa.start
    out = []
    for _ in range(max_len):
        d = dfa.out_degree(state)
        options = d + (1 if dfa.is_accepting(state) else 0)
        if options == 0:
            raise ValueError(f"walk stranded in state {state}")
        pick = int(rng.integers(options))
        if pick >= d:
            return TokenSeq(np.array(out, dtype=np.int64), terminated=True)
        out.append(int(dfa._out_syms[state][pick]))
        state = int(dfa._out_dsts[state][pick])
    return TokenSeq(np.array(out, dtype=np.int64), terminated=False)


def sample_walks(
    dfa: Dfa, n: int, rng: np.random.Generator, max_len: int = 64
) -> list:
    """Batched walk sampling; same walk process as sample_walk, drawn column-wise.

    The RNG consumption order differs from ``n`` repeated sample_walk calls,
    so the two APIs give different (equally valid) corpora for the same seed.
    """
    toks, lengths, terminated = _walk_batch(dfa, n, rng, max_len)
    return [
        TokenSeq(toks[i, : lengths[i]].astype(np.int64), terminated=bool(terminated[i]))
        for i in range(n)
    ]


def _walk_batch(dfa: Dfa, n: int, rng: np.random.Generator, max_len: int):
    toks = np.full((n, max_len), -1, dtype=np.int32)
    lengths = np.zeros(n, dtype=np.int64)
    terminated = np.zeros(n, dtype=bool)
    alive = np.arange(n)
    state = np.full(n, dfa.start, dtype=np.int64)
    for t in range(max_len):
        if alive.size == 0:
            break
        s = state[alive]
        draws = rng.integers(0, dfa._options[s])
        ended = draws >= dfa._degree[s]
        terminated[alive[ended]] = True
        cont = ~ended
        rows = alive[cont]
        s_cont = s[cont]
        d_cont = draws[cont]
        toks[rows, t] = dfa._sym_pad[s_cont, d_cont]
        lengths[rows] += 1
        state[rows] = dfa._dst_pad[s_cont, d_cont]
        alive = rows
    return toks, lengths, terminated


def walk_state_visits(dfa: Dfa, n: int, rng: np.random.Generator, max_len: int = 10_000):
    """Per-walk state visit counts (walk start included), for occupancy estimates.

    Returns an (n, num_states) int array.  Walks that hit ``max_len`` raise,
    since truncation would bias the counts.
    """
    counts = np.zeros((n, dfa.num_states), dtype=np.int64)
    alive = np.arange(n)
    state = np.full(n, dfa.start, dtype=np.int64)
    for _ in range(max_len):
        if alive.size == 0:
            return counts
        np.add.at(counts, (alive, state[alive]), 1)
        s = state[alive]
        draws = rng.integers(0, dfa._options[s])
        cont = draws < dfa._degree[s]
        rows = alive[cont]
        state[rows] = dfa._dst_pad[s[cont], draws[cont]]
        alive = rows
    raise RuntimeError(f"some walks exceeded {max_len} steps; occupancy estimate would be biased")


# -- exact distributions -------------------------------------------------


def occupancy_measure(dfa: Dfa) -> np.ndarray:
    """Expected visit counts mu of the random walk, per state.

    Solves mu = e_start + mu P where P is the symbol-transition kernel
    (substochastic at accepting states because of the EOS option).  Requires
    that walks terminate from every reachable state; otherwise the expectation
    diverges and this raises.
    """
    reachable = dfa.reachable_states()
    terminable = _terminable_states(dfa)
    missing = [int(s) for s in reachable if int(s) not in terminable]
    if missing:
        raise ValueError(f"occupancy is infinite: no path to acceptance from states {missing}")
    index = {int(s): i for i, s in enumerate(reachable)}
    m = len(reachable)
    P = np.zeros((m, m), dtype=np.float64)
    for s in reachable:
        s = int(s)
        w = 1.0 / dfa._options[s]
        for t in dfa._out_dsts[s]:
            P[index[s], index[int(t)]] += w
    e = np.zeros(m)
    e[index[dfa.start]] = 1.0
    mu_r = np.linalg.solve((np.eye(m) - P).T, e)
    mu = np.zeros(dfa.num_states, dtype=np.float64)
    mu[reachable] = mu_r
    return mu


def ground_truth_global(dfa: Dfa, global_ctx) -> np.ndarray:
    """Next-token distribution after the context plus one unknown in-support symbol.

    Marginalizes uniformly over the symbols the final state can emit
    (conditioning on the walk continuing, so EOS is excluded as the intervening
    step) and averages the successor states' exact emission distributions.
    """
    state = run(dfa, global_ctx)
    d = dfa.out_degree(state)
    if d == 0:
        raise ValueError(f"state {state} emits nothing; the skip-step marginal is undefined")
    dist = np.zeros(dfa.alphabet_size + 1, dtype=np.float64)
    for t in dfa._out_dsts[state]:
        dist += next_token_distribution(dfa, int(t))
    return dist / d


def ground_truth_local(
    dfa: Dfa, local_token: int, mu: np.ndarray | None = None
) -> np.ndarray:
    """Next-token distribution given only that ``local_token`` was just emitted.

    Mixture over all edges labeled with the token, each weighted by how often
    the walk traverses it: occupancy of the source state times the edge's
    emission probability there.
    """
    edges = dfa.edges_labeled(local_token)
    if not edges:
        raise UnseenTokenError(
            f"symbol {local_token} labels no edge; the conditional is undefined "
            "(callers may fall back to the unigram distribution)"
        )
    if mu is None:
        mu = occupancy_measure(dfa)
    weights = np.array([mu[s] / dfa._options[s] for s, _ in edges], dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise ValueError(f"symbol {local_token} is never emitted by the walk process")
    weights /= total
    dist = np.zeros(dfa.alphabet_size + 1, dtype=np.float64)
    for w, (_, t) in zip(weights, edges):
        dist += w * next_token_distribution(dfa, t)
    return dist


def symbol_marginal(dfa: Dfa, mu: np.ndarray | None = None) -> np.ndarray:
    """Exact per-walk expected emission counts, normalized over symbols and EOS."""
    if mu is None:
        mu = occupancy_measure(dfa)
    counts = np.zeros(dfa.alphabet_size + 1, dtype=np.float64)
    for (s, sym), _ in dfa.edges.items():
        counts[sym] += mu[s] / dfa._options[s]
    for s in dfa.accepting:
        if mu[s] > 0:
            counts[-1] += mu[s] / dfa._options[s]
    return counts / counts.sum()


# -- surprising contexts -------------------------------------------------


def make_surprising_context(
    dfa: Dfa,
    rng: np.random.Generator,
    max_len: int = 64,
    max_tries: int = 200,
) -> SurprisingContext:
    """Sample a plausible context and append a symbol its final state cannot emit.

    The appended token has probability exactly zero under the walk process, so
    the surprise threshold holds with epsilon = 0.  Retries until the sampled
    walk terminates, its final state still emits something (the skip-step
    marginal must exist), and at least one symbol is non-producible there.

    Candidate tokens must label an edge somewhere else in the automaton:
    surprise should come from the context, not from the token being unknown
    to the language entirely (which would leave the just-emitted-token
    conditional undefined).
    """
    labeled = np.zeros(dfa.alphabet_size, dtype=bool)
    for syms in dfa._out_syms:
        labeled[syms] = True
    for _ in range(max_tries):
        walk = sample_walk(dfa, rng, max_len=max_len)
        if not walk.terminated:
            continue
        state = run(dfa, walk.tokens)
        d = dfa.out_degree(state)
        if d == 0 or d >= dfa.alphabet_size:
            continue
        producible = np.zeros(dfa.alphabet_size, dtype=bool)
        producible[dfa._out_syms[state]] = True
        candidates = np.flatnonzero(labeled & ~producible)
        if candidates.size == 0:
            continue
        local = int(candidates[rng.integers(candidates.size)])
        tau = 1.0
        s = dfa.start
        for tok in walk.tokens:
            tau = min(tau, 1.0 / dfa._options[s])
            s = dfa.edges[(s, int(tok))]
        return SurprisingContext(
            global_ctx=walk.tokens,
            local_token=local,
            epsilon=0.0,
            tau=float(tau),
            source="dfa",
            final_state=int(state),
        )
    raise RuntimeError(f"no surprising context found in {max_tries} walks")


def make_surprising_contexts(
    dfa: Dfa, n: int, rng: np.random.Generator, max_len: int = 64
) -> list:
    return [make_surprising_context(dfa, rng, max_len=max_len) for _ in range(n)]


def certify_zero_probability(dfa: Dfa, ctx: SurprisingContext) -> bool:
    """True iff the local token provably has probability 0 after the context."""
    try:
        state = run(dfa, ctx.global_ctx)
    except DfaReject:
        return False
    return (state, int(ctx.local_token)) not in dfa.edges


class ExactDfaLm:
    """The exact walk-process predictor wearing the LM interface.

    Useful as a noiseless helper model and as a zero-error reference for the
    evaluation stack.  Contexts must be valid prefixes of the language.
    """

    def __init__(self, dfa: Dfa):
        self.dfa = dfa
        self.vocab_size = dfa.alphabet_size

    def predict_proba(self, context) -> np.ndarray:
        state = run(self.dfa, context)
        return check_dist(next_token_distribution(self.dfa, state))
