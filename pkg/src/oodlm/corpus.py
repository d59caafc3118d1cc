"""Corpus statistics and token-file IO.

A corpus is any iterable of token sequences (``TokenSeq`` or plain int
sequences).  Counting is EOS-aware: every terminated sequence contributes a
``(last_token, EOS)`` bigram, and sequences cut off by a length cap simply
drop the unobserved final transition.  The unigram distribution is over
symbols only (EOS slot present but zero); bigram rows condition on a symbol
and may place mass on EOS.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .automata import SurprisingContext, TokenSeq
from .util import UnseenTokenError, canonical_json, sha256_hex, write_atomic

TOKENS_FORMAT = "tokens-v1"


@dataclass
class CountTable:
    """Unigram and bigram counts with O(1) row lookup.

    ``unigram[x]`` counts occurrences of symbol ``x``; ``rows[x]`` holds the
    observed successors of ``x`` as aligned (next_ids, counts) arrays, where
    ``vocab_size`` is the EOS id.
    """

    vocab_size: int
    unigram: np.ndarray
    rows: dict
    num_sequences: int
    total_tokens: int

    def successors(self, x: int):
        return self.rows.get(int(x))

    def pair_count(self, x: int, y: int) -> int:
        row = self.rows.get(int(x))
        if row is None:
            return 0
        nexts, counts = row
        i = np.searchsorted(nexts, int(y))
        if i < nexts.size and nexts[i] == int(y):
            return int(counts[i])
        return 0


def _as_tokens(seq) -> tuple:
    if isinstance(seq, TokenSeq):
        return seq.tokens, seq.terminated
    return np.asarray(seq, dtype=np.int64), True


def count_corpus(sequences, vocab_size: int) -> CountTable:
    """Accumulate unigram and bigram counts over a corpus.

    Token ids are validated against the vocabulary bounds; a sequence with an
    out-of-range id raises rather than silently polluting the table.
    """
    if vocab_size < 1:
        raise ValueError("vocab_size must be positive")
    eos = vocab_size
    tok_parts, prev_parts, next_parts = [], [], []
    num_sequences = 0
    for seq in sequences:
        toks, terminated = _as_tokens(seq)
        num_sequences += 1
        if toks.size == 0:
            continue
        if toks.min() < 0 or toks.max() >= vocab_size:
            raise ValueError(
                f"token id outside [0, {vocab_size}) in sequence {num_sequences - 1}"
            )
        tok_parts.append(toks)
        if terminated:
            prev_parts.append(toks)
            next_parts.append(np.concatenate([toks[1:], [eos]]))
        elif toks.size > 1:
            prev_parts.append(toks[:-1])
            next_parts.append(toks[1:])
    if tok_parts:
        flat = np.concatenate(tok_parts)
        unigram = np.bincount(flat, minlength=vocab_size).astype(np.int64)
        total = int(flat.size)
    else:
        unigram = np.zeros(vocab_size, dtype=np.int64)
        total = 0
    rows: dict = {}
    if prev_parts:
        prev = np.concatenate(prev_parts)
        nxt = np.concatenate(next_parts)
        codes, counts = np.unique(prev * (vocab_size + 1) + nxt, return_counts=True)
        prev_ids = codes // (vocab_size + 1)
        next_ids = codes % (vocab_size + 1)
        boundaries = np.flatnonzero(np.diff(prev_ids)) + 1
        for chunk_ids, chunk_next, chunk_counts in zip(
            np.split(prev_ids, boundaries),
            np.split(next_ids, boundaries),
            np.split(counts, boundaries),
        ):
            rows[int(chunk_ids[0])] = (chunk_next.astype(np.int64), chunk_counts.astype(np.int64))
    return CountTable(
        vocab_size=vocab_size,
        unigram=unigram,
        rows=rows,
        num_sequences=num_sequences,
        total_tokens=total,
    )


def unigram_dist(counts: CountTable) -> np.ndarray:
    """Marginal symbol distribution, EOS slot present but empty."""
    if counts.total_tokens == 0:
        raise ValueError("cannot form a unigram distribution from an empty corpus")
    dist = np.zeros(counts.vocab_size + 1, dtype=np.float64)
    dist[: counts.vocab_size] = counts.unigram / counts.total_tokens
    return dist


def bigram_dist(counts: CountTable, x: int) -> np.ndarray:
    """Empirical next-token distribution (including EOS) after symbol ``x``."""
    row = counts.successors(x)
    if row is None:
        raise UnseenTokenError(
            f"symbol {x} has no observed successors; no bigram estimate exists "
            "(callers may fall back to the unigram distribution)"
        )
    nexts, cnt = row
    dist = np.zeros(counts.vocab_size + 1, dtype=np.float64)
    dist[nexts] = cnt / cnt.sum()
    return dist


# -- token files ---------------------------------------------------------


def save_tokens(path: str, sequences, meta: dict | None = None) -> None:
    """Newline-delimited space-separated ids with a JSON header comment line.

    The header records provenance (generator config, seed) plus sequence and
    truncation counts.  Truncated sequences are stored as plain lines; their
    count in the header is the only record of the missing terminators.
    """
    lines = []
    truncated = 0
    for seq in sequences:
        toks, terminated = _as_tokens(seq)
        if not terminated:
            truncated += 1
        lines.append(" ".join(str(int(t)) for t in toks))
    header = dict(meta or {})
    header.setdefault("format", TOKENS_FORMAT)
    header["num_sequences"] = len(lines)
    header["truncated_count"] = truncated
    body = "# " + canonical_json(header) + "\n" + "\n".join(lines)
    if lines:
        body += "\n"
    write_atomic(path, body)


def load_tokens(path: str) -> tuple:
    """Read a token file; returns (sequences, header dict).

    Sequences load as terminated; the header's truncated_count records how
    many lines lost their terminator at sampling time.
    """
    with open(path) as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ValueError(f"{path} is missing the header line")
    header = json.loads(lines[0][2:])
    if header.get("format") != TOKENS_FORMAT:
        raise ValueError(f"unsupported token file format {header.get('format')!r}")
    seqs = []
    for line in lines[1:]:
        toks = np.array([int(t) for t in line.split()], dtype=np.int64)
        seqs.append(TokenSeq(toks, terminated=True))
    if header.get("num_sequences") != len(seqs):
        raise ValueError(
            f"{path} header promises {header.get('num_sequences')} sequences, found {len(seqs)}"
        )
    return seqs, header


def corpus_digest(sequences) -> str:
    """Stable content hash of a corpus, independent of container types."""
    h_parts = []
    for seq in sequences:
        toks, terminated = _as_tokens(seq)
        h_parts.append(" ".join(str(int(t)) for t in toks) + ("" if terminated else " ..."))
    return sha256_hex("\n".join(h_parts).encode())


# -- surprising contexts from an opaque corpus ---------------------------


def top_frequent_tokens(counts: CountTable, k: int) -> np.ndarray:
    """The k most frequent symbols, ties broken toward smaller ids."""
    order = np.lexsort((np.arange(counts.vocab_size), -counts.unigram))
    return order[:k]


def make_surprising_natural(
    lm,
    sentences,
    counts: CountTable,
    rng: np.random.Generator,
    num_contexts: int = 100,
    top_k: int = 198,
    max_tries: int = 10_000,
) -> list:
    """Surprising contexts for a corpus with no exact generative model.

    Each context is a uniform-length truncation of a corpus sentence; the
    appended token is drawn among the ``top_k`` most frequent symbols that the
    model itself rates below ``1 / top_k`` there, so surprise is certified
    against the model with epsilon = 1/top_k.  ``tau`` is the model's smallest
    single-step probability along the kept prefix.
    """
    frequent = top_frequent_tokens(counts, top_k)
    eligible = [i for i, s in enumerate(sentences) if len(_as_tokens(s)[0]) >= 1]
    if not eligible:
        raise ValueError("no sentence long enough to truncate")
    threshold = 1.0 / top_k
    out = []
    tries = 0
    while len(out) < num_contexts:
        if tries >= max_tries:
            raise RuntimeError(
                f"only {len(out)} of {num_contexts} surprising contexts found "
                f"in {max_tries} tries"
            )
        tries += 1
        toks, _ = _as_tokens(sentences[eligible[rng.integers(len(eligible))]])
        cut = int(rng.integers(1, toks.size + 1))
        prefix = toks[:cut]
        probs = lm.predict_proba(prefix)
        candidates = frequent[probs[frequent] < threshold]
        if candidates.size == 0:
            continue
        local = int(candidates[rng.integers(candidates.size)])
        tau = 1.0
        for i in range(prefix.size):
            tau = min(tau, float(lm.predict_proba(prefix[:i])[prefix[i]]))
        out.append(
            SurprisingContext(
                global_ctx=prefix,
                local_token=local,
                epsilon=threshold,
                tau=tau,
                source="natural",
                final_state=None,
            )
        )
    return out
