"""
Generating reactant candidates from a trained model: beam search with length normalisation, and greedy decoding.
"""

from __future__ import annotations

import dataclasses
from typing import Tuple
import numpy as np
from scipy.special import log_softmax
from model import autodiff as ad
from model.transformer import AttentionBiasBundle, EmptyInput
from preprocess.vocab import BOS_ID, EOS_ID, PAD_ID, UNK_ID

# never generated
BANNED_IDS = (PAD_ID, BOS_ID, UNK_ID)


@dataclasses.dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 10
    max_len: int = 200
    length_norm_alpha: float = 0.6
    topk: int = 10


@dataclasses.dataclass(frozen=True)
class Candidate:
    smiles: str
    score: float
    logprob: float
    ids: Tuple[int, ...]
    finished: bool = True


def length_normalised(logprob, length, alpha):
    return logprob / (length ** alpha)


class Beam:
    """
    Live hypotheses as (token ids, cumulative log-probability). Alongside the beam of the full width it keeps the beam
    every narrower width would keep; all of them feed the final ranking, so the top score never drops as the width
    grows. A hypothesis that emits EOS leaves for the finished list.
    """

    def __init__(self, width):
        if width < 1:
            raise ValueError('beam width must be at least 1, got %d' % width)
        self.width = width
        # every live hypothesis of any width, in decoder batch order
        self.logprobs = {(BOS_ID,): 0.0}
        # beams[w - 1]: the live ids a width-w search holds
        self.beams = [[(BOS_ID,)] for _ in range(width)]
        self.finished = []

    @property
    def hypotheses(self):
        """The full-width beam, best first."""
        return [(ids, self.logprobs[ids]) for ids in self.beams[-1]]

    @property
    def done(self):
        return not self.logprobs

    def prefixes(self):
        return np.array(list(self.logprobs), dtype=np.int64)

    def advance(self, log_probs):
        """
        Extend every live hypothesis by every allowed token; each width keeps its own best by log-probability, ties
        going to the lexicographically smaller id sequence.

        :param log_probs: array, (number of live hypotheses, vocab size), next-token log-probabilities, rows in the
            order of prefixes()
        :return: None
        """
        log_probs = np.array(log_probs, dtype=np.float64)
        log_probs[:, list(BANNED_IDS)] = -np.inf
        children = {}
        for (ids, logprob), row in zip(self.logprobs.items(), log_probs):
            children[ids] = [(logprob + row[token], ids + (int(token),)) for token in np.flatnonzero(np.isfinite(row))]

        live, finished = {}, dict(self.finished)
        for width, beam in enumerate(self.beams, start=1):
            expansions = sorted((child for ids in beam for child in children[ids]), key=lambda e: (-e[0], e[1]))
            kept = []
            for logprob, ids in expansions[:width]:
                if ids[-1] == EOS_ID:
                    finished[ids] = logprob
                else:
                    live[ids] = logprob
                    kept.append(ids)
            self.beams[width - 1] = kept
        self.logprobs = live
        self.finished = list(finished.items())

    def ranked(self, alpha):
        """
        Finished hypotheses by length-normalised score, where length counts the generated tokens including EOS; if
        nothing finished, the live ones, flagged unfinished.

        :return: list of (ids without BOS, logprob, score, finished)
        """
        pool, finished = (self.finished, True) if self.finished else (list(self.logprobs.items()), False)
        scored = [(ids[1:], logprob, length_normalised(logprob, len(ids) - 1, alpha)) for ids, logprob in pool]
        scored.sort(key=lambda s: (-s[2], s[0]))
        return [(ids, logprob, score, finished) for ids, logprob, score in scored]


def _encode_one(model, src_ids, intra):
    src_ids = np.asarray(src_ids, dtype=np.int64)
    if src_ids.ndim != 1 or src_ids.size == 0:
        raise EmptyInput('cannot decode from an empty product')
    bundle = AttentionBiasBundle(src_pad=np.zeros((1, src_ids.size), dtype=bool),
                                 intra=None if intra is None else np.asarray(intra)[None])
    return model.encode(src_ids[None], bundle), bundle


def next_token_log_probs(model, memory, bundle, prefixes):
    """
    :param memory: Tensor, (1, T_x, d_model)
    :param prefixes: int array, (n, t)
    :return: array, (n, vocab size)
    """
    n = prefixes.shape[0]
    tiled = ad.tensor(np.repeat(memory.data, n, axis=0))
    logits = model.decode_step(tiled, prefixes, bundle.tile(n))
    return log_softmax(logits.data, axis=-1)


def beam_search(model, src_ids, vocab, width, max_len, length_norm_alpha=0.6, intra=None):
    """
    Beam search over the decoder. The encoder runs once; every step feeds all live prefixes through the decoder as one
    batch. At most max_len tokens are generated per hypothesis, EOS included. Candidates whose strings repeat a better
    candidate's are dropped.

    :param model: Transformer
    :param src_ids: 1-D int array, product token ids
    :param vocab: Vocabulary
    :param width: int
    :param max_len: int
    :param length_norm_alpha: float
    :param intra: array or None, the product's unscaled intra-molecular bias
    :return: list of Candidate, best first, at most width long
    """
    model.eval_mode()
    beam = Beam(width)
    with ad.no_grad():
        memory, bundle = _encode_one(model, src_ids, intra)
        for _ in range(max_len):
            beam.advance(next_token_log_probs(model, memory, bundle, beam.prefixes()))
            if beam.done:
                break

    candidates, seen = [], set()
    for ids, logprob, score, finished in beam.ranked(length_norm_alpha):
        text = ''.join(vocab.decode(ids))
        if text in seen:
            continue
        seen.add(text)
        candidates.append(Candidate(text, score, logprob, tuple(ids), finished))
    return candidates[:width]


def greedy_decode(model, src_ids, vocab, max_len, length_norm_alpha=0.6, intra=None):
    """
    Argmax decoding, one token at a time, until EOS or max_len tokens.

    :return: Candidate
    """
    model.eval_mode()
    ids, logprob = [BOS_ID], 0.0
    with ad.no_grad():
        memory, bundle = _encode_one(model, src_ids, intra)
        for _ in range(max_len):
            row = next_token_log_probs(model, memory, bundle, np.array([ids], dtype=np.int64))[0]
            row[list(BANNED_IDS)] = -np.inf
            token = int(np.argmax(row))
            ids.append(token)
            logprob += row[token]
            if token == EOS_ID:
                break
    generated = tuple(ids[1:])
    return Candidate(''.join(vocab.decode(generated)), length_normalised(logprob, len(generated), length_norm_alpha),
                     logprob, generated, generated[-1] == EOS_ID)


def greedy_batch(model, memory, bundle, steps):
    """
    Argmax decoding of a whole batch at once for a fixed number of steps, without cross bias. Rows keep going after
    EOS; up to its first EOS a row matches greedy_decode on the same product.

    :param model: Transformer
    :param memory: Tensor, (B, T_x, d_model)
    :param bundle: AttentionBiasBundle; only the source padding and intra bias are used
    :param steps: int
    :return: int array, (B, steps), generated ids without BOS
    """
    free = AttentionBiasBundle(src_pad=bundle.src_pad, intra=bundle.intra)
    prefixes = np.full((memory.shape[0], 1), BOS_ID, dtype=np.int64)
    for _ in range(steps):
        logits = np.array(model.decode_step(memory, prefixes, free).data)
        logits[:, list(BANNED_IDS)] = -np.inf
        prefixes = np.concatenate([prefixes, logits.argmax(axis=-1)[:, None]], axis=1)
    return prefixes[:, 1:]
