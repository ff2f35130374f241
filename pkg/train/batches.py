"""
From reaction records to padded model batches: parse both sides, strip atom maps off the token texts, look tokens up
in the vocabulary, compute the attention priors, and group examples into token-budgeted batches.
"""

import logging
import dataclasses
from typing import Optional
import numpy as np
from preprocess import smiles, priors
from preprocess.vocab import Vocabulary, BOS_ID, EOS_ID
from model.transformer import AttentionBiasBundle, pad_ids

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class Example:
    """One reaction at token resolution. tgt_ids, cross are None when only the product is known."""
    src_ids: np.ndarray
    intra: np.ndarray
    origin_id: str
    product: str
    tgt_ids: Optional[np.ndarray] = None
    cross: Optional[np.ndarray] = None
    reactants: Optional[str] = None

    @property
    def n_tokens(self):
        return len(self.src_ids) + (0 if self.tgt_ids is None else len(self.tgt_ids) + 1)


@dataclasses.dataclass
class Batch:
    src_ids: np.ndarray
    bundle: AttentionBiasBundle
    tgt_in: Optional[np.ndarray] = None
    tgt_out: Optional[np.ndarray] = None
    origin_ids: tuple = ()

    def __len__(self):
        return self.src_ids.shape[0]


def model_tokens(text):
    """
    :param text: str, SMILES, possibly atom-mapped
    :return: (MolGraph, mapped TokenSequence, map-stripped TokenSequence)
    """
    graph, seq = smiles.parse(text)
    return graph, seq, smiles.strip_maps(graph, seq)


def build_vocabulary(records):
    """
    :param records: iterable of ReactionRecord, the training split
    :return: Vocabulary over every map-stripped token text on either side
    """
    texts = set()
    for rec in records:
        for side in (rec.product, rec.reactants):
            texts.update(model_tokens(side)[2].texts)
    return Vocabulary.build(texts)


def make_example(product, reactants, vocab, intra_cfg, origin_id=''):
    """
    :param product: str, SMILES
    :param reactants: str or None, dot-joined SMILES
    :param vocab: Vocabulary
    :param intra_cfg: IntraBiasConfig
    :param origin_id: str
    :return: Example
    """
    product_graph, product_seq, product_stripped = model_tokens(product)
    dist = priors.all_pairs_distance(product_graph)
    example = Example(src_ids=vocab.encode(product_stripped.texts),
                      intra=priors.intra_bias(product_seq, dist, intra_cfg).b,
                      origin_id=origin_id, product=product)
    if reactants is not None:
        reactant_graph, reactant_seq, reactant_stripped = model_tokens(reactants)
        example.tgt_ids = vocab.encode(reactant_stripped.texts)
        example.cross = priors.cross_alignment((product_graph, product_seq), (reactant_graph, reactant_seq)).b
        example.reactants = reactants
    return example


def examples_from_records(records, vocab, intra_cfg):
    return [make_example(rec.product, rec.reactants, vocab, intra_cfg, rec.id) for rec in records]


def collate(examples):
    """
    Pad a list of examples into one batch. The decoder reads BOS + y and predicts y + EOS. Cross-attention bias rows
    are in decoder-query order: row t holds the alignment of the input token at t, i.e. of y[t - 1], and the BOS row is
    zero, so no query sees the alignment of the token it is predicting.

    :param examples: list of Example
    :return: Batch
    """
    src_ids, src_pad = pad_ids([ex.src_ids for ex in examples])
    n_src = src_ids.shape[1]
    intra = np.zeros((len(examples), n_src, n_src))
    for row, ex in enumerate(examples):
        intra[row, :len(ex.src_ids), :len(ex.src_ids)] = ex.intra
    batch = Batch(src_ids, AttentionBiasBundle(src_pad=src_pad, intra=intra),
                  origin_ids=tuple(ex.origin_id for ex in examples))
    if any(ex.tgt_ids is None for ex in examples):
        return batch

    tgt_in, tgt_pad = pad_ids([np.concatenate([[BOS_ID], ex.tgt_ids]) for ex in examples])
    tgt_out, _ = pad_ids([np.concatenate([ex.tgt_ids, [EOS_ID]]) for ex in examples], tgt_in.shape[1])
    cross = np.zeros((len(examples), tgt_in.shape[1], n_src))
    for row, ex in enumerate(examples):
        n_y = len(ex.tgt_ids)
        cross[row, 1:n_y + 1, :len(ex.src_ids)] = ex.cross.T
    batch.tgt_in, batch.tgt_out = tgt_in, tgt_out
    batch.bundle.tgt_pad, batch.bundle.cross = tgt_pad, cross
    return batch


def make_batches(examples, batch_tokens, seed):
    """
    Length-bucketed batches under a token budget: sort by length (ties in random order), cut the sorted list into
    batches whose padded size stays within batch_tokens, then shuffle the batches. Every example lands in exactly one
    batch; an example bigger than the budget gets a batch to itself.

    :param examples: list of Example
    :param batch_tokens: int, budget for (batch size x longest example)
    :param seed: int or sequence of ints
    :return: list of Batch
    """
    rng = np.random.default_rng(seed)
    tiebreak = rng.permutation(len(examples))
    ordered = sorted(range(len(examples)), key=lambda i: (examples[i].n_tokens, tiebreak[i]))

    groups, current, longest = [], [], 0
    for idx in ordered:
        size = examples[idx].n_tokens
        if current and max(longest, size) * (len(current) + 1) > batch_tokens:
            groups.append(current)
            current, longest = [], 0
        current.append(idx)
        longest = max(longest, size)
    if current:
        groups.append(current)

    order = rng.permutation(len(groups))
    return [collate([examples[i] for i in groups[g]]) for g in order]
