"""
Top-K evaluation: does the true reactant set appear among a model's first K candidates? Candidates and truths are
compared as multisets of molecules under graph isomorphism, so neither reactant order nor the choice of root atom
matters.
"""

import logging
import dataclasses
from typing import Dict, Tuple
import pandas as pd
from tqdm import tqdm
from helpers import helpers
from helpers.errors import DataError
from preprocess import smiles
from analyse import decoding
from train import batches

logger = logging.getLogger(__name__)

TOP_KS = (1, 3, 5, 10)


class EmptyTestSet(DataError):
    """Nothing to evaluate on."""


def molecules(text):
    """
    :param text: str, SMILES
    :return: list of MolGraph, one per '.'-separated molecule
    """
    graph, _ = smiles.parse(text)
    return [graph.subgraph(idx)[0] for idx in range(len(graph.components))]


def is_valid(text):
    try:
        smiles.parse(text)
    except smiles.SmilesError:
        return False
    return True


def match(candidate, truth):
    """
    True when the candidate parses and its molecules pair off one-to-one with the truth's, each pair isomorphic. Map
    numbers are ignored, and so are explicit hydrogen counts, which only bracket atoms carry.

    :param candidate: str
    :param truth: str, must parse
    :return: bool
    """
    try:
        found = molecules(candidate)
    except smiles.SmilesError:
        return False
    wanted = molecules(truth)
    if len(found) != len(wanted):
        return False
    remaining = list(wanted)
    for mol in found:
        for idx, other in enumerate(remaining):
            if smiles.isomorphic(mol, other, with_maps=False, strict=False):
                del remaining[idx]
                break
        else:
            return False
    return True


@dataclasses.dataclass
class EvalReport:
    ks: Tuple[int, ...] = TOP_KS
    hits: Dict[int, int] = dataclasses.field(default_factory=dict)
    n_records: int = 0
    n_candidates: int = 0
    n_invalid: int = 0
    top1_invalid: int = 0

    def accuracy(self, k):
        return helpers.weird_division(self.hits.get(k, 0), self.n_records)

    @property
    def invalid_rate(self):
        return helpers.weird_division(self.n_invalid, self.n_candidates)

    @property
    def top1_invalid_rate(self):
        return helpers.weird_division(self.top1_invalid, self.n_records)

    def table(self):
        return pd.DataFrame({'K': list(self.ks),
                             'hits': [self.hits.get(k, 0) for k in self.ks],
                             'accuracy (%)': [helpers.percent(self.hits.get(k, 0), self.n_records) for k in self.ks]})

    def to_text(self):
        """Aligned text: the per-K table, then the counts."""
        lines = [self.table().to_string(index=False), '',
                 'records evaluated: %d' % self.n_records,
                 'candidates: %d, invalid: %d (%.1f%%)' % (self.n_candidates, self.n_invalid,
                                                          100 * self.invalid_rate),
                 'top-1 invalid: %d (%.1f%%)' % (self.top1_invalid, 100 * self.top1_invalid_rate)]
        return '\n'.join(lines) + '\n'

    def to_key_values(self):
        """Machine-readable block, one key=value per line."""
        pairs = [('records', self.n_records)]
        pairs += [('top%d' % k, '%.6f' % self.accuracy(k)) for k in self.ks]
        pairs += [('candidates', self.n_candidates), ('invalid_rate', '%.6f' % self.invalid_rate),
                  ('top1_invalid_rate', '%.6f' % self.top1_invalid_rate)]
        return ''.join('%s=%s\n' % pair for pair in pairs)


def report_from_rankings(rankings, ks=TOP_KS):
    """
    :param rankings: list of (candidates, best first; truth string). A candidate is a string or a decoding.Candidate;
        unfinished Candidates count as invalid
    :param ks: tuple of int
    :return: EvalReport
    """
    if not rankings:
        raise EmptyTestSet('no test records to evaluate')
    report = EvalReport(ks=tuple(ks), hits={k: 0 for k in ks})
    for candidates, truth in rankings:
        report.n_records += 1
        report.n_candidates += len(candidates)
        texts = [getattr(cand, 'smiles', cand) for cand in candidates]
        validity = [getattr(cand, 'finished', True) and is_valid(text) for cand, text in zip(candidates, texts)]
        report.n_invalid += validity.count(False)
        if candidates and not validity[0]:
            report.top1_invalid += 1
        first_hit = next((rank for rank, (cand, ok) in enumerate(zip(texts, validity), start=1)
                          if ok and match(cand, truth)), None)
        for k in ks:
            if first_hit is not None and first_hit <= k:
                report.hits[k] += 1
    return report


def evaluate(predict, records, ks=TOP_KS, quiet=False):
    """
    Rank candidates for every record's product and score them against its reactants.

    :param predict: callable, product SMILES -> list of candidates (strings or Candidate), best first
    :param records: list of ReactionRecord, un-augmented test data
    :param ks: tuple of int
    :param quiet: bool, hide the progress bar
    :return: EvalReport
    """
    if not records:
        raise EmptyTestSet('no test records to evaluate')
    logger.info('RUNNING: EVALUATION')
    logger.info('NUMBER OF RECORDS GOING IN: %d', len(records))
    rankings = [(predict(rec.product), rec.reactants) for rec in tqdm(records, disable=quiet, desc='eval')]
    report = report_from_rankings(rankings, ks)
    logger.info('TOP-1 ACCURACY: %.1f%%', 100 * report.accuracy(1))
    return report


def make_predictor(model, vocab, beam_cfg, with_scores=True):
    """
    Wrap a model into a product -> candidates function for evaluate().

    :param model: Transformer
    :param vocab: Vocabulary
    :param beam_cfg: BeamConfig
    :param with_scores: bool, return Candidate objects rather than bare strings
    :return: callable
    """
    intra_cfg = model.config.intra_config()

    def predict(product):
        example = batches.make_example(product, None, vocab, intra_cfg)
        ranked = decoding.beam_search(model, example.src_ids, vocab, beam_cfg.beam_width, beam_cfg.max_len,
                                      beam_cfg.length_norm_alpha, intra=example.intra)[:beam_cfg.topk]
        return ranked if with_scores else [cand.smiles for cand in ranked]
    return predict
