"""
Training-set augmentation. Each reaction is re-serialised several times: the product from a randomly drawn root
atom, and the reactants reordered and re-rooted so that they follow the product's atom order through the atom
maps. Variant 0 is always the reaction as written.
"""

from __future__ import annotations

import logging
import dataclasses
from typing import Optional
import numpy as np
from helpers import helpers
from helpers.errors import DataError
from preprocess import smiles

logger = logging.getLogger(__name__)


class ParseFailure(DataError):
    """One side of a reaction does not parse."""


class SplitViolation(DataError):
    """A validation or test record was handed to augmentation."""


@dataclasses.dataclass(frozen=True)
class ReactionRecord:
    product: str
    reactants: str
    id: str
    class_label: Optional[int] = None
    split: str = 'train'


@dataclasses.dataclass(frozen=True)
class AugmentedPair:
    product_variant: str
    reactants_variant: str
    origin_id: str
    variant_index: int
    mapping_incomplete: bool = False
    class_label: Optional[int] = None


@dataclasses.dataclass(frozen=True)
class AugmentConfig:
    factor: int = 20
    paired: bool = True
    max_retries: int = 8


def parse_side(text, rec_id, side):
    try:
        return smiles.parse(text)
    except smiles.SmilesError as err:
        raise ParseFailure('%s of reaction %s does not parse (%s): %s' % (side, rec_id, err.reason, err))


def mapping_complete(product_graph, reactant_graph):
    """
    True when the product carries atom maps and every one of them appears in the reactants.
    """
    product_maps = product_graph.map_numbers()
    return bool(product_maps) and set(product_maps) <= set(reactant_graph.map_numbers())


class RootDrawer:
    """
    Uniform root draws that go through a fresh random permutation of the atoms before repeating any root, so that a
    handful of redraws is enough to reach every distinct root of a small molecule.
    """

    def __init__(self, rng, n_atoms):
        self.rng = rng
        self.n_atoms = n_atoms
        self.queue = []

    def draw(self):
        if not self.queue:
            self.queue = list(self.rng.permutation(self.n_atoms))
        return int(self.queue.pop())


def reorder_reactants(reactant_graph, reactant_pieces, product_graph, product_order, root_atom):
    """
    Reactants arranged to follow a product serialisation: the molecule holding the product root's map number goes
    first, the others keep their relative order. Each mapped molecule is re-rooted at its atom whose product
    counterpart comes earliest in product_order; unmapped molecules are left as written.

    :param reactant_graph: MolGraph
    :param reactant_pieces: list of str, the reactant string split at '.'
    :param product_graph: MolGraph
    :param product_order: list of product atom indices, in output order
    :param root_atom: int, the product root
    :return: str, dot-joined reactants
    """
    product_position = {product_graph.atoms[atom].map_number: pos for pos, atom in enumerate(product_order)
                        if product_graph.atoms[atom].map_number is not None}
    root_map = product_graph.atoms[root_atom].map_number

    molecules, first = [], None
    for comp_idx in range(len(reactant_graph.components)):
        sub, _ = reactant_graph.subgraph(comp_idx)
        mapped = [(product_position[atom.map_number], idx) for idx, atom in enumerate(sub.atoms)
                  if atom.map_number in product_position]
        if mapped:
            molecules.append(smiles.write(sub, root=min(mapped)[1]))
        else:
            molecules.append(reactant_pieces[comp_idx])
        if root_map is not None and any(atom.map_number == root_map for atom in sub.atoms):
            first = comp_idx

    if first is not None:
        molecules = [molecules[first]] + molecules[:first] + molecules[first + 1:]
    return '.'.join(molecules)


def enumerate_pair(rec, n, rng_seed, paired=True, max_retries=8):
    """
    n equivalent serialisations of one reaction; pair 0 is the original.

    :param rec: ReactionRecord
    :param n: int, number of pairs to emit, at least 1
    :param rng_seed: int
    :param paired: bool, if False the product and every reactant get independent random roots and the reactant order
        is left alone
    :param max_retries: int, redraws allowed when a variant repeats an earlier one
    :return: list of AugmentedPair
    """
    if n < 1:
        raise ValueError('n must be at least 1, got %d' % n)
    product_graph, _ = parse_side(rec.product, rec.id, 'product')
    reactant_graph, _ = parse_side(rec.reactants, rec.id, 'reactants')
    reactant_pieces = rec.reactants.split('.')

    complete = mapping_complete(product_graph, reactant_graph)
    if paired and not complete:
        logger.warning('INCOMPLETE ATOM MAPPING IN %s: RE-ROOTING THE PRODUCT ONLY', rec.id)

    rng = np.random.default_rng(rng_seed)
    product_roots = RootDrawer(rng, len(product_graph.atoms))

    def draw():
        root = product_roots.draw()
        product_text, order = smiles.write_with_order(product_graph, root)
        if not paired:
            pieces = []
            for comp_idx in range(len(reactant_graph.components)):
                sub, _ = reactant_graph.subgraph(comp_idx)
                pieces.append(smiles.write(sub, root=int(rng.integers(len(sub.atoms)))))
            return product_text, '.'.join(pieces)
        if not complete:
            return product_text, rec.reactants
        return product_text, reorder_reactants(reactant_graph, reactant_pieces, product_graph, order, root)

    pairs = [AugmentedPair(rec.product, rec.reactants, rec.id, 0, paired and not complete, rec.class_label)]
    seen = {(rec.product, rec.reactants)}
    for variant in range(1, n):
        candidate = draw()
        retries = 0
        while candidate in seen and retries < max_retries:
            candidate = draw()
            retries += 1
        seen.add(candidate)
        pairs.append(AugmentedPair(candidate[0], candidate[1], rec.id, variant, paired and not complete,
                                   rec.class_label))
    return pairs


def augment_dataset(records, factor, rng_seed, paired=True, max_retries=8):
    """
    Stream factor pairs per record; every record gets its own seed, derived from the global seed and its ID.

    :param records: iterable of ReactionRecord, all from the training split
    :param factor: int, pairs per record, the original included
    :param rng_seed: int, global seed
    :param paired: bool
    :param max_retries: int
    :return: generator of AugmentedPair
    """
    if factor < 1:
        raise ValueError('factor must be at least 1, got %d' % factor)
    for rec in records:
        if rec.split != 'train':
            raise SplitViolation('record %s is tagged %r; only training records are augmented' % (rec.id, rec.split))
        yield from enumerate_pair(rec, factor, helpers.derive_seed(rng_seed, rec.id), paired, max_retries)


def pair_to_record(pair):
    """An augmented pair as a training record of its own."""
    return ReactionRecord(pair.product_variant, pair.reactants_variant, '%s_%d' % (pair.origin_id, pair.variant_index),
                          pair.class_label, 'train')
