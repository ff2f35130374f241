from collections import Counter
import numpy as np
import pytest
from hypothesis import given, settings
import hypothesis.strategies as st
from preprocess import augment, smiles
from preprocess.augment import ReactionRecord

ESTER = ReactionRecord('[CH3:1][C:2](=[O:3])[O:4][CH3:5]', '[CH3:1][C:2](=[O:3])Cl.[OH:4][CH3:5]', 'ester', 2)


def map_multiset(text):
    return Counter(atom.map_number for atom in smiles.parse(text)[0].atoms)


def test_single_variant_is_the_original():
    pairs = augment.enumerate_pair(ESTER, 1, rng_seed=0)
    assert len(pairs) == 1
    assert (pairs[0].product_variant, pairs[0].reactants_variant) == (ESTER.product, ESTER.reactants)
    assert pairs[0].variant_index == 0 and pairs[0].origin_id == 'ester' and pairs[0].class_label == 2


def test_small_product_gets_distinct_roots():
    rec = ReactionRecord('OCC', 'CC.O', 'ethanol')
    pairs = augment.enumerate_pair(rec, 3, rng_seed=11)
    products = [pair.product_variant for pair in pairs]
    assert len(set(products)) == 3
    assert set(products) == {'OCC', 'C(O)C', 'CCO'}
    ethanol = smiles.parse('OCC')[0]
    assert all(smiles.isomorphic(smiles.parse(p)[0], ethanol) for p in products)
    # no maps, so the reactants are left as written
    assert all(pair.mapping_incomplete and pair.reactants_variant == 'CC.O' for pair in pairs)


def test_reactant_holding_the_root_goes_first():
    product_graph, _ = smiles.parse(ESTER.product)
    reactant_graph, _ = smiles.parse(ESTER.reactants)
    pieces = ESTER.reactants.split('.')

    _, order = smiles.write_with_order(product_graph, 4)
    assert order == [4, 3, 1, 0, 2]
    reordered = augment.reorder_reactants(reactant_graph, pieces, product_graph, order, 4)
    assert reordered == '[CH3:5][OH:4].[C:2]([CH3:1])(Cl)=[O:3]'

    _, order = smiles.write_with_order(product_graph, 0)
    reordered = augment.reorder_reactants(reactant_graph, pieces, product_graph, order, 0)
    assert reordered.split('.')[0].startswith('[CH3:1]')
    assert reordered.split('.')[1] == '[OH:4][CH3:5]'


def test_unmapped_reactant_keeps_its_string():
    product_graph, _ = smiles.parse('[CH3:1][OH:2]')
    reactant_graph, _ = smiles.parse('[CH3:1][OH:2].O=S(=O)(O)O')
    _, order = smiles.write_with_order(product_graph, 1)
    reordered = augment.reorder_reactants(reactant_graph, ['[CH3:1][OH:2]', 'O=S(=O)(O)O'], product_graph, order, 1)
    assert reordered == '[OH:2][CH3:1].O=S(=O)(O)O'


def test_variants_are_isomorphic_and_keep_maps(toy_records):
    for rec in toy_records:
        product, reactants = smiles.parse(rec.product)[0], smiles.parse(rec.reactants)[0]
        for pair in augment.enumerate_pair(rec, 6, rng_seed=5):
            assert smiles.isomorphic(smiles.parse(pair.product_variant)[0], product)
            assert smiles.isomorphic(smiles.parse(pair.reactants_variant)[0], reactants)
            assert map_multiset(pair.product_variant) == map_multiset(rec.product)
            assert map_multiset(pair.reactants_variant) == map_multiset(rec.reactants)
            assert not pair.mapping_incomplete


def test_paired_variant_starts_with_the_root_reactant(toy_records):
    for rec in toy_records[:8]:
        for pair in augment.enumerate_pair(rec, 5, rng_seed=1)[1:]:
            graph, _ = smiles.parse(pair.product_variant)
            root_map = graph.atoms[0].map_number
            first = smiles.parse(pair.reactants_variant.split('.')[0])[0]
            assert root_map in first.map_numbers()


def test_unpaired_keeps_reactant_order(toy_records):
    rec = toy_records[0]
    originals = [smiles.parse(piece)[0] for piece in rec.reactants.split('.')]
    for pair in augment.enumerate_pair(rec, 6, rng_seed=3, paired=False):
        pieces = pair.reactants_variant.split('.')
        assert len(pieces) == len(originals)
        for piece, original in zip(pieces, originals):
            assert smiles.isomorphic(smiles.parse(piece)[0], original)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 32 - 1))
def test_enumeration_is_deterministic(seed):
    assert augment.enumerate_pair(ESTER, 5, seed) == augment.enumerate_pair(ESTER, 5, seed)


def test_dataset_counts(toy_records):
    assert len(list(augment.augment_dataset(toy_records[:5], 20, rng_seed=0))) == 100
    identity = list(augment.augment_dataset(toy_records, 1, rng_seed=0))
    assert [(p.product_variant, p.reactants_variant) for p in identity] == \
        [(rec.product, rec.reactants) for rec in toy_records]


def test_dataset_is_reproducible(toy_records):
    first = list(augment.augment_dataset(toy_records, 4, rng_seed=42))
    second = list(augment.augment_dataset(toy_records, 4, rng_seed=42))
    other = list(augment.augment_dataset(toy_records, 4, rng_seed=43))
    assert first == second
    assert first != other


def test_dataset_refuses_held_out_records():
    held_out = ReactionRecord('CCO', 'CC.O', 'x', split='test')
    with pytest.raises(augment.SplitViolation):
        list(augment.augment_dataset([held_out], 2, rng_seed=0))


def test_bad_arguments_and_inputs():
    with pytest.raises(ValueError):
        augment.enumerate_pair(ESTER, 0, 0)
    with pytest.raises(ValueError):
        list(augment.augment_dataset([ESTER], 0, 0))
    with pytest.raises(augment.ParseFailure) as caught:
        augment.enumerate_pair(ReactionRecord('C(C', 'CC', 'broken'), 2, 0)
    assert caught.value.exit_code == 2


def test_root_drawer_covers_every_atom_before_repeating():
    drawer = augment.RootDrawer(np.random.default_rng(0), 5)
    assert sorted(drawer.draw() for _ in range(5)) == [0, 1, 2, 3, 4]


def test_pair_to_record():
    pair = augment.enumerate_pair(ESTER, 2, 0)[1]
    rec = augment.pair_to_record(pair)
    assert rec.id == 'ester_1' and rec.split == 'train' and rec.class_label == 2
