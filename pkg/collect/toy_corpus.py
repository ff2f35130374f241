"""
A small synthetic reaction corpus that ships with the code, so the whole pipeline runs without outside data.

Four disconnection rules, each applied to eight pairs of substituents, give 32 atom-mapped reactions. Every product is
built as substituent A + core + substituent B; the two reactants are A + the rule's first reactant core, and the
second reactant core + B. Because product and reactants are assembled from the same pieces, the atom maps follow
from atom order alone. Leaving atoms (the acid OH, Cl, Br) are unmapped.
"""

import dataclasses
from preprocess import smiles
from preprocess.smiles import MolGraph

SUBSTITUENTS = ('C', 'CC', 'CCC', 'CC(C)C', 'C1CC1', 'c1ccccc1', 'C1CCCC1', 'CCOC')


@dataclasses.dataclass(frozen=True)
class Rule:
    """
    name: what the product is. product_core is written between the substituents. first_core follows A in the first
    reactant, second_core precedes B in the second. first_maps and second_maps give, per core atom of a reactant, the
    index of the product core atom it becomes, or None for a leaving atom.
    """
    name: str
    product_core: str
    first_core: str
    first_maps: tuple
    second_core: str
    second_maps: tuple


RULES = (
    Rule('amide', 'C(=O)N', 'C(=O)O', (0, 1, None), 'N', (2,)),
    Rule('ester', 'C(=O)O', 'C(=O)Cl', (0, 1, None), 'O', (2,)),
    Rule('ether', 'O', 'O', (0,), 'Br', (None,)),
    Rule('thioether', 'S', 'S', (0,), 'Cl', (None,)),
)


def count_atoms(text):
    return len(smiles.parse(text)[0].atoms)


def with_maps(text, map_numbers):
    """
    Re-write a SMILES string with the given map number on each atom, in atom order.

    :param text: str
    :param map_numbers: list of int or None, one per atom
    :return: str
    """
    graph, _ = smiles.parse(text)
    atoms = tuple(dataclasses.replace(atom, map_number=number) for atom, number in zip(graph.atoms, map_numbers))
    return smiles.write(MolGraph(atoms, graph.bonds, graph.components))


def build_reaction(rule, first, second):
    """
    :param rule: Rule
    :param first: str, substituent A
    :param second: str, substituent B
    :return: (mapped product, mapped reactants)
    """
    n_first, n_core, n_second = count_atoms(first), count_atoms(rule.product_core), count_atoms(second)
    product_maps = list(range(1, n_first + n_core + n_second + 1))
    core_map = product_maps[n_first:n_first + n_core]

    product = with_maps(first + rule.product_core + second, product_maps)
    first_reactant = with_maps(first + rule.first_core, product_maps[:n_first] + [
        None if idx is None else core_map[idx] for idx in rule.first_maps])
    second_reactant = with_maps(rule.second_core + second, [
        None if idx is None else core_map[idx] for idx in rule.second_maps] + product_maps[n_first + n_core:])
    return product, first_reactant + '.' + second_reactant


def toy_reactions():
    """
    :return: list of (id, mapped product, mapped reactants, class label), 32 of them
    """
    reactions = []
    n_subs = len(SUBSTITUENTS)
    for rule_idx, rule in enumerate(RULES):
        for idx in range(n_subs):
            first, second = SUBSTITUENTS[idx], SUBSTITUENTS[(idx + rule_idx + 1) % n_subs]
            product, reactants = build_reaction(rule, first, second)
            reactions.append(('toy%02d' % len(reactions), product, reactants, rule_idx + 1))
    return reactions


BRACKET_STRINGS = (
    '[NH4+]', '[O-]C(=O)C', '[13CH3]O', '[Na+].[Cl-]', 'C[C@H](N)C(=O)O', 'C[C@@H](O)CC', 'C%10CC%10',
    '[CH3:1][OH:2]', '[Fe+3]', '[nH]1cccc1', 'c1cc[nH]c1', 'OC(=O)[C@@H]1CCCN1', 'C/C=C/C', 'F/C=C\\F',
    '[2H]C([2H])([2H])O', 'C#N', 'CC#CC', 'O=C=O', 'N#N', '[Cu+2].[O-]S(=O)(=O)[O-]',
)


def parser_corpus():
    """
    Strings for exercising the parser and writer: substituent pairs under several linkers, dot-joined pairs, the toy
    reactions with and without maps, and a set of bracket, charge, isotope and stereo cases.

    :return: list of str, at least 500, no repeats
    """
    strings = []
    for first in SUBSTITUENTS:
        for second in SUBSTITUENTS:
            for linker in ('', '=', 'O', 'N', 'C(=O)', 'S'):
                strings.append(first + linker + second)
            strings.append(first + '.' + second)
    for _, product, reactants, _ in toy_reactions():
        strings += [product, reactants]
        strings += [smiles.write(smiles.parse(product)[0], root=len(smiles.parse(product)[0].atoms) - 1)]
    strings += BRACKET_STRINGS
    return list(dict.fromkeys(strings))


def corpus_lines():
    """The toy reactions in the reaction line format."""
    return ['%s>>%s\t%s\t%d' % (reactants, product, rec_id, label)
            for rec_id, product, reactants, label in toy_reactions()]
