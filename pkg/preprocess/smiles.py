"""
Tokenize, parse, and re-serialise SMILES strings, keeping track of which token is which atom.

Supported subset: organic-subset atoms (B, C, N, O, P, S, F, Cl, Br, I and aromatic b, c, n, o, p, s), bracket atoms
with isotope, chirality marks, hydrogen count, charge and atom-map number, bonds - = # : / \\, branches, ring closures
1-9 and %10-%99, and dot-separated components. Stereo marks are kept as token text but carry no graph semantics;
there is no valence or aromaticity checking.
"""

from __future__ import annotations

import re
import dataclasses
from enum import Enum
from typing import Optional, Tuple
import networkx as nx
from helpers.errors import DataError

PERIODIC_TABLE = frozenset("""
H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo
Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl
Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl Mc Lv Ts Og
""".split())

AROMATIC_SYMBOLS = frozenset(['b', 'c', 'n', 'o', 'p', 's', 'se', 'as', 'te'])
ORGANIC_SUBSET = frozenset(['B', 'C', 'N', 'O', 'P', 'S', 'F', 'Cl', 'Br', 'I', 'b', 'c', 'n', 'o', 'p', 's'])

BRACKET_RE = re.compile(r'^(?P<isotope>\d+)?'
                        r'(?P<symbol>[A-Za-z][a-z]?)'
                        r'(?P<chiral>@{1,2}(?:TH[12]|AL[12]|SP[123]|TB\d{1,2}|OH\d{1,2})?)?'
                        r'(?P<hcount>H\d*)?'
                        r'(?P<charge>\++\d*|-+\d*)?'
                        r'(?::(?P<map>\d+))?$')

BOND_SYMBOLS = frozenset('-=#:/\\')


# ERRORS #

class SmilesError(DataError):
    """Base for everything that can go wrong reading or writing SMILES."""


class UnbalancedBracket(SmilesError):
    """A "[" without its "]", or the reverse."""


class IllegalCharacter(SmilesError):
    """A character outside the supported SMILES alphabet."""


class UnknownElement(SmilesError):
    """Bracket contents that do not name a periodic-table element."""


class UnmatchedRingClosure(SmilesError):
    """A ring-closure digit that never closes, or closes on its own atom."""


class UnbalancedParenthesis(SmilesError):
    """A branch that is never closed, closed twice, empty, or opened before any atom."""


class DanglingBond(SmilesError):
    """A bond symbol with no atom after it."""


class DuplicateBond(SmilesError):
    """Two bonds between the same pair of atoms."""


class DuplicateMapNumber(SmilesError):
    """The same atom-map number on two atoms of one side."""


class EmptyComponent(SmilesError):
    """A "." with no molecule on one side of it."""


class EmptyGraph(SmilesError):
    """Nothing to parse or to write."""


# DOMAIN TYPES #

class TokenKind(Enum):
    ATOM = 'Atom'
    BRACKET_ATOM = 'BracketAtom'
    BOND = 'Bond'
    BRANCH_OPEN = 'BranchOpen'
    BRANCH_CLOSE = 'BranchClose'
    RING_CLOSURE = 'RingClosure'
    DOT = 'Dot'


class BondOrder(Enum):
    """Bond orders; the value is also the rank used to order neighbours when writing."""
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4


@dataclasses.dataclass(frozen=True)
class Token:
    text: str
    kind: TokenKind
    atom_index: Optional[int] = None

    @property
    def is_atom(self):
        return self.kind in (TokenKind.ATOM, TokenKind.BRACKET_ATOM)


@dataclasses.dataclass(frozen=True)
class TokenSequence:
    tokens: Tuple[Token, ...]
    source: str

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, idx):
        return self.tokens[idx]

    @property
    def texts(self):
        return [tok.text for tok in self.tokens]

    @property
    def atom_positions(self):
        """
        :return: list of (token position, atom index) pairs, one per atom token, in token order
        """
        return [(pos, tok.atom_index) for pos, tok in enumerate(self.tokens) if tok.is_atom]


@dataclasses.dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    map_number: Optional[int] = None
    explicit_h: Optional[int] = None
    isotope: Optional[int] = None

    @property
    def symbol(self):
        """Element symbol with the first letter capitalised, whatever the aromaticity."""
        return self.element[0].upper() + self.element[1:]


@dataclasses.dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE


@dataclasses.dataclass(frozen=True)
class MolGraph:
    atoms: Tuple[Atom, ...]
    bonds: Tuple[Bond, ...]
    components: Tuple[Tuple[int, ...], ...]

    def __len__(self):
        return len(self.atoms)

    def neighbours(self):
        """
        Adjacency lists, each sorted by (bond order rank, neighbour index); this is the order write() visits them in.

        :return: list of lists of (neighbour index, BondOrder) tuples
        """
        adjacency = [[] for _ in self.atoms]
        for bond in self.bonds:
            adjacency[bond.a].append((bond.b, bond.order))
            adjacency[bond.b].append((bond.a, bond.order))
        return [sorted(adj, key=lambda nb: (nb[1].value, nb[0])) for adj in adjacency]

    def map_numbers(self):
        """
        :return: dict, map number : atom index, for every mapped atom
        """
        return {atom.map_number: idx for idx, atom in enumerate(self.atoms) if atom.map_number is not None}

    def component_of(self, atom_index):
        for comp_idx, comp in enumerate(self.components):
            if atom_index in comp:
                return comp_idx
        raise IndexError('atom %d is in no component' % atom_index)

    def subgraph(self, component_index):
        """
        Pull one component out as its own graph; atoms are renumbered in their original order.

        :param component_index: int
        :return: (MolGraph, list mapping new atom index -> old atom index)
        """
        old_indices = sorted(self.components[component_index])
        renumber = {old: new for new, old in enumerate(old_indices)}
        atoms = tuple(self.atoms[old] for old in old_indices)
        bonds = tuple(Bond(renumber[b.a], renumber[b.b], b.order) for b in self.bonds if b.a in renumber)
        return MolGraph(atoms, bonds, (tuple(range(len(atoms))),)), old_indices


# TOKENIZE #

def tokenize(smiles):
    """
    Split a SMILES string into tokens. Bracket atoms, two-letter organic elements (Cl, Br) and %nn ring closures are
    single tokens; atom tokens get atom indices in left-to-right order. Concatenating the token texts gives back the
    input exactly.

    :param smiles: str
    :return: TokenSequence
    """
    tokens = []
    atom_count = 0
    i, n = 0, len(smiles)
    while i < n:
        char = smiles[i]
        if char == '[':
            close = smiles.find(']', i + 1)
            nested = smiles.find('[', i + 1)
            if close == -1 or (nested != -1 and nested < close):
                raise UnbalancedBracket('unclosed "[" at position %d of %r' % (i, smiles))
            tokens.append(Token(smiles[i:close + 1], TokenKind.BRACKET_ATOM, atom_count))
            atom_count += 1
            i = close + 1
            continue
        if char == ']':
            raise UnbalancedBracket('"]" without "[" at position %d of %r' % (i, smiles))

        two = smiles[i:i + 2]
        if two in ('Cl', 'Br'):
            tokens.append(Token(two, TokenKind.ATOM, atom_count))
            atom_count += 1
            i += 2
        elif char in ORGANIC_SUBSET:
            tokens.append(Token(char, TokenKind.ATOM, atom_count))
            atom_count += 1
            i += 1
        elif char in BOND_SYMBOLS:
            tokens.append(Token(char, TokenKind.BOND))
            i += 1
        elif char == '(':
            tokens.append(Token(char, TokenKind.BRANCH_OPEN))
            i += 1
        elif char == ')':
            tokens.append(Token(char, TokenKind.BRANCH_CLOSE))
            i += 1
        elif char == '.':
            tokens.append(Token(char, TokenKind.DOT))
            i += 1
        elif char.isdigit():
            tokens.append(Token(char, TokenKind.RING_CLOSURE))
            i += 1
        elif char == '%':
            digits = smiles[i + 1:i + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise IllegalCharacter('"%%" must be followed by two digits at position %d of %r' % (i, smiles))
            tokens.append(Token(smiles[i:i + 3], TokenKind.RING_CLOSURE))
            i += 3
        else:
            raise IllegalCharacter('illegal character %r at position %d of %r' % (char, i, smiles))

    return TokenSequence(tuple(tokens), smiles)


def detokenize(seq):
    """
    :param seq: TokenSequence, or any iterable of Tokens
    :return: str, the token texts concatenated
    """
    return ''.join(tok.text for tok in seq)


# PARSE #

def parse_bracket(text):
    """
    Read the inside of a bracket atom, e.g. "[13CH3+:5]".

    :param text: str, the full bracket token including "[" and "]"
    :return: Atom
    """
    found = BRACKET_RE.match(text[1:-1])
    if found is None:
        raise UnknownElement('cannot read bracket atom %r' % text)
    symbol = found.group('symbol')
    aromatic = symbol[0].islower()
    if aromatic and symbol not in AROMATIC_SYMBOLS:
        raise UnknownElement('%r is not an aromatic element symbol in %r' % (symbol, text))
    if not aromatic and symbol not in PERIODIC_TABLE:
        raise UnknownElement('%r is not an element symbol in %r' % (symbol, text))

    hcount = found.group('hcount')
    explicit_h = 0 if not hcount else (int(hcount[1:]) if len(hcount) > 1 else 1)

    charge = 0
    charge_text = found.group('charge')
    if charge_text:
        sign = 1 if charge_text[0] == '+' else -1
        signs = len(charge_text) - len(charge_text.lstrip(charge_text[0]))
        magnitude = charge_text[signs:]
        if magnitude and signs > 1:
            raise UnknownElement('malformed charge in %r' % text)
        charge = sign * (int(magnitude) if magnitude else signs)

    isotope = int(found.group('isotope')) if found.group('isotope') else None
    map_number = int(found.group('map')) if found.group('map') else None
    if map_number == 0:
        map_number = None
    return Atom(element=symbol, aromatic=aromatic, charge=charge, map_number=map_number, explicit_h=explicit_h,
                isotope=isotope or None)


def bond_order(symbol, atom_a, atom_b):
    """
    Bond order for a bond symbol; with no symbol the bond is aromatic between two aromatic atoms, single otherwise.

    :param symbol: str or None
    :param atom_a: Atom
    :param atom_b: Atom
    :return: BondOrder
    """
    if symbol is None:
        return BondOrder.AROMATIC if atom_a.aromatic and atom_b.aromatic else BondOrder.SINGLE
    return {'-': BondOrder.SINGLE, '/': BondOrder.SINGLE, '\\': BondOrder.SINGLE, '=': BondOrder.DOUBLE,
            '#': BondOrder.TRIPLE, ':': BondOrder.AROMATIC}[symbol]


def parse(smiles):
    """
    Parse a SMILES string into a molecular graph. Implicit hydrogens are not nodes; atom indices follow token order,
    so the atom_index of every atom token in the returned sequence indexes the returned graph's atoms.

    :param smiles: str
    :return: (MolGraph, TokenSequence)
    """
    seq = tokenize(smiles)
    if not seq.tokens:
        raise EmptyGraph('empty SMILES')

    atoms, bonds, bond_pairs = [], [], set()
    components, current = [], []
    prev, pending = None, None
    branches = []  # (atom the branch hangs from, atom count when the branch opened)
    open_rings = {}  # ring label : (atom index, bond symbol or None)
    seen_maps = {}

    def add_bond(a, b, symbol):
        pair = frozenset((a, b))
        if pair in bond_pairs:
            raise DuplicateBond('atoms %d and %d bonded twice in %r' % (a, b, smiles))
        bond_pairs.add(pair)
        bonds.append(Bond(a, b, bond_order(symbol, atoms[a], atoms[b])))

    for tok in seq.tokens:
        if tok.is_atom:
            atom = parse_bracket(tok.text) if tok.kind == TokenKind.BRACKET_ATOM \
                else Atom(element=tok.text, aromatic=tok.text.islower())
            if atom.map_number is not None:
                if atom.map_number in seen_maps:
                    raise DuplicateMapNumber('map number %d used twice in %r' % (atom.map_number, smiles))
                seen_maps[atom.map_number] = tok.atom_index
            atoms.append(atom)
            current.append(tok.atom_index)
            if prev is not None:
                add_bond(prev, tok.atom_index, pending)
            prev, pending = tok.atom_index, None

        elif tok.kind == TokenKind.BOND:
            if prev is None or pending is not None:
                raise DanglingBond('bond %r has no atom on one side in %r' % (tok.text, smiles))
            pending = tok.text

        elif tok.kind == TokenKind.BRANCH_OPEN:
            if prev is None:
                raise UnbalancedParenthesis('branch opened before any atom in %r' % smiles)
            if pending is not None:
                raise DanglingBond('bond %r before a branch in %r' % (pending, smiles))
            branches.append((prev, len(atoms)))

        elif tok.kind == TokenKind.BRANCH_CLOSE:
            if not branches:
                raise UnbalancedParenthesis('")" without "(" in %r' % smiles)
            if pending is not None:
                raise DanglingBond('bond %r at the end of a branch in %r' % (pending, smiles))
            prev, atom_count_at_open = branches.pop()
            if atom_count_at_open == len(atoms):
                raise UnbalancedParenthesis('empty branch in %r' % smiles)

        elif tok.kind == TokenKind.RING_CLOSURE:
            label = int(tok.text.lstrip('%'))
            if prev is None:
                raise UnmatchedRingClosure('ring closure %r before any atom in %r' % (tok.text, smiles))
            if label in open_rings:
                other, open_symbol = open_rings.pop(label)
                if other == prev:
                    raise UnmatchedRingClosure('ring %r closes on its own atom in %r' % (tok.text, smiles))
                add_bond(other, prev, pending if pending is not None else open_symbol)
            else:
                open_rings[label] = (prev, pending)
            pending = None

        else:  # dot
            if pending is not None:
                raise DanglingBond('bond %r before "." in %r' % (pending, smiles))
            if branches:
                raise UnbalancedParenthesis('"." inside a branch in %r' % smiles)
            if open_rings:
                raise UnmatchedRingClosure('ring %s left open at "." in %r' % (sorted(open_rings), smiles))
            if not current:
                raise EmptyComponent('empty molecule before "." in %r' % smiles)
            components.append(tuple(current))
            current, prev = [], None

    if pending is not None:
        raise DanglingBond('bond %r at the end of %r' % (pending, smiles))
    if branches:
        raise UnbalancedParenthesis('%d branch(es) never closed in %r' % (len(branches), smiles))
    if open_rings:
        raise UnmatchedRingClosure('ring %s never closed in %r' % (sorted(open_rings), smiles))
    if not current:
        raise EmptyComponent('empty molecule after "." in %r' % smiles)
    components.append(tuple(current))

    return MolGraph(tuple(atoms), tuple(bonds), tuple(components)), seq


# WRITE #

def atom_text(atom):
    """
    Write one atom: bare symbol when the organic subset allows it, bracket form otherwise.

    :param atom: Atom
    :return: str
    """
    if atom.element in ORGANIC_SUBSET and atom.isotope is None and atom.charge == 0 \
            and atom.map_number is None and atom.explicit_h is None:
        return atom.element
    text = '[' + (str(atom.isotope) if atom.isotope else '') + atom.element
    if atom.explicit_h:
        text += 'H' + (str(atom.explicit_h) if atom.explicit_h > 1 else '')
    if atom.charge:
        sign = '+' if atom.charge > 0 else '-'
        text += sign + (str(abs(atom.charge)) if abs(atom.charge) > 1 else '')
    if atom.map_number is not None:
        text += ':' + str(atom.map_number)
    return text + ']'


def bond_text(order, atom_a, atom_b):
    """
    The shortest bond symbol that parses back to the same order between these two atoms.

    :return: str, possibly empty
    """
    both_aromatic = atom_a.aromatic and atom_b.aromatic
    if order == BondOrder.SINGLE:
        return '-' if both_aromatic else ''
    if order == BondOrder.AROMATIC:
        return '' if both_aromatic else ':'
    return '=' if order == BondOrder.DOUBLE else '#'


def ring_label(number):
    if number > 99:
        raise UnmatchedRingClosure('more than 99 rings open at once')
    return str(number) if number < 10 else '%' + str(number)


def spanning_tree(graph, root, adjacency, visited):
    """
    Iterative depth-first traversal from root: the visiting order, each atom's children in visiting order, and the
    ring-closure bonds (ancestor opens, descendant closes).

    :return: (order list, children dict, list of (opener, closer, BondOrder))
    """
    order, children, rings, ring_pairs = [root], {root: []}, [], set()
    visited.add(root)
    stack = [(root, None, iter(adjacency[root]))]
    while stack:
        atom, parent, neighbours = stack[-1]
        advanced = False
        for nb, order_ in neighbours:
            if nb == parent:
                continue
            if nb not in visited:
                visited.add(nb)
                order.append(nb)
                children[atom].append((nb, order_))
                children[nb] = []
                stack.append((nb, atom, iter(adjacency[nb])))
                advanced = True
                break
            pair = frozenset((atom, nb))
            if pair not in ring_pairs:
                ring_pairs.add(pair)
                rings.append((nb, atom, order_))
        if not advanced:
            stack.pop()
    return order, children, rings


def write_component(graph, root, adjacency, visited):
    """
    Write the molecule reachable from root.

    :return: (str, list of atom indices in output order)
    """
    order, children, rings = spanning_tree(graph, root, adjacency, visited)
    position = {atom: pos for pos, atom in enumerate(order)}

    # ring labels per atom: openings get the smallest free number, closings release theirs after the atom's openings
    labels = {atom: '' for atom in order}
    opened_by = {atom: sorted([r for r in rings if r[0] == atom], key=lambda r: position[r[1]]) for atom in order}
    closed_by = {atom: sorted([r for r in rings if r[1] == atom], key=lambda r: position[r[0]]) for atom in order}
    in_use, number_of = set(), {}
    for atom in order:
        text = ''
        for ring in closed_by[atom]:
            opener = graph.atoms[ring[0]]
            text += bond_text(ring[2], opener, graph.atoms[atom]) + ring_label(number_of[ring])
        for ring in opened_by[atom]:
            number = 1
            while number in in_use:
                number += 1
            in_use.add(number)
            number_of[ring] = number
            text += ring_label(number)
        for ring in closed_by[atom]:
            in_use.discard(number_of[ring])
        labels[atom] = text

    out = []
    stack = [('atom', root, None, None)]
    while stack:
        kind, atom, parent, order_ = stack.pop()
        if kind == 'text':
            out.append(atom)
            continue
        if parent is not None:
            out.append(bond_text(order_, graph.atoms[parent], graph.atoms[atom]))
        out.append(atom_text(graph.atoms[atom]) + labels[atom])
        kids = children[atom]
        if kids:
            stack.append(('atom', kids[-1][0], atom, kids[-1][1]))
            for child, child_order in reversed(kids[:-1]):
                stack.append(('text', ')', None, None))
                stack.append(('atom', child, atom, child_order))
                stack.append(('text', '(', None, None))
    return ''.join(out), order


def write_with_order(graph, root=0):
    """
    Like write(), but also returns the atom indices in the order they appear in the output.

    :param graph: MolGraph
    :param root: int, atom index the output starts from
    :return: (str, list of atom indices)
    """
    if not graph.atoms:
        raise EmptyGraph('cannot write a graph with no atoms')
    if not 0 <= root < len(graph.atoms):
        raise IndexError('root %d outside 0..%d' % (root, len(graph.atoms) - 1))

    adjacency = graph.neighbours()
    visited = set()
    pieces, order = [], []
    starts = [root] + [atom for comp in sorted(graph.components, key=min) for atom in sorted(comp)]
    for start in starts:
        if start in visited:
            continue
        text, comp_order = write_component(graph, start, adjacency, visited)
        pieces.append(text)
        order.extend(comp_order)
    return '.'.join(pieces), order


def write(graph, root=0):
    """
    Serialise a graph to SMILES by depth-first traversal from root, visiting neighbours in ascending (bond order rank,
    atom index). The root's molecule comes first; the others follow, each from its lowest atom index. Map numbers
    are written verbatim.

    :param graph: MolGraph
    :param root: int, atom index the output starts from
    :return: str
    """
    return write_with_order(graph, root)[0]


# MAP NUMBERS AND COMPARISONS #

def strip_maps(graph, seq):
    """
    Token sequence with atom-map numbers removed, as the model reads and writes it. Positions, kinds and atom indices
    are unchanged; a bracket atom that only existed to hold a map number falls back to its bare symbol.

    :param graph: MolGraph, parsed from seq
    :param seq: TokenSequence
    :return: TokenSequence
    """
    tokens = []
    for tok in seq.tokens:
        if tok.kind != TokenKind.BRACKET_ATOM:
            tokens.append(tok)
            continue
        atom = graph.atoms[tok.atom_index]
        if atom.map_number is None:
            tokens.append(tok)
            continue
        bare = atom.element in ORGANIC_SUBSET and atom.charge == 0 and atom.isotope is None \
            and not (atom.aromatic and atom.explicit_h)
        unmapped = dataclasses.replace(atom, map_number=None, explicit_h=None if bare else atom.explicit_h)
        tokens.append(Token(atom_text(unmapped), tok.kind, tok.atom_index))
    return TokenSequence(tuple(tokens), ''.join(tok.text for tok in tokens))


def atom_label(atom, with_maps=True, strict=True):
    """
    The label two atoms must share to be matched in an isomorphism.

    :param with_maps: bool, include the map number
    :param strict: bool, include the explicit hydrogen count (bracket-only information)
    :return: tuple
    """
    label = (atom.symbol, atom.aromatic, atom.charge, atom.isotope)
    if strict:
        label += (atom.explicit_h,)
    if with_maps:
        label += (atom.map_number,)
    return label


def to_networkx(graph, with_maps=True, strict=True):
    """
    :param graph: MolGraph
    :return: networkx.Graph with a "label" on every node and an "order" on every edge
    """
    nx_graph = nx.Graph()
    for idx, atom in enumerate(graph.atoms):
        nx_graph.add_node(idx, label=atom_label(atom, with_maps, strict))
    for bond in graph.bonds:
        nx_graph.add_edge(bond.a, bond.b, order=bond.order.value)
    return nx_graph


def graph_invariants(graph, with_maps=True, strict=True):
    """
    Cheap isomorphism invariants: sorted (label, degree) pairs and sorted (label, label, order) edge triples.

    :return: tuple
    """
    labels = [atom_label(atom, with_maps, strict) for atom in graph.atoms]
    degrees = [0] * len(graph.atoms)
    edges = []
    for bond in graph.bonds:
        degrees[bond.a] += 1
        degrees[bond.b] += 1
        ends = sorted([repr(labels[bond.a]), repr(labels[bond.b])])
        edges.append((ends[0], ends[1], bond.order.value))
    return sorted(zip([repr(lab) for lab in labels], degrees)), sorted(edges)


def isomorphic(graph_a, graph_b, with_maps=True, strict=True):
    """
    Labeled-graph isomorphism: same atoms (by label), same bonds (by order) under some renumbering.

    :param graph_a: MolGraph
    :param graph_b: MolGraph
    :param with_maps: bool, whether map numbers are part of the atom label
    :param strict: bool, whether explicit hydrogen counts are part of the atom label
    :return: bool
    """
    if len(graph_a.atoms) != len(graph_b.atoms) or len(graph_a.bonds) != len(graph_b.bonds):
        return False
    if graph_invariants(graph_a, with_maps, strict) != graph_invariants(graph_b, with_maps, strict):
        return False
    return nx.is_isomorphic(to_networkx(graph_a, with_maps, strict), to_networkx(graph_b, with_maps, strict),
                            node_match=lambda x, y: x['label'] == y['label'],
                            edge_match=lambda x, y: x['order'] == y['order'])
