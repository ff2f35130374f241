"""
Structural priors for attention, computed from parsed molecules: shortest-path distances, d-hop masks, the intra-
molecular bias lifted to token positions, and the product-to-reactant alignment from atom maps.

Atom-level matrices are A x A (A = number of atoms); token-level ones are T x T or T_x x T_y, with zeros wherever a
row or column belongs to a non-atom token (bonds, branches, ring digits, dots).
"""

from __future__ import annotations

import dataclasses
from enum import Enum
from typing import Dict, Optional, Tuple
import numpy as np
import networkx as nx
from helpers.errors import ShapeMismatch
from preprocess.smiles import DuplicateMapNumber

HOPS = (1, 2, 3, 4)


class IntraBiasMode(Enum):
    HardWeighted = 'HardWeighted'
    Gaussian = 'Gaussian'
    Off = 'Off'


@dataclasses.dataclass(frozen=True)
class IntraBiasConfig:
    intra_mode: IntraBiasMode = IntraBiasMode.Gaussian
    hop_weights: Tuple[float, ...] = (1.0, 0.5, 0.25, 0.125)
    sigma: float = 1.0
    lambda_intra: float = 1.0


@dataclasses.dataclass(frozen=True)
class DistanceMatrix:
    """d[i][j] is the number of bonds on a shortest path, np.inf between different molecules."""
    d: np.ndarray


@dataclasses.dataclass(frozen=True)
class HopMasks:
    m: Dict[int, np.ndarray]


@dataclasses.dataclass(frozen=True)
class IntraBias:
    """Token-level bias before scaling; the attention op multiplies by lambda_intra."""
    b: np.ndarray
    mode: IntraBiasMode
    weights: Tuple[float, ...]
    sigma: float
    lambda_intra: float


@dataclasses.dataclass(frozen=True)
class CrossAlignment:
    """b[i][j] = 1 when product token i and reactant token j are the same mapped atom."""
    b: np.ndarray
    lambda_cross: float = 1.0


def all_pairs_distance(graph):
    """
    Breadth-first search from every atom; every bond is one hop, whatever its order.

    :param graph: MolGraph
    :return: DistanceMatrix
    """
    n_atoms = len(graph.atoms)
    nx_graph = nx.Graph()
    nx_graph.add_nodes_from(range(n_atoms))
    nx_graph.add_edges_from((bond.a, bond.b) for bond in graph.bonds)

    dist = np.full((n_atoms, n_atoms), np.inf)
    for source in range(n_atoms):
        for target, hops in nx.single_source_shortest_path_length(nx_graph, source).items():
            dist[source, target] = hops
    return DistanceMatrix(dist)


def hop_masks(dist):
    """
    m[d][i][j] = 1 exactly when atoms i and j are d bonds apart, for d in 1..4.

    :param dist: DistanceMatrix
    :return: HopMasks
    """
    return HopMasks({hop: (dist.d == hop).astype(np.int8) for hop in HOPS})


def lift_to_tokens(atom_matrix, seq_rows, seq_cols=None):
    """
    Place an atom-level matrix at the token positions of the atoms it describes; everything else is zero.

    :param atom_matrix: np.ndarray, A_rows x A_cols
    :param seq_rows: TokenSequence indexing the rows
    :param seq_cols: TokenSequence indexing the columns, defaults to seq_rows
    :return: np.ndarray, T_rows x T_cols
    """
    seq_cols = seq_rows if seq_cols is None else seq_cols
    rows, cols = seq_rows.atom_positions, seq_cols.atom_positions
    if len(rows) != atom_matrix.shape[0] or len(cols) != atom_matrix.shape[1]:
        raise ShapeMismatch('%d x %d atom tokens against a %s atom matrix'
                            % (len(rows), len(cols), atom_matrix.shape))
    lifted = np.zeros((len(seq_rows), len(seq_cols)))
    if rows and cols:
        row_pos, row_atoms = zip(*rows)
        col_pos, col_atoms = zip(*cols)
        lifted[np.ix_(row_pos, col_pos)] = atom_matrix[np.ix_(row_atoms, col_atoms)]
    return lifted


def intra_bias(seq, dist, cfg):
    """
    Intra-molecular attention bias at token resolution. HardWeighted: sum over d of w_d * m[d]. Gaussian:
    exp(-D^2 / (2 sigma^2)), zero across molecules. The result is NOT multiplied by lambda_intra.

    :param seq: TokenSequence, from the same parse as dist
    :param dist: DistanceMatrix
    :param cfg: IntraBiasConfig
    :return: IntraBias
    """
    if cfg.intra_mode == IntraBiasMode.HardWeighted:
        masks = hop_masks(dist)
        atom_bias = sum(weight * masks.m[hop] for hop, weight in zip(HOPS, cfg.hop_weights))
        atom_bias = np.asarray(atom_bias, dtype=np.float64)
    elif cfg.intra_mode == IntraBiasMode.Gaussian:
        if cfg.sigma <= 0:
            raise ValueError('sigma must be positive, got %r' % cfg.sigma)
        atom_bias = np.exp(-np.square(dist.d) / (2.0 * cfg.sigma ** 2))
    else:
        atom_bias = np.zeros_like(dist.d)
    return IntraBias(lift_to_tokens(atom_bias, seq), cfg.intra_mode, tuple(cfg.hop_weights), cfg.sigma,
                     cfg.lambda_intra)


def map_positions(graph, seq):
    """
    :return: dict, map number : token position, for every mapped atom token
    """
    positions = {}
    for pos, atom_index in seq.atom_positions:
        map_number = graph.atoms[atom_index].map_number
        if map_number is None:
            continue
        if map_number in positions:
            raise DuplicateMapNumber('map number %d appears twice on one side' % map_number)
        positions[map_number] = pos
    return positions


def cross_alignment(product, reactants, lambda_cross=1.0):
    """
    Binary product-token x reactant-token alignment: 1 where both tokens are atoms carrying the same map number.

    :param product: (MolGraph, TokenSequence)
    :param reactants: (MolGraph, TokenSequence)
    :param lambda_cross: float, kept alongside the matrix; scaling happens in the attention op
    :return: CrossAlignment
    """
    prod_maps = map_positions(*product)
    reac_maps = map_positions(*reactants)
    align = np.zeros((len(product[1]), len(reactants[1])))
    for map_number, prod_pos in prod_maps.items():
        if map_number in reac_maps:
            align[prod_pos, reac_maps[map_number]] = 1.0
    return CrossAlignment(align, lambda_cross)


@dataclasses.dataclass(frozen=True)
class PriorSet:
    """Everything one reaction contributes to attention, at token resolution."""
    distances: DistanceMatrix
    masks: HopMasks
    intra: IntraBias
    cross: Optional[CrossAlignment]


def reaction_priors(product, reactants, cfg, lambda_cross=1.0):
    """
    All priors for one reaction.

    :param product: (MolGraph, TokenSequence)
    :param reactants: (MolGraph, TokenSequence) or None when only the product is known
    :param cfg: IntraBiasConfig
    :param lambda_cross: float
    :return: PriorSet
    """
    dist = all_pairs_distance(product[0])
    cross = cross_alignment(product, reactants, lambda_cross) if reactants is not None else None
    return PriorSet(dist, hop_masks(dist), intra_bias(product[1], dist, cfg), cross)


def format_matrix(name, matrix):
    """
    Plain-text matrix block: header "rows cols name", then rows of space-separated values.

    :param name: str
    :param matrix: np.ndarray, 2-D
    :return: str
    """
    lines = ['%d %d %s' % (matrix.shape[0], matrix.shape[1], name)]
    for row in matrix:
        lines.append(' '.join('inf' if np.isinf(v) else repr(float(v)) if not float(v).is_integer() else str(int(v))
                              for v in row))
    return '\n'.join(lines) + '\n'


def format_prior_bundle(priors):
    """
    The emit-priors bundle: D, m1..m4, B_intra, B_cross, one block each.

    :param priors: PriorSet
    :return: str
    """
    blocks = [format_matrix('D', priors.distances.d)]
    blocks += [format_matrix('m%d' % hop, priors.masks.m[hop]) for hop in HOPS]
    blocks.append(format_matrix('B_intra', priors.intra.b))
    if priors.cross is not None:
        blocks.append(format_matrix('B_cross', priors.cross.b))
    return ''.join(blocks)
