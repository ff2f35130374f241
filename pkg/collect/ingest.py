"""
Reading and writing reaction files.

One reaction per line, tab-separated:
    reactants>>product [<TAB> id [<TAB> class label]]
Augmented files append two columns, variant index and origin ID:
    reactants>>product <TAB> id <TAB> class label <TAB> variant <TAB> origin
Lines starting with "#" and blank lines are skipped. A line that cannot be used goes into the rejects file, with its
line number and the reason, instead of stopping the run.

NB: the train / valid / test split comes from a companion file next to the reaction file (same name, ".split"
extension, lines "id<TAB>split"), or else from a ratio split with a seed; without either, everything is "train".
"""

import os
import logging
import numpy as np
import pandas as pd
from helpers import helpers
from helpers.errors import ConfigError, DataError
from preprocess import smiles
from preprocess.augment import ReactionRecord

logger = logging.getLogger(__name__)

SPLITS = ('train', 'valid', 'test')
REJECT_COLUMNS = ['line', 'reason', 'detail', 'text']


class UnreadableFile(DataError):
    """The input file does not exist or cannot be decoded."""


class EmptyAfterRejects(DataError):
    """No reaction in the file survived: every line was rejected, or there were none to begin with."""


class Reject(DataError):
    """A single unusable line; reason is set per instance."""

    def __init__(self, reason, detail):
        super().__init__(detail)
        self._reason = reason

    @property
    def reason(self):
        return self._reason


def read_lines(path):
    try:
        with open(path, 'r', encoding='utf-8') as in_f:
            return in_f.read().splitlines()
    except (OSError, UnicodeDecodeError) as err:
        raise UnreadableFile('cannot read %s: %s' % (path, err))


def split_reaction(text):
    """
    :param text: str, "reactants>>product" or "reactants>reagents>product"
    :return: (reactants, product)
    """
    parts = text.split('>')
    if len(parts) != 3 or not parts[0] or not parts[2]:
        raise Reject('MalformedReaction', 'expected "reactants>>product", got %r' % text)
    return parts[0], parts[2]


def parse_line(line, line_no):
    """
    :param line: str, one non-comment line
    :param line_no: int
    :return: (ReactionRecord with split "train", origin id or None)
    """
    columns = line.split('\t')
    reactants, product = split_reaction(columns[0].strip())
    rec_id = columns[1].strip() if len(columns) > 1 and columns[1].strip() else 'rxn%05d' % line_no

    class_label = None
    if len(columns) > 2 and columns[2].strip():
        try:
            class_label = int(columns[2])
        except ValueError:
            raise Reject('BadClassLabel', 'class label %r is not an integer' % columns[2])
    origin = columns[4].strip() if len(columns) > 4 else None

    graphs = []
    for side, text in (('product', product), ('reactants', reactants)):
        try:
            graphs.append(smiles.parse(text)[0])
        except smiles.SmilesError as err:
            raise Reject(err.reason, '%s: %s' % (side, err))
    missing = set(graphs[0].map_numbers()) - set(graphs[1].map_numbers())
    if missing:
        logger.warning('REACTION %s: PRODUCT MAP NUMBERS %s NOT IN THE REACTANTS', rec_id, sorted(missing))
    return ReactionRecord(product, reactants, rec_id, class_label), origin


def read_split_file(path):
    """
    :param path: str, "id<TAB>split" lines
    :return: dict, id : split
    """
    assignment = {}
    for line_no, line in enumerate(read_lines(path), start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        rec_id, _, split = line.partition('\t')
        if split.strip() not in SPLITS:
            raise ConfigError('%s:%d: split must be one of %s, got %r' % (path, line_no, SPLITS, split))
        assignment[rec_id.strip()] = split.strip()
    return assignment


def parse_ratio(ratio):
    """
    :param ratio: str, e.g. "80/10/10"
    :return: tuple of three ints summing to 100
    """
    try:
        parts = tuple(int(p) for p in ratio.split('/'))
    except ValueError:
        raise ConfigError('split ratio %r is not of the form "80/10/10"' % ratio)
    if len(parts) != 3 or sum(parts) != 100 or min(parts) < 0:
        raise ConfigError('split ratio %r must be three non-negative parts summing to 100' % ratio)
    return parts


def ratio_split(ids, ratio, seed):
    """
    Shuffle the IDs with the seed; the first floor(n * train%) go to train, the next floor(n * valid%) to valid, the
    rest to test.

    :param ids: list of str
    :param ratio: tuple of three ints, percentages
    :param seed: int
    :return: dict, id : split
    """
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = len(ids) * ratio[0] // 100
    n_valid = len(ids) * ratio[1] // 100
    assignment = {}
    for rank, idx in enumerate(order):
        assignment[ids[idx]] = 'train' if rank < n_train else 'valid' if rank < n_train + n_valid else 'test'
    return assignment


def split_file_path(path):
    return os.path.splitext(path)[0] + '.split'


def ingest(path, rejects_path=None, split_ratio=None, split_seed=0):
    """
    Read a reaction file into records, collecting unusable lines as rejects.

    :param path: str, reaction file
    :param rejects_path: str or None, where to write the rejects table (tab-separated: line, reason, detail, text)
    :param split_ratio: str or None, e.g. "80/10/10", used when there is no companion split file
    :param split_seed: int
    :return: list of ReactionRecord
    """
    logger.info('RUNNING: INGESTION OF %s', path)
    records, rejects, seen_ids = [], [], set()
    origins = {}
    for line_no, line in enumerate(read_lines(path), start=1):
        if not line.strip() or line.lstrip().startswith('#'):
            continue
        try:
            rec, origin = parse_line(line, line_no)
            if rec.id in seen_ids:
                raise Reject('DuplicateId', 'id %r already used' % rec.id)
        except DataError as err:
            rejects.append({'line': line_no, 'reason': err.reason, 'detail': str(err), 'text': line})
            continue
        seen_ids.add(rec.id)
        records.append(rec)
        origins[rec.id] = origin

    companion = split_file_path(path)
    if os.path.exists(companion):
        assignment = read_split_file(companion)
    elif split_ratio is not None:
        assignment = ratio_split([rec.id for rec in records], parse_ratio(split_ratio), split_seed)
    else:
        assignment = {rec.id: 'train' for rec in records}

    assigned = []
    for rec in records:
        # augmented lines are training data by construction
        split = 'train' if origins[rec.id] is not None else assignment.get(rec.id)
        if split is None:
            rejects.append({'line': None, 'reason': 'MissingSplit', 'detail': 'no split for id %r' % rec.id,
                            'text': rec.id})
            continue
        assigned.append(ReactionRecord(rec.product, rec.reactants, rec.id, rec.class_label, split))

    logger.info('NUMBER OF RECORDS: %d, REJECTED LINES: %d', len(assigned), len(rejects))
    for split in SPLITS:
        logger.debug('%s: %d records', split, sum(rec.split == split for rec in assigned))
    if rejects_path is not None:
        table = pd.DataFrame(rejects, columns=REJECT_COLUMNS)
        helpers.write_atomically(rejects_path, table.to_csv(sep='\t', index=False))
    if not assigned:
        raise EmptyAfterRejects('no usable reactions in %s (%d rejected lines)' % (path, len(rejects)))
    return assigned


def format_record(rec):
    label = '' if rec.class_label is None else str(rec.class_label)
    return '%s>>%s\t%s\t%s' % (rec.reactants, rec.product, rec.id, label)


def format_pair(pair):
    label = '' if pair.class_label is None else str(pair.class_label)
    return '%s>>%s\t%s_%d\t%s\t%d\t%s' % (pair.reactants_variant, pair.product_variant, pair.origin_id,
                                          pair.variant_index, label, pair.variant_index, pair.origin_id)


def write_reaction_file(path, lines, splits=None):
    """
    :param path: str
    :param lines: iterable of str, formatted reaction lines
    :param splits: dict or None, id : split; if given, the companion split file is written too
    :return: None
    """
    helpers.write_atomically(path, ''.join(line + '\n' for line in lines))
    if splits is not None:
        helpers.write_atomically(split_file_path(path),
                                 ''.join('%s\t%s\n' % (rec_id, split) for rec_id, split in splits.items()))
