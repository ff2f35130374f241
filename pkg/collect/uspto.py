"""
Converts the USPTO-50K CSV files (columns: id, class, reactants>reagents>production) to the reaction line format, plus
the companion split file. Reagents are dropped; the class label is kept.

NB: the CSVs are not bundled; point the converter at your own copies.
"""

import logging
import pandas as pd
from collect import ingest
from collect.ingest import UnreadableFile
from helpers.errors import DataError

logger = logging.getLogger(__name__)

REACTION_COLUMN = 'reactants>reagents>production'


def read_uspto_csv(path, split):
    """
    :param path: str, one of the USPTO-50K CSV files
    :param split: str, "train", "valid" or "test"
    :return: list of (line, id, split)
    """
    try:
        table = pd.read_csv(path, dtype=str)
    except (OSError, pd.errors.ParserError, UnicodeDecodeError) as err:
        raise UnreadableFile('cannot read %s: %s' % (path, err))
    missing = {'id', 'class', REACTION_COLUMN} - set(table.columns)
    if missing:
        raise DataError('%s lacks columns %s' % (path, sorted(missing)))

    rows = []
    for _, row in table.iterrows():
        parts = str(row[REACTION_COLUMN]).split('>')
        if len(parts) != 3:
            logger.warning('SKIPPING %s ROW %s: NOT A REACTION', split.upper(), row['id'])
            continue
        reactants, _, product = parts
        rec_id = '%s_%s' % (split, row['id'])
        label = '' if pd.isna(row['class']) else str(int(float(row['class'])))
        rows.append(('%s>>%s\t%s\t%s' % (reactants, product, rec_id, label), rec_id, split))
    logger.info('%s: %d REACTIONS FROM %s', split.upper(), len(rows), path)
    return rows


def convert_uspto(csv_paths, out_path):
    """
    :param csv_paths: dict, split name : CSV path
    :param out_path: str, reaction file to write; the .split file goes next to it
    :return: int, number of reactions written
    """
    lines, splits = [], {}
    for split, path in csv_paths.items():
        for line, rec_id, rec_split in read_uspto_csv(path, split):
            lines.append(line)
            splits[rec_id] = rec_split
    ingest.write_reaction_file(out_path, lines, splits)
    return len(lines)
