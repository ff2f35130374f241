"""
Handy helper functions: percentages, seeds, key = value config files, atomic writes and run manifests.
"""

import os
import json
import hashlib
import tempfile
import dataclasses
from enum import Enum
from datetime import datetime
from helpers.errors import ConfigError, RuntimeFailure

ARTIFACT_VERSION = '1.0.0'


def percent(numerator, denominator):
    """
    Returns a percentage rounded to one decimal from a numerator and denominator. Evidently assumes that the
    numerator is the fraction of the denominator total. E.g. if n = 3 and d = 4, we get 75.0.

    :param numerator: int or float
    :param denominator: int or float
    :return: float, the percentage
    """
    return round(weird_division(numerator, denominator) * 100, 1)


def weird_division(numerator, denominator):
    """
    Returns zero if denominator is zero.
    NB: from https://stackoverflow.com/a/27317595/12973664

    :param numerator: something divisible, e.g. int or float
    :param denominator: something divisible, e.g. int or float
    :return: quotient, of type float
    """
    return float(numerator) / float(denominator) if denominator else 0.


def derive_seed(global_seed, identifier):
    """
    Derive a per-item seed from a global seed and a stable identifier: seed = global_seed XOR hash(identifier).
    Python's own hash() is salted per process, so we hash with sha256 to stay reproducible across runs.

    :param global_seed: int
    :param identifier: str, e.g. a reaction ID
    :return: int, a non-negative 32-bit seed
    """
    digest = int(hashlib.sha256(str(identifier).encode('utf-8')).hexdigest()[:8], 16)
    return (int(global_seed) ^ digest) & 0xFFFFFFFF


# KEY = VALUE CONFIG FILES #

def read_key_value_file(path):
    """
    Read a line-oriented "key = value" file; "#" starts a comment, blank lines are skipped.

    :param path: str, path to the config file
    :return: list of (key, value, line number) tuples, in file order
    """
    pairs = []
    try:
        with open(path, 'r', encoding='utf-8') as in_f:
            lines = in_f.readlines()
    except OSError as err:
        raise ConfigError('cannot read config file %s: %s' % (path, err))

    for line_no, line in enumerate(lines, start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError('%s:%d: expected "key = value", got %r' % (path, line_no, line))
        key, value = line.split('=', 1)
        pairs.append((key.strip(), value.strip(), line_no))
    return pairs


def coerce_value(raw, field_type, key):
    """
    Turn the text of a config value into the type the dataclass field declares.

    :param raw: str, the value as written in the file
    :param field_type: the field's annotation, as a type or as the string of a type
    :param key: str, the key, for error messages
    :return: the coerced value
    """
    type_name = field_type if isinstance(field_type, str) else getattr(field_type, '__name__', str(field_type))
    try:
        if isinstance(field_type, type) and issubclass(field_type, Enum):
            return field_type[raw]
        if type_name == 'bool':
            if raw.lower() in {'true', 'yes', '1'}:
                return True
            if raw.lower() in {'false', 'no', '0'}:
                return False
            raise ValueError(raw)
        if type_name == 'int':
            return int(raw)
        if type_name == 'float':
            return float(raw)
        if type_name.startswith('tuple') or type_name.startswith('Tuple'):
            return tuple(float(v) for v in raw.split(','))
        if type_name.startswith('Optional[int]') or type_name == 'int | None':
            return None if raw.lower() == 'none' else int(raw)
        return raw
    except (ValueError, KeyError):
        raise ConfigError('cannot parse value %r for key %r' % (raw, key))


def apply_config(pairs, configs, enum_types=None):
    """
    Apply "key = value" pairs to a collection of config dataclasses, returning updated copies. Every key must name a
    field of exactly one of the dataclasses; unknown keys are rejected.

    :param pairs: list of (key, value, line number) tuples, as from read_key_value_file
    :param configs: list of dataclass instances holding the defaults
    :param enum_types: dict, field name : Enum class, for fields whose annotation is an Enum
    :return: list of dataclass instances, same order as configs
    """
    enum_types = enum_types or {}
    updates = [{} for _ in configs]
    for key, raw, line_no in pairs:
        owner = None
        for idx, cfg in enumerate(configs):
            fields = {f.name: f for f in dataclasses.fields(cfg)}
            if key in fields:
                owner = idx
                field_type = enum_types.get(key, fields[key].type)
                updates[idx][key] = coerce_value(raw, field_type, key)
                break
        if owner is None:
            raise ConfigError('line %d: unknown config key %r' % (line_no, key))
    return [dataclasses.replace(cfg, **upd) for cfg, upd in zip(configs, updates)]


def config_to_dict(cfg):
    """
    Flatten a config dataclass to plain, JSON-friendly values (enums by name, tuples as lists).

    :param cfg: a dataclass instance
    :return: dict
    """
    flat = {}
    for key, value in dataclasses.asdict(cfg).items():
        if isinstance(value, Enum):
            value = value.name
        elif isinstance(value, tuple):
            value = list(value)
        flat[key] = value
    return flat


# WRITING OUTPUTS #

def write_atomically(path, payload):
    """
    Write text or bytes to a temporary file next to path, then move it into place, so that readers never see half
    a file.

    :param path: str, destination path
    :param payload: str or bytes
    :return: None
    """
    directory = os.path.dirname(os.path.abspath(path))
    mode = 'wb' if isinstance(payload, bytes) else 'w'
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp_')
    except OSError as err:
        raise RuntimeFailure('could not write %s: %s' % (path, err))
    try:
        with os.fdopen(fd, mode) as out_f:
            out_f.write(payload)
        os.replace(tmp_path, path)
    except OSError as err:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise RuntimeFailure('could not write %s: %s' % (path, err))


@dataclasses.dataclass
class RunManifest:
    """What a command ran with: enough to re-run it and get the same outputs."""

    command: str
    config: dict
    inputs: list
    outputs: list
    seed: int
    version: str = ARTIFACT_VERSION
    started: str = ''
    finished: str = ''


def start_manifest(command, config, inputs, outputs, seed):
    """
    Open a run manifest, stamping the start time.

    :param command: str, subcommand name
    :param config: dict, resolved configuration with all defaults materialised
    :param inputs: list of input paths
    :param outputs: list of output paths
    :param seed: int
    :return: RunManifest
    """
    return RunManifest(command=command, config=config, inputs=[str(p) for p in inputs],
                       outputs=[str(p) for p in outputs], seed=seed, started=datetime.now().isoformat())


def finish_manifest(manifest, path):
    """
    Stamp the end time and write the manifest, atomically, as JSON.

    :param manifest: RunManifest
    :param path: str, where the manifest lives, conventionally "<output>.manifest.json"
    :return: None
    """
    manifest.finished = datetime.now().isoformat()
    write_atomically(path, json.dumps(dataclasses.asdict(manifest), indent=2, sort_keys=True) + '\n')
