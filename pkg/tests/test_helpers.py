from __future__ import annotations

import json
import os
import dataclasses
from typing import Tuple
import pytest
from helpers import helpers
from helpers.errors import ConfigError, DataError, PipelineError, RuntimeFailure, ShapeMismatch, UsageError
from preprocess.priors import IntraBiasMode


@dataclasses.dataclass(frozen=True)
class Knobs:
    width: int = 3
    rate: float = 0.5
    verbose: bool = False
    weights: Tuple[float, ...] = (1.0, 2.0)
    mode: IntraBiasMode = IntraBiasMode.Gaussian


@dataclasses.dataclass(frozen=True)
class Paths:
    out: str = 'here'


def test_percent_and_division():
    assert helpers.percent(3, 4) == 75.0
    assert helpers.percent(1, 3) == 33.3
    assert helpers.percent(5, 0) == 0.0
    assert helpers.weird_division(1, 0) == 0.0
    assert helpers.weird_division(3, 2) == 1.5


def test_derive_seed_is_stable_and_spread():
    assert helpers.derive_seed(7, 'r1') == helpers.derive_seed(7, 'r1')
    assert helpers.derive_seed(7, 'r1') != helpers.derive_seed(7, 'r2')
    assert helpers.derive_seed(7, 'r1') != helpers.derive_seed(8, 'r1')
    assert 0 <= helpers.derive_seed(2 ** 40, 'x') < 2 ** 32


def test_exit_codes():
    assert UsageError.exit_code == ConfigError.exit_code == 1
    assert DataError.exit_code == 2
    assert RuntimeFailure.exit_code == ShapeMismatch.exit_code == 3
    assert ShapeMismatch('x').reason == 'ShapeMismatch'
    assert issubclass(ConfigError, PipelineError)


def test_read_key_value_file(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('# heading\n\nwidth = 5  # inline\nout=/tmp/x = y\n', encoding='utf-8')
    assert helpers.read_key_value_file(str(path)) == [('width', '5', 3), ('out', '/tmp/x = y', 4)]


def test_bad_config_files(tmp_path):
    with pytest.raises(ConfigError):
        helpers.read_key_value_file(str(tmp_path / 'absent.cfg'))
    path = tmp_path / 'broken.cfg'
    path.write_text('width 5\n', encoding='utf-8')
    with pytest.raises(ConfigError) as caught:
        helpers.read_key_value_file(str(path))
    assert ':1:' in str(caught.value)


def test_apply_config_coerces_and_routes():
    pairs = [('width', '8', 1), ('rate', '0.25', 2), ('verbose', 'yes', 3), ('weights', '1, 0.5', 4),
             ('mode', 'Off', 5), ('out', 'there', 6)]
    knobs, paths = helpers.apply_config(pairs, [Knobs(), Paths()], enum_types={'mode': IntraBiasMode})
    assert knobs == Knobs(width=8, rate=0.25, verbose=True, weights=(1.0, 0.5), mode=IntraBiasMode.Off)
    assert paths == Paths(out='there')


@pytest.mark.parametrize('pair', [('height', '1', 1), ('width', 'wide', 1), ('verbose', 'maybe', 1),
                                  ('mode', 'Sideways', 1)])
def test_apply_config_rejects(pair):
    with pytest.raises(ConfigError):
        helpers.apply_config([pair], [Knobs()], enum_types={'mode': IntraBiasMode})


def test_config_to_dict():
    assert helpers.config_to_dict(Knobs()) == {'width': 3, 'rate': 0.5, 'verbose': False, 'weights': [1.0, 2.0],
                                               'mode': 'Gaussian'}


def test_write_atomically(tmp_path):
    path = str(tmp_path / 'nested' / 'out.txt')
    helpers.write_atomically(path, 'first\n')
    helpers.write_atomically(path, 'second\n')
    with open(path, encoding='utf-8') as in_f:
        assert in_f.read() == 'second\n'
    helpers.write_atomically(str(tmp_path / 'blob.bin'), b'\x00\x01')
    assert (tmp_path / 'blob.bin').read_bytes() == b'\x00\x01'
    assert not [name for name in os.listdir(tmp_path / 'nested') if name.startswith('.tmp_')]


def test_write_into_a_file_fails_cleanly(tmp_path):
    blocker = tmp_path / 'file'
    blocker.write_text('x', encoding='utf-8')
    with pytest.raises(RuntimeFailure):
        helpers.write_atomically(str(blocker / 'out.txt'), 'y')


def test_manifest(tmp_path):
    manifest = helpers.start_manifest('augment', {'factor': 2}, ['in.txt'], [tmp_path / 'out.txt'], 11)
    path = str(tmp_path / 'out.txt.manifest.json')
    helpers.finish_manifest(manifest, path)
    with open(path, encoding='utf-8') as in_f:
        written = json.load(in_f)
    assert written['command'] == 'augment'
    assert written['seed'] == 11
    assert written['version'] == helpers.ARTIFACT_VERSION
    assert written['outputs'] == [str(tmp_path / 'out.txt')]
    assert written['started'] <= written['finished']
