import os
import json
import pytest
import retro
from analyse.decoding import BeamConfig
from helpers.errors import ConfigError, UsageError
from model import checkpoint
from model.transformer import Transformer
from preprocess.augment import AugmentConfig
from preprocess.priors import IntraBiasMode
from corpora import tiny_config

TINY_CFG = """# a model small enough for a test
layers_enc = 1
layers_dec = 1
heads = 2
d_model = 8
d_ff = 16
dropout = 0.0
max_relative_distance = 2
batch_tokens = 600
warmup_steps = 2
validate_every = 2
max_steps = 4
factor = 2
beam_width = 2
topk = 2
max_len = 12
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / 'tiny.cfg'
    path.write_text(TINY_CFG, encoding='utf-8')
    return str(path)


@pytest.fixture
def tiny_checkpoint(tmp_path, toy_vocab):
    return checkpoint.save(str(tmp_path / 'tiny.ckpt'), Transformer(tiny_config(len(toy_vocab))), toy_vocab)


def read(path):
    with open(path, encoding='utf-8') as in_f:
        return in_f.read()


# USAGE #

@pytest.mark.parametrize('argv', [[], ['frobnicate'], ['tokenize', '--bogus'], ['tokenize'],
                                  ['eval', '--data', 'x.txt'], ['predict', '--checkpoint', 'x', '--input', 'y',
                                                                '--beam', '2', '--topk', '5']])
def test_usage_errors_exit_one(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert retro.main(argv) == 1


def test_help_exits_zero():
    assert retro.main(['tokenize', '--help']) == 0


def test_tokenize(tmp_path, capsys):
    out = tmp_path / 'tokens.txt'
    assert retro.main(['tokenize', 'CC(=O)O', '[NH4+]Cl', '--output', str(out)]) == 0
    assert read(out) == 'C C ( = O ) O\n[NH4+] Cl\n'
    manifest = json.loads(read(str(out) + '.manifest.json'))
    assert manifest['command'] == 'tokenize'
    assert retro.main(['tokenize', 'c1ccccc1Br']) == 0
    assert capsys.readouterr().out == 'c 1 c c c c c 1 Br\n'


def test_tokenize_bad_smiles_exits_two():
    assert retro.main(['tokenize', 'C[CH3']) == 2


def test_emit_priors(tmp_path):
    out = tmp_path / 'priors.txt'
    assert retro.main(['emit-priors', '--product', '[CH3:1][OH:2]', '--reactants', '[CH4:1].[OH2:2]',
                       '--output', str(out)]) == 0
    text = read(out)
    for header in ('D', 'm1', 'm4', 'B_intra', 'B_cross'):
        assert header in text
    assert retro.main(['emit-priors', '--product', 'C(C']) == 2


def test_missing_checkpoint_exits_two(tmp_path):
    data = tmp_path / 'data.txt'
    data.write_text('CCO>>CC=O\tr1\n', encoding='utf-8')
    assert retro.main(['eval', '--checkpoint', str(tmp_path / 'absent.ckpt'), '--data', str(data)]) == 2


def test_eval_on_an_empty_split_exits_two(tmp_path, tiny_checkpoint):
    data = tmp_path / 'data.txt'
    data.write_text('CCO>>CC=O\tr1\nCCN>>CC=N\tr2\n', encoding='utf-8')
    # without a split file every record is training data
    assert retro.main(['eval', '--checkpoint', tiny_checkpoint, '--data', str(data), '--split', 'test',
                       '--quiet']) == 2


def test_config_errors_exit_one(tmp_path):
    bad = tmp_path / 'bad.cfg'
    bad.write_text('wingspan = 3\n', encoding='utf-8')
    assert retro.main(['emit-priors', '--product', 'CCO', '--config', str(bad)]) == 1


# CONFIG AND HELPERS #

def test_load_configs(tiny_cfg):
    model_cfg, train_cfg, augment_cfg, beam_cfg = retro.load_configs(tiny_cfg, seed=7)
    assert (model_cfg.d_model, model_cfg.init_seed) == (8, 7)
    assert (train_cfg.max_steps, train_cfg.seed) == (4, 7)
    assert augment_cfg == AugmentConfig(factor=2)
    assert beam_cfg.beam_width == 2 and beam_cfg.max_len == 12


def test_inconsistent_config(tmp_path):
    path = tmp_path / 'odd.cfg'
    path.write_text('d_model = 10\nheads = 3\n', encoding='utf-8')
    with pytest.raises(ConfigError):
        retro.load_configs(str(path))


def test_beam_config_from_flags():
    class Flags:
        beam_width, topk, max_len = 4, None, None
    assert retro.beam_config(Flags, BeamConfig()) == BeamConfig(beam_width=4, topk=4)
    Flags.topk = 6
    with pytest.raises(UsageError):
        retro.beam_config(Flags, BeamConfig())


def test_product_of():
    assert retro.product_of('CCO') == 'CCO'
    assert retro.product_of('CC.O>>CCO\tr1\t3') == 'CCO'


def test_ablation_grid(tiny_cfg):
    model_cfg, _, augment_cfg, _ = retro.load_configs(tiny_cfg)
    grid = retro.ablation_grid(model_cfg, augment_cfg)
    assert len(grid) == 8
    assert len({tuple(label.values()) for label, _, _ in grid}) == 8
    for label, cfg, aug in grid:
        assert (cfg.bias_mode == IntraBiasMode.Off) is (not label['graph priors'])
        assert aug.paired is label['paired roots']
        assert aug.factor in (1, augment_cfg.factor)


# PIPELINE #

def test_toy_pipeline_end_to_end(tmp_path, tiny_cfg):
    data_dir = str(tmp_path / 'data')
    assert retro.main(['toy-corpus', '--output-dir', data_dir]) == 0
    corpus = os.path.join(data_dir, 'toy.rxn')
    assert len(read(corpus).splitlines()) == 32
    assert len(read(os.path.join(data_dir, 'parser_corpus.txt')).splitlines()) >= 500

    common = ['--config', tiny_cfg, '--seed', '3', '--quiet', '--log-level', 'WARNING']
    augmented = str(tmp_path / 'augmented.rxn')
    assert retro.main(['augment', '--input', corpus, '--output', augmented, '--split-ratio', '50/25/25'] + common) == 0
    assert len(read(augmented).splitlines()) == 16 * 2
    assert os.path.exists(augmented + '.manifest.json')

    ckpt = str(tmp_path / 'model.ckpt')
    assert retro.main(['train', '--data', corpus, '--augmented', augmented, '--output', ckpt,
                       '--split-ratio', '50/25/25'] + common) == 0
    assert os.path.exists(ckpt) and os.path.exists(ckpt + '.metrics.tsv')
    assert json.loads(read(ckpt + '.manifest.json'))['config']['d_model'] == 8

    predictions = str(tmp_path / 'predictions.txt')
    assert retro.main(['predict', '--checkpoint', ckpt, '--input', corpus, '--output', predictions] + common) == 0
    lines = read(predictions).splitlines()
    assert sum(line.startswith('# ') for line in lines) == 32
    assert all(line.startswith('# ') or line.split('\t')[0] in ('1', '2') for line in lines)

    report = str(tmp_path / 'report.txt')
    assert retro.main(['eval', '--checkpoint', ckpt, '--data', corpus, '--split-ratio', '50/25/25', '--output',
                       report] + common) == 0
    text = read(report)
    assert 'records=8' in text
    assert 'top1=' in text and 'invalid_rate=' in text
