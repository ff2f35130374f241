import pytest
from collect import toy_corpus
from model.transformer import Transformer
from preprocess.augment import ReactionRecord
from train import batches
from corpora import tiny_config


@pytest.fixture(scope='session')
def toy_records():
    return [ReactionRecord(product, reactants, rec_id, label)
            for rec_id, product, reactants, label in toy_corpus.toy_reactions()]


@pytest.fixture(scope='session')
def toy_vocab(toy_records):
    return batches.build_vocabulary(toy_records)


@pytest.fixture
def tiny_model(toy_vocab):
    return Transformer(tiny_config(len(toy_vocab)))
