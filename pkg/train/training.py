"""
Teacher-forced maximum-likelihood training: Adam under a warmup / inverse-square-root schedule, periodic validation,
early stopping, and a checkpoint of the best model by validation loss.
"""

from __future__ import annotations

import math
import logging
import dataclasses
from typing import List
import numpy as np
import pandas as pd
from tqdm import tqdm
from analyse import decoding
from helpers import helpers
from helpers.errors import DataError, RuntimeFailure
from model import autodiff as ad
from model import checkpoint
from model.transformer import Transformer
from preprocess.vocab import PAD_ID
from train import batches

logger = logging.getLogger(__name__)


class NonFiniteLoss(RuntimeFailure):
    """The training loss came out NaN or infinite."""


class EmptyDataset(DataError):
    """No training examples to learn from."""


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    batch_tokens: int = 4096
    schedule_factor: float = 2.0
    warmup_steps: int = 4000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.998
    adam_eps: float = 1e-9
    label_smoothing: float = 0.0
    validate_every: int = 1000
    patience: int = 40
    max_steps: int = 100000
    seed: int = 0

    def validate(self):
        if self.warmup_steps < 1:
            raise ValueError('warmup_steps must be at least 1')
        if not 0 <= self.label_smoothing < 1:
            raise ValueError('label_smoothing must be in [0, 1)')
        if self.validate_every < 1 or self.max_steps < 1 or self.batch_tokens < 1:
            raise ValueError('validate_every, max_steps and batch_tokens must be positive')
        return self


@dataclasses.dataclass
class TrainState:
    step: int
    params: object
    m: dict
    v: dict
    best_valid_loss: float = math.inf
    best_valid_acc: float = -1.0
    validations_since_improvement: int = 0
    validations: int = 0
    losses: List[float] = dataclasses.field(default_factory=list)
    metrics: List[dict] = dataclasses.field(default_factory=list)
    checkpoint_path: str = ''

    @classmethod
    def start(cls, params):
        zeros = {name: np.zeros_like(t.data) for name, t in params}
        return cls(step=0, params=params, m=zeros, v={name: z.copy() for name, z in zeros.items()})


def learning_rate(step, cfg, d_model):
    """
    schedule_factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5): linear warmup, then inverse square root decay.

    :param step: int, counted from 1
    :param cfg: TrainConfig
    :param d_model: int
    :return: float
    """
    step = max(step, 1)
    return cfg.schedule_factor * d_model ** -0.5 * min(step ** -0.5, step * cfg.warmup_steps ** -1.5)


def batch_loss(model, batch, label_smoothing=0.0):
    """
    Mean cross-entropy over the non-pad target tokens of a batch, under teacher forcing.

    :param model: Transformer
    :param batch: Batch with targets
    :param label_smoothing: float
    :return: scalar Tensor
    """
    memory = model.encode(batch.src_ids, batch.bundle)
    logits = model.decode(memory, batch.tgt_in, batch.bundle)
    n_rows = logits.shape[0] * logits.shape[1]
    loss = ad.cross_entropy(ad.reshape(logits, (n_rows, logits.shape[2])), batch.tgt_out.reshape(-1), PAD_ID,
                            label_smoothing)
    if not np.isfinite(loss.data):
        raise NonFiniteLoss('loss is %r on batch %s' % (loss.item(), list(batch.origin_ids)))
    return loss


def adam_step(state, lr, cfg):
    """
    One Adam update of every parameter from the gradients already accumulated on it; bumps state.step.
    """
    state.step += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    for name, param in state.params:
        if param.grad is None:
            continue
        state.m[name] = b1 * state.m[name] + (1 - b1) * param.grad
        state.v[name] = b2 * state.v[name] + (1 - b2) * np.square(param.grad)
        m_hat = state.m[name] / (1 - b1 ** state.step)
        v_hat = state.v[name] / (1 - b2 ** state.step)
        param.data -= lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def validate(model, valid_batches):
    """
    Loss under teacher forcing, averaged over target tokens, and sequence exact-match accuracy of free-running greedy
    decoding: an example counts as correct when the decoder, fed its own predictions and no cross bias, writes the
    target tokens and then EOS.

    :param model: Transformer
    :param valid_batches: list of Batch
    :return: (float loss, float accuracy in [0, 1])
    """
    model.eval_mode()
    total_loss, total_tokens, correct, seen = 0.0, 0, 0, 0
    with ad.no_grad():
        for batch in valid_batches:
            memory = model.encode(batch.src_ids, batch.bundle)
            logits = model.decode(memory, batch.tgt_in, batch.bundle)
            n_tokens = int((batch.tgt_out != PAD_ID).sum())
            n_rows = logits.shape[0] * logits.shape[1]
            loss = ad.cross_entropy(ad.reshape(logits, (n_rows, logits.shape[2])), batch.tgt_out.reshape(-1), PAD_ID)
            total_loss += loss.item() * n_tokens
            total_tokens += n_tokens
            generated = decoding.greedy_batch(model, memory, batch.bundle, batch.tgt_out.shape[1])
            hits = (generated == batch.tgt_out) | (batch.tgt_out == PAD_ID)
            correct += int(hits.all(axis=1).sum())
            seen += len(batch)
    return helpers.weird_division(total_loss, total_tokens), helpers.weird_division(correct, seen)


def fit(model, train_examples, valid_examples, cfg, checkpoint_path, vocab, quiet=False):
    """
    Train until max_steps or until neither validation loss nor accuracy has improved for cfg.patience validations in
    a row. Every validation that lowers the best loss saves a checkpoint; a final validation always runs.

    :param model: Transformer, trained in place
    :param train_examples: list of Example with targets
    :param valid_examples: list of Example with targets
    :param cfg: TrainConfig
    :param checkpoint_path: str
    :param vocab: Vocabulary, stored in the checkpoint
    :param quiet: bool, hide the progress bar
    :return: TrainState
    """
    cfg.validate()
    if not train_examples:
        raise EmptyDataset('no training examples')
    if not valid_examples:
        logger.warning('NO VALIDATION EXAMPLES: VALIDATING ON THE TRAINING SET')
        valid_examples = train_examples
    valid_batches = batches.make_batches(valid_examples, cfg.batch_tokens, cfg.seed)
    state = TrainState.start(model.params)
    state.checkpoint_path = checkpoint_path
    d_model = model.config.d_model

    logger.info('RUNNING: TRAINING')
    logger.info('NUMBER OF TRAINING EXAMPLES: %d, VALIDATION EXAMPLES: %d, PARAMETERS: %d',
                len(train_examples), len(valid_examples), model.params.count())

    window, stop, epoch = [], False, 0
    progress = tqdm(total=cfg.max_steps, disable=quiet, desc='train')
    while not stop:
        for batch in batches.make_batches(train_examples, cfg.batch_tokens, [cfg.seed, epoch]):
            model.train_mode([cfg.seed, state.step + 1])
            model.params.zero_grad()
            loss = batch_loss(model, batch, cfg.label_smoothing)
            ad.backward(loss)
            adam_step(state, learning_rate(state.step + 1, cfg, d_model), cfg)
            state.losses.append(loss.item())
            window.append(loss.item())
            progress.update(1)
            progress.set_postfix(loss='%.4f' % loss.item())

            if state.step % cfg.validate_every == 0 or state.step >= cfg.max_steps:
                stop = record_validation(state, model, valid_batches, window, cfg, vocab)
                window = []
            if stop or state.step >= cfg.max_steps:
                stop = True
                break
        epoch += 1
    progress.close()
    model.eval_mode()
    logger.info('TRAINING STOPPED AT STEP %d; BEST VALIDATION LOSS %.4f, BEST ACCURACY %.1f%%',
                state.step, state.best_valid_loss, 100 * state.best_valid_acc)
    return state


def record_validation(state, model, valid_batches, window, cfg, vocab):
    """
    Validate, log a metrics row, save on a new best loss, and update the early-stopping count.

    :return: bool, True when training should stop
    """
    valid_loss, valid_acc = validate(model, valid_batches)
    state.validations += 1
    state.metrics.append({'step': state.step, 'train_loss': float(np.mean(window)), 'valid_loss': valid_loss,
                          'valid_acc': valid_acc})
    logger.debug('step %d: valid loss %.4f, valid acc %.3f', state.step, valid_loss, valid_acc)

    improved = False
    if valid_loss < state.best_valid_loss:
        state.best_valid_loss = valid_loss
        checkpoint.save(state.checkpoint_path, model, vocab)
        improved = True
    if valid_acc > state.best_valid_acc:
        state.best_valid_acc = valid_acc
        improved = True
    state.validations_since_improvement = 0 if improved else state.validations_since_improvement + 1
    return state.validations_since_improvement >= cfg.patience


def write_metrics(state, path):
    """The metrics log: step, train_loss, valid_loss, valid_acc, tab-separated, one row per validation."""
    table = pd.DataFrame(state.metrics, columns=['step', 'train_loss', 'valid_loss', 'valid_acc'])
    helpers.write_atomically(path, table.to_csv(sep='\t', index=False))


def train(config, model_config, dataset, checkpoint_path, quiet=False):
    """
    Build the vocabulary from the training records, initialise a model, and fit it.

    :param config: TrainConfig
    :param model_config: ModelConfig; vocab_size is filled in from the data
    :param dataset: (list of training ReactionRecord, list of validation ReactionRecord)
    :param checkpoint_path: str
    :param quiet: bool
    :return: str, path of the best checkpoint
    """
    train_records, valid_records = dataset
    if not train_records:
        raise EmptyDataset('no training records')
    vocab = batches.build_vocabulary(train_records)
    model_config = dataclasses.replace(model_config, vocab_size=len(vocab))
    model = Transformer(model_config)
    intra_cfg = model_config.intra_config()
    train_examples = batches.examples_from_records(train_records, vocab, intra_cfg)
    valid_examples = batches.examples_from_records(valid_records, vocab, intra_cfg)

    state = fit(model, train_examples, valid_examples, config, checkpoint_path, vocab, quiet)
    write_metrics(state, checkpoint_path + '.metrics.tsv')
    return checkpoint_path
