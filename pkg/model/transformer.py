"""
Encoder-decoder Transformer with graph-biased attention. Encoder self-attention logits get lambda_intra * B_intra
added (distance prior over product atoms); cross-attention logits get lambda_cross * B_cross (atom-map alignment)
when the reactant tokens are known, i.e. under teacher forcing. Positions enter only through relative key
embeddings, clipped to +/- max_relative_distance, in encoder and decoder self-attention.

Blocks are pre-norm: x + Dropout(Sublayer(LayerNorm(x))), with a final layer norm on each stack. The output
projection is tied to the token embedding.
"""

from __future__ import annotations

import math
import dataclasses
from collections import OrderedDict
from typing import Optional, Tuple
import numpy as np
from helpers.errors import DataError, ShapeMismatch
from model import autodiff as ad
from preprocess.priors import IntraBiasConfig, IntraBiasMode
from preprocess.vocab import PAD_ID


class EmptyInput(DataError):
    """An empty batch or a zero-length source sequence."""


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    layers_enc: int = 6
    layers_dec: int = 6
    heads: int = 8
    d_model: int = 256
    d_ff: int = 2048
    dropout: float = 0.3
    max_relative_distance: int = 4
    vocab_size: int = 0
    lambda_intra: float = 1.0
    lambda_cross: float = 1.0
    bias_mode: IntraBiasMode = IntraBiasMode.Gaussian
    sigma: float = 1.0
    hop_weights: Tuple[float, ...] = (1.0, 0.5, 0.25, 0.125)
    relative_positions: bool = True
    init_seed: int = 0

    def validate(self):
        if self.d_model % self.heads:
            raise ShapeMismatch('d_model %d is not divisible by %d heads' % (self.d_model, self.heads))
        if self.max_relative_distance < 1:
            raise ValueError('max_relative_distance must be at least 1')
        if not 0 <= self.dropout < 1:
            raise ValueError('dropout must be in [0, 1)')
        return self

    @property
    def d_k(self):
        return self.d_model // self.heads

    def intra_config(self):
        return IntraBiasConfig(intra_mode=self.bias_mode, hop_weights=tuple(self.hop_weights), sigma=self.sigma,
                               lambda_intra=self.lambda_intra)


@dataclasses.dataclass
class AttentionBiasBundle:
    """
    Per-batch attention inputs. intra and cross are the unscaled priors, the model multiplies them by its lambdas;
    cross is already in decoder-query orientation (T_y x T_x). Pad masks are True at padding positions.
    """
    src_pad: np.ndarray
    tgt_pad: Optional[np.ndarray] = None
    intra: Optional[np.ndarray] = None
    cross: Optional[np.ndarray] = None

    @staticmethod
    def causal_mask(length):
        """True above the diagonal: position t may look at positions <= t only."""
        return np.triu(np.ones((length, length), dtype=bool), k=1)

    def tile(self, copies):
        """Repeat a single-example bundle for a beam of hypotheses."""
        return AttentionBiasBundle(src_pad=np.repeat(self.src_pad, copies, axis=0),
                                   intra=None if self.intra is None else np.repeat(self.intra, copies, axis=0))


def xavier(rng, fan_in, fan_out, shape=None):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class ModelParams:
    """Every learnable tensor, by name; the names and shapes follow from the ModelConfig alone."""

    def __init__(self, tensors):
        self.tensors = OrderedDict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self):
        return len(self.tensors)

    def names(self):
        return list(self.tensors)

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def count(self):
        return int(sum(t.data.size for t in self.tensors.values()))

    @staticmethod
    def shapes(cfg):
        """
        :param cfg: ModelConfig
        :return: OrderedDict, parameter name : shape
        """
        d, ff, dk = cfg.d_model, cfg.d_ff, cfg.d_k
        rel = 2 * cfg.max_relative_distance + 1
        shapes = OrderedDict(embedding=(cfg.vocab_size, d))

        def attention(prefix):
            for w in ('w_q', 'w_k', 'w_v', 'w_o'):
                shapes[prefix + w] = (d, d)

        def norm(prefix):
            shapes[prefix + 'gain'] = (d,)
            shapes[prefix + 'bias'] = (d,)

        def feed_forward(prefix):
            shapes[prefix + 'w1'] = (d, ff)
            shapes[prefix + 'b1'] = (ff,)
            shapes[prefix + 'w2'] = (ff, d)
            shapes[prefix + 'b2'] = (d,)

        for layer in range(cfg.layers_enc):
            p = 'enc.%d.' % layer
            norm(p + 'ln1.')
            attention(p + 'self.')
            shapes[p + 'self.rel_k'] = (rel, dk)
            norm(p + 'ln2.')
            feed_forward(p + 'ff.')
        norm('enc.ln.')
        for layer in range(cfg.layers_dec):
            p = 'dec.%d.' % layer
            norm(p + 'ln1.')
            attention(p + 'self.')
            shapes[p + 'self.rel_k'] = (rel, dk)
            norm(p + 'ln2.')
            attention(p + 'cross.')
            norm(p + 'ln3.')
            feed_forward(p + 'ff.')
        norm('dec.ln.')
        return shapes

    @classmethod
    def initialise(cls, cfg, seed=None):
        """
        Xavier-uniform matrices, N(0, 1/d_model) embeddings, unit gains, zero biases.

        :param cfg: ModelConfig
        :param seed: int, defaults to cfg.init_seed
        :return: ModelParams
        """
        rng = np.random.default_rng(cfg.init_seed if seed is None else seed)
        tensors = OrderedDict()
        for name, shape in cls.shapes(cfg).items():
            if name == 'embedding':
                data = rng.normal(0.0, cfg.d_model ** -0.5, size=shape)
            elif name.endswith('gain'):
                data = np.ones(shape)
            elif len(shape) == 1:
                data = np.zeros(shape)
            else:
                data = xavier(rng, shape[0], shape[1], shape)
            tensors[name] = ad.tensor(data, requires_grad=True)
        return cls(tensors)


# ATTENTION #

def relative_index(length_q, length_k, clip):
    """index[i, j] = clip(j - i, -clip, clip) + clip"""
    offsets = np.arange(length_k)[None, :] - np.arange(length_q)[:, None]
    return np.clip(offsets, -clip, clip) + clip


def relative_position_logits(q, rel_embeddings, clip, length_k=None):
    """
    Key-side relative position term: out[..., i, j] = q_i . rel_key(clip(j - i)). Offsets beyond +/- clip share the
    boundary embedding.

    :param q: Tensor, (..., T_q, d_k)
    :param rel_embeddings: Tensor, (2 * clip + 1, d_k)
    :param clip: int, the maximum relative distance
    :param length_k: int, number of keys, defaults to T_q
    :return: Tensor, (..., T_q, T_k)
    """
    length_q = q.shape[-2]
    length_k = length_q if length_k is None else length_k
    per_offset = ad.matmul(q, ad.transpose_last2(rel_embeddings))
    return ad.take_lastdim(per_offset, relative_index(length_q, length_k, clip))


def attention(q, k, v, bias=None, mask=None, rel_logits=None):
    """
    softmax(mask_fill((Q K^T + R) / sqrt(d_k) + bias, mask, -1e9)) V. Without bias and relative term this is plain
    scaled dot-product attention; adding zeros leaves it bit-for-bit unchanged.

    :param q: Tensor, (..., T_q, d_k)
    :param k: Tensor, (..., T_k, d_k)
    :param v: Tensor, (..., T_k, d_v)
    :param bias: array or None, broadcastable to (..., T_q, T_k)
    :param mask: bool array or None, True where attention is blocked
    :param rel_logits: Tensor or None, (..., T_q, T_k)
    :return: Tensor, (..., T_q, d_v)
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch('attention: q %s, k %s, v %s' % (q.shape, k.shape, v.shape))
    logits = ad.matmul(q, ad.transpose_last2(k))
    if rel_logits is not None:
        logits = ad.add(logits, rel_logits)
    logits = ad.scale(logits, 1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        try:
            np.broadcast_shapes(bias.shape, logits.shape)
        except ValueError:
            raise ShapeMismatch('attention bias %s against logits %s' % (bias.shape, logits.shape))
        logits = ad.add(logits, bias)
    if mask is not None:
        logits = ad.masked_fill(logits, mask)
    return ad.matmul(ad.softmax_lastdim(logits), v)


class Transformer:

    def __init__(self, config, params=None):
        self.config = config.validate()
        self.params = params if params is not None else ModelParams.initialise(config)
        self.training = False
        self._dropout_seed = (0,)
        self._dropout_calls = 0

    # plumbing

    def train_mode(self, seed):
        """Switch dropout on; every dropout call in the next pass draws from (seed, call number)."""
        self.training = True
        self._dropout_seed = tuple(seed) if isinstance(seed, (tuple, list)) else (int(seed),)
        self._dropout_calls = 0

    def eval_mode(self):
        self.training = False

    def _dropout(self, x):
        if not self.training or self.config.dropout == 0:
            return x
        self._dropout_calls += 1
        return ad.dropout(x, self.config.dropout, list(self._dropout_seed) + [self._dropout_calls])

    def _split_heads(self, x):
        batch, length, _ = x.shape
        cfg = self.config
        return ad.permute(ad.reshape(x, (batch, length, cfg.heads, cfg.d_k)), (0, 2, 1, 3))

    def _merge_heads(self, x):
        batch, _, length, _ = x.shape
        return ad.reshape(ad.permute(x, (0, 2, 1, 3)), (batch, length, self.config.d_model))

    def _multi_head(self, prefix, x_q, x_kv, bias, mask, relative):
        p = self.params
        q = self._split_heads(ad.matmul(x_q, p[prefix + 'w_q']))
        k = self._split_heads(ad.matmul(x_kv, p[prefix + 'w_k']))
        v = self._split_heads(ad.matmul(x_kv, p[prefix + 'w_v']))
        rel = None
        if relative and self.config.relative_positions:
            rel = relative_position_logits(q, p[prefix + 'rel_k'], self.config.max_relative_distance, k.shape[-2])
        heads = attention(q, k, v, bias=bias, mask=mask, rel_logits=rel)
        return ad.matmul(self._merge_heads(heads), p[prefix + 'w_o'])

    def _norm(self, prefix, x):
        return ad.layer_norm(x, self.params[prefix + 'gain'], self.params[prefix + 'bias'])

    def _feed_forward(self, prefix, x):
        p = self.params
        hidden = ad.relu(ad.add(ad.matmul(x, p[prefix + 'w1']), p[prefix + 'b1']))
        return ad.add(ad.matmul(hidden, p[prefix + 'w2']), p[prefix + 'b2'])

    def _embed(self, ids):
        scaled = ad.scale(ad.embedding_lookup(self.params['embedding'], ids), math.sqrt(self.config.d_model))
        return self._dropout(scaled)

    # the model proper

    def encode(self, src_ids, bundle):
        """
        Product token ids to contextual representations.

        :param src_ids: int array, (B, T_x), PAD_ID-padded
        :param bundle: AttentionBiasBundle
        :return: Tensor, (B, T_x, d_model)
        """
        src_ids = np.asarray(src_ids, dtype=np.int64)
        if src_ids.ndim != 2 or src_ids.shape[0] == 0 or src_ids.shape[1] == 0:
            raise EmptyInput('encode needs a non-empty (batch, length) id array, got shape %s' % (src_ids.shape,))
        cfg = self.config
        mask = bundle.src_pad[:, None, None, :]
        bias = None
        if cfg.bias_mode != IntraBiasMode.Off and bundle.intra is not None:
            bias = (cfg.lambda_intra * bundle.intra)[:, None, :, :]

        x = self._embed(src_ids)
        for layer in range(cfg.layers_enc):
            p = 'enc.%d.' % layer
            normed = self._norm(p + 'ln1.', x)
            x = ad.add(x, self._dropout(self._multi_head(p + 'self.', normed, normed, bias, mask, True)))
            x = ad.add(x, self._dropout(self._feed_forward(p + 'ff.', self._norm(p + 'ln2.', x))))
        return self._norm('enc.ln.', x)

    def decode(self, memory, tgt_in_ids, bundle):
        """
        Teacher-forced decoder pass: logits for the next token at every position.

        :param memory: Tensor, (B, T_x, d_model), from encode
        :param tgt_in_ids: int array, (B, T_y), starting with BOS
        :param bundle: AttentionBiasBundle
        :return: Tensor, (B, T_y, vocab_size)
        """
        tgt_in_ids = np.asarray(tgt_in_ids, dtype=np.int64)
        if tgt_in_ids.ndim != 2 or tgt_in_ids.shape[0] != memory.shape[0]:
            raise ShapeMismatch('decoder ids %s against memory %s' % (tgt_in_ids.shape, memory.shape))
        cfg = self.config
        length = tgt_in_ids.shape[1]
        self_mask = AttentionBiasBundle.causal_mask(length)[None, None, :, :]
        if bundle.tgt_pad is not None:
            self_mask = self_mask | bundle.tgt_pad[:, None, None, :]
        cross_mask = bundle.src_pad[:, None, None, :]
        cross_bias = None
        if bundle.cross is not None:
            if bundle.cross.shape[1] != length:
                raise ShapeMismatch('cross bias %s against %d decoder positions' % (bundle.cross.shape, length))
            cross_bias = (cfg.lambda_cross * bundle.cross)[:, None, :, :]

        y = self._embed(tgt_in_ids)
        for layer in range(cfg.layers_dec):
            p = 'dec.%d.' % layer
            normed = self._norm(p + 'ln1.', y)
            y = ad.add(y, self._dropout(self._multi_head(p + 'self.', normed, normed, None, self_mask, True)))
            y = ad.add(y, self._dropout(self._multi_head(p + 'cross.', self._norm(p + 'ln2.', y), memory,
                                                         cross_bias, cross_mask, False)))
            y = ad.add(y, self._dropout(self._feed_forward(p + 'ff.', self._norm(p + 'ln3.', y))))
        y = self._norm('dec.ln.', y)
        return ad.matmul(y, ad.transpose_last2(self.params['embedding']))

    def decode_step(self, memory, y_prefix, bundle):
        """
        Logits for the token after y_prefix: p(y_t | y_<t, x) before the softmax.

        :param memory: Tensor, (B, T_x, d_model)
        :param y_prefix: int array, (B, t), starting with BOS
        :param bundle: AttentionBiasBundle
        :return: Tensor, (B, vocab_size)
        """
        y_prefix = np.asarray(y_prefix, dtype=np.int64)
        if y_prefix.ndim != 2 or y_prefix.shape[1] == 0:
            raise ShapeMismatch('decode_step needs a non-empty prefix, got shape %s' % (y_prefix.shape,))
        logits = self.decode(memory, y_prefix, bundle)
        return last_position(logits)


def last_position(logits):
    """(B, T, V) -> (B, V), the final position of every row."""
    batch, length, vocab = logits.shape
    picked = ad.reshape(logits, (batch * length, vocab))
    index = np.arange(batch) * length + (length - 1)
    return ad.embedding_lookup(picked, index)


def pad_ids(sequences, length=None):
    """
    :param sequences: list of 1-D int arrays
    :param length: int, pad to this length (defaults to the longest)
    :return: (int array (B, T) padded with PAD_ID, bool array (B, T) True at padding)
    """
    length = length or max(len(s) for s in sequences)
    ids = np.full((len(sequences), length), PAD_ID, dtype=np.int64)
    for row, seq in enumerate(sequences):
        ids[row, :len(seq)] = seq
    return ids, ids == PAD_ID
