"""
Binary checkpoints: everything needed to rebuild a trained model.

Layout, little-endian throughout:
    magic           8 bytes, b'RETROGPT'
    version         uint32
    config block    uint32 length, then UTF-8 "key = value" lines, one per ModelConfig field
    vocabulary      uint32 count, then per token: uint16 length, UTF-8 text
    parameters      uint32 count, then per tensor: uint16 name length, name, uint8 rank, rank x uint32 dims,
                    the values as raw float64

Floats go out as raw bytes, so save -> load is bit-exact.
"""

import io
import struct
import logging
import numpy as np
from helpers import helpers
from helpers.errors import DataError, RuntimeFailure
from model import autodiff as ad
from model.transformer import ModelConfig, ModelParams, Transformer
from preprocess.priors import IntraBiasMode
from preprocess.vocab import Vocabulary

logger = logging.getLogger(__name__)

MAGIC = b'RETROGPT'
FORMAT_VERSION = 1


class CheckpointFormatError(DataError):
    """The file is not a checkpoint, is truncated, or disagrees with its own config."""


class CheckpointWriteFailure(RuntimeFailure):
    """The checkpoint could not be written."""


def config_text(cfg):
    lines = []
    for key, value in helpers.config_to_dict(cfg).items():
        if isinstance(value, list):
            value = ','.join(repr(float(v)) for v in value)
        lines.append('%s = %s' % (key, value))
    return '\n'.join(lines) + '\n'


def parse_config_text(text):
    pairs = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            key, value = line.split('=', 1)
            pairs.append((key.strip(), value.strip(), line_no))
    [cfg] = helpers.apply_config(pairs, [ModelConfig()], enum_types={'bias_mode': IntraBiasMode})
    return cfg


def _block(payload):
    return struct.pack('<I', len(payload)) + payload


def to_bytes(model, vocab):
    """
    :param model: Transformer
    :param vocab: Vocabulary
    :return: bytes
    """
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack('<I', FORMAT_VERSION))
    out.write(_block(config_text(model.config).encode('utf-8')))

    out.write(struct.pack('<I', len(vocab)))
    for token in vocab.tokens:
        encoded = token.encode('utf-8')
        out.write(struct.pack('<H', len(encoded)) + encoded)

    out.write(struct.pack('<I', len(model.params)))
    for name, tensor in model.params:
        encoded = name.encode('utf-8')
        out.write(struct.pack('<H', len(encoded)) + encoded)
        out.write(struct.pack('<B', tensor.data.ndim))
        out.write(struct.pack('<%dI' % tensor.data.ndim, *tensor.data.shape))
        out.write(np.ascontiguousarray(tensor.data, dtype='<f8').tobytes())
    return out.getvalue()


def save(path, model, vocab):
    """
    Write the checkpoint atomically.

    :param path: str
    :param model: Transformer
    :param vocab: Vocabulary
    :return: str, the path written
    """
    try:
        helpers.write_atomically(path, to_bytes(model, vocab))
    except RuntimeFailure as err:
        raise CheckpointWriteFailure(str(err))
    logger.debug('checkpoint written to %s', path)
    return path


class _Reader:

    def __init__(self, payload):
        self.payload = payload
        self.offset = 0

    def take(self, n_bytes):
        if self.offset + n_bytes > len(self.payload):
            raise CheckpointFormatError('checkpoint truncated at byte %d' % self.offset)
        chunk = self.payload[self.offset:self.offset + n_bytes]
        self.offset += n_bytes
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self, length_fmt):
        (length,) = self.unpack(length_fmt)
        return self.take(length).decode('utf-8')


def from_bytes(payload):
    """
    :param payload: bytes
    :return: (Transformer, Vocabulary)
    """
    reader = _Reader(payload)
    if reader.take(len(MAGIC)) != MAGIC:
        raise CheckpointFormatError('not a checkpoint: bad magic bytes')
    (version,) = reader.unpack('<I')
    if version != FORMAT_VERSION:
        raise CheckpointFormatError('checkpoint format version %d, expected %d' % (version, FORMAT_VERSION))
    cfg = parse_config_text(reader.text('<I'))

    (n_tokens,) = reader.unpack('<I')
    vocab = Vocabulary([reader.text('<H') for _ in range(n_tokens)])
    if len(vocab) != cfg.vocab_size:
        raise CheckpointFormatError('vocabulary of %d tokens, config says %d' % (len(vocab), cfg.vocab_size))

    expected = ModelParams.shapes(cfg)
    tensors = {}
    (n_params,) = reader.unpack('<I')
    for _ in range(n_params):
        name = reader.text('<H')
        (rank,) = reader.unpack('<B')
        shape = reader.unpack('<%dI' % rank)
        if expected.get(name) != tuple(shape):
            raise CheckpointFormatError('parameter %s has shape %s, config expects %s'
                                        % (name, shape, expected.get(name)))
        n_bytes = 8 * int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(reader.take(n_bytes), dtype='<f8').reshape(shape).astype(np.float64)
        tensors[name] = ad.tensor(data, requires_grad=True)
    if set(tensors) != set(expected):
        raise CheckpointFormatError('missing parameters: %s' % sorted(set(expected) - set(tensors)))
    params = ModelParams((name, tensors[name]) for name in expected)
    return Transformer(cfg, params), vocab


def load(path):
    """
    :param path: str
    :return: (Transformer, Vocabulary)
    """
    try:
        with open(path, 'rb') as in_f:
            payload = in_f.read()
    except OSError as err:
        raise CheckpointFormatError('cannot read checkpoint %s: %s' % (path, err))
    return from_bytes(payload)
