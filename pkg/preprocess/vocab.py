"""
Token vocabulary shared by encoder and decoder: four special tokens, then the training split's token texts in sorted
order. Frozen into every checkpoint.
"""

import logging
import numpy as np

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = '<pad>', '<bos>', '<eos>', '<unk>'
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


class Vocabulary:

    def __init__(self, tokens):
        """
        :param tokens: list of str, the full vocabulary with the four specials first
        """
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError('vocabulary must start with %s' % (SPECIALS,))
        self.tokens = list(tokens)
        self.index = {tok: idx for idx, tok in enumerate(self.tokens)}
        self.unknown_seen = 0

    @classmethod
    def build(cls, token_texts):
        """
        :param token_texts: iterable of str, every token text seen in the training split
        :return: Vocabulary
        """
        return cls(list(SPECIALS) + sorted(set(token_texts) - set(SPECIALS)))

    def __len__(self):
        return len(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def encode(self, texts):
        """
        Token texts to ids; texts never seen in training map to UNK.

        :param texts: list of str
        :return: np.ndarray of int64
        """
        ids = [self.index.get(text, UNK_ID) for text in texts]
        unknown = ids.count(UNK_ID)
        if unknown:
            self.unknown_seen += unknown
            logger.warning('%d TOKEN(S) NOT IN VOCABULARY, MAPPED TO %s: %s', unknown, UNK,
                           [t for t in texts if t not in self.index])
        return np.array(ids, dtype=np.int64)

    def decode(self, ids):
        """
        Ids to token texts, stopping at EOS and skipping the other specials.

        :param ids: iterable of int
        :return: list of str
        """
        texts = []
        for idx in ids:
            idx = int(idx)
            if idx == EOS_ID:
                break
            if idx in (PAD_ID, BOS_ID):
                continue
            texts.append(self.tokens[idx])
        return texts
