from typing import Iterable

from clada.core.constants import BOS_ID, BYTE_VOCAB, EOS_ID, N_SPECIALS
from clada.core.exceptions import TokenRangeError


class ByteTokenizer:
    """Byte-level tokenizer: ids 0-255 are byte values, 256 and 257 are BOS/EOS.

    `encode` never produces a special; `decode` drops them.
    """

    SPECIALS = (BOS_ID, EOS_ID)

    def __init__(self, vocab_size: int = BYTE_VOCAB + N_SPECIALS):
        self.vocab_size = vocab_size

    def encode(self, text: bytes | str) -> list[int]:
        if isinstance(text, str):
            text = text.encode("utf-8")
        return list(text)

    def decode(self, ids: Iterable[int]) -> bytes:
        out = bytearray()
        for token in ids:
            token = int(token)
            if not 0 <= token < self.vocab_size:
                raise TokenRangeError(f"token id {token} outside vocabulary of size {self.vocab_size}")
            if token < BYTE_VOCAB:
                out.append(token)
        return bytes(out)


def tokenize(text: bytes | str) -> list[int]:
    return ByteTokenizer().encode(text)


def detokenize(ids: Iterable[int], vocab_size: int = BYTE_VOCAB + N_SPECIALS) -> bytes:
    return ByteTokenizer(vocab_size).decode(ids)
