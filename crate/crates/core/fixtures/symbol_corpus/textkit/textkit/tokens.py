"""Whitespace and punctuation tokenization."""

import re
from dataclasses import dataclass, field

_WORD = re.compile(r"\w+|[^\w\s]")


def split_words(text):
    return _WORD.findall(text)


@dataclass
class Token:
    text: str
    start: int
    end: int = field(default=0)

    def __len__(self):
        return self.end - self.start


class Tokenizer:
    """Stateful tokenizer that remembers the vocabulary it has seen."""

    def __init__(self, lowercase=True):
        self.lowercase = lowercase
        self.vocab = {}

    def tokenize(self, text):
        if self.lowercase:
            text = text.lower()
        tokens = []
        for m in _WORD.finditer(text):
            tokens.append(Token(m.group(0), m.start(), m.end()))
            self._observe(m.group(0))
        return tokens

    def _observe(self, word):
        self.vocab[word] = self.vocab.get(word, 0) + 1

    @property
    def size(self):
        return len(self.vocab)

    @staticmethod
    def join(tokens):
        return " ".join(t.text for t in tokens)


def count_tokens(text, tokenizer=None):
    tokenizer = tokenizer or Tokenizer()

    def _len(tokens):
        return sum(1 for _ in tokens)

    return _len(tokenizer.tokenize(text))
