from .tokens import Tokenizer, split_words
from .normalize import normalize

__all__ = ["Tokenizer", "split_words", "normalize"]
