import unicodedata

REPLACEMENTS = {
    "‘": "'",
    "’": "'",
    "“": '"',
    "”": '"',
}


def strip_accents(text):
    decomposed = unicodedata.normalize("NFKD", text)
    return "".join(c for c in decomposed if not unicodedata.combining(c))


def normalize(text, accents=False):
    for src, dst in REPLACEMENTS.items():
        text = text.replace(src, dst)
    if not accents:
        text = strip_accents(text)
    return " ".join(text.split())


class Normalizer:
    def __init__(self, steps=None):
        self.steps = list(steps or [normalize])

    def __call__(self, text):
        for step in self.steps:
            text = step(text)
        return text

    def add(self, step):
        self.steps.append(step)
        return self
