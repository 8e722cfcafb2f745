"""Caption cleaning: proper-noun heavy captions and non-Italian captions.

Both filters return a ``FilterResult(kept, removed)`` and are idempotent.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, replace
from importlib import resources
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

from clipita.data.manifest import CaptionRecord

PROPN = "PROPN"
DEFAULT_PROPN_THRESHOLD = 0.8
UNDETERMINED = "und"
MIN_RELIABLE_CHARS = 20

_WORD_RE = re.compile(r"\w+", re.UNICODE)

# small closed-class word lists; everything else that is not a proper noun is NOUN
DETERMINERS = frozenset(
    "il lo la i gli le l un uno una un' questo questa questi queste quel quello quella "
    "quei quegli quelle del dello della dei degli delle".split()
)
PREPOSITIONS = frozenset(
    "di a da in con su per tra fra al allo alla ai agli alle dal dallo dalla dai dagli "
    "dalle nel nello nella nei negli nelle sul sullo sulla sui sugli sulle col".split()
)
CONJUNCTIONS = frozenset("e ed o ma che".split())

GIVEN_NAMES = frozenset(
    """
    Alessandro Alessandra Andrea Angela Anna Antonio Beatrice Carlo Chiara Claudia Cristina
    Daniele Davide Dora Elena Elisa Emma Enrico Federico Francesca Francesco Giacomo Giorgio
    Giovanni Giulia Giuseppe Laura Leonardo Lorenzo Luca Lucia Luigi Marco Maria Mario Martina
    Matteo Michele Paola Paolo Pietro Roberto Sara Silvia Simone Sofia Stefano Valentina Vittorio
    George James Joey John Kim Mary Michael Ralph Robert William
    """.split()
)


class UntaggedRecordError(ValueError):
    pass


class FilterResult(NamedTuple):
    kept: list[CaptionRecord]
    removed: list[CaptionRecord]

    @property
    def removed_fraction(self) -> float:
        total = len(self.kept) + len(self.removed)
        return len(self.removed) / total if total else 0.0


# ------------------------------------------------------------------- PROPN

def heuristic_pos_tag(caption: str) -> list[str]:
    """Very small rule-based tagger, one tag per word token.

    A capitalised word is PROPN unless it opens the caption and is not a
    known given name; closed-class words get DET/ADP/CCONJ; the rest NOUN.
    """
    tags = []
    for i, word in enumerate(_WORD_RE.findall(caption)):
        low = word.lower()
        if low in DETERMINERS:
            tags.append("DET")
        elif low in PREPOSITIONS:
            tags.append("ADP")
        elif low in CONJUNCTIONS:
            tags.append("CCONJ")
        elif word[0].isupper() and (i > 0 or word in GIVEN_NAMES):
            tags.append(PROPN)
        else:
            tags.append("NOUN")
    return tags


def propn_fraction(tags: Sequence[str]) -> float:
    if not tags:
        raise ValueError("propn_fraction needs a non-empty tag list")
    return sum(1 for t in tags if t == PROPN) / len(tags)


def filter_propn(records: Iterable[CaptionRecord], threshold: float = DEFAULT_PROPN_THRESHOLD,
                 tagger: Callable[[str], list[str]] | None = heuristic_pos_tag) -> FilterResult:
    """Drop captions whose PROPN fraction is ``>= threshold``.

    Records carrying ``pos_tags`` are used as is; others are tagged with
    ``tagger`` (pass ``None`` to require pre-tagged input).
    """
    kept, removed = [], []
    for rec in records:
        tags = rec.pos_tags
        if tags is None:
            if tagger is None:
                raise UntaggedRecordError(f"record {rec.id!r} has no pos_tags and no tagger is enabled")
            tags = tagger(rec.caption)
        if tags and propn_fraction(tags) >= threshold:
            removed.append(rec)
        else:
            kept.append(rec)
    return FilterResult(kept, removed)


# -------------------------------------------------------- language profile

def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def trigram_counts(text: str) -> Counter:
    t = normalize_text(text)
    if not t:
        return Counter()
    t = f" {t} "
    return Counter(t[i:i + 3] for i in range(len(t) - 2))


@dataclass(frozen=True)
class LanguageProfile:
    lang: str
    freqs: Mapping[str, float]
    norm: float

    @classmethod
    def from_text(cls, lang: str, text: str) -> "LanguageProfile":
        counts = trigram_counts(text)
        total = sum(counts.values())
        if not total:
            raise ValueError(f"seed text for {lang!r} is empty")
        freqs = {g: c / total for g, c in counts.items()}
        return cls(lang, freqs, math.sqrt(sum(f * f for f in freqs.values())))


def bundled_profiles() -> dict[str, LanguageProfile]:
    """Profiles for Italian and English built from the packaged seed texts."""
    base = resources.files("clipita.data") / "profiles"
    return {lang: LanguageProfile.from_text(lang, (base / f"{lang}.txt").read_text(encoding="utf-8"))
            for lang in ("en", "it")}


@dataclass(frozen=True)
class LanguageGuess:
    lang: str
    score: float
    low_confidence: bool


def detect_language(caption: str, profiles: Mapping[str, LanguageProfile]) -> LanguageGuess:
    """Cosine similarity of character trigrams against each profile.

    Ties go to the alphabetically first language code. Captions shorter than
    20 characters (after whitespace normalisation) are flagged low-confidence.
    """
    counts = trigram_counts(caption)
    if not counts:
        return LanguageGuess(UNDETERMINED, 0.0, True)
    norm = math.sqrt(sum(c * c for c in counts.values()))
    best_lang, best = UNDETERMINED, -1.0
    for lang in sorted(profiles):
        prof = profiles[lang]
        dot = sum(c * prof.freqs.get(g, 0.0) for g, c in counts.items())
        score = dot / (norm * prof.norm)
        if score > best:
            best_lang, best = lang, score
    low = len(normalize_text(caption)) < MIN_RELIABLE_CHARS
    return LanguageGuess(best_lang, best, low)


def filter_non_italian(records: Iterable[CaptionRecord], profiles: Mapping[str, LanguageProfile],
                       min_score: float = 0.0) -> FilterResult:
    """Keep records detected as Italian with score ``>= min_score``.

    Kept records get their ``lang`` field set to ``"it"``.
    """
    kept, removed = [], []
    for rec in records:
        guess = detect_language(rec.caption, profiles)
        if guess.lang == "it" and guess.score >= min_score:
            kept.append(rec if rec.lang == "it" else replace(rec, lang="it"))
        else:
            removed.append(rec)
    return FilterResult(kept, removed)
