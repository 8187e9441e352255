"""Stage-1 difficulty scoring: script classification and the five-signal composite.

Works on raw transcripts (metric-side normalization is deliberately not
applied here): tokens are whitespace-split, characters are classed as
Arabic-block, ASCII Latin, or other, and five surface signals are combined
into a weighted composite in [0, 10]. For Latin-only language pairs the two
script signals are structurally zero and the composite lives in [0, 4].
"""

from __future__ import annotations

import enum
import re
import unicodedata
from dataclasses import dataclass

TATWEEL = "ـ"

MIX_WEIGHT = 0.30
ALT_WEIGHT = 0.30
MORPH_WEIGHT = 0.20
LEN_WEIGHT = 0.10
VOCAB_WEIGHT = 0.10

MIX_PIVOT = 0.35  # script-mix ratio that saturates h_mix
MORPH_CAP = 3  # blend hits that saturate h_morph
LEN_FLOOR = 5  # below this token count h_len is 0
LEN_SPAN = 20  # tokens beyond the floor that saturate h_len
VOCAB_PIVOT = 0.7  # type-token ratio that saturates h_vocab


class HeuristicError(ValueError):
    """Invalid signal inputs or transcript."""


class CharScript(enum.Enum):
    ARABIC = "arabic"
    LATIN = "latin"
    OTHER = "other"


class TokenScript(enum.Enum):
    ARABIC = "arabic"
    LATIN = "latin"
    MIXED = "mixed"
    OTHER = "other"


def classify_char(ch: str) -> CharScript:
    """Class a single character: Arabic block U+0600-U+06FF vs ASCII A-Z/a-z.

    Digits, punctuation, and the tatweel joiner count as other even inside
    the Arabic block, so they never enter the mix-ratio denominator.
    """
    if ("a" <= ch <= "z") or ("A" <= ch <= "Z"):
        return CharScript.LATIN
    code = ord(ch)
    if 0x0600 <= code <= 0x06FF:
        if ch == TATWEEL:
            return CharScript.OTHER
        category = unicodedata.category(ch)
        if category.startswith("P") or category == "Nd":
            return CharScript.OTHER
        return CharScript.ARABIC
    return CharScript.OTHER


def classify_token(token: str) -> TokenScript:
    """Majority character class wins; equal nonzero counts are mixed."""
    if not token:
        raise HeuristicError("cannot classify an empty token")
    arabic = latin = 0
    for ch in token:
        cls = classify_char(ch)
        if cls is CharScript.ARABIC:
            arabic += 1
        elif cls is CharScript.LATIN:
            latin += 1
    if arabic == 0 and latin == 0:
        return TokenScript.OTHER
    if arabic > latin:
        return TokenScript.ARABIC
    if latin > arabic:
        return TokenScript.LATIN
    return TokenScript.MIXED


@dataclass(frozen=True)
class MorphRules:
    """Pattern families for cross-language morphological blends.

    Three families: an Arabic definite article directly prefixing Latin
    letters, a Latin stem carrying an Arabic suffix, and a Latin stem from a
    known English list carrying a German derivational suffix. Loadable from a
    config file with one `family<TAB>pattern` line each (families:
    arabic-prefix, arabic-suffix, german-suffix, english-stem; `#` comments).
    """

    arabic_prefixes: tuple[str, ...] = ("ال",)  # ال
    arabic_suffixes: tuple[str, ...] = ("ين", "ات")  # ين ات
    german_suffixes: tuple[str, ...] = ("ung", "en")
    english_stems: frozenset[str] = frozenset(
        {
            "backup", "brainstorm", "chat", "check", "code", "deploy", "design",
            "download", "google", "like", "login", "mail", "post", "push",
            "release", "setup", "share", "ship", "startup", "stream", "test",
            "update", "upload",
        }
    )

    @classmethod
    def from_file(cls, path: str) -> "MorphRules":
        prefixes: list[str] = []
        suffixes: list[str] = []
        german: list[str] = []
        stems: set[str] = set()
        families = {
            "arabic-prefix": prefixes,
            "arabic-suffix": suffixes,
            "german-suffix": german,
        }
        with open(path, "r", encoding="utf-8") as handle:
            for number, line in enumerate(handle, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise HeuristicError(
                        f"{path}: line {number}: expected `family<TAB>pattern`"
                    )
                family, pattern = parts
                if family == "english-stem":
                    stems.add(pattern.lower())
                elif family in families:
                    families[family].append(pattern)
                else:
                    raise HeuristicError(f"{path}: line {number}: unknown family {family!r}")
        return cls(
            arabic_prefixes=tuple(prefixes),
            arabic_suffixes=tuple(suffixes),
            german_suffixes=tuple(german),
            english_stems=frozenset(stems),
        )

    def _prefix_regex(self) -> re.Pattern | None:
        if not self.arabic_prefixes:
            return None
        alternatives = "|".join(re.escape(p) for p in self.arabic_prefixes)
        return re.compile(f"(?:{alternatives}){TATWEEL}*[A-Za-z]")

    def _suffix_regex(self) -> re.Pattern | None:
        if not self.arabic_suffixes:
            return None
        alternatives = "|".join(re.escape(s) for s in self.arabic_suffixes)
        return re.compile(f"[A-Za-z][-{TATWEEL}]?(?:{alternatives})")

    def count_hits(self, text: str) -> int:
        hits = 0
        prefix_re = self._prefix_regex()
        if prefix_re is not None:
            hits += len(prefix_re.findall(text))
        suffix_re = self._suffix_regex()
        if suffix_re is not None:
            hits += len(suffix_re.findall(text))
        if self.german_suffixes and self.english_stems:
            suffix_alt = "|".join(re.escape(s) for s in self.german_suffixes)
            token_re = re.compile(f"^([A-Za-z]+?)-?(?:{suffix_alt})$", re.IGNORECASE)
            for token in text.split():
                match = token_re.match(token)
                if match and match.group(1).lower() in self.english_stems:
                    hits += 1
        return hits


DEFAULT_RULES = MorphRules()


@dataclass(frozen=True)
class SignalInputs:
    """Raw counts feeding the five signals."""

    n: int  # token count
    n_a: int  # Arabic-class character count
    n_l: int  # Latin-class character count
    m: float  # script-mix ratio min(n_a, n_l) / (n_a + n_l)
    k: int  # adjacent Arabic<->Latin token switches
    b: int  # morphological blend hits
    ttr: float  # unique tokens / n

    def __post_init__(self) -> None:
        if self.n < 1:
            raise HeuristicError("token count must be >= 1")
        if min(self.n_a, self.n_l, self.k, self.b) < 0:
            raise HeuristicError("counts must be non-negative")
        if not 0 <= self.k <= self.n - 1:
            raise HeuristicError(f"switch count {self.k} outside [0, n-1]")
        if not 0 < self.ttr <= 1:
            raise HeuristicError(f"type-token ratio {self.ttr} outside (0, 1]")
        total = self.n_a + self.n_l
        expected = min(self.n_a, self.n_l) / total if total else 0.0
        if abs(self.m - expected) > 1e-9:
            raise HeuristicError(f"mix ratio {self.m} inconsistent with counts")


@dataclass(frozen=True)
class HScoreBreakdown:
    inputs: SignalInputs
    h_mix: float
    h_alt: float
    h_morph: float
    h_len: float
    h_vocab: float
    composite: float
    degenerate_latin_pair: bool = False

    def __post_init__(self) -> None:
        for name in ("h_mix", "h_alt", "h_morph", "h_len", "h_vocab", "composite"):
            value = getattr(self, name)
            if not 0 <= value <= 10:
                raise HeuristicError(f"{name}={value} outside [0, 10]")
        expected = composite(self.h_mix, self.h_alt, self.h_morph, self.h_len, self.h_vocab)
        if abs(self.composite - expected) > 1e-9:
            raise HeuristicError("composite does not match the weighted signal sum")
        if self.degenerate_latin_pair and (self.h_mix != 0 or self.h_alt != 0):
            raise HeuristicError("latin-only pair must have zero script signals")


def composite(h_mix: float, h_alt: float, h_morph: float, h_len: float, h_vocab: float) -> float:
    """Weighted combination of the five signals."""
    return (
        MIX_WEIGHT * h_mix
        + ALT_WEIGHT * h_alt
        + MORPH_WEIGHT * h_morph
        + LEN_WEIGHT * h_len
        + VOCAB_WEIGHT * h_vocab
    )


def extract_signals(transcript: str, rules: MorphRules = DEFAULT_RULES) -> SignalInputs:
    """Count the raw signal inputs over an unnormalized transcript.

    Tokens split on Unicode whitespace; character counts range over the whole
    string. A switch is an adjacent token pair where one token is Arabic-class
    and the other Latin-class (mixed/other tokens never switch).
    """
    tokens = transcript.split()
    if not tokens:
        raise HeuristicError("transcript has no tokens")
    n_a = n_l = 0
    for ch in transcript:
        cls = classify_char(ch)
        if cls is CharScript.ARABIC:
            n_a += 1
        elif cls is CharScript.LATIN:
            n_l += 1
    total = n_a + n_l
    m = min(n_a, n_l) / total if total else 0.0
    classes = [classify_token(t) for t in tokens]
    switching = {TokenScript.ARABIC, TokenScript.LATIN}
    k = sum(
        1
        for left, right in zip(classes, classes[1:])
        if left is not right and left in switching and right in switching
    )
    return SignalInputs(
        n=len(tokens),
        n_a=n_a,
        n_l=n_l,
        m=m,
        k=k,
        b=rules.count_hits(transcript),
        ttr=len(set(tokens)) / len(tokens),
    )


def compute_hscore(inputs: SignalInputs, degenerate_latin_pair: bool = False) -> HScoreBreakdown:
    """Turn raw signal inputs into the five signals and their composite.

    For a Latin-only pair the script signals are forced to zero, compressing
    the composite range to [0, 4].
    """
    h_mix = min(inputs.m / MIX_PIVOT, 1.0) * 10
    h_alt = min(inputs.k / (inputs.n / 2), 1.0) * 10
    h_morph = min(inputs.b / MORPH_CAP, 1.0) * 10
    h_len = 0.0 if inputs.n < LEN_FLOOR else min((inputs.n - LEN_FLOOR) / LEN_SPAN, 1.0) * 10
    h_vocab = min(inputs.ttr / VOCAB_PIVOT, 1.0) * 10
    if degenerate_latin_pair:
        h_mix = 0.0
        h_alt = 0.0
    return HScoreBreakdown(
        inputs=inputs,
        h_mix=h_mix,
        h_alt=h_alt,
        h_morph=h_morph,
        h_len=h_len,
        h_vocab=h_vocab,
        composite=composite(h_mix, h_alt, h_morph, h_len, h_vocab),
        degenerate_latin_pair=degenerate_latin_pair,
    )


def score_dataset(dataset, rules: MorphRules = DEFAULT_RULES):
    """Score every sample, preserving dataset order.

    The degenerate Latin-pair flag is set automatically from the dataset's
    language pair.
    """
    degenerate = dataset.pair.latin_only
    return [
        (sample.id, compute_hscore(extract_signals(sample.transcript, rules), degenerate))
        for sample in dataset
    ]


SCORE_HEADER = ["sample_id", "h_mix", "h_alt", "h_morph", "h_len", "h_vocab", "H"]


@dataclass(frozen=True)
class ScoreRow:
    """One line of a score file (breakdown without the raw inputs)."""

    sample_id: str
    h_mix: float
    h_alt: float
    h_morph: float
    h_len: float
    h_vocab: float
    composite: float


def write_scores(path: str, scored: list[tuple[str, HScoreBreakdown]]) -> None:
    from .corpus import escape_field, write_atomic

    lines = ["\t".join(SCORE_HEADER)]
    for sample_id, b in scored:
        values = (b.h_mix, b.h_alt, b.h_morph, b.h_len, b.h_vocab, b.composite)
        lines.append("\t".join([escape_field(sample_id)] + [repr(v) for v in values]))
    write_atomic(path, "\n".join(lines) + "\n")


def load_scores(path: str) -> list[ScoreRow]:
    from .corpus import _read_rows

    rows = []
    for _number, fields in _read_rows(path, SCORE_HEADER):
        rows.append(ScoreRow(fields[0], *(float(v) for v in fields[1:])))
    return rows
