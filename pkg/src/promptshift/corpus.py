"""Datasets: JSONL ingestion, synthetic domain-shift corpora, vocab, splits."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, asdict
from typing import Iterable

import numpy as np

from .seeding import stream_rng

LABELS = ("positive", "negative")

CLS, SEP, MASK, PAD, UNK = "[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]"
SPECIAL_TOKENS = (CLS, SEP, MASK, PAD, UNK)
CLS_ID, SEP_ID, MASK_ID, PAD_ID, UNK_ID = range(5)

DEFAULT_VERBALIZER = {"positive": "great", "negative": "bad"}

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class CorpusError(ValueError):
    pass


@dataclass
class Example:
    text: str
    label: str | None
    domain: str

    def __post_init__(self):
        if self.label is not None and self.label not in LABELS:
            raise CorpusError(f"unknown label {self.label!r}")


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace-plus-punctuation split; no subwords."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: Iterable[str]) -> str:
    return " ".join(tokens)


class Vocabulary:
    """token<->id map with fixed special ids 0..4 and a label verbalizer."""

    def __init__(self, tokens: list[str], verbalizer: dict[str, str],
                 counts: dict[str, int] | None = None):
        if tokens[:5] != list(SPECIAL_TOKENS):
            raise CorpusError("special tokens must occupy ids 0-4 in fixed order")
        self.id_to_token = list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            raise CorpusError("duplicate tokens in vocabulary")
        self.counts = dict(counts or {})
        if set(verbalizer) != set(LABELS):
            raise CorpusError(f"verbalizer must map exactly {LABELS}")
        if len(set(verbalizer.values())) != len(LABELS):
            raise CorpusError("verbalizer words must be distinct per label")
        for word in verbalizer.values():
            if word not in self.token_to_id:
                raise CorpusError(f"verbalizer word {word!r} missing from vocabulary")
        self.verbalizer_words = dict(verbalizer)
        self.verbalizer = {label: self.token_to_id[w] for label, w in verbalizer.items()}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def verbalizer_ids(self) -> tuple[int, int]:
        """Token ids for (positive, negative)."""
        return self.verbalizer["positive"], self.verbalizer["negative"]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.token_to_id, fh, ensure_ascii=False, indent=0)

    @classmethod
    def load(cls, path, verbalizer: dict[str, str]) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            token_to_id = json.load(fh)
        tokens = [None] * len(token_to_id)
        for t, i in token_to_id.items():
            tokens[i] = t
        return cls(tokens, verbalizer)


def build_vocab(examples: Iterable[Example], verbalizer: dict[str, str],
                min_freq: int = 1, extra_tokens: Iterable[str] = ()) -> Vocabulary:
    """Specials + verbalizer words + extras + corpus tokens at/above min_freq."""
    for word in verbalizer.values():
        if word in SPECIAL_TOKENS:
            raise CorpusError(f"verbalizer word {word!r} collides with a special token")
    counts: dict[str, int] = {}
    for ex in examples:
        for tok in tokenize(ex.text):
            counts[tok] = counts.get(tok, 0) + 1
    tokens = list(SPECIAL_TOKENS)
    seen = set(tokens)
    for word in list(verbalizer.values()) + list(extra_tokens):
        if word not in seen:
            tokens.append(word)
            seen.add(word)
    for tok, n in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])):
        if n >= min_freq and tok not in seen:
            tokens.append(tok)
            seen.add(tok)
    return Vocabulary(tokens, verbalizer, counts=counts)


# ---------------------------------------------------------------------------
# JSONL ingestion
# ---------------------------------------------------------------------------

def load_jsonl(path) -> list[Example]:
    """One {"text", "label", "domain"} object per line, order preserved."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {i}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or not {"text", "label", "domain"} <= set(obj):
                raise CorpusError(f"{path}: line {i}: missing text/label/domain fields")
            label = obj["label"]
            if label is not None and label not in LABELS:
                raise CorpusError(f"{path}: line {i}: unknown label {label!r}")
            out.append(Example(text=str(obj["text"]), label=label, domain=str(obj["domain"])))
    return out


def save_jsonl(examples: Iterable[Example], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({"text": ex.text, "label": ex.label, "domain": ex.domain},
                                ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

@dataclass
class SplitDataset:
    train: list[Example]
    validation: list[Example]


def split(examples: list[Example], fraction: float = 0.20, seed: int = 0) -> SplitDataset:
    """Deterministic shuffled split, stratified by label for labeled data."""
    if not 0.0 < fraction < 1.0:
        raise CorpusError(f"fraction {fraction} outside (0, 1)")
    if len(examples) < 2:
        raise CorpusError("need at least 2 examples to split")
    rng = stream_rng(seed, "split")
    strata: dict[str | None, list[Example]] = {}
    for ex in examples:
        strata.setdefault(ex.label, []).append(ex)
    train: list[Example] = []
    validation: list[Example] = []
    for label in sorted(strata, key=str):
        group = strata[label]
        order = rng.permutation(len(group))
        n_val = int(round(fraction * len(group)))
        validation.extend(group[i] for i in order[:n_val])
        train.extend(group[i] for i in order[n_val:])
    rng.shuffle(train)
    rng.shuffle(validation)
    return SplitDataset(train=train, validation=validation)


def strip_labels(examples: Iterable[Example]) -> list[Example]:
    """Label-free view for anything the adaptation stage may touch."""
    return [Example(text=ex.text, label=None, domain=ex.domain) for ex in examples]


def merge_sources(per_domain: list[list[Example]], seed: int = 0) -> list[Example]:
    """Concatenate multiple source domains' labeled data and shuffle."""
    merged = [ex for group in per_domain for ex in group]
    stream_rng(seed, "merge-sources").shuffle(merged)
    return merged


# ---------------------------------------------------------------------------
# synthetic domain-shift corpus
# ---------------------------------------------------------------------------

_INVARIANT_POS = ["fantastic", "amazing", "wonderful", "excellent",
                  "superb", "delightful", "magnificent", "flawless"]
_INVARIANT_NEG = ["terrible", "awful", "horrible", "dreadful",
                  "lousy", "miserable", "atrocious", "abysmal"]
_AWARE_POS = {
    "A": ["upgradeable", "snappy", "rechargeable", "crisp",
          "seamless", "compact", "ergonomic", "backlit"],
    "B": ["nonstick", "ovenproof", "stackable", "rustproof",
          "heatproof", "dishwasher", "spacious", "insulated"],
    "C": ["gripping", "lyrical", "evocative", "insightful",
          "atmospheric", "readable", "poignant", "immersive"],
}
_AWARE_NEG = {
    "A": ["laggy", "glitchy", "unresponsive", "bulky",
          "flimsy", "overheating", "pixelated", "buggy"],
    "B": ["leaky", "rusty", "wobbly", "scratched",
          "dented", "stained", "brittle", "warped"],
    "C": ["rambling", "derivative", "preachy", "convoluted",
          "wooden", "plodding", "cliched", "overwritten"],
}
_NEUTRAL = [
    "the", "this", "that", "item", "product", "one", "unit", "thing",
    "with", "for", "and", "really", "quite", "very", "overall", "seems",
    "looks", "feels", "came", "box", "today", "after", "week", "month",
    "daily", "still", "also", "just", "got", "bought", "ordered", "arrived",
    "using", "tried", "since", "while", "though", "about", "around", "under",
    "over", "again", "once", "twice", "almost", "nearly", "mostly", "kind",
    "sort", "bit", "lot", "pretty", "rather", "truly", "simply", "basically",
    "honestly", "definitely", "probably", "maybe",
]


@dataclass
class SyntheticSpec:
    """Recipe for a controlled domain-shift corpus.

    Every sentence is neutral filler plus 1..k sentiment words whose shared
    polarity determines the label; each sentiment slot draws from the
    sentence's own domain-aware bank with probability p_aware, otherwise
    from the domain-invariant bank.
    """

    domains: tuple[str, ...] = ("A", "B")
    invariant_positive: list[str] = field(default_factory=lambda: list(_INVARIANT_POS))
    invariant_negative: list[str] = field(default_factory=lambda: list(_INVARIANT_NEG))
    aware_positive: dict[str, list[str]] = field(
        default_factory=lambda: {d: list(_AWARE_POS[d]) for d in ("A", "B")})
    aware_negative: dict[str, list[str]] = field(
        default_factory=lambda: {d: list(_AWARE_NEG[d]) for d in ("A", "B")})
    neutral: list[str] = field(default_factory=lambda: list(_NEUTRAL))
    length_range: tuple[int, int] = (5, 12)
    max_sentiment_words: int = 3
    p_aware: float = 0.7
    labeled_per_domain: int = 2000
    unlabeled_per_domain: int = 4000
    seed: int = 2024

    def __post_init__(self):
        if not 0.0 <= self.p_aware <= 1.0:
            raise CorpusError(f"p_aware {self.p_aware} outside [0, 1]")
        lo, hi = self.length_range
        if lo < 2 or hi < lo:
            raise CorpusError(f"bad sentence length range {self.length_range}")
        banks = [("neutral", self.neutral),
                 ("invariant-positive", self.invariant_positive),
                 ("invariant-negative", self.invariant_negative)]
        for d in self.domains:
            if d not in self.aware_positive or d not in self.aware_negative:
                raise CorpusError(f"missing domain-aware banks for domain {d!r}")
            banks.append((f"aware-positive[{d}]", self.aware_positive[d]))
            banks.append((f"aware-negative[{d}]", self.aware_negative[d]))
        for i, (name_a, a) in enumerate(banks):
            for name_b, b in banks[i + 1:]:
                overlap = set(a) & set(b)
                if overlap:
                    raise CorpusError(f"word banks {name_a} and {name_b} overlap: {sorted(overlap)}")
        if self.p_aware > 0 and any(
            not self.aware_positive[d] or not self.aware_negative[d] for d in self.domains
        ):
            raise CorpusError("p_aware > 0 requires non-empty domain-aware banks")
        if self.p_aware < 1 and (not self.invariant_positive or not self.invariant_negative):
            raise CorpusError("p_aware < 1 requires non-empty invariant banks")

    def sentiment_bank(self, domain: str, label: str, aware: bool) -> list[str]:
        if aware:
            return self.aware_positive[domain] if label == "positive" else self.aware_negative[domain]
        return self.invariant_positive if label == "positive" else self.invariant_negative

    def all_sentiment_words(self) -> dict[str, str]:
        """word -> polarity, across invariant and every domain-aware bank."""
        table = {}
        for w in self.invariant_positive:
            table[w] = "positive"
        for w in self.invariant_negative:
            table[w] = "negative"
        for d in self.domains:
            for w in self.aware_positive[d]:
                table[w] = "positive"
            for w in self.aware_negative[d]:
                table[w] = "negative"
        return table

    def aware_words(self, domain: str) -> set[str]:
        return set(self.aware_positive[domain]) | set(self.aware_negative[domain])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domains"] = list(self.domains)
        d["length_range"] = list(self.length_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        if "domains" in d:
            d["domains"] = tuple(d["domains"])
        if "length_range" in d:
            d["length_range"] = tuple(d["length_range"])
        return cls(**d)


def _sentence(spec: SyntheticSpec, domain: str, label: str, rng: np.random.Generator) -> str:
    lo, hi = spec.length_range
    length = int(rng.integers(lo, hi + 1))
    k_max = min(spec.max_sentiment_words, length)
    k = int(rng.integers(1, k_max + 1))
    words = []
    for _ in range(k):
        aware = bool(rng.random() < spec.p_aware)
        bank = spec.sentiment_bank(domain, label, aware)
        words.append(bank[int(rng.integers(len(bank)))])
    for _ in range(length - k):
        words.append(spec.neutral[int(rng.integers(len(spec.neutral)))])
    rng.shuffle(words)
    return " ".join(words)


def generate_synthetic(spec: SyntheticSpec) -> dict[str, tuple[list[Example], list[Example]]]:
    """Per domain: (labeled, unlabeled) example lists, deterministic per seed."""
    out = {}
    for domain in spec.domains:
        rng = stream_rng(spec.seed, "synthetic", domain)
        n = spec.labeled_per_domain
        labels = ["positive"] * (n // 2) + ["negative"] * (n - n // 2)
        rng.shuffle(labels)
        labeled = [Example(_sentence(spec, domain, lab, rng), lab, domain) for lab in labels]
        unlabeled = []
        for _ in range(spec.unlabeled_per_domain):
            lab = "positive" if rng.random() < 0.5 else "negative"
            unlabeled.append(Example(_sentence(spec, domain, lab, rng), None, domain))
        out[domain] = (labeled, unlabeled)
    return out


def make_audit_sentences(spec: SyntheticSpec, domain: str, n: int,
                         seed: int) -> list[tuple[str, str, str]]:
    """Probe sentences whose only sentiment-bearing word is domain-aware.

    Returns (text, aware_word, label) triples; used by saliency audits.
    """
    rng = stream_rng(seed, "audit", domain)
    lo, hi = spec.length_range
    out = []
    for i in range(n):
        label = "positive" if i % 2 == 0 else "negative"
        bank = spec.sentiment_bank(domain, label, aware=True)
        word = bank[int(rng.integers(len(bank)))]
        length = int(rng.integers(lo, hi + 1))
        words = [word] + [spec.neutral[int(rng.integers(len(spec.neutral)))]
                          for _ in range(length - 1)]
        rng.shuffle(words)
        out.append((" ".join(words), word, label))
    return out
