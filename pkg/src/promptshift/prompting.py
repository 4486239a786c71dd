"""Cloze prompt construction and in-sentence token masking.

Layout is fixed: [CLS] <sentence> . it is [MASK] . [SEP] — seven frame
tokens around the sentence body. Masking touches body positions only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import (CLS_ID, MASK_ID, SEP_ID, LABELS, CorpusError,
                     Example, Vocabulary, tokenize)

FRAME_WORDS = (".", "it", "is")
PROMPT_FRAME_SIZE = 7   # [CLS] . it is [MASK] . [SEP]
PLAIN_FRAME_SIZE = 3    # [CLS] . [SEP]


class PromptError(ValueError):
    pass


def _frame_ids(vocab: Vocabulary) -> tuple[int, int, int]:
    ids = []
    for word in FRAME_WORDS:
        i = vocab.token_to_id.get(word)
        if i is None:
            raise PromptError(f"template token {word!r} missing from vocabulary")
        ids.append(i)
    return tuple(ids)


def build_prompt(sentence_ids: list[int], vocab: Vocabulary,
                 max_len: int) -> tuple[list[int], int]:
    """Token ids for the cloze prompt plus the index of the label slot.

    The sentence is truncated from the right so the whole prompt fits in
    max_len; the frame itself is never truncated.
    """
    if not sentence_ids:
        raise PromptError("empty sentence")
    if max_len < PROMPT_FRAME_SIZE + 1:
        raise PromptError(
            f"max_len {max_len} cannot hold the {PROMPT_FRAME_SIZE}-token frame "
            "plus one sentence token")
    period, it, is_ = _frame_ids(vocab)
    body = sentence_ids[: max_len - PROMPT_FRAME_SIZE]
    ids = [CLS_ID, *body, period, it, is_, MASK_ID, period, SEP_ID]
    return ids, len(ids) - 3


def build_plain(sentence_ids: list[int], vocab: Vocabulary,
                max_len: int) -> list[int]:
    """[CLS] <sentence> . [SEP] — the no-template input for head readouts."""
    if not sentence_ids:
        raise PromptError("empty sentence")
    if max_len < PLAIN_FRAME_SIZE + 1:
        raise PromptError(f"max_len {max_len} too small for a plain frame")
    period, _, _ = _frame_ids(vocab)
    body = sentence_ids[: max_len - PLAIN_FRAME_SIZE]
    return [CLS_ID, *body, period, SEP_ID]


def body_span(prompt_len: int, mask_slot_index: int | None) -> tuple[int, int]:
    """Half-open range of sentence-body positions inside a prompt."""
    if mask_slot_index is not None:
        return 1, mask_slot_index - 3
    return 1, prompt_len - 2


@dataclass
class PromptPair:
    """A prompt and its body-masked counterpart."""

    original_ids: list[int]
    masked_ids: list[int]
    mask_slot_index: int | None
    mlm_positions: list[int]
    mlm_gold_ids: list[int]


def mask_count(rate: float, body_len: int) -> int:
    """round-half-up(rate * body_len), floored at 1 whenever rate > 0."""
    if rate <= 0.0 or body_len == 0:
        return 0
    return max(1, int(np.floor(rate * body_len + 0.5)))


def mask_sentence(prompt_ids: list[int], mask_slot_index: int | None, rate: float,
                  rng: np.random.Generator, body: tuple[int, int] | None = None) -> PromptPair:
    """Replace round(rate * body length) body tokens with [MASK].

    Pure replacement — no keep/random-word variants. Frame positions
    ([CLS], template, label slot, [SEP]) are never touched.
    """
    if not 0.0 <= rate <= 1.0:
        raise PromptError(f"mask rate {rate} outside [0, 1]")
    start, end = body if body is not None else body_span(len(prompt_ids), mask_slot_index)
    body_len = end - start
    n = mask_count(rate, body_len)
    if n:
        positions = sorted(int(p) for p in
                           rng.choice(np.arange(start, end), size=n, replace=False))
    else:
        positions = []
    masked = list(prompt_ids)
    gold = []
    for p in positions:
        gold.append(masked[p])
        masked[p] = MASK_ID
    return PromptPair(original_ids=list(prompt_ids), masked_ids=masked,
                      mask_slot_index=mask_slot_index,
                      mlm_positions=positions, mlm_gold_ids=gold)


def expected_mask_rate_audit(prompts: list[tuple[list[int], int | None]], rate: float,
                             trials: int, seed: int = 0) -> float:
    """Measured fraction of body tokens masked across repeated maskings."""
    if trials < 1:
        raise PromptError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    masked = 0
    total = 0
    for _ in range(trials):
        for ids, slot in prompts:
            pair = mask_sentence(ids, slot, rate, rng)
            start, end = body_span(len(ids), slot)
            masked += len(pair.mlm_positions)
            total += end - start
    return masked / total if total else 0.0


# ---------------------------------------------------------------------------
# batch preparation
# ---------------------------------------------------------------------------

@dataclass
class Prompt:
    """An example encoded and framed, ready for batching."""

    ids: list[int]
    slot: int | None
    body: tuple[int, int]
    label_index: int | None
    domain: str
    text: str = ""


def encode_examples(examples: list[Example], vocab: Vocabulary, max_len: int,
                    frame: str = "prompt") -> list[Prompt]:
    out = []
    for ex in examples:
        sent_ids = vocab.encode(tokenize(ex.text))
        if not sent_ids:
            raise PromptError(f"example tokenizes to nothing: {ex.text!r}")
        if frame == "prompt":
            ids, slot = build_prompt(sent_ids, vocab, max_len)
        elif frame == "plain":
            ids, slot = build_plain(sent_ids, vocab, max_len), None
        else:
            raise PromptError(f"unknown frame {frame!r}")
        label_index = None if ex.label is None else LABELS.index(ex.label)
        out.append(Prompt(ids=ids, slot=slot, body=body_span(len(ids), slot),
                          label_index=label_index, domain=ex.domain, text=ex.text))
    return out
