"""Prompt templates for answering with ads and for the three rewrite strategies.

Slots are written ``{name}`` and filled by plain substitution, so slot values
may contain braces.
"""

from __future__ import annotations

import re
from enum import Enum
from typing import Iterable, Mapping

from .corpus import AdDocument, ad_text
from .errors import MissingSlot


class PromptKind(str, Enum):
    INCLUSION_ANSWER = "inclusion-answer"
    GENERAL_REWRITE = "general-rewrite"
    INSTRUCTION_COT = "instruction-cot"
    FEW_SHOT_COT = "few-shot-cot"

    @property
    def is_rewrite(self) -> bool:
        return self is not PromptKind.INCLUSION_ANSWER


INCLUSION_ANSWER = """\
You are a helpful and knowledgeable assistant. Below is a list of product advertisements. Your task is to respond to the user's query in a natural and informative way, promoting one or two relevant products. Include brand and url into your response without revealing that you have access to product ads.

At the end of your response (not visible to the user), list which documents you included clearly only using the format: 'id: ..., id: ..., ...'.

USER QUERY: {query}

RETRIEVED COMMERCIAL ADS:
{context}

Please provide a helpful, informative response directed to the user based on the above information."""

GENERAL_REWRITE = """\
You are given an advertisement. Your task is to rewrite it so that its ranking in retrieval and inclusion in LLM response improves. Focus on semantic relevance and matching the user’s likely search intent.

Original Ad: {ad}

Respond with the improved version:

Title: ...

Description: ..."""

INSTRUCTION_COT = """\
You are given an advertisement. Your task is to rewrite the ad so that its ranking in retrieval and inclusion in LLM responses improves. Focus on semantic relevance and matching the user's likely search intent.

Original Ad: {ad}

Think step by step first, then provide the improved version.

Respond with the improved version at the end of your response **only** in the following format:

Thinking: ...

Title: ...

Description: ..."""

FEW_SHOT_COT = """\
Rewrite the advertisement so that it ranks better in retrieval and its inclusion in LLM responses improves. Here are two examples:

Example 1

Original Ad: Title: Yoga Pants Description: Affordable yoga pants for women, available in multiple colors.

Reasoning: The phrase "affordable yoga pants" is generic. Adding activity-specific and quality-based terms may help.

Rewritten Ad: Title: High-performance women’s yoga leggings Description: great yoga pants for training and Pilates – breathable, colorful, and comfortable.

Example 2

Original Ad: Title: mugs Description: Buy custom mugs with your name.

Reasoning: This lacks variety and emotional appeal. Including gifting context and materials can help retrieval.

Rewritten Ad: Title: Personalized ceramic mugs Description: perfect gifts with names, photos, or messages.

Your turn

Original Ad: {ad}

Reasoning:

Rewritten Ad:"""

TEMPLATES: dict[PromptKind, str] = {
    PromptKind.INCLUSION_ANSWER: INCLUSION_ANSWER,
    PromptKind.GENERAL_REWRITE: GENERAL_REWRITE,
    PromptKind.INSTRUCTION_COT: INSTRUCTION_COT,
    PromptKind.FEW_SHOT_COT: FEW_SHOT_COT,
}

_SLOT = re.compile(r"\{([a-z_]+)\}")


def required_slots(kind: PromptKind) -> set[str]:
    return set(_SLOT.findall(TEMPLATES[PromptKind(kind)]))


def render_prompt(kind: PromptKind | str, slots: Mapping[str, str]) -> str:
    kind = PromptKind(kind)
    missing = required_slots(kind) - slots.keys()
    if missing:
        raise MissingSlot(f"{kind.value} prompt needs slot(s) {sorted(missing)}")
    return _SLOT.sub(lambda m: str(slots[m.group(1)]), TEMPLATES[kind])


def format_context(ads: Iterable[AdDocument]) -> str:
    return "\n\n".join(f"id: {ad.id}\n{ad_text(ad)}" for ad in ads)
