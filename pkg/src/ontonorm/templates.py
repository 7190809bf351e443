"""Masked prompt templates built from graph neighborhoods.

Three template shapes:

* zeroth order   -- "[MASK] is identical with <subject>"
* first order    -- "[MASK] <relation phrase> <neighbor>" (either side masked)
* second order   -- "<head> <relation phrase> <mid>, which is a kind of <grand>"
                    with two of the three slots masked

Each render records where the mask tokens sit and which entity each mask
stands for, so the encoder readout can be matched against candidates.
A padded variant appends ", which is a kind of [MASK]" whose output is
ignored, letting lower-order templates share the second-order surface.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .encoder import CLS_TOKEN, MASK_TOKEN, SEP_TOKEN, SPECIAL_TOKENS, tokenize
from .graph import RelationalGraph, Triple

logger = logging.getLogger(__name__)

#: Mask-slot target meaning "computed but never read out".
IGNORED = -1

#: Natural-language phrase for each relation, including the synthetic
#: "identical" relation used by the zeroth-order template.
RELATION_PHRASES: dict[str, str] = {
    "identical": "is identical with",
    "is_a": "is a kind of",
    "capable_of": "is capable of",
    "negatively_regulates": "negatively regulates",
    "positively_regulates": "positively regulates",
    "regulates": "regulates",
    "part_of": "is part of",
    "has_part": "has",
    "develops_from": "develops from",
    "has_sensory_dendrite_in": "has sensory dendrite in",
    "sends_synaptic_output_to": "sends synaptic output to",
    "synapsed_to": "is synapsed to",
    "synapsed_by": "is synapsed by",
    "continuous_with": "is continuous with",
    "synapsed_via_type_Ib_bouton_to": "is synapsed via type Ib bouton to",
    "receives_synaptic_input_in": "receives synaptic input in",
    "overlaps": "overlaps",
}

#: Connective words the templates add beyond relation phrases; callers
#: building vocabularies should include them in the corpus.
TEMPLATE_WORDS = (",", "which")


class EmptyPhrase(ValueError):
    """A template slot received an empty surface phrase."""


class SubstitutionNotTrainingSynonym(ValueError):
    """A synonym substitution was not drawn from the allowed synonym set."""


class ExcludedVariant(ValueError):
    """The mask-head-and-mid second-order variant is deliberately unsupported."""


class TemplateOrder(enum.Enum):
    ZEROTH = 0
    FIRST = 1
    SECOND = 2


class MaskedSide(enum.Enum):
    HEAD = "head"
    TAIL = "tail"


class T2Variant(enum.Enum):
    MASK_HEAD_AND_GRAND = "mask_head_and_grand"
    MASK_MID_AND_GRAND = "mask_mid_and_grand"
    #: requesting this raises ExcludedVariant: child x grandchild pairs
    #: explode combinatorially in tree-shaped graphs
    MASK_HEAD_AND_MID = "mask_head_and_mid"


@dataclass(frozen=True)
class PromptInstance:
    """A rendered template: tokens, mask bookkeeping, and provenance."""

    tokens: tuple[str, ...]
    text: str
    mask_slots: tuple[tuple[int, int], ...]  # (token position, entity index or IGNORED)
    order: TemplateOrder
    source: dict = field(default_factory=dict, compare=False)


def relation_phrase(relation: str, overrides: Optional[dict[str, str]] = None) -> str:
    """Phrase for a relation; unknown relations fall back to de-underscoring."""
    if overrides and relation in overrides:
        return overrides[relation]
    if relation in RELATION_PHRASES:
        return RELATION_PHRASES[relation]
    logger.warning("no phrase for relation %r; using underscore fallback", relation)
    return relation.replace("_", " ")


def load_phrase_overrides(path) -> dict[str, str]:
    """Read relation<TAB>phrase rows extending the built-in table."""
    out: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise ValueError(f"expected 2 columns in phrase table, got {row!r}")
            out[row[0]] = row[1]
    return out


def extend_relation_phrases(overrides: dict[str, str]) -> None:
    """Install extra relation phrases process-wide, so new ontologies can
    extend the table from a file instead of code."""
    RELATION_PHRASES.update(overrides)


_SPECIALS = frozenset(SPECIAL_TOKENS)


def _finish(tokens: list[str]) -> str:
    """Join tokens into display text; commas attach to the previous word
    (but never to a bracketed special, which must survive re-tokenization)."""
    parts: list[str] = []
    for tok in tokens:
        if tok == "," and parts and parts[-1] not in _SPECIALS:
            parts[-1] += ","
        else:
            parts.append(tok)
    return " ".join(parts)


def _phrase_tokens(phrase: str) -> list[str]:
    toks = tokenize(phrase)
    if not toks:
        raise EmptyPhrase(f"phrase {phrase!r} has no tokens")
    return toks


def _padding_suffix(tokens: list[str], slots: list[tuple[int, int]]) -> None:
    tokens.extend([",", "which", "is", "a", "kind", "of"])
    slots.append((len(tokens), IGNORED))
    tokens.append(MASK_TOKEN)


def _check_substitution(substitution: Optional[str], allowed: Optional[Sequence[str]]) -> None:
    if substitution is not None and allowed is not None and substitution not in allowed:
        raise SubstitutionNotTrainingSynonym(f"{substitution!r} is not an allowed substitution")


def render_t0(subject: str, target: int = IGNORED, padded: bool = False) -> PromptInstance:
    """"[CLS] [MASK] is identical with <subject> [SEP]"; the mask stands
    for whatever the subject names, so its slot targets ``target``."""
    tokens = [CLS_TOKEN]
    slots = [(1, target)]
    tokens.append(MASK_TOKEN)
    tokens.extend(["is", "identical", "with"])
    tokens.extend(_phrase_tokens(subject))
    if padded:
        _padding_suffix(tokens, slots)
    tokens.append(SEP_TOKEN)
    return PromptInstance(
        tokens=tuple(tokens),
        text=_finish(tokens),
        mask_slots=tuple(slots),
        order=TemplateOrder.ZEROTH,
        source={"template": "t0", "subject": subject, "padded": padded},
    )


def render_t1(
    graph: RelationalGraph,
    triple: Triple,
    masked_side: MaskedSide,
    substitution: Optional[str] = None,
    allowed_synonyms: Optional[Sequence[str]] = None,
    phrase_overrides: Optional[dict[str, str]] = None,
    padded: bool = False,
) -> PromptInstance:
    """Render one side of a triple as a mask, the other as surface text.

    ``substitution`` replaces the unmasked entity's name; pass the entity's
    training synonyms as ``allowed_synonyms`` to enforce the visibility rule
    (defaults to the graph's synonym list plus the entity name).
    """
    mask_head = masked_side == MaskedSide.HEAD
    masked_idx = triple.head if mask_head else triple.tail
    surface_idx = triple.tail if mask_head else triple.head

    if substitution is not None:
        if allowed_synonyms is None:
            allowed_synonyms = [graph.entities[surface_idx].phrase, *graph.synonyms.get(surface_idx, [])]
        _check_substitution(substitution, allowed_synonyms)
        surface = substitution
    else:
        surface = graph.entities[surface_idx].phrase

    rel_tokens = _phrase_tokens(relation_phrase(triple.relation, phrase_overrides))
    tokens = [CLS_TOKEN]
    slots: list[tuple[int, int]] = []
    if mask_head:
        slots.append((len(tokens), masked_idx))
        tokens.append(MASK_TOKEN)
        tokens.extend(rel_tokens)
        tokens.extend(_phrase_tokens(surface))
    else:
        tokens.extend(_phrase_tokens(surface))
        tokens.extend(rel_tokens)
        slots.append((len(tokens), masked_idx))
        tokens.append(MASK_TOKEN)
    if padded:
        _padding_suffix(tokens, slots)
    tokens.append(SEP_TOKEN)
    return PromptInstance(
        tokens=tuple(tokens),
        text=_finish(tokens),
        mask_slots=tuple(slots),
        order=TemplateOrder.FIRST,
        source={
            "template": "t1",
            "triple": (triple.head, triple.relation, triple.tail),
            "masked_side": masked_side.value,
            "substitution": substitution,
            "padded": padded,
        },
    )


def render_t2(
    graph: RelationalGraph,
    path: tuple[int, str, int, int],
    variant: Optional[T2Variant],
    substitution: Optional[str] = None,
    allowed_synonyms: Optional[Sequence[str]] = None,
    phrase_overrides: Optional[dict[str, str]] = None,
) -> PromptInstance:
    """Render a 2-hop path "<head> <r'> <mid>, which is a kind of <grand>".

    The two supported variants mask (head, grand) or (mid, grand); the
    remaining slot may be substituted with one of its training synonyms.
    ``variant=None`` renders the fully unmasked sentence for inspection.
    """
    head, relation, mid, grand = path
    if variant == T2Variant.MASK_HEAD_AND_MID:
        raise ExcludedVariant("masking head and mid together is not supported")

    rel_tokens = _phrase_tokens(relation_phrase(relation, phrase_overrides))
    tokens = [CLS_TOKEN]
    slots: list[tuple[int, int]] = []

    def surface_for(idx: int) -> list[str]:
        if substitution is not None and variant is not None:
            allowed = allowed_synonyms
            if allowed is None:
                allowed = [graph.entities[idx].phrase, *graph.synonyms.get(idx, [])]
            _check_substitution(substitution, allowed)
            return _phrase_tokens(substitution)
        return _phrase_tokens(graph.entities[idx].phrase)

    if variant == T2Variant.MASK_HEAD_AND_GRAND:
        slots.append((len(tokens), head))
        tokens.append(MASK_TOKEN)
        tokens.extend(rel_tokens)
        tokens.extend(surface_for(mid))
    elif variant == T2Variant.MASK_MID_AND_GRAND:
        tokens.extend(surface_for(head))
        tokens.extend(rel_tokens)
        slots.append((len(tokens), mid))
        tokens.append(MASK_TOKEN)
    else:  # unmasked display form
        tokens.extend(_phrase_tokens(graph.entities[head].phrase))
        tokens.extend(rel_tokens)
        tokens.extend(_phrase_tokens(graph.entities[mid].phrase))

    tokens.extend([",", "which", "is", "a", "kind", "of"])
    if variant is None:
        tokens.extend(_phrase_tokens(graph.entities[grand].phrase))
    else:
        slots.append((len(tokens), grand))
        tokens.append(MASK_TOKEN)
    tokens.append(SEP_TOKEN)

    return PromptInstance(
        tokens=tuple(tokens),
        text=_finish(tokens),
        mask_slots=tuple(slots),
        order=TemplateOrder.SECOND,
        source={
            "template": "t2",
            "path": path,
            "variant": variant.value if variant else None,
            "substitution": substitution,
        },
    )
