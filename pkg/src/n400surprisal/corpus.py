"""Condition-tagged stimulus files and expected-pattern files.

Stimulus files are UTF-8, tab-separated, with the header row
``experiment\titem\tcondition\tsentence`` and the target word wrapped in
asterisks inside the sentence.  Expected-pattern files hold one relation per
line, ``experiment: condA LOWER condB`` or ``experiment: condA NO_DIFFERENCE
condB``, where LOWER(a, b) records that condition ``a`` elicited a
significantly lower N400 amplitude than ``b`` in the original study.

Sentence normalization (documented because the original feeding of
punctuation to models is not recoverable): sentences are split on
whitespace, a trailing run of sentence-final punctuation (``. ! ?``) is
stripped from the token it adjoins, and all tokens are lower-cased.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from itertools import product
from typing import Iterable, Mapping, Sequence

STIMULUS_HEADER = ("experiment", "item", "condition", "sentence")
LOWER = "LOWER"
NO_DIFFERENCE = "NO_DIFFERENCE"
RELATIONS = (LOWER, NO_DIFFERENCE)

_SENTENCE_FINAL_PUNCT = ".!?"
_TARGET_RE = re.compile(r"^\*([^*]+)\*$")


class CorpusFormatError(ValueError):
    """A stimulus or pattern file violated the documented grammar."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    """Parsed stimuli are inconsistent with the declared design."""


@dataclass(frozen=True)
class StimulusItem:
    """One sentence with a marked target position and a condition label."""

    experiment_id: str
    item_id: str
    condition: str
    tokens: tuple[str, ...]
    target_index: int
    line: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.tokens:
            raise ValueError("tokens must be non-empty")
        for tok in self.tokens:
            if not tok or any(ch.isspace() for ch in tok):
                raise ValueError(f"invalid token {tok!r}: empty or contains whitespace")
        if not 0 <= self.target_index < len(self.tokens):
            raise ValueError(
                f"target_index {self.target_index} outside tokens of length {len(self.tokens)}"
            )

    @property
    def target(self) -> str:
        return self.tokens[self.target_index]

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.experiment_id, self.item_id, self.condition)


@dataclass(frozen=True)
class DesignFactor:
    name: str
    levels: tuple[str, ...]

    def __post_init__(self):
        if not self.levels:
            raise ValueError(f"factor {self.name!r} has no levels")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"factor {self.name!r} has duplicate levels")


@dataclass(frozen=True)
class Design:
    """Fixed-effect factor structure whose crossed levels map onto condition
    labels.  Multi-factor labels join one level per factor with ``.`` in
    declared factor order; single-factor labels are the levels themselves."""

    factors: tuple[DesignFactor, ...]

    def __post_init__(self):
        if not self.factors:
            raise ValueError("design needs at least one factor")
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ValueError("duplicate factor names in design")
        all_levels = [lvl for f in self.factors for lvl in f.levels]
        if len(set(all_levels)) != len(all_levels):
            raise ValueError("levels must be unique across factors")

    def condition_labels(self) -> tuple[str, ...]:
        """All condition labels the design covers (full crossing)."""
        combos = product(*(f.levels for f in self.factors))
        return tuple(".".join(combo) for combo in combos)

    def split_condition(self, label: str) -> dict[str, str]:
        """Decompose a condition label into factor -> level."""
        parts = label.split(".")
        if len(parts) != len(self.factors):
            raise ValidationError(
                f"condition {label!r} does not decompose into {len(self.factors)} factor level(s)"
            )
        out = {}
        for factor, part in zip(self.factors, parts):
            if part not in factor.levels:
                raise ValidationError(
                    f"condition {label!r}: {part!r} is not a level of factor {factor.name!r}"
                )
            out[factor.name] = part
        return out


def single_factor_design(levels: Sequence[str], name: str = "condition") -> Design:
    return Design(factors=(DesignFactor(name=name, levels=tuple(levels)),))


@dataclass(frozen=True)
class ExperimentSpec:
    """Validated stimulus set for one experiment."""

    experiment_id: str
    condition_set: frozenset[str]
    items: tuple[StimulusItem, ...]
    design: Design
    condition_counts: tuple[tuple[str, int], ...]
    balance_warnings: tuple[str, ...] = ()

    def counts(self) -> dict[str, int]:
        return dict(self.condition_counts)


def normalize_sentence(sentence: str) -> tuple[tuple[str, ...], int]:
    """Tokenize a raw stimulus sentence and resolve the target marker.

    Returns (tokens, target_index).  Raises CorpusFormatError (without a line
    number; callers add it) when the target marker is absent or ambiguous.
    """
    raw = sentence.split()
    if not raw:
        raise CorpusFormatError("empty sentence")
    stripped = raw[-1].rstrip(_SENTENCE_FINAL_PUNCT)
    if stripped:
        raw[-1] = stripped
    else:
        raw.pop()  # sentence-final punctuation stood alone as a token
    if not raw:
        raise CorpusFormatError("sentence contains only punctuation")

    tokens = []
    target_positions = []
    for pos, tok in enumerate(raw):
        tok = tok.lower()
        if "*" in tok:
            match = _TARGET_RE.match(tok)
            if match is None:
                raise CorpusFormatError(f"malformed target marker in token {tok!r}")
            target_positions.append(pos)
            tok = match.group(1)
        tokens.append(tok)
    if not target_positions:
        raise CorpusFormatError("no target marker (*word*) in sentence")
    if len(target_positions) > 1:
        raise CorpusFormatError(
            f"ambiguous target: markers at token positions {target_positions}"
        )
    return tuple(tokens), target_positions[0]


def _split_row(line: str, lineno: int) -> tuple[str, str, str, str]:
    fields = line.split("\t")
    if len(fields) != 4:
        raise CorpusFormatError(
            f"expected 4 tab-separated columns, found {len(fields)}", lineno
        )
    experiment, item, condition, sentence = (f.strip() for f in fields)
    for name, value in (("experiment", experiment), ("item", item), ("condition", condition)):
        if not value:
            raise CorpusFormatError(f"empty {name} field", lineno)
        if any(ch.isspace() for ch in value):
            raise CorpusFormatError(f"{name} field {value!r} contains whitespace", lineno)
    return experiment, item, condition, sentence


def parse_stimulus_file(text: str) -> list[StimulusItem]:
    """Parse the tab-separated stimulus format into StimulusItems.

    Every rejection raises CorpusFormatError with the 1-based line number;
    no rows are silently dropped.
    """
    items: list[StimulusItem] = []
    seen: dict[tuple[str, str, str], int] = {}
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if not header_seen:
            if tuple(f.strip() for f in line.split("\t")) != STIMULUS_HEADER:
                expected = "\\t".join(STIMULUS_HEADER)
                raise CorpusFormatError(f"expected header '{expected}'", lineno)
            header_seen = True
            continue
        experiment, item_id, condition, sentence = _split_row(line, lineno)
        try:
            tokens, target_index = normalize_sentence(sentence)
        except CorpusFormatError as exc:
            raise CorpusFormatError(str(exc), lineno) from None
        key = (experiment, item_id, condition)
        if key in seen:
            raise CorpusFormatError(
                f"duplicate (experiment, item, condition) key {key}: "
                f"first seen on line {seen[key]}",
                lineno,
            )
        seen[key] = lineno
        items.append(
            StimulusItem(
                experiment_id=experiment,
                item_id=item_id,
                condition=condition,
                tokens=tokens,
                target_index=target_index,
                line=lineno,
            )
        )
    if not header_seen:
        raise CorpusFormatError("file has no header row")
    return items


def serialize_stimulus_items(items: Iterable[StimulusItem]) -> str:
    """Inverse of parse_stimulus_file over normalized items (round-trips)."""
    lines = ["\t".join(STIMULUS_HEADER)]
    for item in items:
        words = list(item.tokens)
        words[item.target_index] = f"*{words[item.target_index]}*"
        lines.append(
            "\t".join([item.experiment_id, item.item_id, item.condition, " ".join(words)])
        )
    return "\n".join(lines) + "\n"


def validate_experiment(
    items: Sequence[StimulusItem], design: Design | None = None
) -> ExperimentSpec:
    """Check items against a declared design and index them.

    With ``design=None`` a single-factor design is inferred with levels in
    first-appearance order.  Zero-item declared conditions fail; unbalanced
    counts only produce warnings on the returned spec.
    """
    if not items:
        raise ValidationError("no stimulus items")
    experiment_ids = {item.experiment_id for item in items}
    if len(experiment_ids) != 1:
        raise ValidationError(f"items span multiple experiments: {sorted(experiment_ids)}")
    experiment_id = items[0].experiment_id

    seen_keys = Counter(item.key for item in items)
    dupes = [key for key, n in seen_keys.items() if n > 1]
    if dupes:
        raise ValidationError(f"duplicate (experiment, item, condition) keys: {dupes}")

    observed = []
    for item in items:
        if item.condition not in observed:
            observed.append(item.condition)
    if design is None:
        design = single_factor_design(observed)

    declared = design.condition_labels()
    declared_set = set(declared)
    for item in items:
        if item.condition not in declared_set:
            raise ValidationError(
                f"condition {item.condition!r} not covered by the declared design "
                f"(expected one of {sorted(declared_set)})"
            )
    counts = Counter(item.condition for item in items)
    empty = [label for label in declared if counts[label] == 0]
    if empty:
        raise ValidationError(f"declared condition(s) with zero items: {empty}")

    warnings_out = []
    if len(set(counts.values())) > 1:
        warnings_out.append(
            "unbalanced condition counts: "
            + ", ".join(f"{label}={counts[label]}" for label in declared)
        )
    return ExperimentSpec(
        experiment_id=experiment_id,
        condition_set=frozenset(counts),
        items=tuple(items),
        design=design,
        condition_counts=tuple((label, counts[label]) for label in declared),
        balance_warnings=tuple(warnings_out),
    )


@dataclass(frozen=True)
class PatternRelation:
    condition_a: str
    condition_b: str
    relation: str

    def __post_init__(self):
        if self.relation not in RELATIONS:
            raise ValueError(f"unknown relation {self.relation!r}")
        if self.condition_a == self.condition_b:
            raise ValueError(f"self-relation on condition {self.condition_a!r}")

    def __str__(self) -> str:
        return f"{self.condition_a} {self.relation} {self.condition_b}"


@dataclass(frozen=True)
class ExpectedPattern:
    """Expected significant-amplitude relations for one experiment,
    transcribed from the original study's reported findings."""

    experiment_id: str
    relations: tuple[PatternRelation, ...]
    provenance_note: str = ""

    def conditions(self) -> frozenset[str]:
        return frozenset(
            c for rel in self.relations for c in (rel.condition_a, rel.condition_b)
        )


def parse_expected_pattern(
    text: str, condition_set: Iterable[str] | None = None
) -> ExpectedPattern:
    """Parse an expected-pattern file for a single experiment.

    Leading ``#`` comment lines become the provenance note.  When
    ``condition_set`` is given, every referenced condition must belong to it.
    Contradictory or duplicate pairs (LOWER both ways, LOWER plus
    NO_DIFFERENCE, or the same pair twice) are rejected.
    """
    provenance_lines: list[str] = []
    in_preamble = True
    experiment_id: str | None = None
    relations: list[PatternRelation] = []
    directed: dict[tuple[str, str], tuple[str, int]] = {}

    known = set(condition_set) if condition_set is not None else None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            if in_preamble:
                provenance_lines.append(stripped.lstrip("#").strip())
            continue
        in_preamble = False
        if ":" not in stripped:
            raise CorpusFormatError("expected 'experiment: condA RELATION condB'", lineno)
        exp, _, rest = stripped.partition(":")
        exp = exp.strip()
        parts = rest.split()
        if len(parts) != 3:
            raise CorpusFormatError(
                f"expected 'condA RELATION condB' after the colon, got {rest.strip()!r}", lineno
            )
        cond_a, relation, cond_b = parts
        if relation not in RELATIONS:
            raise CorpusFormatError(
                f"unknown relation {relation!r} (expected LOWER or NO_DIFFERENCE)", lineno
            )
        if experiment_id is None:
            experiment_id = exp
        elif exp != experiment_id:
            raise CorpusFormatError(
                f"multiple experiments in one pattern file: {experiment_id!r} and {exp!r}",
                lineno,
            )
        if cond_a == cond_b:
            raise CorpusFormatError(f"self-relation on condition {cond_a!r}", lineno)
        if known is not None:
            for cond in (cond_a, cond_b):
                if cond not in known:
                    raise CorpusFormatError(f"unknown condition label {cond!r}", lineno)
        for prior_key in ((cond_a, cond_b), (cond_b, cond_a)):
            if prior_key in directed:
                prior_rel, prior_line = directed[prior_key]
                raise CorpusFormatError(
                    f"pair ({cond_a}, {cond_b}) conflicts with "
                    f"'{prior_key[0]} {prior_rel} {prior_key[1]}' on line {prior_line}",
                    lineno,
                )
        directed[(cond_a, cond_b)] = (relation, lineno)
        relations.append(PatternRelation(cond_a, cond_b, relation))

    if experiment_id is None:
        raise CorpusFormatError("pattern file contains no relations")
    return ExpectedPattern(
        experiment_id=experiment_id,
        relations=tuple(relations),
        provenance_note="\n".join(provenance_lines),
    )


def serialize_expected_pattern(pattern: ExpectedPattern) -> str:
    lines = [f"# {ln}" if ln else "#" for ln in pattern.provenance_note.splitlines()]
    for rel in pattern.relations:
        lines.append(f"{pattern.experiment_id}: {rel}")
    return "\n".join(lines) + "\n"


def load_design(spec: Mapping) -> Design:
    """Build a Design from a JSON-style mapping: {"factors": [{"name", "levels"}]}."""
    factors = tuple(
        DesignFactor(name=f["name"], levels=tuple(f["levels"])) for f in spec["factors"]
    )
    return Design(factors=factors)
