"""Precision and recall between required and generated text sets."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ContentSets:
    """Normalized text sets for one task.

    ``required`` comes from task metadata, ``generated`` from the document,
    ``readable`` from the readability checker. Callers are expected to pass
    already-normalized strings.
    """

    required: frozenset[str] = field(default_factory=frozenset)
    generated: frozenset[str] = field(default_factory=frozenset)
    readable: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        for name in ("required", "generated", "readable"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))

    @property
    def matched(self) -> int:
        return len(self.required & self.generated)


def precision(sets: ContentSets) -> float:
    """Share of generated strings that were required.

    An empty output scores 0 when something was required, 1 otherwise.
    """
    if not sets.generated:
        return 0.0 if sets.required else 1.0
    return sets.matched / len(sets.generated)


def recall(sets: ContentSets) -> float:
    """Share of required strings present in the output; 1 if nothing is required."""
    if not sets.required:
        return 1.0
    return sets.matched / len(sets.required)
