"""Analysis configuration."""

from __future__ import annotations

from dataclasses import dataclass, field

from .semantics import Scope


@dataclass(frozen=True)
class AnalysisConfig:
    """Knobs for one analysis run.

    ``cube_max`` bounds literals per enumerated cube in the weakest
    precondition abstraction.  ``frame_unaffected`` short-circuits the
    abstract transition constraint p' = p for predicates whose defining
    formula mentions no updated symbol (a sound weakening of the exact
    per-predicate construction).  ``fuse_split_clean`` computes the
    clean-after-split composition in one state-enumeration pass instead of
    composing the two operators literally; both paths compute the same set.
    ``relevance_filter`` restricts primed predicates in abstract transitions
    to those relevant at the target location per the backwards symbol
    analysis, with "all predicates" as the conservative fallback.
    """
    scope: Scope = Scope()
    cube_max: int = 3
    frame_unaffected: bool = True
    fuse_split_clean: bool = True
    relevance_filter: bool = True
    backends: tuple = ("enum",)
    cache_path: str | None = None
    use_cache: bool = True
    jobs: int = 1
    emit: str = "text"
    trace: bool = False
    bank_cap: int = 200_000
