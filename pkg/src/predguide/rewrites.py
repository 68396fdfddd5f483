"""Meaning-preserving rewrite pool and deterministic prompt selection."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Iterable

MAX_REWRITES = 8

SINGLE_SCENE_CLAUSE = "Render this as a single coherent scene, not a grid or collage."
MULTI_PANEL_WORDS = ("panel", "grid", "collage", "comic", "storyboard", "triptych", "diptych")
_MULTI_PANEL = re.compile(r"\b(?:" + "|".join(MULTI_PANEL_WORDS) + r")s?\b", re.IGNORECASE)


@dataclass
class RewritePool:
    source: str
    rewrites: list[str]
    used: set[int] = field(default_factory=set)
    last: int | None = None
    multi_panel: bool = False

    def __len__(self) -> int:
        return len(self.rewrites)

    def __getitem__(self, index: int) -> str:
        return self.rewrites[index]

    def mark(self, index: int) -> None:
        self.used.add(index)
        self.last = index

    def to_dict(self) -> dict[str, Any]:
        return {
            "source": self.source,
            "rewrites": list(self.rewrites),
            "used": sorted(self.used),
            "multi_panel": self.multi_panel,
        }


def build_pool(source: str, raw_rewrites: Iterable[str], limit: int = MAX_REWRITES) -> RewritePool:
    """Drop empty, duplicate and source-identical rewrites, keeping order."""
    seen: set[str] = set()
    kept: list[str] = []
    src_key = " ".join(source.split()).lower()
    for raw in raw_rewrites:
        text = " ".join(str(raw).split())
        key = text.lower()
        if not text or key == src_key or key in seen:
            continue
        seen.add(key)
        kept.append(text)
        if len(kept) == limit:
            break
    if not kept:
        kept = [source]
    return RewritePool(source=source, rewrites=kept, multi_panel=requests_multi_panel(source))


def select_initial(pool: RewritePool, program_id: int | str, seed: int) -> int:
    if isinstance(program_id, str):
        program_id = int(program_id, 16)
    index = (program_id ^ seed) % len(pool)
    pool.mark(index)
    return index


def next_rewrite(pool: RewritePool) -> int:
    """Lowest unused index; once all are used, cycle from the last one."""
    for i in range(len(pool)):
        if i not in pool.used:
            pool.mark(i)
            return i
    index = 0 if pool.last is None else (pool.last + 1) % len(pool)
    pool.mark(index)
    return index


def requests_multi_panel(text: str) -> bool:
    return bool(_MULTI_PANEL.search(text))


def guard_prompt(text: str, source: str | None = None) -> str:
    """Append the single-scene clause unless the source asks for panels."""
    if text.rstrip().endswith(SINGLE_SCENE_CLAUSE):
        return text
    if requests_multi_panel(source if source is not None else text):
        return text
    return f"{text.rstrip()} {SINGLE_SCENE_CLAUSE}"
