"""Injection patterns, the adjacent-difference measurement layout and the
seven challenge levels.

Electrode *labels* (1..L) follow the challenge numbering and are used in
:class:`LevelConfig`; array indices elsewhere are zero based (label - 1).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DimensionError

N_LEVELS = 7
DEFAULT_CURRENT = 1e-3  # amperes per injection pattern


@dataclass(frozen=True, eq=False)
class CurrentPatternSet:
    """``patterns[k, l]`` is the current (A) injected through electrode ``l`` in pattern ``k``."""

    patterns: np.ndarray
    active_electrodes: np.ndarray
    level: int = 1

    def __post_init__(self):
        p = np.asarray(self.patterns, dtype=np.float64)
        if p.ndim != 2:
            raise DimensionError("patterns must be a K x L matrix")
        if np.any(np.abs(p.sum(axis=1)) >= 1e-12):
            raise ConfigError("every injection pattern must sum to zero")
        if np.any(~p.any(axis=1)):
            raise ConfigError("injection patterns must be nonzero")
        act = np.asarray(self.active_electrodes, dtype=bool)
        if act.shape != (p.shape[1],):
            raise DimensionError("active_electrodes must have one entry per electrode")
        if np.any(p[:, ~act] != 0):
            raise ConfigError("current injected through an inactive electrode")
        p.setflags(write=False)
        act.setflags(write=False)
        object.__setattr__(self, "patterns", p)
        object.__setattr__(self, "active_electrodes", act)

    @property
    def n_patterns(self) -> int:
        return self.patterns.shape[0]

    @property
    def n_electrodes(self) -> int:
        return self.patterns.shape[1]

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "patterns": self.patterns.tolist(),
            "active_electrodes": self.active_electrodes.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CurrentPatternSet":
        try:
            return cls(
                patterns=np.asarray(doc["patterns"], dtype=float),
                active_electrodes=np.asarray(doc["active_electrodes"], dtype=bool),
                level=int(doc.get("level", 1)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed pattern set: {exc}") from exc


def challenge_patterns(n_electrodes: int = 32, current: float = DEFAULT_CURRENT) -> CurrentPatternSet:
    """The 76-pattern set for 32 electrodes.

    16 adjacent odd pairs (1,3), (3,5), ..., (31,1) followed by, for each
    e in (1, 9, 17, 25), the 15 patterns driving every other odd electrode
    against e.  Generalises to any even electrode count divisible by 4.
    """
    L = n_electrodes
    if L % 4 or L < 4:
        raise ConfigError(f"challenge pattern set needs an electrode count divisible by 4, got {L}")
    odd = list(range(1, L + 1, 2))
    hubs = [1 + q * L // 4 for q in range(4)]
    rows = []
    for i, a in enumerate(odd):
        b = odd[(i + 1) % len(odd)]
        r = np.zeros(L)
        r[a - 1], r[b - 1] = current, -current
        rows.append(r)
    for e in hubs:
        for o in odd:
            if o == e:
                continue
            r = np.zeros(L)
            r[o - 1], r[e - 1] = current, -current
            rows.append(r)
    return CurrentPatternSet(np.array(rows), np.ones(L, dtype=bool), level=1)


def pair_pattern(n_electrodes: int, source: int, sink: int, current: float = 1.0) -> np.ndarray:
    """Single injection row (zero-based electrode indices)."""
    r = np.zeros(n_electrodes)
    r[source], r[sink] = current, -current
    return r


@dataclass(frozen=True, eq=False)
class LevelConfig:
    """Which electrodes, patterns and measurement rows survive at a level.

    ``removed_electrodes`` holds 1-based labels.  ``row_mask`` runs over the
    ``K * (L - 1)`` full measurement rows in pattern-major order, where row
    ``k * (L - 1) + p`` is ``U[p + 1] - U[p]`` for pattern ``k``.
    """

    level: int
    removed_electrodes: frozenset
    active_patterns: np.ndarray
    row_mask: np.ndarray
    n_electrodes: int
    n_patterns: int

    @property
    def n_rows(self) -> int:
        return int(self.row_mask.sum())

    @property
    def active_electrodes(self) -> np.ndarray:
        act = np.ones(self.n_electrodes, dtype=bool)
        act[[e - 1 for e in self.removed_electrodes]] = False
        return act

    @property
    def rows_per_pattern(self) -> int:
        return self.n_electrodes - 1


def level_config(level: int, patterns: CurrentPatternSet | None = None) -> LevelConfig:
    if isinstance(level, bool) or not isinstance(level, (int, np.integer)) or not 1 <= level <= N_LEVELS:
        raise ConfigError(f"level must be an integer in 1..{N_LEVELS}, got {level!r}")
    if patterns is None:
        return _default_level_config(int(level))
    return _build_level_config(int(level), patterns)


@lru_cache(maxsize=None)
def _default_level_config(level: int) -> LevelConfig:
    return _build_level_config(level, challenge_patterns())


def _build_level_config(level: int, patterns: CurrentPatternSet) -> LevelConfig:
    L, K = patterns.n_electrodes, patterns.n_patterns
    removed = frozenset(range(1, 2 * (level - 1) + 1))
    if len(removed) >= L - 1:
        raise ConfigError(f"level {level} removes {len(removed)} of {L} electrodes")
    act = np.ones(L, dtype=bool)
    act[[e - 1 for e in removed]] = False
    injecting = patterns.patterns != 0
    pattern_ok = ~np.any(injecting & ~act, axis=1)
    pair_ok = act[:-1] & act[1:]
    mask = (pattern_ok[:, None] & pair_ok[None, :]).ravel()
    mask.setflags(write=False)
    active = np.flatnonzero(pattern_ok)
    active.setflags(write=False)
    return LevelConfig(level, removed, active, mask, L, K)


def difference_operator(n_electrodes: int) -> np.ndarray:
    """(L-1) x L matrix mapping electrode voltages to ``U[p+1] - U[p]``."""
    D = np.zeros((n_electrodes - 1, n_electrodes))
    idx = np.arange(n_electrodes - 1)
    D[idx, idx] = -1.0
    D[idx, idx + 1] = 1.0
    return D
