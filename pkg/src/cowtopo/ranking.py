"""Rank-then-average leaderboards."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class Column:
    name: str
    higher_is_better: bool = True

    @classmethod
    def parse(cls, text: str) -> "Column":
        """``name`` or ``name:max`` / ``name:min``."""
        name, _, direction = text.partition(":")
        direction = direction or "max"
        if direction not in ("max", "min"):
            raise ValueError(f"column direction must be 'max' or 'min', not {direction!r}")
        return cls(name, direction == "max")

    def __str__(self):
        return f"{self.name}:{'max' if self.higher_is_better else 'min'}"


TASK_COLUMNS = {
    "binary": (
        Column("binary_dice"),
        Column("binary_cldice"),
        Column("binary_betti0_error", higher_is_better=False),
    ),
    "multiclass": (
        Column("class_avg_dice"),
        Column("binary_cldice"),
        Column("class_avg_betti0_error", higher_is_better=False),
    ),
}


@dataclass
class Leaderboard:
    columns: list[Column]
    ranks: dict[str, dict[str, float]] = field(default_factory=dict)  # team -> column -> rank
    average: dict[str, float] = field(default_factory=dict)

    @property
    def order(self) -> list[str]:
        return sorted(self.average, key=lambda team: (self.average[team], team))

    def to_records(self) -> list[dict]:
        rows = []
        for position, team in enumerate(self.order, start=1):
            row = {"position": position, "team": team}
            for col in self.columns:
                row[f"rank[{col.name}]"] = self.ranks[team][col.name]
            row["average_rank"] = self.average[team]
            rows.append(row)
        return rows


def _column_ranks(values: np.ndarray, column: Column) -> np.ndarray:
    """Rank 1 = best; ties share the mean of their positions."""
    key = -values if column.higher_is_better else values
    return rankdata(key, method="average")


def rank_teams(scores: dict[str, dict[str, float]], columns) -> Leaderboard:
    """Rank teams per column on their aggregate score, then average the ranks.

    ``scores`` maps team -> column name -> aggregate value.
    """
    columns = list(columns)
    teams = sorted(scores)
    if len(teams) < 2:
        raise ValueError("ranking needs at least two teams")
    if not columns:
        raise ValueError("ranking needs at least one column")
    board = Leaderboard(columns, {t: {} for t in teams})
    for col in columns:
        missing = [t for t in teams if scores[t].get(col.name) is None]
        if missing:
            raise KeyError(f"column {col.name!r} missing for {missing}")
        ranks = _column_ranks(np.array([scores[t][col.name] for t in teams], dtype=float), col)
        for team, r in zip(teams, ranks):
            board.ranks[team][col.name] = float(r)
    for team in teams:
        board.average[team] = float(np.mean([board.ranks[team][c.name] for c in columns]))
    return board


def rank_teams_per_case(case_scores: dict[str, dict[str, dict[str, float]]], columns) -> Leaderboard:
    """Rank teams within every case, average over cases, then over columns.

    ``case_scores`` maps team -> case id -> column name -> value. Only cases
    scored for every team take part.
    """
    columns = list(columns)
    teams = sorted(case_scores)
    if len(teams) < 2:
        raise ValueError("ranking needs at least two teams")
    shared = sorted(set.intersection(*(set(case_scores[t]) for t in teams)))
    if not shared:
        raise ValueError("no case is scored for every team")
    board = Leaderboard(columns, {t: {} for t in teams})
    for col in columns:
        per_case = []
        for case in shared:
            values = [case_scores[t][case].get(col.name) for t in teams]
            if any(v is None for v in values):
                raise KeyError(f"column {col.name!r} missing in case {case}")
            per_case.append(_column_ranks(np.array(values, dtype=float), col))
        mean_ranks = np.mean(per_case, axis=0)
        for team, r in zip(teams, mean_ranks):
            board.ranks[team][col.name] = float(r)
    for team in teams:
        board.average[team] = float(np.mean([board.ranks[team][c.name] for c in columns]))
    return board
