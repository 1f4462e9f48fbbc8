"""Shot-level summary selection under a length budget.

Frame scores are averaged per shot, then shots are chosen by an exact 0/1
knapsack (value = mean score, weight = shot length, capacity = 15% of the
frame count by default), matching the selection protocol the benchmark
F-scores assume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diffusion import RawScores
from .errors import ParameterError, ShapeError


@dataclass(frozen=True)
class ShotSegmentation:
    """Ordered [start, end) intervals partitioning the frame range."""

    boundaries: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(
            self, "boundaries", tuple((int(s), int(e)) for s, e in self.boundaries)
        )
        prev_end = 0
        for idx, (start, end) in enumerate(self.boundaries):
            if start != prev_end:
                raise ShapeError(
                    f"shot {idx} starts at {start}, expected {prev_end} (gap/overlap)"
                )
            if end <= start:
                raise ShapeError(f"shot {idx} interval [{start}, {end}) is empty")
            prev_end = end

    @property
    def n_frames(self) -> int:
        return self.boundaries[-1][1] if self.boundaries else 0

    @property
    def n_shots(self) -> int:
        return len(self.boundaries)

    def lengths(self) -> np.ndarray:
        return np.array([end - start for start, end in self.boundaries], dtype=np.int64)


@dataclass(frozen=True)
class SummarySelection:
    """Binary keep/drop decision per shot with the induced frame mask."""

    selected: np.ndarray
    frame_mask: np.ndarray
    budget_frames: int
    total_value: float


def shot_scores(frame_scores: RawScores, seg: ShotSegmentation) -> np.ndarray:
    """Mean frame score within each shot."""
    if seg.n_frames != len(frame_scores):
        raise ShapeError(
            f"segmentation covers {seg.n_frames} frames, scores have {len(frame_scores)}"
        )
    values = frame_scores.values
    return np.array([values[s:e].mean() for s, e in seg.boundaries])


def knapsack_select(
    values: np.ndarray, lengths: np.ndarray, budget_frames: int
) -> tuple[np.ndarray, float]:
    """Exact 0/1 knapsack over shots by dynamic programming.

    Returns the selected-shot mask and its total value. Among equal-value
    optima the lexicographically smallest index set wins, which makes the
    selection deterministic.
    """
    values = np.asarray(values, dtype=np.float64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if values.shape != lengths.shape:
        raise ShapeError(f"{values.size} values vs {lengths.size} lengths")
    if (lengths < 0).any():
        raise ParameterError("negative shot length")
    if budget_frames < 0:
        raise ParameterError("negative budget")
    m = values.size
    cap = int(budget_frames)

    # dp[i][w] = best achievable value using shots i.. with capacity w
    dp = np.zeros((m + 1, cap + 1))
    for i in range(m - 1, -1, -1):
        dp[i] = dp[i + 1]
        li = int(lengths[i])
        if li <= cap:
            take = values[i] + dp[i + 1, : cap + 1 - li]
            dp[i, li:] = np.maximum(dp[i + 1, li:], take)

    selected = np.zeros(m, dtype=np.int8)
    w = cap
    for i in range(m):
        li = int(lengths[i])
        if li <= w and values[i] + dp[i + 1, w - li] >= dp[i + 1, w]:
            # taking shot i preserves optimality; earliest indices first
            selected[i] = 1
            w -= li
    return selected, float(dp[0, cap])


def summarize_video(
    frame_scores: RawScores, seg: ShotSegmentation, ratio: float = 0.15
) -> SummarySelection:
    """Budgeted summary: mean-score shots into a knapsack at ``ratio``."""
    if not 0.0 < ratio <= 1.0:
        raise ParameterError(f"ratio must be in (0, 1], got {ratio}")
    values = shot_scores(frame_scores, seg)
    lengths = seg.lengths()
    budget = int(math.floor(ratio * seg.n_frames))
    selected, total = knapsack_select(values, lengths, budget)
    mask = np.zeros(seg.n_frames, dtype=np.int8)
    for keep, (start, end) in zip(selected, seg.boundaries):
        if keep:
            mask[start:end] = 1
    return SummarySelection(
        selected=selected, frame_mask=mask, budget_frames=budget, total_value=total
    )


def selection_dump(video_id: str, seg: ShotSegmentation, sel: SummarySelection) -> str:
    """Text block with selected shot intervals and a run-length mask."""
    kept = [
        f"[{start},{end})"
        for keep, (start, end) in zip(sel.selected, seg.boundaries)
        if keep
    ]
    runs = []
    mask = sel.frame_mask
    i = 0
    while i < mask.size:
        j = i
        while j < mask.size and mask[j] == mask[i]:
            j += 1
        runs.append(f"{int(mask[i])}x{j - i}")
        i = j
    lines = [
        f"video {video_id}",
        f"budget_frames {sel.budget_frames}",
        f"total_value {sel.total_value:.6f}",
        f"shots {' '.join(kept) if kept else '-'}",
        f"mask_rle {' '.join(runs) if runs else '-'}",
    ]
    return "\n".join(lines) + "\n"
