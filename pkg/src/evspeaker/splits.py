"""Dataset split protocols.

* matched: one scene, per-subject 6:2:2 train/val/test partition;
* cross: source scene split 8:2 into train/val, every target-scene sample
  reserved for evaluation;
* few-shot: K adaptation samples per subject drawn from the target scene,
  the rest of the target scene held out for evaluation.

All partitions are subject-balanced, seeded, and pairwise disjoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .events import ManifestEntry
from .rng import derive_rng


class SplitError(ValueError):
    """Raised when a protocol cannot give every subject enough samples."""


@dataclass(frozen=True)
class SplitSpec:
    protocol: str = "matched"
    source_scene: str = "frontal"
    target_scene: Optional[str] = None
    shots: int = 0
    shots_per_digit: bool = False

    def __post_init__(self):
        if self.protocol not in ("matched", "cross", "fewshot"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.protocol in ("cross", "fewshot") and not self.target_scene:
            raise ValueError(f"{self.protocol} protocol needs a target scene")


@dataclass(frozen=True)
class Splits:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]


def _by_subject(entries: Sequence[ManifestEntry], indices) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {}
    for i in indices:
        groups.setdefault(entries[i].subject, []).append(i)
    return {s: groups[s] for s in sorted(groups)}


def _scene_indices(entries: Sequence[ManifestEntry], scene: str) -> list[int]:
    return [i for i, e in enumerate(entries) if e.scene == scene]


def _check_min(parts: dict[str, list[int]], entries, minimum: int = 2) -> None:
    for name, idxs in parts.items():
        counts: dict[int, int] = {}
        for i in idxs:
            counts[entries[i].subject] = counts.get(entries[i].subject, 0) + 1
        subjects = set(counts)
        for other in parts.values():
            for i in other:
                subjects.add(entries[i].subject)
        for s in sorted(subjects):
            if counts.get(s, 0) < minimum:
                raise SplitError(
                    f"subject {s} has {counts.get(s, 0)} samples in the {name} "
                    f"split (needs >= {minimum})"
                )


def matched_split(entries: Sequence[ManifestEntry], scene: str, seed: int) -> Splits:
    """6:2:2 per-subject partition of a single scene."""
    train, val, test = [], [], []
    for subject, idxs in _by_subject(entries, _scene_indices(entries, scene)).items():
        order = derive_rng(seed, "split-matched", subject).permutation(len(idxs))
        shuffled = [idxs[j] for j in order]
        n = len(shuffled)
        n_train = int(n * 0.6)
        n_val = int(n * 0.2)
        train += shuffled[:n_train]
        val += shuffled[n_train:n_train + n_val]
        test += shuffled[n_train + n_val:]
    splits = Splits(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)))
    _check_min({"train": train, "val": val, "test": test}, entries)
    return splits


def cross_split(
    entries: Sequence[ManifestEntry], source_scene: str, target_scene: str, seed: int
) -> Splits:
    """Source scene 8:2 into train/val; the whole target scene is the test set."""
    train, val = [], []
    for subject, idxs in _by_subject(entries, _scene_indices(entries, source_scene)).items():
        order = derive_rng(seed, "split-cross", subject).permutation(len(idxs))
        shuffled = [idxs[j] for j in order]
        n_train = int(len(shuffled) * 0.8)
        train += shuffled[:n_train]
        val += shuffled[n_train:]
    test = _scene_indices(entries, target_scene)
    splits = Splits(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)))
    _check_min({"train": train, "val": val, "test": test}, entries)
    return splits


def fewshot_split(
    entries: Sequence[ManifestEntry],
    target_scene: str,
    shots: int,
    seed: int,
    per_digit: bool = False,
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Pick K adaptation shots per subject (or per subject and digit).

    Returns (shot_indices, eval_indices); the two sets partition the target
    scene, so adapted models are never evaluated on their own shots.
    """
    if shots < 0:
        raise ValueError("shots must be >= 0")
    shot_idx: list[int] = []
    eval_idx: list[int] = []
    for subject, idxs in _by_subject(entries, _scene_indices(entries, target_scene)).items():
        rng = derive_rng(seed, "split-fewshot", subject)
        if per_digit:
            chosen: list[int] = []
            digits: dict[int, list[int]] = {}
            for i in idxs:
                digits.setdefault(entries[i].digit, []).append(i)
            for digit in sorted(digits):
                pool = digits[digit]
                take = min(shots, len(pool))
                picks = rng.permutation(len(pool))[:take]
                chosen += [pool[j] for j in picks]
        else:
            take = min(shots, len(idxs))
            picks = rng.permutation(len(idxs))[:take]
            chosen = [idxs[j] for j in picks]
        chosen_set = set(chosen)
        remaining = [i for i in idxs if i not in chosen_set]
        if len(remaining) < 2:
            raise SplitError(
                f"subject {subject} has {len(remaining)} evaluation samples left "
                f"after removing {shots} shots"
            )
        shot_idx += chosen
        eval_idx += remaining
    return tuple(sorted(shot_idx)), tuple(sorted(eval_idx))
