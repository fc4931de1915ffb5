"""Semantic-level confusion mining.

Turns a sample's confidence distribution plus the bank's misclassification
statistics into a ranked set of confusable categories, and attaches a
commonality and a difference prompt embedding to each selected pair. Prompt
embeddings default to deterministic templates; externally supplied vectors
(e.g. produced by a language model offline) can be injected from a JSON file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bank import ConfusionBank
from .errors import ConfigurationError, FormatError, ParameterError
from .world import World, encode_text

COMMONALITY_TEMPLATE = "common traits of {a} and {b}"
DIFFERENCE_TEMPLATE = "what distinguishes {a} from {b}"


@dataclass(frozen=True)
class PromptEmbedding:
    kind: str        # "commonality" | "difference"
    source: str      # "generated" | "external"
    vector: np.ndarray
    pair: tuple[int, int]  # (pseudo_gt, confusable category)


@dataclass
class ConfusionPairSet:
    sample_id: int
    pseudo_gt: int
    pairs: list[tuple[int, float]]  # (category, score), non-increasing score
    prompts: dict[int, tuple[PromptEmbedding, PromptEmbedding]]

    def categories(self) -> list[int]:
        return [c for c, _ in self.pairs]


def pseudo_gt(confidences: np.ndarray) -> int:
    """Index of the highest-confidence category; ties go to the lower index."""
    confidences = np.asarray(confidences, dtype=np.float64)
    if confidences.ndim != 1 or confidences.size == 0:
        raise ParameterError(f"confidence vector must be non-empty 1-D, got shape {confidences.shape}")
    if not np.all(np.isfinite(confidences)):
        raise ParameterError("confidence vector contains non-finite entries")
    return int(np.argmax(confidences))


def confusion_score(confidences: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Confidence reweighted by normalized bank counts: (1 + n_i / sum n) * C_i.

    With an empty count vector the weight is exactly 1 everywhere, so the
    score falls back to the raw confidence.
    """
    confidences = np.asarray(confidences, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.float64)
    if confidences.shape != counts.shape:
        raise ParameterError(
            f"confidences {confidences.shape} and counts {counts.shape} must align"
        )
    if not np.all(np.isfinite(confidences)):
        raise ParameterError("confidence vector contains non-finite entries")
    if np.any(counts < 0):
        raise ParameterError("misclassification counts cannot be negative")
    total = counts.sum()
    if total == 0:
        return confidences.copy()
    return (1.0 + counts / total) * confidences


def select_pairs(scores: np.ndarray, pseudo_gt_index: int, count: int) -> list[tuple[int, float]]:
    """Top scoring categories excluding the pseudo-GT itself.

    Returns up to `count` (category, score) pairs in non-increasing score
    order, ties resolved toward the lower category index. Fewer categories
    than requested simply yields a shorter list.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if count < 1:
        raise ParameterError(f"pair count must be at least 1, got {count}")
    order = np.argsort(-scores, kind="stable")
    out = []
    for idx in order:
        if int(idx) == pseudo_gt_index:
            continue
        out.append((int(idx), float(scores[idx])))
        if len(out) == count:
            break
    return out


def load_external_prompts(path, dim: int) -> dict[tuple[str, str], tuple[np.ndarray, np.ndarray]]:
    """Load externally generated prompt vectors keyed by category name pair.

    Expected layout: {"pairs": [{"a": ..., "b": ..., "commonality": [...],
    "difference": [...]}]}. Vectors are normalized on load.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid prompt JSON: {exc}", path=str(path)) from exc
    if not isinstance(data, dict) or "pairs" not in data:
        raise FormatError("prompt file must contain a top-level 'pairs' list", path=str(path))
    table: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] = {}
    for i, entry in enumerate(data["pairs"]):
        try:
            a, b = entry["a"], entry["b"]
            commonality = np.asarray(entry["commonality"], dtype=np.float64)
            difference = np.asarray(entry["difference"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed prompt entry {i}: {exc}", path=str(path)) from exc
        if commonality.shape != (dim,) or difference.shape != (dim,):
            raise FormatError(
                f"prompt entry {i} has vectors of shape {commonality.shape}/{difference.shape}, "
                f"expected ({dim},)", path=str(path),
            )
        cn, dn = np.linalg.norm(commonality), np.linalg.norm(difference)
        if cn == 0 or dn == 0:
            raise FormatError(f"prompt entry {i} contains a zero vector", path=str(path))
        table[(a, b)] = (commonality / cn, difference / dn)
    return table


def prompt_embeddings(
    world: World,
    pair: tuple[int, int],
    external: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]] | None = None,
) -> tuple[PromptEmbedding, PromptEmbedding]:
    """Commonality and difference embeddings for a (pseudo-GT, category) pair."""
    pgt, category = pair
    name_a, name_b = world.names[pgt], world.names[category]
    if external is not None:
        vectors = external.get((name_a, name_b))
        if vectors is not None:
            commonality, difference = vectors
            return (
                PromptEmbedding("commonality", "external", commonality, pair),
                PromptEmbedding("difference", "external", difference, pair),
            )
    commonality = encode_text(world, COMMONALITY_TEMPLATE.format(a=name_a, b=name_b))
    difference = encode_text(world, DIFFERENCE_TEMPLATE.format(a=name_a, b=name_b))
    return (
        PromptEmbedding("commonality", "generated", commonality, pair),
        PromptEmbedding("difference", "generated", difference, pair),
    )


def mine_pair_set(
    world: World,
    bank: ConfusionBank,
    sample_id: int,
    confidences: np.ndarray,
    count: int,
    external: dict | None = None,
    use_bank_statistics: bool = True,
) -> ConfusionPairSet:
    """Full mining pass for one sample: pseudo-GT, scores, pairs, prompts.

    `use_bank_statistics=False` ranks by raw confidence instead of the
    bank-weighted score (the ablation that drops the statistics).
    """
    pgt = pseudo_gt(confidences)
    if use_bank_statistics:
        scores = confusion_score(confidences, bank.counts(pgt))
    else:
        scores = np.asarray(confidences, dtype=np.float64)
    pairs = select_pairs(scores, pgt, count)
    prompts = {
        category: prompt_embeddings(world, (pgt, category), external)
        for category, _ in pairs
    }
    return ConfusionPairSet(sample_id=sample_id, pseudo_gt=pgt, pairs=pairs, prompts=prompts)
