"""Persistent index of misclassified samples keyed by (pseudo-GT, true category).

A record for a sample whose true category is T but which the base model
predicted as P is filed under pseudo-GT P and keyed by T: querying the bank
for P answers "which categories' samples does the model pull into P, and
with which concrete instances". Counts are always derived from the record
lists, never stored separately. Once built the bank is frozen; training
never mutates it.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigurationError, FormatError, UsageError
from .serialization import BANK_MAGIC, ByteReader, ByteWriter, canonical_json
from .world import World, baseline_classify, encode_image

BANK_VERSION = 1


@dataclass
class ConfusionRecord:
    sample_id: int
    pseudo_gt: int          # the category the sample was pulled into (filing key)
    true_category: int      # the confused category it actually belongs to
    feature: np.ndarray     # cached unit-norm global feature
    token_ref: int          # index of the sample's token sequence in the world

    @property
    def predicted_category(self) -> int:
        return self.pseudo_gt

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionRecord):
            return NotImplemented
        return (
            self.sample_id == other.sample_id
            and self.pseudo_gt == other.pseudo_gt
            and self.true_category == other.true_category
            and self.token_ref == other.token_ref
            and np.array_equal(self.feature, other.feature)
        )


@dataclass(frozen=True)
class BankProvenance:
    builder: str
    seed: int
    created: str
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"builder": self.builder, "seed": self.seed,
                "created": self.created, "extra": self.extra}

    @classmethod
    def from_dict(cls, data: dict) -> "BankProvenance":
        return cls(builder=data["builder"], seed=int(data["seed"]),
                   created=data["created"], extra=data.get("extra", {}))


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH override keeps builds reproducible when requested
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = int(epoch) if epoch is not None else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(moment))


class ConfusionBank:
    """Frozen two-level index: pseudo-GT category -> confused category -> records."""

    def __init__(self, num_categories: int, provenance: BankProvenance):
        if num_categories < 1:
            raise ConfigurationError("bank needs at least one category")
        self.num_categories = num_categories
        self.provenance = provenance
        self._table: dict[int, dict[int, list[ConfusionRecord]]] = {}
        self._frozen = False

    # -- build phase --------------------------------------------------------

    def insert(self, record: ConfusionRecord) -> None:
        if self._frozen:
            raise UsageError("bank is frozen; no insertions after build")
        if record.pseudo_gt == record.true_category:
            raise UsageError("bank stores only misclassifications (pseudo-GT != true)")
        by_confused = self._table.setdefault(record.pseudo_gt, {})
        by_confused.setdefault(record.true_category, []).append(record)

    def freeze(self) -> None:
        self._frozen = True

    @property
    def frozen(self) -> bool:
        return self._frozen

    # -- queries ------------------------------------------------------------

    def counts(self, pseudo_gt: int) -> np.ndarray:
        """Misclassification counts n_i per confused category under pseudo_gt.

        Unknown pseudo-GT keys yield an all-zero vector; that is a valid
        answer (the score weighting degrades to plain confidence).
        """
        out = np.zeros(self.num_categories, dtype=np.int64)
        for category, records in self._table.get(pseudo_gt, {}).items():
            out[category] = len(records)
        return out

    def retrieve(self, pseudo_gt: int, category: int) -> list[ConfusionRecord]:
        return list(self._table.get(pseudo_gt, {}).get(category, []))

    def pseudo_gt_keys(self) -> list[int]:
        return sorted(self._table)

    def confused_keys(self, pseudo_gt: int) -> list[int]:
        return sorted(self._table.get(pseudo_gt, {}))

    def all_records(self) -> list[ConfusionRecord]:
        out = []
        for pgt in sorted(self._table):
            for category in sorted(self._table[pgt]):
                out.extend(self._table[pgt][category])
        return out

    @property
    def total_records(self) -> int:
        return sum(len(r) for by in self._table.values() for r in by.values())

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(canonical_json(self.provenance.to_dict()).encode())
        for pgt in sorted(self._table):
            for category in sorted(self._table[pgt]):
                for rec in self._table[pgt][category]:
                    digest.update(
                        f"{pgt}:{category}:{rec.sample_id}:{rec.token_ref}".encode()
                    )
                    digest.update(np.ascontiguousarray(rec.feature).tobytes())
        return digest.hexdigest()

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionBank):
            return NotImplemented
        if self.num_categories != other.num_categories:
            return False
        if self.provenance != other.provenance:
            return False
        if sorted(self._table) != sorted(other._table):
            return False
        for pgt in self._table:
            if sorted(self._table[pgt]) != sorted(other._table[pgt]):
                return False
            for cat in self._table[pgt]:
                if self._table[pgt][cat] != other._table[pgt][cat]:
                    return False
        return True

    # -- persistence ---------------------------------------------------------

    def to_json_dict(self) -> dict:
        entries = []
        for pgt in sorted(self._table):
            for category in sorted(self._table[pgt]):
                records = self._table[pgt][category]
                entries.append({
                    "pseudo_gt": pgt,
                    "confused_category": category,
                    "count": len(records),
                    "sample_ids": [r.sample_id for r in records],
                })
        return {
            "num_categories": self.num_categories,
            "provenance": self.provenance.to_dict(),
            "total_records": self.total_records,
            "entries": entries,
        }

    def save(self, path) -> None:
        w = ByteWriter()
        w.raw(BANK_MAGIC)
        w.u32(BANK_VERSION)
        w.text(canonical_json(self.provenance.to_dict()))
        w.u32(self.num_categories)
        records = []
        for pgt in sorted(self._table):
            for category in sorted(self._table[pgt]):
                records.extend(self._table[pgt][category])
        w.u64(len(records))
        for rec in records:
            w.u64(rec.sample_id)
            w.u32(rec.pseudo_gt)
            w.u32(rec.true_category)
            w.u64(rec.token_ref)
            w.array_f64(rec.feature)
        Path(path).write_bytes(w.getvalue())

    @classmethod
    def load(cls, path) -> "ConfusionBank":
        path = Path(path)
        reader = ByteReader(path.read_bytes(), path=str(path))
        reader.expect_magic(BANK_MAGIC)
        reader.expect_version(BANK_VERSION)
        provenance = BankProvenance.from_dict(json.loads(reader.text()))
        num_categories = reader.u32()
        bank = cls(num_categories, provenance)
        count = reader.u64()
        for _ in range(count):
            sample_id = reader.u64()
            pseudo_gt = reader.u32()
            true_category = reader.u32()
            token_ref = reader.u64()
            feature = reader.array_f64()
            if pseudo_gt >= num_categories or true_category >= num_categories:
                raise FormatError(
                    f"record category out of range ({pseudo_gt}, {true_category})",
                    offset=reader.offset, path=str(path),
                )
            bank.insert(ConfusionRecord(
                sample_id=int(sample_id), pseudo_gt=int(pseudo_gt),
                true_category=int(true_category), feature=feature,
                token_ref=int(token_ref),
            ))
        reader.expect_end()
        bank.freeze()
        return bank


def build_bank(
    world: World,
    sample_ids,
    tau: float,
    classifier: Callable[[World, int, float], np.ndarray] | None = None,
    builder: str = "frozen-baseline",
    seed: int = 0,
    extra_provenance: dict | None = None,
) -> ConfusionBank:
    """Run the base model over the given samples and index every mistake.

    Correctly classified samples are not stored. The sample set must come
    from the world's base split; novel categories never reach the bank.
    """
    sample_ids = list(sample_ids)
    if not sample_ids:
        raise ConfigurationError("cannot build a bank from an empty training set")
    base = set(world.base_categories)
    classify = classifier if classifier is not None else baseline_classify
    provenance = BankProvenance(
        builder=builder, seed=seed, created=_timestamp(),
        extra=dict(extra_provenance or {}),
    )
    bank = ConfusionBank(world.num_categories, provenance)
    for sid in sample_ids:
        true_category = world.category_of(sid)
        if true_category not in base:
            raise ConfigurationError(
                f"sample {sid} belongs to novel category {true_category}; "
                "banks index base-split samples only"
            )
        confidences = classify(world, sid, tau)
        predicted = int(np.argmax(confidences))
        if predicted == true_category:
            continue
        _, feature = encode_image(world, sid)
        bank.insert(ConfusionRecord(
            sample_id=sid, pseudo_gt=predicted, true_category=true_category,
            feature=np.array(feature), token_ref=sid,
        ))
    bank.freeze()
    return bank
