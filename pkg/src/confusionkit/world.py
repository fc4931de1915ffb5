"""Synthetic desk-scale dataset with frozen encoders and planted confusion.

Categories live as orthonormal prototype directions; confusable pairs are
created by rotating one member of each pair toward the other and, crucially,
by shrinking the paired difference direction inside the frozen feature
readout. The token sequences handed to downstream adapters keep the full
signal, so the planted confusion of the plain cosine classifier is learnable
rather than information-theoretic.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError, ParameterError
from .numerics import softmax_array
from .serialization import ByteReader, ByteWriter, WORLD_MAGIC, canonical_json

WORLD_VERSION = 1

# Anchor/hash blend of text embeddings. Keeps paired category embeddings
# below the 0.9 cosine audit bound while anchors still dominate matching.
ANCHOR_BLEND = 0.65
# Weight of non-category words in the hashed text embedding.
FILLER_WEIGHT = 0.15
# Residual scale kept along a planted pair's difference direction when the
# pair angle is zero; the kept fraction grows to 1 as the angle opens to
# a right angle, where planted confusion must vanish.
MIN_DIFFERENCE_SCALE = 0.05

CATEGORY_PROMPT = "a photo of a {name}"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


@dataclass(frozen=True)
class WorldSpec:
    """Generation parameters for a synthetic world."""

    num_categories: int = 32
    num_confusable_pairs: int = 8
    pair_angle: float = 0.15
    within_class_noise: float = 0.12
    samples_per_category: int = 50
    base_fraction: float = 0.75
    feature_dim: int = 32
    grid_rows: int = 4
    grid_cols: int = 4
    seed: int = 0

    @property
    def num_patches(self) -> int:
        return self.grid_rows * self.grid_cols

    def validate(self) -> None:
        if self.num_categories < 2:
            raise ConfigurationError("need at least two categories")
        if self.num_confusable_pairs < 0 or 2 * self.num_confusable_pairs > self.num_categories:
            raise ConfigurationError(
                f"{self.num_confusable_pairs} pairs do not fit into {self.num_categories} categories"
            )
        if not 0 < self.pair_angle <= np.pi / 2 + 1e-12:
            raise ConfigurationError(f"pair_angle must lie in (0, pi/2], got {self.pair_angle}")
        if self.within_class_noise < 0:
            raise ConfigurationError("within_class_noise must be non-negative")
        if self.samples_per_category < 1:
            raise ConfigurationError("samples_per_category must be positive")
        if not 0 < self.base_fraction < 1:
            raise ConfigurationError("base_fraction must lie in (0, 1)")
        base = round(self.base_fraction * self.num_categories)
        if base < 1 or base >= self.num_categories:
            raise ConfigurationError(
                f"base_fraction {self.base_fraction} leaves no usable base/novel split"
            )
        if self.grid_rows < 1 or self.grid_cols < 1:
            raise ConfigurationError("patch grid must be non-empty")
        if self.num_categories > self.feature_dim:
            raise ConfigurationError(
                "orthonormal prototypes require num_categories <= feature_dim"
            )

    def to_dict(self) -> dict:
        return {
            "num_categories": self.num_categories,
            "num_confusable_pairs": self.num_confusable_pairs,
            "pair_angle": self.pair_angle,
            "within_class_noise": self.within_class_noise,
            "samples_per_category": self.samples_per_category,
            "base_fraction": self.base_fraction,
            "feature_dim": self.feature_dim,
            "grid_rows": self.grid_rows,
            "grid_cols": self.grid_cols,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "WorldSpec":
        known = {f: data[f] for f in cls.__dataclass_fields__ if f in data}
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown world spec fields: {sorted(unknown)}")
        return cls(**known)


@dataclass
class World:
    """Immutable dataset plus frozen encoders."""

    spec: WorldSpec
    names: list[str]
    prototypes: np.ndarray          # (C, D) latent directions
    pairs: list[tuple[int, int]]
    base_categories: list[int]
    novel_categories: list[int]
    sample_tokens: np.ndarray       # (S, N+1, D) raw token sequences, row 0 = CLS
    sample_labels: np.ndarray       # (S,)
    patch_masks: np.ndarray         # (N, D)
    patch_offsets: np.ndarray       # (N, D)
    image_projection: np.ndarray    # (D, D) frozen token encoder
    feature_readout: np.ndarray     # (D, D) shrunk CLS readout
    text_projection: np.ndarray     # (D, D) frozen text encoder
    name_token_vectors: np.ndarray  # (C, D) orthonormalized hash vectors of the names
    anchors: np.ndarray             # (C, D) per-category readout-space anchors
    category_embeddings: np.ndarray  # (C, D) cached encode_text of the prompt template
    _name_index: dict[str, int] = field(default_factory=dict, repr=False)
    _encode_cache: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._name_index:
            self._name_index = {n: i for i, n in enumerate(self.names)}
        for arr in (self.prototypes, self.sample_tokens, self.sample_labels,
                    self.patch_masks, self.patch_offsets, self.image_projection,
                    self.feature_readout, self.text_projection,
                    self.name_token_vectors, self.anchors,
                    self.category_embeddings):
            arr.flags.writeable = False

    @property
    def num_categories(self) -> int:
        return self.spec.num_categories

    @property
    def sample_count(self) -> int:
        return int(self.sample_labels.shape[0])

    def category_of(self, sample_id: int) -> int:
        return int(self.sample_labels[sample_id])

    def samples_of(self, category: int) -> np.ndarray:
        return np.flatnonzero(self.sample_labels == category)

    def sample_ids_for(self, categories) -> np.ndarray:
        mask = np.isin(self.sample_labels, list(categories))
        return np.flatnonzero(mask)

    def base_sample_ids(self) -> np.ndarray:
        return self.sample_ids_for(self.base_categories)

    def novel_sample_ids(self) -> np.ndarray:
        return self.sample_ids_for(self.novel_categories)

    def pair_partner(self, category: int) -> int | None:
        for a, b in self.pairs:
            if a == category:
                return b
            if b == category:
                return a
        return None

    def encoder_checksum(self) -> str:
        digest = hashlib.sha256()
        for arr in (self.prototypes, self.patch_masks, self.patch_offsets,
                    self.image_projection, self.feature_readout,
                    self.text_projection, self.anchors, self.category_embeddings):
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()


# -- generation --------------------------------------------------------------


_SYLLABLES = [c + v for c in "bdfgklmnprstvz" for v in "aeiou"]
_RESERVED_WORDS = {"a", "photo", "of", "common", "traits", "and", "what", "distinguishes", "from"}


def _make_names(rng: np.random.Generator, count: int) -> list[str]:
    names: list[str] = []
    seen = set(_RESERVED_WORDS)
    while len(names) < count:
        parts = rng.integers(0, len(_SYLLABLES), size=3)
        name = "".join(_SYLLABLES[int(p)] for p in parts)
        if name not in seen:
            seen.add(name)
            names.append(name)
    return names


def _gram_schmidt(rng: np.random.Generator, count: int, dim: int) -> np.ndarray:
    vectors = rng.standard_normal((count, dim))
    basis = np.zeros((count, dim))
    for i in range(count):
        v = vectors[i]
        for j in range(i):
            v = v - (v @ basis[j]) * basis[j]
        norm = np.linalg.norm(v)
        while norm < 1e-9:  # essentially impossible, but keep generation total
            v = rng.standard_normal(dim)
            for j in range(i):
                v = v - (v @ basis[j]) * basis[j]
            norm = np.linalg.norm(v)
        basis[i] = v / norm
    return basis


def _render_tokens(latent: np.ndarray, masks: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Latent vector -> raw (N+1) x D token sequence; row 0 is the CLS token."""
    patches = latent[None, :] * masks + offsets
    return np.concatenate([latent[None, :], patches], axis=0)


def _encode_raw_tokens(world_proj: np.ndarray, raw: np.ndarray) -> np.ndarray:
    return np.tanh(raw @ world_proj)


def generate_world(spec: WorldSpec) -> World:
    """Build a deterministic world from the spec; same seed, same bytes."""
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    C, D, N = spec.num_categories, spec.feature_dim, spec.num_patches

    names = _make_names(rng, C)
    prototypes = _gram_schmidt(rng, C, D)

    order = rng.permutation(C)
    base_count = round(spec.base_fraction * C)
    base_categories = sorted(int(c) for c in order[:base_count])
    novel_categories = sorted(int(c) for c in order[base_count:])
    base_set = set(base_categories)

    # Pair inside the base split while capacity allows so planted confusion
    # is reachable by training; overflow spills into novel categories.
    pool = [int(c) for c in order if int(c) in base_set]
    pool += [int(c) for c in order if int(c) not in base_set]
    pairs = [(pool[2 * i], pool[2 * i + 1]) for i in range(spec.num_confusable_pairs)]
    for a, b in pairs:
        rotated = np.cos(spec.pair_angle) * prototypes[a] + np.sin(spec.pair_angle) * prototypes[b]
        prototypes[b] = rotated / np.linalg.norm(rotated)

    patch_masks = rng.uniform(0.5, 1.5, size=(N, D))
    patch_offsets = 0.2 * rng.standard_normal((N, D))
    # Random rotations rather than Gaussian matrices: near-orthogonal latent
    # directions must stay near-orthogonal after encoding, otherwise the
    # baseline bleeds confusion into unpaired categories.
    image_projection = _gram_schmidt(rng, D, D).T
    text_projection = _gram_schmidt(rng, D, D).T

    tokens = np.zeros((C * spec.samples_per_category, N + 1, D))
    labels = np.zeros(C * spec.samples_per_category, dtype=np.int64)
    idx = 0
    for c in range(C):
        for _ in range(spec.samples_per_category):
            latent = prototypes[c] + spec.within_class_noise * rng.standard_normal(D)
            tokens[idx] = _render_tokens(latent, patch_masks, patch_offsets)
            labels[idx] = c
            idx += 1

    pre_anchors = np.zeros((C, D))
    for c in range(C):
        pure = _render_tokens(prototypes[c], patch_masks, patch_offsets)
        pre_anchors[c] = _encode_raw_tokens(image_projection, pure)[0]

    closeness = np.cos(spec.pair_angle)
    keep = MIN_DIFFERENCE_SCALE + (1.0 - MIN_DIFFERENCE_SCALE) * (1.0 - closeness)
    readout = np.eye(D)
    for a, b in pairs:
        delta = pre_anchors[a] - pre_anchors[b]
        norm = np.linalg.norm(delta)
        if norm < 1e-12:
            continue
        delta = delta / norm
        readout = (np.eye(D) - (1.0 - keep) * np.outer(delta, delta)) @ readout

    anchors = pre_anchors @ readout.T
    anchors = anchors / np.linalg.norm(anchors, axis=1, keepdims=True)

    # Orthonormalize the name hash vectors (in category order) so embedding
    # overlap between two categories never depends on hash luck.
    raw_name_vectors = np.stack([_hash_token_vector(name, D) for name in names])
    name_token_vectors = np.zeros_like(raw_name_vectors)
    for i in range(C):
        v = raw_name_vectors[i]
        for j in range(i):
            v = v - (v @ name_token_vectors[j]) * name_token_vectors[j]
        name_token_vectors[i] = v / np.linalg.norm(v)

    world = World(
        spec=spec,
        names=names,
        prototypes=prototypes,
        pairs=pairs,
        base_categories=base_categories,
        novel_categories=novel_categories,
        sample_tokens=tokens,
        sample_labels=labels,
        patch_masks=patch_masks,
        patch_offsets=patch_offsets,
        image_projection=image_projection,
        feature_readout=readout,
        text_projection=text_projection,
        name_token_vectors=name_token_vectors,
        anchors=anchors,
        category_embeddings=np.zeros((C, D)),
    )
    embeddings = np.stack([
        encode_text(world, CATEGORY_PROMPT.format(name=name)) for name in names
    ])
    embeddings.flags.writeable = False
    world.category_embeddings = embeddings
    return world


# -- frozen encoders ---------------------------------------------------------


def encode_image(world: World, sample_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Frozen image encoding: (token sequence, unit global feature).

    The token sequence keeps the full latent signal; the global feature is
    the CLS row pushed through the readout, where planted pair differences
    are attenuated.
    """
    if not 0 <= sample_id < world.sample_count:
        raise ParameterError(f"sample id {sample_id} out of range")
    cached = world._encode_cache.get(sample_id)
    if cached is not None:
        return cached
    encoded = _encode_raw_tokens(world.image_projection, world.sample_tokens[sample_id])
    feature = world.feature_readout @ encoded[0]
    feature = feature / np.linalg.norm(feature)
    encoded.flags.writeable = False
    feature.flags.writeable = False
    world._encode_cache[sample_id] = (encoded, feature)
    return encoded, feature


def _hash_token_vector(token: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
    gen = np.random.Generator(np.random.PCG64(seed))
    v = gen.standard_normal(dim)
    return v / np.linalg.norm(v)


def encode_text(world: World, text: str) -> np.ndarray:
    """Frozen deterministic text encoding, unit norm.

    Tokens are hashed to fixed random directions (category names carry full
    weight, filler words a small one) and pushed through the frozen text
    projection. Texts mentioning known categories are blended toward those
    categories' feature-space anchors, which is what aligns the two frozen
    modalities.
    """
    tokens = _TOKEN_RE.findall(text.lower())
    if not tokens:
        raise ParameterError("cannot encode empty text")
    dim = world.spec.feature_dim
    total = np.zeros(dim)
    mentioned: list[int] = []
    for token in tokens:
        index = world._name_index.get(token)
        if index is not None:
            if index not in mentioned:
                mentioned.append(index)
            total += world.name_token_vectors[index]
        else:
            total += FILLER_WEIGHT * _hash_token_vector(token, dim)
    hashed = np.tanh(world.text_projection @ total)
    norm = np.linalg.norm(hashed)
    if norm < 1e-12:
        raise ParameterError(f"text {text!r} hashed to a zero embedding")
    hashed = hashed / norm
    if mentioned:
        anchor = world.anchors[mentioned].mean(axis=0)
        direction = anchor / np.linalg.norm(anchor)
        # keep only the hash component orthogonal to the anchor so the
        # anchor/hash mix has a predictable geometry
        residual = hashed - (hashed @ direction) * direction
        residual_norm = np.linalg.norm(residual)
        if residual_norm > 1e-9:
            hashed = residual / residual_norm
        blended = ANCHOR_BLEND * anchor + (1.0 - ANCHOR_BLEND) * hashed
        return blended / np.linalg.norm(blended)
    return hashed


def baseline_classify(world: World, sample_id: int, tau: float) -> np.ndarray:
    """Frozen-model confidence distribution over all categories."""
    if tau <= 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    _, feature = encode_image(world, sample_id)
    sims = world.category_embeddings @ feature
    return softmax_array(sims, tau)


# -- persistence -------------------------------------------------------------


def save_world(world: World, path) -> None:
    """Write the versioned binary plus a JSON sidecar holding the spec."""
    path = Path(path)
    w = ByteWriter()
    w.raw(WORLD_MAGIC)
    w.u32(WORLD_VERSION)
    w.text(canonical_json(world.spec.to_dict()))
    w.u32(len(world.names))
    for name in world.names:
        w.text(name)
    w.array_f64(world.prototypes)
    w.array_i64(np.array(world.pairs, dtype=np.int64).reshape(len(world.pairs), 2))
    w.array_i64(np.array(world.base_categories, dtype=np.int64))
    w.array_i64(np.array(world.novel_categories, dtype=np.int64))
    w.array_i64(world.sample_labels)
    w.array_f64(world.sample_tokens)
    w.array_f64(world.patch_masks)
    w.array_f64(world.patch_offsets)
    w.array_f64(world.image_projection)
    w.array_f64(world.feature_readout)
    w.array_f64(world.text_projection)
    w.array_f64(world.name_token_vectors)
    w.array_f64(world.anchors)
    w.array_f64(world.category_embeddings)
    path.write_bytes(w.getvalue())
    Path(str(path) + ".json").write_text(canonical_json(world.spec.to_dict()))


def load_world(path) -> World:
    path = Path(path)
    reader = ByteReader(path.read_bytes(), path=str(path))
    reader.expect_magic(WORLD_MAGIC)
    reader.expect_version(WORLD_VERSION)
    spec = WorldSpec.from_dict(json.loads(reader.text()))
    count = reader.u32()
    names = [reader.text() for _ in range(count)]
    prototypes = reader.array_f64()
    pair_array = reader.array_i64()
    pairs = [(int(a), int(b)) for a, b in pair_array.reshape(-1, 2)]
    base_categories = [int(c) for c in reader.array_i64()]
    novel_categories = [int(c) for c in reader.array_i64()]
    labels = reader.array_i64()
    tokens = reader.array_f64()
    masks = reader.array_f64()
    offsets = reader.array_f64()
    image_projection = reader.array_f64()
    readout = reader.array_f64()
    text_projection = reader.array_f64()
    name_token_vectors = reader.array_f64()
    anchors = reader.array_f64()
    embeddings = reader.array_f64()
    reader.expect_end()
    if len(names) != spec.num_categories:
        raise FormatError(
            f"category table holds {len(names)} names but spec declares {spec.num_categories}",
            offset=reader.offset, path=str(path),
        )
    if tokens.shape != (labels.shape[0], spec.num_patches + 1, spec.feature_dim):
        raise FormatError(
            f"token block shape {tokens.shape} disagrees with spec", offset=reader.offset, path=str(path)
        )
    return World(
        spec=spec,
        names=names,
        prototypes=prototypes,
        pairs=pairs,
        base_categories=base_categories,
        novel_categories=novel_categories,
        sample_tokens=tokens,
        sample_labels=labels,
        patch_masks=masks,
        patch_offsets=offsets,
        image_projection=image_projection,
        feature_readout=readout,
        text_projection=text_projection,
        name_token_vectors=name_token_vectors,
        anchors=anchors,
        category_embeddings=embeddings,
    )
