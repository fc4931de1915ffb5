"""Frozen-backbone training loop, evaluation, and correction metrics.

Per step the trainer assembles, for each batch sample, one matched pair per
retained representative plus one for the instance itself: the image side is
the adapter/fusion feature refined by the expert mixture, the text side is
the category embedding blended with the pair's difference prompt and pushed
through the trainable text projection. The symmetric InfoNCE over the batch
list is minimized with plain SGD; encoder parameters are never touched.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..adapter import (
    AdapterParams,
    RepresentativeNoise,
    RepresentativeSet,
    adapter_forward,
    attach_tokens,
    init_adapter,
    representative_samples,
    sample_confusion_feature,
)
from ..bank import ConfusionBank
from ..errors import ConfigurationError, FormatError, UsageError
from ..experts import (
    ExpertParams,
    RouterParams,
    expert_forward,
    init_experts,
    init_router,
    mask_training_step,
    route_and_fuse,
)
from ..numerics import (
    GradRecord,
    Tensor,
    backward,
    l2_normalize,
    matmul,
    no_grad,
    reshape,
    softmax_array,
    top_k,
)
from ..semantic import ConfusionPairSet, load_external_prompts, mine_pair_set
from ..serialization import CHECKPOINT_MAGIC, ByteReader, ByteWriter, canonical_json
from ..world import World, baseline_classify, encode_image
from .config import TrainConfig
from .losses import harmonic_mean, loss_confuse, loss_ori

CHECKPOINT_VERSION = 1


@dataclass
class EvalResult:
    base_accuracy: float | None = None
    novel_accuracy: float | None = None
    hm: float | None = None

    def to_dict(self) -> dict:
        return {
            "base_accuracy": self.base_accuracy,
            "novel_accuracy": self.novel_accuracy,
            "harmonic_mean": self.hm,
        }


@dataclass
class Report:
    seed: int
    config: dict
    baseline: EvalResult
    trained: EvalResult
    correction_rate: float | None
    bank_records: int
    loss_curve: list[float]
    confusion_before: list[list[int]]
    confusion_after: list[list[int]]
    category_names: list[str]
    alpha_inference: float

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config,
            "baseline": self.baseline.to_dict(),
            "trained": self.trained.to_dict(),
            "correction_rate": self.correction_rate,
            "bank_records": self.bank_records,
            "loss_curve": self.loss_curve,
            "confusion_before": self.confusion_before,
            "confusion_after": self.confusion_after,
            "category_names": self.category_names,
            "alpha_inference": self.alpha_inference,
        }


@dataclass
class PipelineModel:
    """Trained parameters plus everything needed to classify at inference."""

    config: TrainConfig
    record: GradRecord
    adapter: AdapterParams
    experts: list[ExpertParams]
    router: RouterParams
    projection: Tensor
    alpha_inference: float = 0.0
    world_checksum: str = ""

    def text_matrix(self, world: World) -> np.ndarray:
        """Unit rows: every category embedding through the text projection."""
        projected = world.category_embeddings @ self.projection.data
        norms = np.linalg.norm(projected, axis=1, keepdims=True)
        return projected / norms

    def image_feature(self, world: World, sample_id: int) -> np.ndarray:
        """Inference-time image feature (no masking, no bank access)."""
        tokens, global_feature = encode_image(world, sample_id)
        with no_grad():
            if self.config.use_sam:
                out = adapter_forward(Tensor(tokens), self.alpha_inference, self.adapter)
                dim = out.data.shape[1]
                feature = l2_normalize(reshape(out.narrow(0, 0, 1), (dim,)))
            else:
                feature = Tensor(global_feature)
            if self.config.use_mgde:
                feature, _ = route_and_fuse(feature, self.router, self.experts)
        return feature.data

    def classify(self, world: World, sample_id: int, text_matrix: np.ndarray | None = None) -> np.ndarray:
        feature = self.image_feature(world, sample_id)
        feature = feature / np.linalg.norm(feature)
        matrix = self.text_matrix(world) if text_matrix is None else text_matrix
        return softmax_array(matrix @ feature, self.config.temperature)


# -- sample mining cache ------------------------------------------------------


@dataclass
class MinedSample:
    sample_id: int
    label: int
    tokens: np.ndarray
    global_feature: np.ndarray
    pair_set: ConfusionPairSet
    reps: RepresentativeSet
    text_blends: list[np.ndarray] = field(default_factory=list)  # one per representative


def select_training_ids(world: World, shots: int) -> list[int]:
    """First `shots` samples of every base category (samples are iid draws)."""
    if shots < 1:
        raise ConfigurationError(f"shots must be positive, got {shots}")
    ids: list[int] = []
    for category in world.base_categories:
        ids.extend(int(i) for i in world.samples_of(category)[:shots])
    return ids


def _blend_text(world: World, category: int, pair_prompts, mix: float) -> np.ndarray:
    base = world.category_embeddings[category]
    if pair_prompts is None or mix == 0:
        return np.array(base)
    _, difference = pair_prompts
    blended = base + mix * difference.vector
    return blended / np.linalg.norm(blended)


def build_mining_cache(
    world: World,
    bank: ConfusionBank,
    config: TrainConfig,
    sample_ids: list[int],
    random_rng: np.random.Generator | None = None,
) -> list[MinedSample]:
    """Precompute everything frozen per training sample.

    Pair sets, representatives, alphas and text blends depend only on the
    frozen encoders and the frozen bank, so they are mined once before the
    loop. Representative token sequences are attached here as well.
    """
    external = None
    if config.external_prompts_path:
        external = load_external_prompts(config.external_prompts_path, world.spec.feature_dim)
    cache: list[MinedSample] = []
    prompt_memo: dict[tuple[int, int], tuple] = {}
    for sid in sample_ids:
        tokens, feature = encode_image(world, sid)
        confidences = baseline_classify(world, sid, config.temperature)
        pair_set = mine_pair_set(
            world, bank, sid, confidences, config.pairs_c,
            external=external, use_bank_statistics=config.use_sem,
        )
        for category in list(pair_set.prompts):
            key = (pair_set.pseudo_gt, category)
            if key in prompt_memo:
                pair_set.prompts[category] = prompt_memo[key]
            else:
                prompt_memo[key] = pair_set.prompts[category]
        reps = representative_samples(
            feature, pair_set, bank,
            alpha_scale=config.alpha_scale,
            alpha_exponent=config.alpha_exponent,
            per_category=config.reps_per_category,
            rng=random_rng if config.representative_mode == "random" else None,
        )
        attach_tokens(reps, world)
        blends = [
            _blend_text(world, entry.record.true_category,
                        pair_set.prompts.get(entry.record.true_category),
                        config.text_prompt_mix)
            for entry in reps.entries
        ]
        cache.append(MinedSample(
            sample_id=sid, label=world.category_of(sid), tokens=tokens,
            global_feature=feature, pair_set=pair_set, reps=reps,
            text_blends=blends,
        ))
    return cache


# -- model construction -------------------------------------------------------


def build_model(
    world: World,
    config: TrainConfig,
    commonality_pool: np.ndarray | None = None,
    difference_pool: np.ndarray | None = None,
) -> PipelineModel:
    """Fresh parameters; prompt pools seed the semantic experts when given."""
    config.validate()
    dim = world.spec.feature_dim
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 17])))
    record = GradRecord()
    projection = record.parameter("projection.w", np.eye(dim))
    adapter = init_adapter(
        record, dim, config.attention_heads,
        (world.spec.grid_rows, world.spec.grid_cols), rng,
        kernel_size=config.conv_kernel_size, query_mode=config.query_mode,
    )
    if commonality_pool is None or len(commonality_pool) == 0:
        commonality_pool = world.category_embeddings[: max(config.prompt_clusters, 1)]
    if difference_pool is None or len(difference_pool) == 0:
        difference_pool = world.category_embeddings[-max(config.prompt_clusters, 1):]
    experts = init_experts(
        record, world, np.asarray(commonality_pool), np.asarray(difference_pool),
        projection, min(config.prompt_clusters, len(commonality_pool), len(difference_pool)),
        config.expert_hidden, config.seed, rng,
    )
    router = init_router(record, dim, config.expert_top_k, rng)
    return PipelineModel(
        config=config, record=record, adapter=adapter, experts=experts,
        router=router, projection=projection,
        world_checksum=world.encoder_checksum(),
    )


def _prompt_pools(cache: list[MinedSample]) -> tuple[np.ndarray, np.ndarray]:
    commonality, difference, seen = [], [], set()
    for mined in cache:
        for category, (com, diff) in mined.pair_set.prompts.items():
            key = (mined.pair_set.pseudo_gt, category)
            if key in seen:
                continue
            seen.add(key)
            commonality.append(com.vector)
            difference.append(diff.vector)
    if not commonality:
        return np.zeros((0, 0)), np.zeros((0, 0))
    return np.stack(commonality), np.stack(difference)


# -- training -----------------------------------------------------------------


def _routed(model: PipelineModel, feature: Tensor,
            mask_rng: np.random.Generator | None) -> Tensor:
    """Expert fusion with optional training-time cue masking."""
    if not model.config.use_mgde:
        return feature
    overrides = None
    if mask_rng is not None and model.config.mask_probability > 0:
        logits = feature.data @ model.router.w_r.data
        selected = [idx for idx, _ in top_k(logits, model.router.top_k)]
        overrides = mask_training_step(
            feature, selected, model.config.mask_probability, mask_rng
        )
    fused, _ = route_and_fuse(feature, model.router, model.experts, expert_inputs=overrides)
    return fused


def _projected_text(model: PipelineModel, blend: np.ndarray) -> Tensor:
    dim = blend.shape[0]
    row = matmul(Tensor(blend.reshape(1, dim)), model.projection)
    return reshape(row, (dim,))


def _instance_feature(
    model: PipelineModel,
    mined: MinedSample,
    mask_rng: np.random.Generator | None,
    noise: RepresentativeNoise | None,
) -> Tensor:
    config = model.config
    instance_tokens = Tensor(mined.tokens)
    if config.use_sam and not mined.reps.empty:
        fused = sample_confusion_feature(instance_tokens, mined.reps, model.adapter, noise=noise)
    elif config.use_sam:
        # no representatives banked for any pair: instance-only branch
        out = adapter_forward(instance_tokens, 0.0, model.adapter)
        fused = l2_normalize(reshape(out.narrow(0, 0, 1), (out.data.shape[1],)))
    else:
        fused = Tensor(mined.global_feature)
    return _routed(model, fused, mask_rng)


def batch_loss(
    model: PipelineModel,
    world: World,
    batch: list[MinedSample],
    mask_rng: np.random.Generator | None = None,
    noise: RepresentativeNoise | None = None,
) -> tuple[Tensor | None, int]:
    """Assemble the batch's matched lists and return (loss, pair count).

    Instance couples pair each refined instance feature with its true
    category's projected text; representative couples pair each retained
    representative's adapter feature with its own category's prompt-blended
    text. Every category enters the list at most once (instances take
    precedence): duplicate texts would act as unbeatable negatives for their
    own positives and the loss could never settle.
    """
    config = model.config
    image_side: list[Tensor] = []
    text_side: list[Tensor] = []
    ori_terms: list[Tensor] = []
    seen: set[int] = set()

    for mined in batch:
        refined = _instance_feature(model, mined, mask_rng, noise)
        if mined.label not in seen:
            seen.add(mined.label)
            image_side.append(refined)
            text_side.append(_projected_text(model, world.category_embeddings[mined.label]))
        if config.loss_mode == "confuse_plus_ori":
            text_matrix_tensor = matmul(Tensor(world.category_embeddings), model.projection)
            sims = reshape(
                matmul(text_matrix_tensor, reshape(refined, (refined.data.shape[0], 1))),
                (world.num_categories,),
            )
            from ..numerics import softmax as softmax_t

            one_hot = np.zeros(world.num_categories)
            one_hot[mined.label] = 1.0
            ori_terms.append(loss_ori(softmax_t(sims, config.temperature), one_hot))

    if config.use_sam:
        for mined in batch:
            for entry, blend in zip(mined.reps.entries, mined.text_blends):
                category = entry.record.true_category
                if category in seen:
                    continue
                seen.add(category)
                tokens = entry.tokens if noise is None else noise.apply(entry.tokens)
                rep_out = adapter_forward(Tensor(tokens), entry.alpha, model.adapter)
                rep_feature = l2_normalize(
                    reshape(rep_out.narrow(0, 0, 1), (rep_out.data.shape[1],))
                )
                image_side.append(_routed(model, rep_feature, mask_rng))
                text_side.append(_projected_text(model, blend))

    total: Tensor | None = None
    if image_side:
        total = loss_confuse(image_side, text_side, config.temperature)
    if ori_terms:
        ori = ori_terms[0]
        for term in ori_terms[1:]:
            ori = ori + term
        ori = ori * (config.ori_weight / len(ori_terms))
        total = ori if total is None else total + ori
    return total, len(image_side)


def train(
    world: World,
    bank: ConfusionBank,
    config: TrainConfig,
    run_dir=None,
    world_path: str | None = None,
    bank_path: str | None = None,
) -> tuple[PipelineModel, Report]:
    """Full training run; returns the model and a reproducible report."""
    config.validate()
    encoder_before = world.encoder_checksum()
    bank_before = bank.checksum()

    seeds = np.random.SeedSequence(config.seed).spawn(4)
    rng_order = np.random.Generator(np.random.PCG64(seeds[0]))
    rng_mask = np.random.Generator(np.random.PCG64(seeds[1]))
    rng_noise = np.random.Generator(np.random.PCG64(seeds[2]))
    rng_random_rep = np.random.Generator(np.random.PCG64(seeds[3]))

    train_ids = select_training_ids(world, config.train_shots)
    cache = build_mining_cache(world, bank, config, train_ids, random_rng=rng_random_rep)
    by_id = {m.sample_id: m for m in cache}

    if bank.total_records == 0 and config.use_sam:
        warnings.warn("confusion bank is empty; training degenerates to the cross-entropy term")
        config = config.with_overrides(loss_mode="confuse_plus_ori")

    commonality_pool, difference_pool = _prompt_pools(cache)
    model = build_model(world, config, commonality_pool, difference_pool)

    baseline = evaluate_baseline(world, config.temperature)

    with_reps = [m.reps.mean_alpha() for m in cache if not m.reps.empty]
    model.alpha_inference = float(np.mean(with_reps)) if with_reps else 0.0

    noise = None
    if config.noise_level > 0:
        noise = RepresentativeNoise(config.noise_level, rng_noise)

    matrix_before = confusion_matrix_from_bank(bank)

    # proximal anchor: adaptation stays local to the initialization so the
    # trained maps keep acting like the identity on unseen directions
    initial = {name: tensor.data.copy() for name, tensor in model.record.trainable_items()}

    loss_curve: list[float] = []
    for _ in range(config.epochs):
        order = rng_order.permutation(len(train_ids))
        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [by_id[train_ids[int(i)]] for i in order[start:start + config.batch_size]]
            loss, _ = batch_loss(model, world, batch, mask_rng=rng_mask, noise=noise)
            if loss is None:
                continue
            grads = backward(loss, model.record)
            lr, decay = config.learning_rate, config.anchor_decay
            for name, tensor in model.record.trainable_items():
                step = grads[name]
                if decay > 0:
                    step = step + decay * (tensor.data - initial[name])
                tensor.data = tensor.data - lr * step
            epoch_losses.append(loss.item())
        loss_curve.append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)

    trained = evaluate(world, model, split="both")
    rate = correction_rate(world, bank, model)
    matrix_after = confusion_matrix_of(world, model, train_ids)

    encoder_after = world.encoder_checksum()
    if encoder_after != encoder_before:
        raise UsageError("frozen encoder changed during training")
    if bank.checksum() != bank_before:
        raise UsageError("confusion bank changed during training")

    report = Report(
        seed=config.seed,
        config=config.to_dict(),
        baseline=baseline,
        trained=trained,
        correction_rate=rate,
        bank_records=bank.total_records,
        loss_curve=loss_curve,
        confusion_before=matrix_before.tolist(),
        confusion_after=matrix_after.tolist(),
        category_names=list(world.names),
        alpha_inference=model.alpha_inference,
    )
    if run_dir is not None:
        from .reporting import write_run_dir

        write_run_dir(run_dir, model, report, world_path=world_path, bank_path=bank_path)
    return model, report


# -- evaluation ---------------------------------------------------------------


def _accuracy(world: World, model: PipelineModel, ids: np.ndarray) -> float:
    matrix = model.text_matrix(world)
    correct = 0
    for sid in ids:
        probs = model.classify(world, int(sid), text_matrix=matrix)
        if int(np.argmax(probs)) == world.category_of(int(sid)):
            correct += 1
    return correct / len(ids)


def evaluate(world: World, model: PipelineModel, split: str = "both") -> EvalResult:
    """Accuracy of the full inference pipeline on base / novel categories."""
    if split not in ("base", "novel", "both"):
        raise ConfigurationError(f"unknown split {split!r}")
    result = EvalResult()
    if split in ("base", "both"):
        ids = world.base_sample_ids()
        if ids.size == 0:
            raise ConfigurationError("base split is empty")
        result.base_accuracy = _accuracy(world, model, ids)
    if split in ("novel", "both"):
        ids = world.novel_sample_ids()
        if ids.size == 0:
            raise ConfigurationError("novel split is empty")
        result.novel_accuracy = _accuracy(world, model, ids)
    if split == "both":
        result.hm = harmonic_mean(result.base_accuracy, result.novel_accuracy)
    return result


def evaluate_baseline(world: World, tau: float) -> EvalResult:
    """Frozen-encoder accuracy with the raw category embeddings."""
    def classify_all(ids) -> float:
        correct = 0
        for sid in ids:
            probs = baseline_classify(world, int(sid), tau)
            if int(np.argmax(probs)) == world.category_of(int(sid)):
                correct += 1
        return correct / len(ids)

    base = classify_all(world.base_sample_ids())
    novel = classify_all(world.novel_sample_ids())
    return EvalResult(base_accuracy=base, novel_accuracy=novel,
                      hm=harmonic_mean(base, novel))


def correction_rate(world: World, bank: ConfusionBank, model: PipelineModel) -> float | None:
    """Fraction of banked misclassifications the pipeline now gets right."""
    records = bank.all_records()
    if not records:
        return None
    matrix = model.text_matrix(world)
    corrected = 0
    for record in records:
        probs = model.classify(world, record.token_ref, text_matrix=matrix)
        if int(np.argmax(probs)) == record.true_category:
            corrected += 1
    return corrected / len(records)


def confusion_matrix_from_bank(bank: ConfusionBank) -> np.ndarray:
    """Counts[true][predicted] accumulated from the bank's records."""
    matrix = np.zeros((bank.num_categories, bank.num_categories), dtype=np.int64)
    for record in bank.all_records():
        matrix[record.true_category, record.pseudo_gt] += 1
    return matrix


def confusion_matrix_of(world: World, model: PipelineModel, ids) -> np.ndarray:
    """Counts[true][predicted] of the pipeline's mistakes on the given samples."""
    matrix = np.zeros((world.num_categories, world.num_categories), dtype=np.int64)
    text_matrix = model.text_matrix(world)
    for sid in ids:
        probs = model.classify(world, int(sid), text_matrix=text_matrix)
        predicted = int(np.argmax(probs))
        true = world.category_of(int(sid))
        if predicted != true:
            matrix[true, predicted] += 1
    return matrix


# -- checkpointing ------------------------------------------------------------


def save_checkpoint(model: PipelineModel, path) -> None:
    w = ByteWriter()
    w.raw(CHECKPOINT_MAGIC)
    w.u32(CHECKPOINT_VERSION)
    w.text(canonical_json(model.config.to_dict()))
    w.f64(model.alpha_inference)
    w.text(model.world_checksum)
    params = sorted(model.record.items())
    w.u32(len(params))
    for name, tensor in params:
        w.text(name)
        w.array_f64(tensor.data)
    Path(path).write_bytes(w.getvalue())


def load_checkpoint(path, world: World) -> PipelineModel:
    path = Path(path)
    reader = ByteReader(path.read_bytes(), path=str(path))
    reader.expect_magic(CHECKPOINT_MAGIC)
    reader.expect_version(CHECKPOINT_VERSION)
    config = TrainConfig.from_dict(json.loads(reader.text()))
    alpha = reader.f64()
    checksum = reader.text()
    count = reader.u32()
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.text()
        arrays[name] = reader.array_f64()
    reader.expect_end()

    model = build_model(world, config)
    model.alpha_inference = alpha
    model.world_checksum = checksum
    expected = set(model.record.names())
    if expected != set(arrays):
        raise FormatError(
            f"checkpoint parameters do not match the model "
            f"(missing {sorted(expected - set(arrays))}, "
            f"unexpected {sorted(set(arrays) - expected)})",
            path=str(path),
        )
    for name, tensor in model.record.items():
        if arrays[name].shape != tensor.data.shape:
            raise FormatError(
                f"parameter {name} has shape {arrays[name].shape}, expected {tensor.data.shape}",
                path=str(path),
            )
        tensor.data = arrays[name]
    return model
