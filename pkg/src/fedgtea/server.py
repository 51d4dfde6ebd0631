"""Server side: weighted aggregation, replay synthesis, consolidation.

Consolidation refines the aggregated model by gradient descent on

    alpha * distillation + beta * 1 / sum_{i<j} W2^2(task_i, task_j)
        + gamma * ||theta - aggregate||_2

over a server-synthesized replay set.  The pairwise W2^2 forward values
use the exact closed form; their gradient flows through a diagonal
covariance surrogate (exact whenever covariances commute), which keeps
eigendecomposition out of the backward pass while preserving the
separation pressure of the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .errors import EstimationError, NumericError, ShapeError
from .gaussian import SHRINKAGE, GaussianEmbedding, estimate_gaussian, w2_squared
from .losses import categorical_kl, masked_softmax_probs
from .models import ArchConfig, ClientModels, Generator, cate_embed_batch, generate
from .numkit import Tensor

W2_GUARD = 1e-4
ANCHOR_EPS = 1e-12


# -- aggregation ---------------------------------------------------------------


def aggregate(updates) -> np.ndarray:
    """Example-count-weighted average of client parameter vectors."""
    if not updates:
        raise ValueError("nothing to aggregate")
    length = updates[0].params.size
    if any(u.params.ndim != 1 or u.params.size != length for u in updates):
        raise ShapeError("client updates have inconsistent parameter lengths")
    counts = np.array([u.num_examples for u in updates], dtype=np.float64)
    weights = counts / counts.sum()
    out = np.zeros(length)
    for w, u in zip(weights, updates):
        out += w * u.params
    return out


def allocate_budgets(total: int, counts) -> list[int]:
    """Split ``total`` proportionally to ``counts`` via largest remainder."""
    counts = np.asarray(counts, dtype=np.float64)
    if total < 0 or (counts < 0).any() or counts.sum() == 0:
        raise ValueError("budgets need a nonnegative total and positive counts")
    quota = total * counts / counts.sum()
    base = np.floor(quota).astype(np.int64)
    remainder = quota - base
    for i in np.argsort(-remainder, kind="stable")[: total - int(base.sum())]:
        base[i] += 1
    return [int(b) for b in base]


# -- synthesized replay dataset --------------------------------------------------


@dataclass
class SynthesizedDataset:
    """Generator output pooled across clients, partitioned by task."""

    images: np.ndarray          # (m, C, H, W)
    labels: np.ndarray          # (m,)
    source_clients: np.ndarray  # (m,)
    label_to_task: dict[int, int]

    def __post_init__(self):
        tasks = sorted({self.label_to_task[int(l)] for l in self.labels})
        self.task_ids: tuple[int, ...] = tuple(tasks)
        self.task_of = np.array([self.label_to_task[int(l)] for l in self.labels],
                                dtype=np.int64)

    def __len__(self) -> int:
        return len(self.labels)

    def subset_indices(self, task_id: int) -> np.ndarray:
        return np.flatnonzero(self.task_of == task_id)


def synthesize_replay(generators: list[tuple[int, Generator]], budgets: list[int],
                      seen_classes, label_to_task: dict[int, int],
                      rng_seed) -> SynthesizedDataset:
    """Each client's generator contributes its budget of samples whose
    labels are drawn uniformly from the seen classes."""
    seen = np.asarray(sorted(int(c) for c in seen_classes), dtype=np.int64)
    if seen.size == 0:
        raise ValueError("no seen classes to synthesize from")
    if len(budgets) != len(generators):
        raise ShapeError("one budget per generator required")
    rng = np.random.default_rng(rng_seed)
    images, labels, sources = [], [], []
    for (client_id, gen), budget in zip(generators, budgets):
        draw = rng.choice(seen, size=int(budget))
        batch_seed = int(rng.integers(0, 2 ** 63 - 1))
        if budget > 0:
            imgs, labs = generate(gen, draw, batch_seed)
            images.append(imgs)
            labels.append(labs)
            sources.append(np.full(int(budget), client_id, dtype=np.int64))
    if not images:
        raise ValueError("all budgets were zero")
    return SynthesizedDataset(
        images=np.concatenate(images), labels=np.concatenate(labels),
        source_clients=np.concatenate(sources), label_to_task=dict(label_to_task))


# -- loss terms ------------------------------------------------------------------


def anchor_norm(params: list[Tensor], anchor_vec: np.ndarray) -> Tensor:
    """Euclidean distance (not squared) of the live parameters from the
    anchor vector, smoothed at zero by a tiny epsilon inside the root."""
    expected = int(np.sum([p.size for p in params]))
    if anchor_vec.ndim != 1 or anchor_vec.size != expected:
        raise ShapeError(f"anchor length {anchor_vec.size} != parameters {expected}")
    total = None
    offset = 0
    for p in params:
        ref = nk.constant(anchor_vec[offset:offset + p.size].reshape(p.shape))
        offset += p.size
        diff = p - ref
        sq = nk.sum(diff * diff)
        total = sq if total is None else total + sq
    return nk.sqrt(total + ANCHOR_EPS)


def teacher_class_probs(teacher: ClientModels, replay: SynthesizedDataset,
                        teacher_mask: np.ndarray, use_cate: bool,
                        batch_size: int = 64) -> np.ndarray:
    """Frozen teacher softmax outputs for every replay sample, cached once.

    Embeddings come from the teacher's own encoder, one per scoring batch.
    """
    probs = np.zeros((len(replay), teacher.arch.num_classes))
    with nk.pause():
        for start in range(0, len(replay), batch_size):
            x = nk.constant(replay.images[start:start + batch_size])
            if use_cate:
                emb = cate_embed_batch(teacher.cate, x)
            else:
                emb = nk.constant(np.zeros(teacher.arch.embed_dim))
            logits = teacher.disc.class_logits(teacher.disc.features(x), emb).data
            probs[start:start + batch_size] = masked_softmax_probs(logits, teacher_mask)
    return probs


def kd_term(student: ClientModels, replay: SynthesizedDataset,
            teacher_probs: np.ndarray, teacher_mask: np.ndarray,
            indices: np.ndarray, use_cate: bool) -> Tensor:
    """Mean KL(teacher || student) on one replay minibatch."""
    x = nk.constant(replay.images[indices])
    if use_cate:
        emb = cate_embed_batch(student.cate, x)
    else:
        emb = nk.constant(np.zeros(student.arch.embed_dim))
    logits = student.disc.class_logits(student.disc.features(x), emb)
    return categorical_kl(teacher_probs[indices], logits, teacher_mask)


def w2_pair_sum(cate, replay: SynthesizedDataset,
                min_samples: int = 2) -> tuple[Tensor, list[GaussianEmbedding]]:
    """Sum of pairwise squared Wasserstein distances between task Gaussians.

    Forward values are the exact closed form on full sample covariances;
    the graph path carries the mean displacement plus the diagonal
    (commuting-case) covariance term, so backward never differentiates a
    matrix square root.
    """
    means, variances, gaussians = [], [], []
    for task_id in replay.task_ids:
        idx = replay.subset_indices(task_id)
        if idx.size < min_samples:
            raise EstimationError(
                f"task {task_id} has {idx.size} replay samples; need >= {min_samples}")
        embeds = cate.embed(nk.constant(replay.images[idx]))
        mu = nk.mean(embeds, axis=0)
        centered = embeds - nk.broadcast_to(nk.reshape(mu, (1, -1)), embeds.shape)
        var = nk.sum(centered * centered, axis=0) / float(idx.size - 1) + SHRINKAGE
        means.append(mu)
        variances.append(var)
        gaussians.append(estimate_gaussian(embeds.data))

    total = None
    for i in range(len(gaussians)):
        for j in range(i + 1, len(gaussians)):
            dmu = means[i] - means[j]
            dsd = nk.sqrt(variances[i]) - nk.sqrt(variances[j])
            surrogate = nk.sum(dmu * dmu) + nk.sum(dsd * dsd)
            exact = w2_squared(gaussians[i], gaussians[j])
            pair = surrogate + nk.constant(exact - float(surrogate.data))
            total = pair if total is None else total + pair
    return total, gaussians


def wasserstein_loss(cate, replay: SynthesizedDataset,
                     guard: float = W2_GUARD) -> Tensor:
    """Reciprocal of the pairwise W2^2 sum; zero when fewer than two tasks.

    The sum is floored at ``guard`` before inversion, which bounds both the
    loss and its gradient near coincident task embeddings.
    """
    if len(replay.task_ids) < 2:
        return nk.constant(0.0)
    total, _ = w2_pair_sum(cate, replay)
    if float(total.data) <= guard:
        return nk.constant(1.0 / guard)
    return nk.div(1.0, total)


def estimate_task_gaussians(cate, replay: SynthesizedDataset) -> list[GaussianEmbedding]:
    """Per-task embedding Gaussians under the current encoder (no grad)."""
    out = []
    with nk.pause():
        for task_id in replay.task_ids:
            idx = replay.subset_indices(task_id)
            out.append(estimate_gaussian(cate.embed(
                nk.constant(replay.images[idx])).data))
    return out


# -- consolidation ----------------------------------------------------------------


@dataclass(frozen=True)
class ServerLossWeights:
    alpha: float = 0.3
    beta: float = 0.3
    gamma: float = 0.4

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be nonnegative")

    @property
    def inert(self) -> bool:
        return self.alpha == 0 and self.beta == 0 and self.gamma == 0


def consolidate(arch: ArchConfig, anchor_vec: np.ndarray,
                prev_global: np.ndarray | None, replay: SynthesizedDataset | None,
                weights: ServerLossWeights, steps: int, lr: float, rng_seed,
                *, teacher_mask: np.ndarray | None = None, use_cate: bool = True,
                batch_size: int = 64, guard: float = W2_GUARD) -> np.ndarray:
    """Adam-refine the aggregate under the three-term server loss.

    With steps == 0 or all-zero weights the anchor is returned unchanged.
    """
    if steps == 0 or weights.inert:
        return anchor_vec.copy()
    models = ClientModels.init(arch, np.random.SeedSequence(0))
    models.from_vector(anchor_vec)
    params = models.params()

    distill = weights.alpha > 0 and prev_global is not None and replay is not None
    if distill:
        teacher = ClientModels.init(arch, np.random.SeedSequence(0))
        teacher.from_vector(prev_global)
        if teacher_mask is None:
            raise ValueError("teacher_mask is required for distillation")
        probs = teacher_class_probs(teacher, replay, teacher_mask, use_cate,
                                    batch_size)
    separate = weights.beta > 0 and replay is not None and len(replay.task_ids) >= 2

    opt = nk.Adam(params, lr=lr)
    rng = np.random.default_rng(rng_seed)
    last_parts: dict[str, float] = {}
    for _ in range(steps):
        try:
            with nk.record() as tape:
                total = None
                if distill:
                    idx = rng.choice(len(replay), size=min(batch_size, len(replay)),
                                     replace=False)
                    kd = kd_term(models, replay, probs, teacher_mask, idx, use_cate)
                    last_parts["kd"] = float(kd.data)
                    total = weights.alpha * kd
                if separate:
                    if use_cate:
                        wl = wasserstein_loss(models.cate, replay, guard=guard)
                    else:
                        wl = nk.constant(0.0)
                    last_parts["wasserstein"] = float(wl.data)
                    total = weights.beta * wl if total is None else total + weights.beta * wl
                if weights.gamma > 0:
                    anc = anchor_norm(params, anchor_vec)
                    last_parts["anchor"] = float(anc.data)
                    total = weights.gamma * anc if total is None else total + weights.gamma * anc
            if total is None:
                break
            nk.zero_grads(params)
            tape.backward(total)
            opt.step()
        except NumericError as exc:
            raise NumericError(
                f"server consolidation diverged ({exc}); last loss parts: "
                + ", ".join(f"{k}={v:.4g}" for k, v in last_parts.items())) from exc
    return models.to_vector()


# -- spec-shaped wrappers on flat parameter vectors --------------------------------


def kd_loss(arch: ArchConfig, current_params: np.ndarray,
            prev_global: np.ndarray | None, replay: SynthesizedDataset | None,
            *, teacher_mask: np.ndarray | None = None,
            use_cate: bool = True) -> Tensor:
    """Distillation loss over the whole replay set; zero without a teacher."""
    if prev_global is None or replay is None:
        return nk.constant(0.0)
    student = ClientModels.init(arch, np.random.SeedSequence(0))
    student.from_vector(current_params)
    teacher = ClientModels.init(arch, np.random.SeedSequence(0))
    teacher.from_vector(prev_global)
    if teacher_mask is None:
        teacher_mask = np.zeros(arch.num_classes, dtype=bool)
        teacher_mask[np.unique(replay.labels)] = True
    probs = teacher_class_probs(teacher, replay, teacher_mask, use_cate)
    return kd_term(student, replay, probs, teacher_mask,
                   np.arange(len(replay)), use_cate)


def anchor_loss(current_params: np.ndarray, anchor_vec: np.ndarray) -> Tensor:
    """||theta - anchor||_2 on flat vectors (graph over a single leaf)."""
    if current_params.shape != anchor_vec.shape:
        raise ShapeError("anchor and parameter lengths differ")
    theta = nk.parameter(current_params)
    return anchor_norm([theta], anchor_vec)
