"""One client's local training on its current task shard.

Each iteration runs the three phases of adversarial training: a
discriminator/encoder step on a real batch, a discriminator step plus a
generator step on a synthesized batch carrying the real batch's labels,
and (from the second task on) a rehearsal step on synthesized samples of
all seen classes.  A round is a pure function of (state snapshot, global
parameters, seed), so clients can run in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numkit as nk
from .errors import NumericError, ShapeError
from .losses import bce_with_logits, masked_cross_entropy, one_hot
from .models import ClientModels, cate_embed_batch


@dataclass(frozen=True)
class ClientTrainConfig:
    batch_size: int = 64
    local_iterations: int = 100
    lr: float = 1e-4
    use_cate: bool = True
    prox_mu: float = 0.0


@dataclass
class ClientUpdate:
    """What a client uploads: parameters and a sample count, nothing else."""

    client_id: int
    params: np.ndarray
    num_examples: int

    def __post_init__(self):
        if self.num_examples <= 0:
            raise ValueError("client update needs a positive example count")


@dataclass
class ClientState:
    client_id: int
    models: ClientModels
    shard_images: np.ndarray | None = None  # (n, C, H, W)
    shard_labels: np.ndarray | None = None
    seen_classes: tuple[int, ...] = ()
    current_classes: tuple[int, ...] = ()

    def assign_task(self, classes, images: np.ndarray, labels: np.ndarray) -> None:
        classes = tuple(int(c) for c in classes)
        overlap = set(classes) & set(self.seen_classes)
        if overlap:
            raise ValueError(f"task classes already seen: {sorted(overlap)}")
        if len(labels) and not set(np.unique(labels)) <= set(classes):
            raise ValueError("shard labels outside the task's class set")
        self.current_classes = classes
        self.seen_classes = self.seen_classes + classes
        self.shard_images = images
        self.shard_labels = np.asarray(labels, dtype=np.int64)


def seen_class_mask(seen_classes, num_classes: int) -> np.ndarray:
    mask = np.zeros(num_classes, dtype=bool)
    mask[list(seen_classes)] = True
    return mask


def _batch_embedding(models: ClientModels, images, use_cate: bool):
    if use_cate:
        return cate_embed_batch(models.cate, images)
    return nk.constant(np.zeros(models.arch.embed_dim))


def _add_prox(params, snapshots, mu: float) -> None:
    for p, snap in zip(params, snapshots):
        term = mu * (p.data - snap)
        p.grad = term if p.grad is None else p.grad + term


def local_train_round(state: ClientState, global_params: np.ndarray,
                      cfg: ClientTrainConfig, rng_seed) -> ClientUpdate:
    """Run the configured number of local iterations from the global model."""
    if state.shard_images is None or len(state.shard_images) == 0:
        raise ValueError(f"client {state.client_id} has an empty shard")
    models = state.models
    models.from_vector(global_params)
    n = len(state.shard_images)
    if cfg.local_iterations == 0:
        return ClientUpdate(state.client_id, global_params.copy(), n)

    rng = np.random.default_rng(rng_seed)
    arch = models.arch
    mask = seen_class_mask(state.seen_classes, arch.num_classes)
    replay_active = len(state.seen_classes) > len(state.current_classes)
    seen_array = np.asarray(state.seen_classes, dtype=np.int64)

    dc_params = [p for _, p in models.disc.named_params()] + \
                [p for _, p in models.cate.named_params()]
    g_params = [p for _, p in models.gen.named_params()]
    opt_dc = nk.Adam(dc_params, lr=cfg.lr)
    opt_g = nk.Adam(g_params, lr=cfg.lr)
    if cfg.prox_mu > 0:
        all_params = models.params()
        snapshots = [p.data.copy() for p in all_params]
        snap_of = {id(p): s for p, s in zip(all_params, snapshots)}

    def prox(params):
        if cfg.prox_mu > 0:
            _add_prox(params, [snap_of[id(p)] for p in params], cfg.prox_mu)

    b = cfg.batch_size
    ones_b = np.ones(b)
    zeros_b = np.zeros(b)

    for iteration in range(cfg.local_iterations):
        try:
            # (1) discriminator + encoder on a real batch
            idx = rng.choice(n, size=b, replace=n < b)
            x = nk.constant(state.shard_images[idx])
            y = state.shard_labels[idx]
            with nk.record() as tape:
                emb = _batch_embedding(models, x, cfg.use_cate)
                feats = models.disc.features(x)
                loss_real = (bce_with_logits(models.disc.rf_logits(feats), ones_b)
                             + masked_cross_entropy(
                                 models.disc.class_logits(feats, emb), y, mask))
            nk.zero_grads(models.params())
            tape.backward(loss_real)
            prox(dc_params)
            opt_dc.step()

            # (2) synthesized batch with the real batch's labels:
            #     discriminator step, then generator step through updated D
            z = rng.standard_normal((b, arch.z_dim))
            onehot = nk.constant(one_hot(y, arch.num_classes))
            with nk.record() as tape:
                fake = models.gen.forward(nk.constant(z), onehot)
                fake_d = fake.detach()
                emb_f = _batch_embedding(models, fake_d, cfg.use_cate)
                feats_f = models.disc.features(fake_d)
                loss_fake = (bce_with_logits(models.disc.rf_logits(feats_f), zeros_b)
                             + masked_cross_entropy(
                                 models.disc.class_logits(feats_f, emb_f), y, mask))
                nk.zero_grads(models.params())
                tape.backward(loss_fake)
                prox(dc_params)
                opt_dc.step()

                emb_g = _batch_embedding(models, fake, cfg.use_cate)
                feats_g = models.disc.features(fake)
                loss_gen = (bce_with_logits(models.disc.rf_logits(feats_g), ones_b)
                            + masked_cross_entropy(
                                models.disc.class_logits(feats_g, emb_g), y, mask))
            nk.zero_grads(models.params())
            tape.backward(loss_gen)
            prox(g_params)
            opt_g.step()

            # (3) rehearsal on all seen classes, classification path only
            if replay_active:
                y_r = rng.choice(seen_array, size=b)
                z_r = rng.standard_normal((b, arch.z_dim))
                with nk.pause():
                    fake_r = models.gen.forward(
                        nk.constant(z_r), nk.constant(one_hot(y_r, arch.num_classes)))
                x_r = nk.constant(fake_r.data)
                with nk.record() as tape:
                    emb_r = _batch_embedding(models, x_r, cfg.use_cate)
                    feats_r = models.disc.features(x_r)
                    loss_replay = masked_cross_entropy(
                        models.disc.class_logits(feats_r, emb_r), y_r, mask)
                nk.zero_grads(models.params())
                tape.backward(loss_replay)
                prox(dc_params)
                opt_dc.step()
        except NumericError as exc:
            raise NumericError(
                f"client {state.client_id} diverged at iteration {iteration}: {exc}"
            ) from exc

    return ClientUpdate(state.client_id, models.to_vector(), n)


def local_train_round_prox(state: ClientState, global_params: np.ndarray,
                           mu: float, cfg: ClientTrainConfig,
                           rng_seed) -> ClientUpdate:
    """FedProx variant: every loss gains (mu/2) ||theta - global||^2."""
    if mu < 0:
        raise ValueError("proximal coefficient must be nonnegative")
    return local_train_round(state, global_params,
                             replace(cfg, prox_mu=mu), rng_seed)


def evaluate(models: ClientModels, images: np.ndarray, labels: np.ndarray,
             seen_classes, use_cate: bool, batch_size: int = 64) -> float:
    """Accuracy of argmax class predictions over the unmasked seen classes.

    The task embedding is computed from each evaluation batch itself; the
    trailing partial batch is kept.
    """
    if len(images) == 0:
        raise ValueError("empty evaluation shard")
    if images.shape[0] != labels.shape[0]:
        raise ShapeError("images and labels disagree in length")
    mask = seen_class_mask(seen_classes, models.arch.num_classes)
    bias = np.where(mask, 0.0, -np.inf)
    correct = 0
    for start in range(0, len(images), batch_size):
        x = nk.constant(images[start:start + batch_size])
        emb = _batch_embedding(models, x, use_cate)
        logits = models.disc.class_logits(models.disc.features(x), emb).data
        preds = (logits + bias).argmax(axis=1)
        correct += int((preds == labels[start:start + batch_size]).sum())
    return correct / len(images)
