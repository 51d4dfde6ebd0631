"""Federation driver: task progression, rounds, aggregation, consolidation.

Each round every client trains locally from the distributed global model;
the server aggregates by example count and, for fedgtea, synthesizes a
replay set from the clients' generators and consolidates the aggregate
before redistributing it.  Evaluation happens once per completed task,
filling the accuracy tensor a[k, t, i] with the global model's accuracy
on every seen task's full test split.

All randomness is derived from (master_seed, purpose, round, client), so
client work is order-independent and a run can resume from any task
boundary bit-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .client import (
    ClientState,
    ClientTrainConfig,
    evaluate,
    local_train_round,
    local_train_round_prox,
    seen_class_mask,
)
from .data import DatasetBundle, LabeledImageSet, make_blobs, superclass_tasks
from .errors import ConfigError
from .gaussian import GaussianEmbedding
from .metrics import AccuracyRecord
from .models import ArchConfig, ClientModels
from .seeding import derived_seed, seed_sequence, spawn_rng
from .server import (
    ServerLossWeights,
    aggregate,
    allocate_budgets,
    consolidate,
    estimate_task_gaussians,
    synthesize_replay,
)

METHODS = ("fedgtea", "fedavg", "fedprox")
SEQUENCES = ("toy", "cifar10", "cifar100-icarl", "cifar100-super")
ABLATIONS = ("no_cate", "no_wasserstein", "no_anchor", "no_distillation")
ICARL_CLASS_ORDER_SEED = 1993

_SEQUENCE_DEFAULTS = {
    "toy": dict(scale="toy", num_clients=2, rounds_per_task=2,
                local_iterations=100, lr=1e-3, replay_per_class=20, embed_dim=16),
    "cifar10": dict(scale="full", num_clients=5, rounds_per_task=60,
                    local_iterations=100, lr=1e-4, replay_per_class=200,
                    embed_dim=32),
    "cifar100-icarl": dict(scale="full", num_clients=10, rounds_per_task=40,
                           local_iterations=400, lr=1e-3, replay_per_class=200,
                           embed_dim=32, class_order_seed=ICARL_CLASS_ORDER_SEED),
    "cifar100-super": dict(scale="full", num_clients=10, rounds_per_task=40,
                           local_iterations=400, lr=1e-3, replay_per_class=200,
                           embed_dim=32),
}


@dataclass(frozen=True)
class FederationConfig:
    method: str = "fedgtea"
    sequence: str = "toy"
    scale: str = "toy"
    num_clients: int = 2
    rounds_per_task: int = 2
    local_iterations: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    server_steps: int = 50
    server_lr: float = 1e-4
    server_batch: int = 64
    alpha: float = 0.3
    beta: float = 0.3
    gamma: float = 0.4
    ablations: tuple[str, ...] = ()
    prox_mu: float = 0.01
    master_seed: int = 0
    replay_per_class: int = 20
    embed_dim: int = 16
    z_dim: int = 100
    class_order_seed: int | None = None
    toy_classes: int = 4
    toy_tasks: int = 2
    toy_per_class_train: int = 128
    toy_per_class_test: int = 64
    toy_image: tuple[int, int, int] = (1, 8, 8)
    toy_separation: float = 6.0
    w2_guard: float = 1e-4

    @classmethod
    def for_sequence(cls, sequence: str, **overrides) -> "FederationConfig":
        if sequence not in SEQUENCES:
            raise ConfigError(f"unknown sequence '{sequence}'")
        fields = dict(_SEQUENCE_DEFAULTS[sequence], sequence=sequence)
        fields.update(overrides)
        cfg = cls(**fields)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method '{self.method}'")
        if self.sequence not in SEQUENCES:
            raise ConfigError(f"unknown sequence '{self.sequence}'")
        if self.scale not in ("toy", "full"):
            raise ConfigError(f"unknown scale '{self.scale}'")
        if self.sequence != "toy" and self.scale != "full":
            raise ConfigError("CIFAR sequences require --scale full")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ConfigError(f"unknown ablations: {sorted(unknown)}")
        if self.ablations and self.method != "fedgtea":
            raise ConfigError("ablation switches apply to fedgtea only")
        if min(self.alpha, self.beta, self.gamma) < 0 or self.prox_mu < 0:
            raise ConfigError("loss weights and prox_mu must be nonnegative")
        for name in ("num_clients", "rounds_per_task", "batch_size",
                     "replay_per_class", "embed_dim", "z_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.local_iterations < 0 or self.server_steps < 0:
            raise ConfigError("iteration counts cannot be negative")
        if self.toy_classes % self.toy_tasks != 0:
            raise ConfigError("toy_classes must divide evenly into toy_tasks")

    @property
    def use_cate(self) -> bool:
        return self.method == "fedgtea" and "no_cate" not in self.ablations

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.toy_image if self.scale == "toy" else (3, 32, 32)

    def effective_weights(self) -> ServerLossWeights:
        return ServerLossWeights(
            alpha=0.0 if "no_distillation" in self.ablations else self.alpha,
            beta=0.0 if "no_wasserstein" in self.ablations else self.beta,
            gamma=0.0 if "no_anchor" in self.ablations else self.gamma,
        )

    def client_train_config(self) -> ClientTrainConfig:
        return ClientTrainConfig(
            batch_size=self.batch_size,
            local_iterations=self.local_iterations,
            lr=self.lr,
            use_cate=self.use_cate,
            prox_mu=self.prox_mu if self.method == "fedprox" else 0.0,
        )

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            out[name] = list(value) if isinstance(value, tuple) else value
        return out


@dataclass(frozen=True)
class TaskSpec:
    index: int  # 1-based position in the sequence
    classes: tuple[int, ...]


def make_task_sequence(sequence_id: str, dataset_meta: dict, seed) -> list[TaskSpec]:
    """Class-incremental task list; classes are pairwise disjoint.

    Sequences 'toy' and 'cifar10' shuffle class ids with the given seed;
    'cifar100-icarl' does the same (callers pass 1993 by default);
    'cifar100-super' follows the fixed superclass table order.
    """
    num_classes = int(dataset_meta["num_classes"])

    def chunked(order, size):
        return [TaskSpec(index=i + 1, classes=tuple(int(c) for c in order[s:s + size]))
                for i, s in enumerate(range(0, len(order), size))]

    if sequence_id == "toy":
        num_tasks = int(dataset_meta.get("num_tasks", 2))
        if num_classes % num_tasks:
            raise ConfigError("toy classes must split evenly across tasks")
        order = spawn_rng(seed, "class-order").permutation(num_classes)
        return chunked(order, num_classes // num_tasks)
    if sequence_id == "cifar10":
        if num_classes != 10:
            raise ConfigError("cifar10 sequence needs a 10-class dataset")
        order = spawn_rng(seed, "class-order").permutation(10)
        return chunked(order, 2)
    if sequence_id == "cifar100-icarl":
        if num_classes != 100:
            raise ConfigError("cifar100 sequences need a 100-class dataset")
        order = spawn_rng(seed, "class-order").permutation(100)
        return chunked(order, 10)
    if sequence_id == "cifar100-super":
        if num_classes != 100:
            raise ConfigError("cifar100 sequences need a 100-class dataset")
        return [TaskSpec(index=i + 1, classes=fines)
                for i, (_, fines) in enumerate(superclass_tasks())]
    raise ConfigError(f"unknown sequence '{sequence_id}'")


def build_toy_dataset(config: FederationConfig) -> DatasetBundle:
    c, h, w = config.image_shape
    h_w_c = (h, w, c)
    centers = derived_seed(config.master_seed, "blob-centers")
    train = make_blobs(config.toy_classes, config.toy_per_class_train, h_w_c,
                       config.toy_separation,
                       seed=derived_seed(config.master_seed, "blob-train"),
                       centers_seed=centers, split="train")
    test = make_blobs(config.toy_classes, config.toy_per_class_test, h_w_c,
                      config.toy_separation,
                      seed=derived_seed(config.master_seed, "blob-test"),
                      centers_seed=centers, split="test")
    return DatasetBundle(train=train, test=test, num_classes=config.toy_classes)


def build_arch(config: FederationConfig, num_classes: int) -> ArchConfig:
    if config.scale == "toy":
        return ArchConfig.toy(num_classes, image_shape=config.image_shape,
                              embed_dim=config.embed_dim, z_dim=config.z_dim)
    return ArchConfig.full(num_classes, image_shape=config.image_shape,
                           embed_dim=config.embed_dim, z_dim=config.z_dim)


def _to_nchw(images: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(images.transpose(0, 3, 1, 2))


@dataclass
class TaskCheckpoint:
    task_index: int          # 1-based, completed
    round_index: int         # global rounds finished
    global_params: np.ndarray
    teacher_params: np.ndarray | None
    gaussians: list[GaussianEmbedding]
    record_acc: np.ndarray
    record_n: np.ndarray


@dataclass
class ExperimentResult:
    record: AccuracyRecord
    final_params: np.ndarray
    checkpoints: list[TaskCheckpoint] = field(default_factory=list)


def run_experiment(config: FederationConfig, data: DatasetBundle,
                   checkpoint_sink=None,
                   resume: TaskCheckpoint | None = None) -> ExperimentResult:
    """Run the configured federation over the full task sequence.

    ``checkpoint_sink``, when given, receives a TaskCheckpoint after every
    completed task instead of accumulating them in memory.  ``resume``
    continues from a previously emitted checkpoint (task boundaries only).
    """
    config.validate()
    master = config.master_seed
    tasks = make_task_sequence(
        config.sequence,
        {"num_classes": data.num_classes, "num_tasks": config.toy_tasks},
        config.class_order_seed if config.class_order_seed is not None else master)
    total_classes = sorted(c for t in tasks for c in t.classes)
    if total_classes != sorted(set(total_classes)):
        raise ConfigError("task class sets overlap")

    arch = build_arch(config, data.num_classes)
    K, T = config.num_clients, len(tasks)
    clients = [ClientState(k, ClientModels.init(arch, seed_sequence(master, "init")))
               for k in range(K)]
    scratch = ClientModels.init(arch, seed_sequence(master, "init"))
    global_vec = scratch.to_vector()
    teacher_vec: np.ndarray | None = None
    record = AccuracyRecord.empty(K, T)
    label_to_task = {int(c): t.index for t in tasks for c in t.classes}

    train_x = _to_nchw(data.train.images)
    train_y = np.asarray(data.train.labels, dtype=np.int64)
    test_x = _to_nchw(data.test.images)
    test_y = np.asarray(data.test.labels, dtype=np.int64)

    start_task = 0
    global_round = 0
    if resume is not None:
        start_task = resume.task_index
        global_round = resume.round_index
        global_vec = resume.global_params.copy()
        teacher_vec = (resume.teacher_params.copy()
                       if resume.teacher_params is not None else None)
        record = AccuracyRecord(acc=resume.record_acc.copy(),
                                n=resume.record_n.copy())
        for t in tasks[:start_task]:
            for state in clients:
                state.seen_classes = state.seen_classes + t.classes

    ccfg = config.client_train_config()
    weights = config.effective_weights()
    checkpoints: list[TaskCheckpoint] = []

    for t_idx in range(start_task, T):
        task = tasks[t_idx]
        pool = np.flatnonzero(np.isin(train_y, task.classes))
        parts = np.array_split(spawn_rng(master, "shards", t_idx).permutation(pool), K)
        if any(len(p) == 0 for p in parts):
            raise ConfigError(f"task {task.index} has too little data for {K} clients")
        for k, state in enumerate(clients):
            state.assign_task(task.classes, train_x[parts[k]], train_y[parts[k]])
            record.set_shard_size(k, t_idx, len(parts[k]))
        seen = clients[0].seen_classes
        teacher_mask = seen_class_mask(
            [c for t in tasks[:t_idx] for c in t.classes], arch.num_classes)

        replay = None
        for _ in range(config.rounds_per_task):
            updates = []
            for k, state in enumerate(clients):
                seed = derived_seed(master, "client", global_round, k)
                if config.method == "fedprox":
                    updates.append(local_train_round_prox(
                        state, global_vec, config.prox_mu, ccfg, seed))
                else:
                    updates.append(local_train_round(state, global_vec, ccfg, seed))
            anchor = aggregate(updates)
            if config.method == "fedgtea":
                budgets = allocate_budgets(
                    config.replay_per_class * len(seen),
                    [u.num_examples for u in updates])
                replay = synthesize_replay(
                    [(k, clients[k].models.gen) for k in range(K)], budgets, seen,
                    label_to_task, derived_seed(master, "synthesize", global_round))
                global_vec = consolidate(
                    arch, anchor, teacher_vec, replay, weights,
                    config.server_steps, config.server_lr,
                    derived_seed(master, "consolidate", global_round),
                    teacher_mask=teacher_mask, use_cate=config.use_cate,
                    batch_size=config.server_batch, guard=config.w2_guard)
            else:
                global_vec = anchor
            global_round += 1

        # evaluate the distributed global model on every seen task
        scratch.from_vector(global_vec)
        for i in range(t_idx + 1):
            mask = np.isin(test_y, tasks[i].classes)
            acc = evaluate(scratch, test_x[mask], test_y[mask], seen,
                           config.use_cate, batch_size=config.batch_size)
            for k in range(K):
                record.set_accuracy(k, t_idx, i, acc)

        if config.method == "fedgtea":
            teacher_vec = global_vec.copy()
        gaussians = (estimate_task_gaussians(scratch.cate, replay)
                     if config.method == "fedgtea" and replay is not None else [])
        ckpt = TaskCheckpoint(
            task_index=task.index, round_index=global_round,
            global_params=global_vec.copy(),
            teacher_params=None if teacher_vec is None else teacher_vec.copy(),
            gaussians=gaussians,
            record_acc=record.acc.copy(), record_n=record.n.copy())
        if checkpoint_sink is not None:
            checkpoint_sink(ckpt)
        else:
            checkpoints.append(ckpt)

    return ExperimentResult(record=record, final_params=global_vec,
                            checkpoints=checkpoints)
