"""Training loops: baseline, certified-robust, fairness, and combinations.

One entry point, ``train``, dispatches on the method flags in ``TrainConfig``:

* robust objectives: interval-bound training with a linear ramp on the
  worst-case weight, or smoothing training (inputs resampled within clusters
  every batch);
* fairness methods: debiased embedding initialization, per-example instance
  weights in the loss, and adversarial debiasing via gradient projection;
* combinations run the fairness method inside (or after, for the adversarial
  phase) the robust loop.

Everything is seeded through one integer and deterministic: identical config,
data, and seed give bitwise-identical parameters.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset
from .debias import Adversary, debias_gradient, gender_direction, hard_debias, instance_weights
from .lexicons import (
    default_gender_pairs,
    default_gendered_lexicon,
    default_identity_lexicon,
    load_lexicon,
)
from .model import TextCnn, Vocabulary
from .perturb import SubstitutionTable, augment_gender_pairs, load_gender_pairs, sample_perturbation
from .robustness import _breakdown, substitution_box

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "ibp_schedule",
    "train",
    "safer_train_step",
]

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, phase: str):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch} in {phase} phase")
        self.epoch = epoch
        self.phase = phase


@dataclass
class TrainConfig:
    """Method flags, schedules, and hyperparameters for one training run."""

    ibp: bool = False
    ibp_gender: bool = False
    safer: bool = False
    safer_gender: bool = False
    instance_weighting: bool = False
    hard_debias: bool = False
    adversarial: bool = False
    learning_rate: float = 1e-2
    dropout: float = 0.5
    epochs: int = 20
    ibp_ramp_epochs: int = 40
    ibp_hold_epochs: int = 20
    ibp_lambda_max: float = 0.8
    ibp_lambda_full: float | None = None
    adversary_alpha: float = 1.0
    adversary_pretrain_epochs: int = 2
    protected_axis: str = "gender"
    seed: int = 0
    batch_size: int = 32
    optimizer: str = "sgd"
    hidden_size: int = 100
    kernel_size: int = 3
    embedding_dim: int = 50
    max_len: int = 128
    n_classes: int | None = None
    instance_weight_smoothing: float = 0.0
    gender_pairs_path: str | None = None
    identity_lexicon_path: str | None = None
    gendered_lexicon_path: str | None = None
    log_path: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.ibp_lambda_max <= 1.0:
            raise ValueError("ibp_lambda_max must lie in [0, 1]")
        if self.ibp_lambda_full is not None and not 0.0 <= self.ibp_lambda_full <= 1.0:
            raise ValueError("ibp_lambda_full must lie in [0, 1]")
        if not 1e-7 <= self.learning_rate <= 1e-2:
            raise ValueError("learning_rate must lie in the search range [1e-7, 1e-2]")
        if not 0.1 <= self.dropout <= 0.5:
            raise ValueError("dropout must lie in the search range [0.1, 0.5]")
        if self.uses_ibp and self.uses_safer:
            raise ValueError("interval-bound and smoothing training are mutually exclusive")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if self.epochs < 0 or self.ibp_ramp_epochs < 0 or self.ibp_hold_epochs < 0:
            raise ValueError("epoch counts must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.adversary_alpha < 0:
            raise ValueError("adversary_alpha must be non-negative")

    @property
    def uses_ibp(self) -> bool:
        return self.ibp or self.ibp_gender

    @property
    def uses_safer(self) -> bool:
        return self.safer or self.safer_gender

    @property
    def gender_augmented(self) -> bool:
        return self.ibp_gender or self.safer_gender


def ibp_schedule(epoch: int, config: TrainConfig) -> float:
    """Linear ramp of the worst-case weight, held at the top afterward."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    ramp = config.ibp_ramp_epochs
    if ramp <= 0 or epoch >= ramp:
        held = config.ibp_lambda_full if config.ibp_lambda_full is not None else config.ibp_lambda_max
        return float(held)
    return float(config.ibp_lambda_max * (epoch / ramp))


class _Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads.get(name)
            if g is not None:
                p.data = p.data - self.lr * g


class _Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            m = self.m.get(name, np.zeros_like(p.data))
            v = self.v.get(name, np.zeros_like(p.data))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[name], self.v[name] = m, v
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def _make_optimizer(config: TrainConfig):
    return _Adam(config.learning_rate) if config.optimizer == "adam" else _Sgd(config.learning_rate)


@dataclass
class _Encoded:
    """Per-example training cache: prepared ids, bounds, label, annotations."""

    ids: np.ndarray
    label: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    weight: float = 1.0
    group_index: int = -1
    tokens: list[str] = field(default_factory=list)


def _dropout_mask(rng: np.random.Generator, size: int, p: float) -> np.ndarray:
    keep = rng.random(size) >= p
    return keep.astype(np.float64) / (1.0 - p)


def _plain_loss(model: TextCnn, ids, label: int, mask: np.ndarray | None) -> Tensor:
    logits = model.logits_graph(Tensor(model.embed(ids)), mask)
    return ad.cross_entropy_with_logits(logits, label)


def safer_train_step(
    model: TextCnn,
    batch,
    table: SubstitutionTable,
    rng: np.random.Generator,
    optimizer=None,
    dropout: float = 0.1,
    weights=None,
) -> float:
    """One smoothing training step: resample each input within its clusters,
    then take a standard cross-entropy gradient step. Returns the batch loss."""
    if table.mode != "clustered":
        raise ValueError("smoothing training requires a clustered table")
    optimizer = optimizer if optimizer is not None else _Sgd(1e-2)
    nodes = []
    for i, ex in enumerate(batch):
        ids = model.prep_ids(sample_perturbation(ex.tokens, table, model.vocab, rng))
        mask = _dropout_mask(rng, model.hidden_size, dropout) if dropout > 0 else None
        node = _plain_loss(model, ids, ex.label, mask)
        if weights is not None:
            node = node * float(weights[i])
        nodes.append(node)
    total = ad.add_n(nodes) * (1.0 / len(nodes))
    grads = ad.backward(total)
    optimizer.step(model.params(), grads)
    return float(total.data)


def _resolve_resources(config: TrainConfig):
    pairs = (
        load_gender_pairs(config.gender_pairs_path)
        if config.gender_pairs_path
        else default_gender_pairs()
    )
    identity = (
        load_lexicon(config.identity_lexicon_path)
        if config.identity_lexicon_path
        else default_identity_lexicon()
    )
    gendered = (
        load_lexicon(config.gendered_lexicon_path)
        if config.gendered_lexicon_path
        else default_gendered_lexicon()
    )
    return pairs, identity, gendered


def _encode_dataset(model: TextCnn, dataset: Dataset, table, use_ibp: bool) -> list[_Encoded]:
    records = []
    for ex in dataset:
        if use_ibp:
            ids, lower, upper = substitution_box(model, ex.tokens, table)
            records.append(_Encoded(ids=ids, label=ex.label, lower=lower, upper=upper, tokens=ex.tokens))
        else:
            records.append(_Encoded(ids=model.prep_ids(ex.tokens), label=ex.label, tokens=ex.tokens))
    return records


class _EpochLog:
    def __init__(self, path: str | None):
        self.path = path
        if path:
            with open(path, "w", encoding="utf-8"):
                pass

    def write(self, record: dict) -> None:
        logger.info(
            "epoch %s [%s] lambda=%.3f plain=%.4f worst=%s",
            record["epoch"],
            record["phase"],
            record["lambda"],
            record["plain_loss"],
            "-" if record["worst_case_loss"] is None else f"{record['worst_case_loss']:.4f}",
        )
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _task_batch_node(model, records, batch_idx, lam, rng, config, table):
    """Loss graph for one batch of the task objective; returns (node, plain, worst)."""
    nodes = []
    plains = []
    worsts = []
    for i in batch_idx:
        rec = records[i]
        mask = _dropout_mask(rng, model.hidden_size, config.dropout)
        if config.uses_safer:
            ids = model.prep_ids(sample_perturbation(rec.tokens, table, model.vocab, rng))
            node = _plain_loss(model, ids, rec.label, mask)
            plains.append(float(node.data))
        elif config.uses_ibp and lam > 0.0:
            bd = _breakdown(model, rec.ids, rec.lower, rec.upper, rec.label, lam, mask)
            node = bd.node
            plains.append(bd.plain_loss)
            worsts.append(bd.worst_case_loss)
        else:
            node = _plain_loss(model, rec.ids, rec.label, mask)
            plains.append(float(node.data))
        if rec.weight != 1.0:
            node = node * rec.weight
        nodes.append(node)
    total = ad.add_n(nodes) * (1.0 / len(nodes))
    worst_mean = float(np.mean(worsts)) if worsts else None
    return total, float(np.mean(plains)), worst_mean


def _run_task_epochs(model, records, config, table, rng, optimizer, log, n_epochs, phase, lam_for):
    n = len(records)
    for epoch in range(n_epochs):
        lam = lam_for(epoch)
        order = rng.permutation(n)
        plain_sum, worst_sum, worst_batches, batches = 0.0, 0.0, 0, 0
        for start in range(0, n, config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            try:
                total, plain, worst = _task_batch_node(
                    model, records, batch_idx, lam, rng, config, table
                )
                grads = ad.backward(total)
            except FloatingPointError as exc:
                raise TrainingDiverged(epoch, phase) from exc
            optimizer.step(model.params(), grads)
            plain_sum += plain
            batches += 1
            if worst is not None:
                worst_sum += worst
                worst_batches += 1
        log.write(
            {
                "epoch": epoch,
                "phase": phase,
                "lambda": lam,
                "plain_loss": plain_sum / max(1, batches),
                "worst_case_loss": (worst_sum / worst_batches) if worst_batches else None,
                "dev_selection_score": None,
            }
        )


def _adversary_batch_grads(model, adversary, records, batch_idx, lam, rng, config, table):
    """Gradients of the task loss and the adversary loss for one batch.

    The adversary only sees examples annotated with a protected group.
    Returns (task_grads, adversary_grads_for_predictor, adversary_grads_for_head,
    task_node_value).
    """
    task_total, plain, worst = _task_batch_node(model, records, batch_idx, lam, rng, config, table)
    task_grads = ad.backward(task_total)

    adv_nodes = []
    for i in batch_idx:
        rec = records[i]
        if rec.group_index < 0:
            continue
        logits = model.logits_graph(Tensor(model.embed(rec.ids)))
        adv_nodes.append(adversary.loss(logits, rec.label, rec.group_index))
    if adv_nodes:
        adv_total = ad.add_n(adv_nodes) * (1.0 / len(adv_nodes))
        adv_grads = ad.backward(adv_total)
    else:
        adv_grads = {}
    return task_grads, adv_grads, plain, worst


def _flatten(params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> np.ndarray:
    parts = []
    for name, p in params.items():
        g = grads.get(name)
        parts.append((g if g is not None else np.zeros_like(p.data)).ravel())
    return np.concatenate(parts)


def _unflatten(params: dict[str, Tensor], flat: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for name, p in params.items():
        size = p.data.size
        out[name] = flat[offset : offset + size].reshape(p.data.shape)
        offset += size
    return out


def _run_adversarial_epochs(model, adversary, records, config, table, rng, optimizer, adv_optimizer, log, lam):
    """Alternate task batches with projected debiasing batches.

    Even batches take a plain task step. Odd batches update the adversary on
    its own loss, then update the predictor with the projected gradient
    combination, so predictor updates never follow the adversary's direction.
    """
    n = len(records)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        plain_sum, batches = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch_idx = order[start : start + config.batch_size]
            try:
                if b % 2 == 0:
                    total, plain, _ = _task_batch_node(
                        model, records, batch_idx, lam, rng, config, table
                    )
                    grads = ad.backward(total)
                    optimizer.step(model.params(), grads)
                else:
                    task_grads, adv_grads, plain, _ = _adversary_batch_grads(
                        model, adversary, records, batch_idx, lam, rng, config, table
                    )
                    adv_optimizer.step(adversary.params(), adv_grads)
                    predictor = model.params()
                    gp = _flatten(predictor, task_grads)
                    ga = _flatten(predictor, adv_grads)
                    combined = debias_gradient(gp, ga, adversary.alpha)
                    optimizer.step(predictor, _unflatten(predictor, combined))
            except FloatingPointError as exc:
                raise TrainingDiverged(epoch, "adversarial") from exc
            plain_sum += plain
            batches += 1
        log.write(
            {
                "epoch": epoch,
                "phase": "adversarial",
                "lambda": lam,
                "plain_loss": plain_sum / max(1, batches),
                "worst_case_loss": None,
                "dev_selection_score": None,
            }
        )


def _pretrain_adversary(model, adversary, records, config, rng, adv_optimizer, log):
    annotated = [r for r in records if r.group_index >= 0]
    if not annotated:
        raise ValueError("adversarial debiasing needs protected-group annotations")
    n = len(annotated)
    for epoch in range(config.adversary_pretrain_epochs):
        order = rng.permutation(n)
        loss_sum, batches = 0.0, 0
        for start in range(0, n, config.batch_size):
            batch = [annotated[i] for i in order[start : start + config.batch_size]]
            nodes = []
            for rec in batch:
                logits = model.logits_graph(Tensor(model.embed(rec.ids)))
                nodes.append(adversary.loss(logits, rec.label, rec.group_index))
            total = ad.add_n(nodes) * (1.0 / len(nodes))
            grads = ad.backward(total)
            adv_optimizer.step(adversary.params(), grads)
            loss_sum += float(total.data)
            batches += 1
        log.write(
            {
                "epoch": epoch,
                "phase": "adversary-pretrain",
                "lambda": 0.0,
                "plain_loss": loss_sum / max(1, batches),
                "worst_case_loss": None,
                "dev_selection_score": None,
            }
        )


def train(
    config: TrainConfig,
    dataset: Dataset,
    table: SubstitutionTable | None,
    embeddings: np.ndarray,
    vocab: Vocabulary,
) -> TextCnn:
    """Train a classifier under the configured method combination.

    Embedding debiasing rewrites the (frozen) embedding matrix before
    training; gender augmentation extends the substitution table; instance
    weights scale each example's loss; the adversarial phase runs after the
    main objective, starting from the trained model.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    pairs, identity_lexicon, gendered_lexicon = _resolve_resources(config)

    emb = np.asarray(embeddings, dtype=np.float64)
    if config.hard_debias:
        subspace = gender_direction(emb, pairs, vocab)
        emb = hard_debias(emb, subspace, pairs, gendered_lexicon, vocab)

    if table is None:
        table = SubstitutionTable(candidates={})
    if config.gender_augmented:
        table = augment_gender_pairs(table, pairs)
    if config.uses_safer and table.mode != "clustered":
        raise ValueError("smoothing training requires a clustered table (run to_clusters first)")

    n_classes = config.n_classes if config.n_classes is not None else dataset.n_classes
    model = TextCnn(
        vocab,
        emb,
        hidden_size=config.hidden_size,
        kernel_size=config.kernel_size,
        n_classes=n_classes,
        dropout=config.dropout,
        max_len=config.max_len,
        seed=config.seed,
    )

    records = _encode_dataset(model, dataset, table, config.uses_ibp)
    if config.instance_weighting:
        weight_table = instance_weights(
            dataset, identity_lexicon, smoothing=config.instance_weight_smoothing
        )
        for rec, w in zip(records, weight_table.weights):
            rec.weight = float(w)

    protected: list[str] = []
    if config.adversarial:
        protected = sorted(
            {name for ex in dataset for name in ex.group_names(config.protected_axis)}
        )
        if len(protected) < 2:
            raise ValueError(
                f"adversarial debiasing needs at least two groups on axis {config.protected_axis!r}"
            )
        for rec, ex in zip(records, dataset):
            names = sorted(ex.group_names(config.protected_axis))
            rec.group_index = protected.index(names[0]) if names else -1

    optimizer = _make_optimizer(config)
    log = _EpochLog(config.log_path)

    if config.uses_ibp:
        total_epochs = config.ibp_ramp_epochs + config.ibp_hold_epochs
        _run_task_epochs(
            model, records, config, table, rng, optimizer, log, total_epochs, "task",
            lam_for=lambda e: ibp_schedule(e, config),
        )
        lam_final = ibp_schedule(total_epochs, config)
    else:
        pre = config.adversary_pretrain_epochs if config.adversarial else 0
        n_epochs = pre if config.adversarial else config.epochs
        _run_task_epochs(
            model, records, config, table, rng, optimizer, log, n_epochs, "task",
            lam_for=lambda e: 0.0,
        )
        lam_final = 0.0

    if config.adversarial:
        adversary = Adversary(protected, n_classes, alpha=config.adversary_alpha, seed=config.seed)
        adv_optimizer = _make_optimizer(config)
        _pretrain_adversary(model, adversary, records, config, rng, adv_optimizer, log)
        _run_adversarial_epochs(
            model, adversary, records, config, table, rng, optimizer, adv_optimizer, log, lam_final
        )
    return model
