"""
Toy conditional flow-matching model.

A small float64 MLP maps [z, t, embedding] to a velocity. Label k uses embedding row k + 1,
the null condition uses row 0, and an embedding condition supplies its vector directly.
Data (t = 0) is a labeled Gaussian mixture, noise (t = 1) is standard normal, and the
model regresses Z_1 - Z_0 at Z_t = t Z_1 + (1 - t) Z_0 with plain SGD.
"""

from collections.abc import Sequence
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
import torch
from torch import nn
from torch.nn.utils import parameters_to_vector, vector_to_parameters

from flow_edit_lab.config import logger
from flow_edit_lab.core.latent import Condition, ConditionKind, LatentState
from flow_edit_lab.errors import (
    InvalidInputError,
    InvalidParameterError,
    LayoutMismatchError,
    NumericalError,
)
from flow_edit_lab.fields.base import VelocityField
from flow_edit_lab.fields.guidance import generate
from flow_edit_lab.schemas.fields import DatasetSpec, TrainConfig
from flow_edit_lab.utils.codec import decode_float64, dump_json, encode_float64, load_json

CHECKPOINT_FORMAT = "flow-edit-lab-cfm/1"
MAX_GRAD_CHECK_BATCH = 8


class CfmPair(NamedTuple):
    """One training pair (Z_0, Z_1, c)."""

    z0: LatentState
    z1: LatentState
    condition: Condition


def sample_mixture(
    dataset: DatasetSpec, n: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw n labeled points from the mixture.

    Returns:
        tuple[np.ndarray, np.ndarray]: (n, D) points and their integer labels.
    """
    means = np.asarray(dataset.means, dtype=np.float64)
    weights = np.ones(len(means)) if dataset.weights is None else np.asarray(dataset.weights)
    labels = rng.choice(len(means), size=n, p=weights / weights.sum())
    points = means[labels] + dataset.std * rng.standard_normal((n, means.shape[1]))
    return points, labels


class _VelocityNet(nn.Module):
    def __init__(
        self, dim: int, n_labels: int, embedding_dim: int, hidden_width: int, hidden_layers: int
    ) -> None:
        super().__init__()
        self.embedding = nn.Embedding(n_labels + 1, embedding_dim, dtype=torch.float64)
        layers: list[nn.Module] = []
        width = dim + 1 + embedding_dim
        for _ in range(hidden_layers):
            layers += [nn.Linear(width, hidden_width, dtype=torch.float64), nn.SiLU()]
            width = hidden_width
        layers.append(nn.Linear(width, dim, dtype=torch.float64))
        self.body = nn.Sequential(*layers)

    def forward(self, z: torch.Tensor, t: torch.Tensor, emb: torch.Tensor) -> torch.Tensor:
        return self.body(torch.cat([z, t[:, None], emb], dim=1))


class CfmModel(VelocityField):
    """Trained conditional velocity field; no certified bounds."""

    def __init__(self, dataset: DatasetSpec, config: TrainConfig) -> None:
        self.dataset = dataset
        self.config = config
        self.dim = dataset.dim
        self.n_labels = dataset.n_labels
        self.history: list[dict[str, float]] = []
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(config.seed)
            self.net = _VelocityNet(
                self.dim,
                self.n_labels,
                config.embedding_dim,
                config.hidden_width,
                config.hidden_layers,
            )

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def parameter_vector(self) -> np.ndarray:
        return parameters_to_vector(self.net.parameters()).detach().numpy().copy()

    def load_parameter_vector(self, values: np.ndarray) -> None:
        if values.size != self.parameter_count:
            msg = "parameter vector does not match the architecture"
            raise LayoutMismatchError(msg, expected=self.parameter_count, got=int(values.size))
        with torch.no_grad():
            vector_to_parameters(torch.as_tensor(values, dtype=torch.float64), self.net.parameters())

    def row(self, condition: Condition) -> int:
        """Embedding row of a condition (0 for null and direct embeddings)."""
        if condition.kind is ConditionKind.LABEL:
            label = condition.label if condition.label is not None else -1
            if not 0 <= label < self.n_labels:
                msg = "label outside the trained label set"
                raise InvalidParameterError(msg, label=label, n_labels=self.n_labels)
            return label + 1
        if condition.kind is ConditionKind.EMBEDDING:
            if len(condition.embedding or ()) != self.config.embedding_dim:
                msg = "embedding width does not match the model"
                raise LayoutMismatchError(
                    msg, expected=self.config.embedding_dim, got=len(condition.embedding or ())
                )
        return 0

    def embed(self, conditions: Sequence[Condition]) -> torch.Tensor:
        rows = torch.tensor([self.row(c) for c in conditions], dtype=torch.long)
        emb = self.net.embedding(rows)
        direct = [c.kind is ConditionKind.EMBEDDING for c in conditions]
        if any(direct):
            zeros = (0.0,) * self.config.embedding_dim
            vectors = torch.tensor(
                [c.embedding if flag else zeros for c, flag in zip(conditions, direct, strict=True)],
                dtype=torch.float64,
            )
            emb = torch.where(torch.tensor(direct)[:, None], vectors, emb)
        return emb

    def pair_loss(
        self, z0: torch.Tensor, z1: torch.Tensor, t: torch.Tensor, emb: torch.Tensor
    ) -> torch.Tensor:
        """Mean over the batch of ||v(Z_t, t, c) - (Z_1 - Z_0)||^2."""
        zt = t[:, None] * z1 + (1.0 - t[:, None]) * z0
        residual = self.net(zt, t, emb) - (z1 - z0)
        return (residual**2).sum(dim=1).mean()

    def velocity(self, z: np.ndarray, t: float, condition: Condition) -> np.ndarray:
        if z.size != self.dim:
            msg = "state size does not match the model"
            raise LayoutMismatchError(msg, expected=self.dim, got=int(z.size))
        with torch.no_grad():
            out = self.net(
                torch.tensor(z, dtype=torch.float64)[None, :],
                torch.tensor([t], dtype=torch.float64),
                self.embed([condition]),
            )
        return out[0].numpy().copy()

    @property
    def descriptor(self) -> dict[str, Any]:
        return {
            "kind": "trained",
            "dim": self.dim,
            "n_labels": self.n_labels,
            "parameter_count": self.parameter_count,
            "train": self.config.model_dump(),
        }


def _batch_tensors(
    model: CfmModel, batch: Sequence[CfmPair], times: Sequence[float]
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, list[Condition]]:
    if not batch:
        msg = "batch is empty"
        raise InvalidInputError(msg)
    if len(times) != len(batch):
        msg = "one time per batch item required"
        raise InvalidInputError(msg, items=len(batch), times=len(times))
    if any(not 0.0 <= t <= 1.0 for t in times):
        msg = "times must lie in [0, 1]"
        raise InvalidParameterError(msg)
    layout = batch[0].z0.layout
    for pair in batch:
        pair.z0.require_same_layout(pair.z1)
        pair.z0.require_same_layout(batch[0].z0)
    if layout.size != model.dim:
        msg = "batch states do not match the model"
        raise LayoutMismatchError(msg, expected=model.dim, got=layout.size)
    z0 = torch.as_tensor(np.stack([pair.z0.flatten() for pair in batch]))
    z1 = torch.as_tensor(np.stack([pair.z1.flatten() for pair in batch]))
    t = torch.as_tensor(np.asarray(times, dtype=np.float64))
    return z0, z1, t, [pair.condition for pair in batch]


def cfm_loss(model: CfmModel, batch: Sequence[CfmPair], times: Sequence[float]) -> float:
    """
    Conditional flow-matching loss of a batch.

    Raises:
        InvalidInputError: If the batch is empty or times are out of range.
        LayoutMismatchError: If states in the batch disagree in layout.
    """
    z0, z1, t, conditions = _batch_tensors(model, batch, times)
    with torch.no_grad():
        return float(model.pair_loss(z0, z1, t, model.embed(conditions)))


def heldout_loss(model: CfmModel, dataset: DatasetSpec, seed: int) -> float:
    """Loss on a fixed held-out draw (labels kept, no dropout)."""
    rng = np.random.default_rng(seed)
    z0, labels = sample_mixture(dataset, dataset.n_heldout, rng)
    z1 = rng.standard_normal(z0.shape)
    t = rng.uniform(0.0, 1.0, dataset.n_heldout)
    with torch.no_grad():
        emb = model.net.embedding(torch.as_tensor(labels + 1, dtype=torch.long))
        loss = model.pair_loss(torch.as_tensor(z0), torch.as_tensor(z1), torch.as_tensor(t), emb)
    return float(loss)


def init_model(dataset: DatasetSpec, config: TrainConfig) -> CfmModel:
    """Seeded, untrained model."""
    return CfmModel(dataset, config)


def cfm_train(dataset: DatasetSpec, config: TrainConfig) -> CfmModel:
    """
    Fit a model with SGD on fresh mixture/noise pairs each step.

    Label dropout replaces a label by the null row with probability p_uncond so the same
    network serves both guidance branches. Held-out loss is recorded in model.history.

    Args:
        dataset (DatasetSpec): Data-side mixture.
        config (TrainConfig): Architecture and SGD settings.

    Returns:
        CfmModel: Trained model.

    Raises:
        NumericalError: If the training loss becomes non-finite (context carries the step).
    """
    model = init_model(dataset, config)
    heldout_seed = config.seed + 1
    model.history.append({"step": 0, "heldout_loss": heldout_loss(model, dataset, heldout_seed)})
    if config.steps == 0:
        return model

    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.SGD(model.net.parameters(), lr=config.learning_rate)
    for step in range(1, config.steps + 1):
        z0, labels = sample_mixture(dataset, config.batch_size, rng)
        z1 = rng.standard_normal(z0.shape)
        t = rng.uniform(0.0, 1.0, config.batch_size)
        dropped = rng.uniform(size=config.batch_size) < config.p_uncond
        rows = np.where(dropped, 0, labels + 1)

        optimizer.zero_grad()
        emb = model.net.embedding(torch.as_tensor(rows, dtype=torch.long))
        loss = model.pair_loss(torch.as_tensor(z0), torch.as_tensor(z1), torch.as_tensor(t), emb)
        if not torch.isfinite(loss):
            msg = "training loss is not finite"
            logger.error(msg, extra={"step": step})
            raise NumericalError(msg, step=step)
        loss.backward()
        optimizer.step()

        if step % config.log_every == 0 or step == config.steps:
            model.history.append(
                {"step": step, "heldout_loss": heldout_loss(model, dataset, heldout_seed)}
            )

    logger.info(
        "Training finished",
        extra={
            "steps": config.steps,
            "initial_loss": model.history[0]["heldout_loss"],
            "final_loss": model.history[-1]["heldout_loss"],
        },
    )
    return model


def cfm_grad_check(
    model: CfmModel,
    batch: Sequence[CfmPair],
    times: Sequence[float],
    n_params: int = 50,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """
    Compare autograd parameter gradients of cfm_loss with central differences.

    The relative error per parameter is |a - f| / max(|a|, |f|, 1e-2); the floor keeps
    near-zero gradients from dominating. Parameters are restored bit-exactly afterwards.

    Returns:
        float: Max relative error over a random subset of n_params entries (all if fewer).

    Raises:
        InvalidInputError: If the batch is empty.
        InvalidParameterError: If the batch has more than 8 items.
    """
    if len(batch) > MAX_GRAD_CHECK_BATCH:
        msg = "gradient check batch is limited to 8 items"
        raise InvalidParameterError(msg, items=len(batch))
    z0, z1, t, conditions = _batch_tensors(model, batch, times)
    params = list(model.net.parameters())

    loss = model.pair_loss(z0, z1, t, model.embed(conditions))
    analytic = torch.cat([g.reshape(-1) for g in torch.autograd.grad(loss, params)]).numpy()

    original = parameters_to_vector(params).detach().clone()
    rng = np.random.default_rng(seed)
    count = min(n_params, original.numel())
    indices = np.sort(rng.choice(original.numel(), size=count, replace=False))

    def loss_at(vector: torch.Tensor) -> float:
        vector_to_parameters(vector, params)
        return float(model.pair_loss(z0, z1, t, model.embed(conditions)))

    worst = 0.0
    try:
        with torch.no_grad():
            for index in indices:
                shifted = original.clone()
                shifted[index] = original[index] + step
                plus = loss_at(shifted)
                shifted[index] = original[index] - step
                minus = loss_at(shifted)
                numeric = (plus - minus) / (2.0 * step)
                exact = float(analytic[index])
                scale = max(abs(exact), abs(numeric), 1e-2)
                worst = max(worst, abs(exact - numeric) / scale)
    finally:
        with torch.no_grad():
            vector_to_parameters(original, params)
    return worst


def conditional_accuracy(
    model: CfmModel, n_samples: int, n_steps: int, w: float = 1.0, seed: int = 0
) -> dict[int, float]:
    """
    Fraction of guided samples per label that land nearer their own component mean.

    Returns:
        dict[int, float]: label -> fraction in [0, 1].
    """
    means = np.asarray(model.dataset.means, dtype=np.float64)
    rng = np.random.default_rng(seed)
    scores: dict[int, float] = {}
    for label in range(model.n_labels):
        condition = Condition.of_label(label)
        hits = 0
        for _ in range(n_samples):
            noise = LatentState.from_flat(rng.standard_normal(model.dim))
            sample = generate(model, noise, condition, n_steps, w).start.flatten()
            distances = np.linalg.norm(means - sample, axis=1)
            hits += int(np.argmin(distances) == label)
        scores[label] = hits / n_samples
    return scores


def save_checkpoint(model: CfmModel, path: Path) -> None:
    """Write architecture, training config, history and base64 float64 parameters."""
    dump_json(
        {
            "format": CHECKPOINT_FORMAT,
            "dataset": model.dataset.model_dump(),
            "train": model.config.model_dump(),
            "parameter_count": model.parameter_count,
            "parameters": encode_float64(model.parameter_vector()),
            "history": model.history,
        },
        path,
    )
    logger.info("Checkpoint written", extra={"path": str(path)})


def load_checkpoint(path: Path) -> CfmModel:
    """
    Rebuild a model written by save_checkpoint.

    Raises:
        InvalidInputError: If the file is not a checkpoint.
    """
    if not path.is_file():
        msg = "checkpoint not found"
        logger.warning(msg, extra={"path": str(path)})
        raise InvalidInputError(msg, path=str(path))
    document = load_json(path)
    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        msg = "not a flow-edit-lab checkpoint"
        raise InvalidInputError(msg, path=str(path))
    model = CfmModel(
        DatasetSpec.model_validate(document["dataset"]),
        TrainConfig.model_validate(document["train"]),
    )
    model.load_parameter_vector(decode_float64(document["parameters"]))
    model.history = list(document.get("history", []))
    return model
