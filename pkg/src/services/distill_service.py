"""Distill Service - Similarity-based knowledge distillation (auxiliary stage).

This module handles:
- The FIFO memory bank of teacher embeddings (anchors)
- Similarity distributions of a query over the anchors (softmax of cosine / temperature)
- The KL loss between teacher and student distributions
- Momentum (EMA) update of the teacher from the student
- One training step in the order: student forward, momentum update,
  teacher forward, distributions, enqueue, student optimizer step

Interface Contract:
- MemoryBank.enqueue(vectors)
- similarity_distribution(z, bank, gamma) -> probabilities
- kl_loss(p_teacher, p_student) -> scalar
- momentum_update(pair) -> None (teacher updated in place)
- aux_train_step(pair, bank, batch, optimizer) -> AuxStepResult
- All methods raise DistillError subclasses on failure
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import torch
import torch.nn.functional as F

from src.networks import StudentNetwork, TeacherNetwork, l2_normalize

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-4


class DistillError(Exception):
    """Base class for distillation errors."""


class DimMismatchError(DistillError):
    """Raised when enqueued vectors have the wrong dimension."""


class NotNormalizedError(DistillError):
    """Raised when enqueued vectors are not unit norm."""


class EmptyBankError(DistillError):
    """Raised when a distribution is requested from an empty bank."""


class LengthMismatchError(DistillError):
    """Raised when two distributions differ in length."""


class ParameterShapeMismatchError(DistillError):
    """Raised when teacher and student parameters cannot be paired."""


# ============================================================================
# Memory bank
# ============================================================================

class MemoryBank:
    """Fixed-capacity FIFO ring of unit vectors.

    `cursor` is the next row to overwrite; once full it is also the oldest row.
    """

    def __init__(self, capacity: int, dim: int, dtype: torch.dtype = torch.float32):
        if capacity < 1 or dim < 1:
            raise DistillError(f"bank needs capacity >= 1 and dim >= 1, got {capacity}, {dim}")
        self.capacity = capacity
        self.dim = dim
        self.storage = torch.zeros(capacity, dim, dtype=dtype)
        self.cursor = 0
        self.fill = 0

    def __len__(self) -> int:
        return self.fill

    @torch.no_grad()
    def enqueue(self, vectors: torch.Tensor) -> None:
        """Append rows; at capacity the oldest rows are evicted one for one.

        Raises:
            DimMismatchError: vectors are not (B, dim)
            NotNormalizedError: a row norm deviates from 1 by more than 1e-4
        """
        if vectors.dim() != 2 or vectors.shape[1] != self.dim:
            raise DimMismatchError(f"expected (B, {self.dim}) vectors, got {tuple(vectors.shape)}")
        norms = vectors.detach().norm(dim=1)
        if bool(((norms - 1).abs() > NORM_TOLERANCE).any()):
            raise NotNormalizedError(f"bank vectors must be unit norm, got norms in [{float(norms.min()):.6f}, {float(norms.max()):.6f}]")

        rows = vectors.detach().to(self.storage.dtype)
        if rows.shape[0] >= self.capacity:
            self.storage.copy_(rows[-self.capacity:])
            self.cursor = 0
            self.fill = self.capacity
            return
        for row in rows:
            self.storage[self.cursor] = row
            self.cursor = (self.cursor + 1) % self.capacity
            self.fill = min(self.fill + 1, self.capacity)

    def anchors(self) -> torch.Tensor:
        """Filled rows, oldest first.

        Always a copy: autograd keeps the anchors for the backward pass, and
        `enqueue` writes into `storage` in place before that pass runs.
        """
        if self.fill < self.capacity:
            return self.storage[:self.fill].clone()
        return torch.cat([self.storage[self.cursor:], self.storage[:self.cursor]])

    def state_dict(self) -> dict[str, Any]:
        return {"storage": self.storage.clone(), "cursor": self.cursor, "fill": self.fill, "capacity": self.capacity, "dim": self.dim}

    def load_state_dict(self, state: dict[str, Any]) -> None:
        if int(state["capacity"]) != self.capacity or int(state["dim"]) != self.dim:
            raise DimMismatchError(
                f"bank state is {state['capacity']}x{state['dim']}, this bank is {self.capacity}x{self.dim}"
            )
        self.storage.copy_(state["storage"])
        self.cursor = int(state["cursor"])
        self.fill = int(state["fill"])


# ============================================================================
# Distributions and loss
# ============================================================================

def similarity_logits(z: torch.Tensor, bank: MemoryBank, gamma: float) -> torch.Tensor:
    """sim(z, x_i) / gamma for every filled anchor; z is (B, dim) or (dim,)."""
    if gamma <= 0:
        raise DistillError(f"temperature must be > 0, got {gamma}")
    if bank.fill == 0:
        raise EmptyBankError("memory bank is empty")
    anchors = bank.anchors().to(z.dtype)
    return (z @ anchors.T) / gamma


def similarity_distribution(z: torch.Tensor, bank: MemoryBank, gamma: float) -> torch.Tensor:
    """Softmax over the bank of cosine similarity / gamma (max-subtracted)."""
    logits = similarity_logits(z, bank, gamma)
    logits = logits - logits.max(dim=-1, keepdim=True).values
    weights = logits.exp()
    return weights / weights.sum(dim=-1, keepdim=True)


def kl_loss(p_teacher: torch.Tensor, p_student: torch.Tensor) -> torch.Tensor:
    """sum_i p_T,i (log p_T,i - log p_S,i), summed over the batch.

    The teacher side is detached; only p_student carries gradient.
    """
    if p_teacher.shape != p_student.shape:
        raise LengthMismatchError(f"distribution shapes differ: {tuple(p_teacher.shape)} vs {tuple(p_student.shape)}")
    p_teacher = p_teacher.detach()
    return (torch.xlogy(p_teacher, p_teacher) - torch.xlogy(p_teacher, p_student)).sum()


def kl_loss_from_logits(teacher_logits: torch.Tensor, student_logits: torch.Tensor) -> torch.Tensor:
    """Same loss computed in log space (stable at small temperatures)."""
    if teacher_logits.shape != student_logits.shape:
        raise LengthMismatchError(f"logit shapes differ: {tuple(teacher_logits.shape)} vs {tuple(student_logits.shape)}")
    log_p_t = F.log_softmax(teacher_logits.detach(), dim=-1)
    log_p_s = F.log_softmax(student_logits, dim=-1)
    return F.kl_div(log_p_s, log_p_t, reduction="sum", log_target=True)


# ============================================================================
# Teacher / student pair
# ============================================================================

@dataclass
class DistillPair:
    student: StudentNetwork
    teacher: TeacherNetwork
    momentum: float = 0.999
    teacher_temperature: float = 0.02
    student_temperature: float = 0.02


@torch.no_grad()
def momentum_update(pair: DistillPair) -> None:
    """theta_T <- m * theta_T + (1 - m) * theta_S for every teacher parameter.

    The student's predictor has no teacher counterpart and is skipped.
    """
    m = pair.momentum
    if not 0.0 <= m <= 1.0:
        raise DistillError(f"momentum must be in [0, 1], got {m}")
    student_params = dict(pair.student.named_parameters())
    for name, teacher_param in pair.teacher.named_parameters():
        student_param = student_params.get(name)
        if student_param is None or student_param.shape != teacher_param.shape:
            got = None if student_param is None else tuple(student_param.shape)
            raise ParameterShapeMismatchError(f"teacher parameter {name} {tuple(teacher_param.shape)} has no student match (got {got})")
        teacher_param.mul_(m).add_(student_param.detach(), alpha=1.0 - m)


@dataclass
class AuxStepResult:
    loss: float
    bank_fill: int
    teacher_sums: tuple[float, float]     # min/max of per-row sums of p_T
    student_sums: tuple[float, float]


def aux_train_step(
    pair: DistillPair,
    bank: MemoryBank,
    student_view: torch.Tensor,
    teacher_view: torch.Tensor,
    optimizer: torch.optim.Optimizer,
) -> AuxStepResult:
    """One optimization step of the auxiliary stage on a batch of twin views.

    An empty bank is seeded with this batch's teacher embeddings before the loss
    so the first step already has anchors.
    """
    pair.student.train()
    pair.teacher.train()

    z_s = l2_normalize(pair.student(student_view))

    momentum_update(pair)

    with torch.no_grad():
        z_t = l2_normalize(pair.teacher(teacher_view))

    seeded = bank.fill == 0
    if seeded:
        bank.enqueue(z_t)

    teacher_logits = similarity_logits(z_t, bank, pair.teacher_temperature)
    student_logits = similarity_logits(z_s, bank, pair.student_temperature)
    loss = kl_loss_from_logits(teacher_logits, student_logits)

    with torch.no_grad():
        t_sums = F.softmax(teacher_logits, dim=-1).sum(dim=-1)
        s_sums = F.softmax(student_logits.detach(), dim=-1).sum(dim=-1)

    if not seeded:
        bank.enqueue(z_t)

    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()

    return AuxStepResult(
        loss=float(loss.detach()),
        bank_fill=bank.fill,
        teacher_sums=(float(t_sums.min()), float(t_sums.max())),
        student_sums=(float(s_sums.min()), float(s_sums.max())),
    )


def teacher_has_no_gradient(teacher: TeacherNetwork) -> bool:
    """True when every teacher gradient buffer is absent or all zero."""
    return all(p.grad is None or bool((p.grad == 0).all()) for p in teacher.parameters())
