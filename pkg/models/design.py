from functools import cached_property
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from models.ggd import GgdShape
from models.transforms import IntegralOperator
from utils.hashing import operator_id


def _frozen_array(v) -> np.ndarray:
    arr = np.array(v, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


class DesignProblem(BaseModel):
    """
    Data of the smoothed nuclear-norm program

        minimize  tau*||P||_* + 0.5*||P||_F^2
        s.t.      ||A_i(P) - b_i|| <= Delta_i   for every location i

    with A_i(P) = sigma_u P^T h_i. The rows h_i of the integral operator are
    never stored; `b` holds b_i as its i-th column.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    sigma_u: np.ndarray
    integral: IntegralOperator
    b: np.ndarray
    delta_bounds: np.ndarray
    eps: float = Field(..., gt=0.0, lt=1.0)
    beta: GgdShape
    delta: np.ndarray

    @field_validator("sigma_u", "b", "delta_bounds", "delta", mode="before")
    @classmethod
    def _as_array(cls, v):
        return _frozen_array(v)

    @model_validator(mode="after")
    def _check_shapes(self):
        n = self.integral.n
        if self.sigma_u.shape != (n - 1, n):
            raise ValueError(f"sigma_u must be {n - 1}x{n}, got {self.sigma_u.shape}")
        if self.b.shape != (n - 1, n):
            raise ValueError(f"b must be {n - 1}x{n}, got {self.b.shape}")
        if self.delta_bounds.shape != (n,) or self.delta.shape != (n,):
            raise ValueError("delta and delta_bounds must have one entry per location")
        if np.any(self.delta < 0) or np.any(self.delta_bounds < 0):
            raise ValueError("delta and delta_bounds must be nonnegative")
        return self

    @property
    def n(self) -> int:
        return self.integral.n

    @property
    def block_side(self) -> int:
        return self.integral.rows


class SvtState(BaseModel):
    """Primal/dual iterate of the Uzawa recursion. Mutated in place by the solver."""

    model_config = ConfigDict(arbitrary_types_allowed=True, validate_assignment=False)

    p: np.ndarray
    dual_y: np.ndarray
    dual_s: np.ndarray
    tau: float = Field(..., gt=0.0)
    eta: float = Field(..., gt=0.0)
    operator_norm: float = Field(..., gt=0.0)
    iteration: int = 0

    @model_validator(mode="after")
    def _check_step(self):
        limit = 2.0 / self.operator_norm ** 2
        if self.eta > limit * (1.0 + 1e-12):
            raise ValueError(f"step size {self.eta:.3e} exceeds 2/||A||^2 = {limit:.3e}")
        return self

    @classmethod
    def zeros(cls, n: int, tau: float, eta: float, operator_norm: float) -> "SvtState":
        return cls(
            p=np.zeros((n, n)),
            dual_y=np.zeros((n - 1, n)),
            dual_s=np.zeros(n),
            tau=tau,
            eta=eta,
            operator_norm=operator_norm,
        )


class SvtHistoryEntry(BaseModel):
    iteration: int
    violation: float
    rel_change: float
    nuclear_norm: float


class SvtResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    p: np.ndarray
    history: List[SvtHistoryEntry] = Field(default_factory=list)
    converged: bool
    iterations: int
    tau: float
    eta: float
    operator_norm: float
    max_violation: float
    accelerated: bool = False
    restarts: int = 0


class SensingDesign(BaseModel):
    """Q* = P* + (1/n) O together with its singular triplets, nonincreasing."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    q: np.ndarray
    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    feasibility_margins: np.ndarray
    rank_p: int = Field(..., ge=0)
    rank_q: int = Field(..., ge=0)
    ones_residual: float = 0.0
    converged: bool = True

    @field_validator("q", "singular_values", "left_vectors", "right_vectors",
                     "feasibility_margins", mode="before")
    @classmethod
    def _as_array(cls, v):
        return _frozen_array(v)

    @model_validator(mode="after")
    def _check(self):
        n = self.q.shape[0]
        if self.q.shape != (n, n):
            raise ValueError("q must be square")
        if self.left_vectors.shape != (n, n) or self.right_vectors.shape != (n, n):
            raise ValueError("singular vectors must be n x n")
        if self.singular_values.shape != (n,):
            raise ValueError("expected n singular values")
        if np.any(np.diff(self.singular_values) > 0):
            raise ValueError("singular values must be nonincreasing")
        return self

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def block_side(self) -> int:
        return int(round(np.sqrt(self.n)))


class SensingOperatorPair(BaseModel):
    """Rank-M measurement matrix phi and its dual, with Q_M = phi_dual^T phi."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    phi: np.ndarray
    phi_dual: np.ndarray
    rank: int = Field(..., ge=1)
    block_side: int = Field(..., ge=1)
    singular_values: Optional[np.ndarray] = None

    @field_validator("phi", "phi_dual", mode="before")
    @classmethod
    def _as_array(cls, v):
        return _frozen_array(v)

    @field_validator("singular_values", mode="before")
    @classmethod
    def _optional_array(cls, v):
        return None if v is None else _frozen_array(v)

    @model_validator(mode="after")
    def _check(self):
        n = self.block_side ** 2
        expected = (self.rank, n)
        if self.phi.shape != expected or self.phi_dual.shape != expected:
            raise ValueError(
                f"phi and phi_dual must be {expected}, got {self.phi.shape} and {self.phi_dual.shape}"
            )
        return self

    @property
    def n(self) -> int:
        return self.block_side ** 2

    @property
    def measurement_rate(self) -> float:
        return self.rank / self.n

    @cached_property
    def q_m(self) -> np.ndarray:
        return self.phi_dual.T @ self.phi

    @cached_property
    def operator_id(self) -> str:
        return operator_id(self.phi, self.phi_dual, self.block_side)

    @classmethod
    def identity(cls, block_side: int) -> "SensingOperatorPair":
        """Bypass operator: every pixel measured, Q_M = I."""
        n = block_side ** 2
        return cls(phi=np.eye(n), phi_dual=np.eye(n), rank=n, block_side=block_side,
                   singular_values=np.ones(n))
