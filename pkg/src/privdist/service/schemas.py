"""Pydantic request/response models for the pipeline service."""

from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator


class ProblemSource(BaseModel):
    """Exactly one of ``builtin`` (case-study name) or ``inline`` (problem
    dict in the config schema)."""

    builtin: Optional[str] = None
    inline: Optional[Dict[str, Any]] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.builtin is None) == (self.inline is None):
            raise ValueError("exactly one problem source required")
        return self


class NoiseSpec(BaseModel):
    sigma: Optional[float] = None  # one scale for every agent
    per_agent: Optional[List[float]] = None

    def scales_for(self, M: int) -> List[float]:
        if self.per_agent is not None:
            if len(self.per_agent) != M:
                raise ValueError(f"need {M} noise scales")
            return list(self.per_agent)
        return [self.sigma or 0.0] * M


class RunRequest(BaseModel):
    problem: ProblemSource
    K: int = Field(ge=1)
    seed: int
    noise: NoiseSpec = NoiseSpec()
    thetas: Optional[List[float]] = None
    privacy_requested: Optional[List[bool]] = None


class RunResponse(BaseModel):
    summary: Dict[str, Any]
    privacy_report: Dict[str, Any]
    transcript_csv: str


class SensitivityRequest(BaseModel):
    problem: ProblemSource
    agent: int = 0
    alpha: float = Field(gt=0, le=1)
    beta: float = Field(gt=0, le=1)
    seed: int
    N_override: Optional[int] = None


class SensitivityResponse(BaseModel):
    certificate: Dict[str, Any]


class TradeoffRequest(BaseModel):
    theta: float
    M: int = Field(ge=1)
    G: float
    rho_phi: float
    eps_bar: Optional[float] = None
    S_bar: Optional[float] = None
    sigmas: Optional[List[float]] = None
    Ks: Optional[List[int]] = None
    test_points: List[Dict[str, float]] = []  # {"nu": ..., "K": ...}


class TradeoffResponse(BaseModel):
    front: List[Dict[str, float]]
    verdicts: List[Dict[str, Any]]
    cloud_csv: str


class AllocateRequest(BaseModel):
    scheme: str
    rho_phi: float
    K: int = Field(ge=1)
    S_K: float
    G: List[float]
    thetas: Optional[List[float]] = None
    bids: Optional[List[float]] = None
    M: Optional[int] = None


class AllocateResponse(BaseModel):
    allocation: Dict[str, Any]


class MpcLoopRequest(BaseModel):
    building: Optional[Dict[str, Any]] = None  # None means the built-in toy
    sigma: float = 0.0
    K_per_step: int = Field(default=10, ge=1)
    steps: int = Field(default=96, ge=1)
    seed: int = 0
    with_reference: bool = True


class MpcLoopResponse(BaseModel):
    summary: Dict[str, Any]
    trajectory_csv: str
