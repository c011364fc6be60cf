"""Training configuration and the per-dataset presets."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .fusion import WEIGHT_SUM_TOL, ModelConfig


class PretrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(1e-3, ge=0)
    epochs: int = Field(50, ge=0)
    batch_size: Optional[int] = Field(None, ge=1)


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    features: Optional[str] = None
    edges: Optional[str] = None
    labels: Optional[str] = None
    ae_weights: Optional[str] = None
    out_dir: Optional[str] = None


class TrainConfig(BaseModel):
    """Every scalar of a run.  JSON keys are the field names; ``lambda`` is aliased."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    epochs: int = Field(200, ge=0)
    lr: float = Field(1e-4, ge=0)
    lr_decay: Literal["none", "step"] = "none"
    alpha: float = Field(0.1, ge=0)
    beta: float = Field(0.1, ge=0)
    lam: float = Field(1 / 3, ge=0, alias="lambda")
    theta: float = Field(1 / 3, ge=0)
    gamma: float = Field(1 / 3, ge=0)
    eps: float = Field(0.5, ge=0, le=1)
    delta: float = Field(0.1, ge=0)
    t: float = Field(1.0, gt=0)
    n_z: int = Field(10, ge=1)
    depth: int = Field(4, ge=1)
    hidden_dims: list[int] = Field(default_factory=lambda: [500, 500, 2000])
    heads: int = Field(1, ge=1)
    residual: bool = False
    recon_branch: Literal["gcn", "transformer", "averaged"] = "gcn"
    ae_recon_target: Literal["smoothed", "raw"] = "smoothed"
    attention_norm: Literal["softmax", "sigmoid"] = "softmax"
    leaky_slope: float = Field(0.01, ge=0)
    target_update_interval: int = Field(1, ge=1)
    label_source: Literal["q_prime", "q"] = "q_prime"
    standardize: bool = False
    n_clusters: Optional[int] = Field(None, ge=1)
    seed: int = 0
    kmeans_restarts: int = Field(20, ge=1)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)

    @model_validator(mode="after")
    def _weights_on_simplex(self):
        s = self.lam + self.theta + self.gamma
        if abs(s - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"lambda + theta + gamma must equal 1 (within {WEIGHT_SUM_TOL}), got {s!r}")
        return self

    def model(self) -> ModelConfig:
        return ModelConfig(
            n_z=self.n_z, depth=self.depth, hidden=tuple(self.hidden_dims), eps=self.eps,
            lam=self.lam, theta=self.theta, gamma=self.gamma, delta=self.delta,
            alpha=self.alpha, beta=self.beta, t=self.t, heads=self.heads, residual=self.residual,
            recon_branch=self.recon_branch, ae_recon_target=self.ae_recon_target,
            attention_norm=self.attention_norm, slope=self.leaky_slope,
        )

    def to_json(self) -> str:
        return self.model_dump_json(by_alias=True, indent=2)

    def to_dict(self) -> dict:
        return self.model_dump(by_alias=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        return cls.model_validate_json(text)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


# epoch, alpha, beta, n_z, learning rate, lambda, theta, gamma, eps
PRESETS = {
    "ACM": (200, 0.12, 0.1, 10, 5e-5, 0.5, 0.4, 0.1, 0.5),
    "DBLP": (200, 0.1, 0.12, 10, 2e-3, 0.3, 0.4, 0.3, 0.5),
    "Citeseer": (200, 0.15, 0.3, 10, 4e-5, 0.3, 0.5, 0.2, 0.3),
    "Cora": (400, 0.1, 0.12, 10, 1e-4, 0.1, 0.4, 0.5, 0.5),
    "HHAR": (600, 0.3, 0.1, 20, 1e-4, 0.1, 0.4, 0.5, 0.5),
    "Reuters": (200, 0.3, 0.15, 20, 1e-4, 0.5, 0.1, 0.4, 0.9),
    "USPS": (400, 0.1, 0.1, 10, 1e-3, 0.2, 0.3, 0.5, 0.5),
}


def preset(name: str, **overrides) -> TrainConfig:
    try:
        epochs, alpha, beta, n_z, lr, lam, theta, gamma, eps = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    data = {"epochs": epochs, "alpha": alpha, "beta": beta, "n_z": n_z, "lr": lr,
            "lambda": lam, "theta": theta, "gamma": gamma, "eps": eps}
    data.update(overrides)
    return TrainConfig.model_validate(data)


def preset_json(name: str) -> str:
    return json.dumps(preset(name).to_dict(), indent=2)
