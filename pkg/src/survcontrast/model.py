"""Hazard model: encoder, projection head, and hazard network.

The encoder maps features to a latent vector ``h``, the projection head maps
``h`` into the embedding space used by the contrastive losses, and the
hazard network emits one logit per discrete time bin; a sigmoid turns those
logits into per-bin hazards. Emitting all ``t_max + 1`` logits in a single
head is equivalent to querying a (latent, t) network at every t on a finite
grid, and gives the whole hazard curve in one forward pass.

Prediction-side conversions (survival / pmf / risk) are plain numpy; the
differentiable versions used in training live in :mod:`survcontrast.losses`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ACTIVATIONS = {"relu": ad.relu, "sigmoid": ad.sigmoid}


@dataclass
class MlpConfig:
    input_dim: int
    hidden_dim: int
    depth: int  # number of weight matrices, including the output layer
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        for name in ("input_dim", "hidden_dim", "output_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * (self.depth - 1) + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


@dataclass
class ModelConfig:
    """Shapes and activations for the three networks."""

    input_dim: int
    n_time_bins: int  # t_max + 1 hazard outputs
    hidden_dim: int = 32
    depth: int = 3
    embedding_dim: int = 16
    projection_depth: int = 2
    activation: str = "relu"

    def encoder(self) -> MlpConfig:
        return MlpConfig(self.input_dim, self.hidden_dim, self.depth, self.hidden_dim, self.activation)

    def projection(self) -> MlpConfig:
        return MlpConfig(self.hidden_dim, self.hidden_dim, self.projection_depth, self.embedding_dim, self.activation)

    def hazard_net(self) -> MlpConfig:
        return MlpConfig(self.hidden_dim, self.hidden_dim, self.depth, self.n_time_bins, self.activation)


class Mlp:
    """Stack of linear layers with the configured activation between them."""

    def __init__(self, config: MlpConfig, params: list[tuple[Tensor, Tensor]]):
        self.config = config
        self.layers = params  # [(weights in_dim x out_dim, bias 1 x out_dim), ...]

    @classmethod
    def init(cls, config: MlpConfig, rng: np.random.Generator) -> "Mlp":
        # He fan-in scaling, zero biases.
        params = []
        for fan_in, fan_out in config.layer_dims():
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            params.append((Tensor(w, requires_grad=True), Tensor(np.zeros((1, fan_out)), requires_grad=True)))
        return cls(config, params)

    def __call__(self, x: Tensor) -> Tensor:
        act = ACTIVATIONS[self.config.activation]
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = ad.add(ad.matmul(h, w), b)
            if i != last:
                h = act(h)
        return h

    def parameters(self) -> list[Tensor]:
        return [t for pair in self.layers for t in pair]


class HazardModel:
    """Encoder + projection head + hazard network with shared latent space."""

    def __init__(self, config: ModelConfig, encoder: Mlp, projection: Mlp, hazard_net: Mlp, seed: int):
        self.config = config
        self.encoder = encoder
        self.projection = projection
        self.hazard_net = hazard_net
        self.seed = seed

    @property
    def t_max(self) -> int:
        return self.config.n_time_bins - 1

    def encode(self, x: Tensor) -> Tensor:
        if x.cols != self.config.input_dim:
            raise ad.ShapeError(f"expected {self.config.input_dim} features, got {x.cols}")
        return self.encoder(x)

    def project(self, h: Tensor) -> Tensor:
        return self.projection(h)

    def hazard(self, h: Tensor) -> Tensor:
        """Per-bin hazards in (0, 1), one column per time bin."""
        return ad.sigmoid(self.hazard_net(h))

    def hazard_curve(self, x: np.ndarray) -> np.ndarray:
        """Predicted hazards for a feature matrix, as a plain array."""
        return self.hazard(self.encode(Tensor(np.atleast_2d(x)))).values

    def embed(self, x: np.ndarray) -> np.ndarray:
        return self.project(self.encode(Tensor(np.atleast_2d(x)))).values

    # -- parameter access -------------------------------------------------

    def encoder_params(self) -> list[Tensor]:
        return self.encoder.parameters()

    def projection_params(self) -> list[Tensor]:
        return self.projection.parameters()

    def hazard_params(self) -> list[Tensor]:
        return self.hazard_net.parameters()

    def all_params(self) -> list[Tensor]:
        return self.encoder_params() + self.projection_params() + self.hazard_params()

    def snapshot(self) -> list[np.ndarray]:
        return [p.values.copy() for p in self.all_params()]

    def restore(self, snapshot: list[np.ndarray]) -> None:
        for p, v in zip(self.all_params(), snapshot):
            p.values[...] = v

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        payload = {
            "config": asdict(self.config),
            "seed": self.seed,
            "params": {
                "encoder": [[w.values.tolist(), b.values.tolist()] for w, b in self.encoder.layers],
                "projection": [[w.values.tolist(), b.values.tolist()] for w, b in self.projection.layers],
                "hazard": [[w.values.tolist(), b.values.tolist()] for w, b in self.hazard_net.layers],
            },
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, sort_keys=True)

    @classmethod
    def load(cls, path) -> "HazardModel":
        with open(path) as fh:
            payload = json.load(fh)
        config = ModelConfig(**payload["config"])
        model = init_model(config, payload["seed"])
        for net, key in ((model.encoder, "encoder"), (model.projection, "projection"), (model.hazard_net, "hazard")):
            for (w, b), (wv, bv) in zip(net.layers, payload["params"][key]):
                w.values[...] = np.asarray(wv, dtype=np.float64)
                b.values[...] = np.asarray(bv, dtype=np.float64)
        return model


def init_model(config: ModelConfig, seed: int) -> HazardModel:
    """Deterministic He-initialized model; same seed gives identical weights."""
    ss = np.random.SeedSequence(seed)
    enc_rng, proj_rng, haz_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    return HazardModel(
        config,
        Mlp.init(config.encoder(), enc_rng),
        Mlp.init(config.projection(), proj_rng),
        Mlp.init(config.hazard_net(), haz_rng),
        seed,
    )


# ---------------------------------------------------------------------------
# hazard -> survival quantities (prediction side, plain numpy)
# ---------------------------------------------------------------------------

def survival_from_hazard(hazards: np.ndarray) -> np.ndarray:
    """S(t) = prod_{t' <= t} (1 - hazard(t')); non-increasing by construction."""
    h = np.atleast_2d(np.asarray(hazards, dtype=np.float64))
    return np.cumprod(1.0 - h, axis=1)


def pmf_from_hazard(hazards: np.ndarray, tau=None) -> np.ndarray:
    """P(T = t) = hazard(t) * S(t - 1), with S(-1) = 1.

    Returns the full pmf matrix, or the column(s) at ``tau`` when given.
    """
    h = np.atleast_2d(np.asarray(hazards, dtype=np.float64))
    surv = survival_from_hazard(h)
    prev = np.concatenate([np.ones((h.shape[0], 1)), surv[:, :-1]], axis=1)
    pmf = h * prev
    if tau is None:
        return pmf
    tau = np.asarray(tau, dtype=int)
    if np.any(tau < 0) or np.any(tau >= h.shape[1]):
        raise ValueError("tau out of range")
    return pmf[np.arange(h.shape[0]), tau]


def risk_from_hazard(hazards: np.ndarray) -> np.ndarray:
    """R(t) = 1 - S(t), the cumulative event probability; non-decreasing."""
    return 1.0 - survival_from_hazard(hazards)
