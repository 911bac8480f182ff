"""Biomarker encoder, decision-level fusion, longitudinal GRU and multi-task heads."""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import numpy as np

from .biomarkers import FIELD_NAMES, STAT_NAMES, BiomarkerSeries
from .config import ModelConfig, TrainConfig
from .errors import DimMismatch, EmptyCohort, EmptySeries, UnsortedArms
from .evalkit.metrics import best_corner_ba
from .mtl_loss import mtl_objective, positive_weights, task_loss, total_loss  # noqa: F401 (re-exported)
from .nn import Adam, GRUCell, Linear, Module, Parameter, Tensor, TransformerEncoder, concat, gru_step, no_grad
from .nn.layers import sinusoidal_positions
from .nn.tensor import as_tensor

log = logging.getLogger(__name__)

N_FEATURES = len(FIELD_NAMES) + len(STAT_NAMES)
TASK_HEADS = ("depression", "si", "sleep")


@dataclass
class VisitFeatures:
    """Everything the fusion model needs for one visit."""

    arm: int
    e_lm: np.ndarray  # frozen text+landmark embedding
    bio: np.ndarray  # (n_windows, 37)
    labels: tuple


class BiomarkerEncoder(Module):
    """Standardize -> project -> (positional) -> transformer -> masked mean-pool."""

    def __init__(self, cfg: ModelConfig, rng):
        d = cfg.d_model
        self.d_model = d
        self.positional = cfg.bio_positional
        self.norm_mean = Parameter(np.zeros(N_FEATURES), "norm_mean", frozen=True)
        self.norm_std = Parameter(np.ones(N_FEATURES), "norm_std", frozen=True)
        self.proj = Linear(N_FEATURES, d, rng)
        self.encoder = TransformerEncoder(d, cfg.bio_layers, cfg.n_heads, cfg.d_ff, rng)

    def fit_normalization(self, matrices) -> None:
        rows = np.concatenate([m for m in matrices if len(m)])
        std = rows.std(axis=0)
        self.norm_mean.assign(rows.mean(axis=0))
        self.norm_std.assign(np.where(std > 1e-6, std, 1.0))
        self.norm_mean.freeze()
        self.norm_std.freeze()

    def forward(self, matrices) -> Tensor:
        """List of (n_windows_i, 37) arrays -> (B, d_model)."""
        if any(len(m) == 0 for m in matrices):
            raise EmptySeries("biomarker series with no windows")
        b = len(matrices)
        w = max(len(m) for m in matrices)
        dtype = self.norm_mean.data.dtype
        x = np.zeros((b, w, N_FEATURES), dtype=dtype)
        valid = np.zeros((b, w), dtype=dtype)
        for i, m in enumerate(matrices):
            if m.shape[1] != N_FEATURES:
                raise DimMismatch(f"expected {N_FEATURES} features per window, got {m.shape[1]}")
            x[i, : len(m)] = m
            valid[i, : len(m)] = 1.0
        x = (x - self.norm_mean.data) / self.norm_std.data
        h = self.proj(x)
        if self.positional:
            h = h + sinusoidal_positions(w, self.d_model)
        mask = ((1.0 - valid) * -1e9)[:, None, None, :]
        h = self.encoder(h, mask)
        pooled = (h * valid[:, :, None]).sum(axis=1)
        return pooled * (1.0 / valid.sum(axis=1, keepdims=True))


def encode_biomarkers(encoder: BiomarkerEncoder, series) -> Tensor:
    """One series (or its matrix) -> d_model embedding."""
    m = series.matrix() if isinstance(series, BiomarkerSeries) else np.asarray(series)
    if len(m) == 0:
        raise EmptySeries("biomarker series with no windows")
    return encoder([m])[0]


class FusionWeights(Module):
    def __init__(self):
        self.logits = Parameter(np.zeros(2), "logits")

    def weights(self) -> Tensor:
        return self.logits.softmax(axis=-1)


def fuse(e_lm, e_bio, fw: FusionWeights) -> Tensor:
    e_lm, e_bio = as_tensor(e_lm), as_tensor(e_bio)
    if e_lm.shape != e_bio.shape:
        raise DimMismatch(f"cannot fuse {e_lm.shape} with {e_bio.shape}")
    a = fw.weights()
    return e_lm * a[0] + e_bio * a[1]


class FusionModel(Module):
    def __init__(self, cfg: ModelConfig, seed: int, mode: str = "longitudinal"):
        rng = np.random.default_rng([seed, 31])
        d = cfg.d_model
        self.cfg = cfg
        self.mode = mode
        self.bio_enc = BiomarkerEncoder(cfg, rng)
        self.fusion = FusionWeights()
        self.gru = GRUCell(d, d, rng)
        self.head = {name: Linear(d, 1, rng) for name in TASK_HEADS}

    def heads(self, reps: Tensor) -> Tensor:
        return concat([self.head[name](reps) for name in TASK_HEADS], axis=-1).sigmoid()

    def _propagate(self, x: Tensor) -> Tensor:
        if self.mode == "cross_sectional":
            return x
        h = Tensor(np.zeros(x.shape[-1], dtype=x.data.dtype))
        states = []
        for k in range(x.shape[0]):
            h = gru_step(self.gru, h, x[k])
            states.append(h.reshape(1, -1))
        return concat(states, axis=0)

    def representations(self, visits) -> Tensor:
        """Per-visit representation for one patient's arm-sorted visits."""
        arms = [v.arm for v in visits]
        if arms != sorted(arms) or len(set(arms)) != len(arms):
            raise UnsortedArms(f"visits must be in strictly increasing arm order, got {arms}")
        e_lm = Tensor(np.stack([v.e_lm for v in visits]))
        e_bio = self.bio_enc([v.bio for v in visits])
        return self._propagate(fuse(e_lm, e_bio, self.fusion))

    def forward(self, visits) -> Tensor:
        """(K, 3) task probabilities for one patient trajectory."""
        if self.cfg.fusion == "probability":
            e_lm = Tensor(np.stack([v.e_lm for v in visits]))
            e_bio = self.bio_enc([v.bio for v in visits])
            a = self.fusion.weights()
            return self.heads(self._propagate(e_lm)) * a[0] + self.heads(self._propagate(e_bio)) * a[1]
        return self.heads(self.representations(visits))


def longitudinal_forward(model: FusionModel, visits, mode=None) -> Tensor:
    if mode is not None and mode != model.mode:
        model = copy.copy(model)
        model.mode = mode
    return model.representations(visits)


def _units(trajectories, mode):
    """Training units: whole trajectories, or single visits when arms are independent."""
    if mode == "cross_sectional":
        return [[v] for traj in trajectories for v in traj]
    return list(trajectories)


def predict(model: FusionModel, trajectories) -> np.ndarray:
    with no_grad():
        out = [model(traj).data for traj in trajectories]
    return np.concatenate(out) if out else np.zeros((0, 3))


def mtl_train(
    train, val, mcfg: ModelConfig, tcfg: TrainConfig, seed: int, mode="longitudinal", lambda_aux=None, epochs=None
):
    """Fit the fusion model on patient trajectories with early stopping on validation main-task BA.

    ``train`` / ``val`` are lists of arm-sorted VisitFeatures lists.  Returns
    (model, info) where info records w+, the best epoch and loss history.
    """
    if not train or not any(train):
        raise EmptyCohort("no training trajectories")
    lambda_aux = tcfg.lambda_aux if lambda_aux is None else lambda_aux
    epochs = tcfg.epochs if epochs is None else epochs
    model = FusionModel(mcfg, seed, mode)
    model.bio_enc.fit_normalization([v.bio for traj in train for v in traj])
    labels = np.array([v.labels for traj in train for v in traj], dtype=float)
    w_plus = positive_weights(labels) if tcfg.w_plus_mode == "auto" else list(tcfg.w_plus)
    opt = Adam(model.parameters(), lr=tcfg.lr)
    rng = np.random.default_rng([seed, 32])
    units = _units(train, mode)
    val_labels = np.array([v.labels[0] for traj in val for v in traj]) if val else np.zeros(0)
    w_main = w_plus[0]

    best = ((-np.inf, -np.inf), 0, None)
    history = []
    for epoch in range(epochs):
        total = 0.0
        for i in rng.permutation(len(units)):
            unit = units[i]
            opt.zero_grad()
            loss = mtl_objective(np.array([v.labels for v in unit], float), model(unit), w_plus, lambda_aux)
            loss.backward()
            opt.step()
            total += loss.item()
        history.append(total / len(units))
        if val:
            # balanced accuracy saturates on small validation sets; main-task loss breaks ties
            p_val = predict(model, val)[:, 0]
            score = (best_corner_ba(p_val, val_labels), -task_loss(val_labels, p_val, w_main).data.mean())
        else:
            score = (0.0, -history[-1])
        if score > best[0]:
            best = (score, epoch, [p.data.copy() for p in model.parameters()])
        elif epoch - best[1] >= tcfg.patience:
            break
    for p, saved in zip(model.parameters(), best[2]):
        p.data = saved
    model.freeze()
    return model, {"w_plus": w_plus, "best_epoch": best[1], "best_val_ba": float(best[0][0]), "loss": history}
