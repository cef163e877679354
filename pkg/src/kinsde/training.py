"""Training: the three-loss objective, its routing, and the epoch loop.

One step runs both rollouts from a shared latent seed over a shared batch of
Brownian paths, then applies

    total = l_pred + lambda_reg * l_reg + lambda_kin * l_kin

where l_reg (posterior KL against the unit Gaussian) reaches the feature
extractor and initial-state encoder, l_kin (drift-matching KL between the
two SDEs) reaches only the drift and diffusion nets, and l_pred (smooth-L1
on decoded waypoints of BOTH rollouts against the ground-truth future)
reaches everything, the controller included. The routing is a property of
how the graph is built - see `sde.rollout_learned` / `sde.kinematic_kl_loss`
- not of any masking done here.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ag
from .config import TrainConfig
from .metrics import ade_fde, constant_velocity_baseline
from .model import TrajectoryModel
from .networks import kl_regularizer, reparameterize
from .scenarios import Scenario, split
from .sde import kinematic_kl_loss, rollout_bicycle, rollout_learned, sample_brownian_batch


@dataclass(frozen=True)
class LossReport:
    l_reg: float
    l_kin: float
    l_pred: float
    total: float


@dataclass
class TrainResult:
    history: list = field(default_factory=list)  # (epoch, batch, LossReport)
    val_ade: list = field(default_factory=list)  # one entry per epoch
    best_epoch: int = -1
    best_val_ade: float = float("inf")
    checkpoint_best: str = ""
    checkpoint_final: str = ""
    loss_csv: str = ""
    seconds: float = 0.0


class MomentumSGD:
    """Heavy-ball SGD. With momentum = 0 this is exactly `autodiff.sgd_step`.

    Velocity buffers live here, so reuse the same instance across steps;
    a fresh instance every step degenerates to plain SGD.
    """

    def __init__(self, params, learning_rate: float, momentum: float = 0.0):
        if not 0 <= momentum < 1:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.params = list(params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        if self.momentum == 0.0:
            ag.sgd_step(self.params, self.learning_rate)
            return
        for p, v in zip(self.params, self.velocity):
            v *= self.momentum
            v -= self.learning_rate * p.grad
            p.value = p.value + v
            p.grad = np.zeros_like(p.value)


def smooth_l1_value(error: np.ndarray) -> np.ndarray:
    """Elementwise smooth L1: quadratic inside the unit band, linear outside."""
    a = np.abs(error)
    return np.where(a < 1.0, 0.5 * a * a, a - 0.5)


def smooth_l1_node(error: ag.Node) -> ag.Node:
    """Graph version of `smooth_l1_value`, mean over every entry.

    Uses 0.5 * min(|e|, 1)^2 + relu(|e| - 1), which equals the piecewise
    form everywhere and is built from ops the graph already has.
    """
    a = ag.relu(error) + ag.relu(-error)
    excess = ag.relu(a - 1.0)
    capped = a - excess
    return ag.mean(ag.square(capped) * 0.5 + excess)


def _truth_nodes(scenarios: list[Scenario], T: int) -> list[np.ndarray]:
    """Per-step ground-truth waypoints relative to each scenario frame."""
    rel = np.stack([s.future_truth[:T] - s.frame[:2] for s in scenarios])  # (B, T, 2)
    return [rel[:, t, :] for t in range(T)]


def _prediction_loss(decoder, states, truth_steps) -> ag.Node:
    points = decoder.waypoints(states)
    total = None
    for point, truth in zip(points, truth_steps):
        term = smooth_l1_node(point - ag.constant(truth))
        total = term if total is None else total + term
    return total * (1.0 / len(points))


def kin_lambda_at(config, epoch: int) -> float:
    """Effective drift-matching weight for one epoch under the warmup schedule.

    Constant at `lambda_kin` unless kin_warmup_epochs / kin_ramp_epochs are
    set, in which case the weight sits at kin_lambda_floor through the warmup
    and climbs geometrically to lambda_kin across the ramp.
    """
    target = config.lambda_kin
    warmup = config.kin_warmup_epochs
    ramp = config.kin_ramp_epochs
    floor = config.kin_lambda_floor
    if warmup == 0 and ramp == 0:
        return target
    if epoch < warmup:
        return min(floor, target) if target > 0 else floor
    if ramp == 0 or epoch >= warmup + ramp or floor >= target:
        return target
    return floor * (target / floor) ** ((epoch - warmup) / ramp)


def train_step(
    model: TrajectoryModel,
    scenarios: list[Scenario],
    seed: int,
    optimizer: MomentumSGD | None = None,
    lambda_kin: float | None = None,
) -> LossReport:
    """One SGD step on one batch. All randomness comes from `seed`.

    `lambda_kin` overrides the config weight for this step; train() uses it
    to apply the warmup schedule.
    """
    if not scenarios:
        raise ValueError("empty batch")
    cfg = model.config
    lam_kin = cfg.lambda_kin if lambda_kin is None else float(lambda_kin)
    T = min(s.horizon for s in scenarios)
    if T < 1:
        raise ValueError("scenarios carry no future to train on")
    params = model.parameters()
    ag.zero_grads(params)

    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((len(scenarios), 4))
    path_seed = int(rng.integers(0, 2**63))

    feats = model.extractor.features(scenarios)
    post = model.e_s.posterior(feats)
    l_reg = kl_regularizer(post)
    z0 = reparameterize(post, eps)

    bundle = model.e_c.bundle(feats, T)
    paths = sample_brownian_batch(T, cfg.step_var, seed=path_seed, batch=len(scenarios))
    learned = rollout_learned(z0, bundle.sem, bundle.ctx, paths, model.f_drift, model.g_diff)
    bike = rollout_bicycle(z0, paths, model.pi_controller, cfg.bicycle(), model.g_diff)
    l_kin = kinematic_kl_loss(learned, bike)

    truth_steps = _truth_nodes(scenarios, T)
    l_pred = (_prediction_loss(model.decoder, learned.states, truth_steps)
              + _prediction_loss(model.decoder, bike.states, truth_steps)) * 0.5

    total = l_pred + l_reg * cfg.lambda_reg + l_kin * lam_kin
    report = LossReport(
        l_reg=l_reg.value.item(),
        l_kin=l_kin.value.item(),
        l_pred=l_pred.value.item(),
        total=total.value.item(),
    )
    if not all(np.isfinite(v) for v in (report.l_reg, report.l_kin, report.l_pred)):
        raise RuntimeError(f"non-finite loss, aborting before the update: {report}")
    ag.backward(total)
    if optimizer is None:
        ag.sgd_step(params, cfg.learning_rate)
    else:
        optimizer.step()
    return report


def validation_ade(model: TrajectoryModel, scenarios: list[Scenario]) -> float:
    """Mean ADE of the noise-free posterior-mean prediction."""
    if not scenarios:
        return float("nan")
    preds = model.predict_batch(scenarios)
    total = sum(
        ade_fde(preds[i], s.future_truth)[0] for i, s in enumerate(scenarios)
    )
    return total / len(scenarios)


def cv_baseline_ade(scenarios: list[Scenario], delta: float) -> float:
    """Mean ADE of the constant-velocity extrapolation, same protocol."""
    if not scenarios:
        return float("nan")
    total = 0.0
    for s in scenarios:
        pred = constant_velocity_baseline(s.target_history, s.horizon, delta)
        total += ade_fde(pred, s.future_truth)[0]
    return total / len(scenarios)


def _batches(order: np.ndarray, batch_size: int):
    for lo in range(0, len(order), batch_size):
        yield order[lo:lo + batch_size]


def train(
    model: TrajectoryModel,
    scenarios: list[Scenario],
    out_dir,
    log=None,
) -> TrainResult:
    """Full training loop with per-epoch validation and checkpointing.

    Splits off `val_fraction` of the data for ADE tracking, runs
    `config.epochs` epochs of shuffled minibatches (drift-matching weight
    per kin_lambda_at, learning rate dropped once at lr_decay_epoch), and
    writes:

        out_dir/losses.csv      epoch,batch,l_reg,l_kin,l_pred,total,lambda_kin
        out_dir/config.json        the exact configuration of the run
        out_dir/model_best.json    weights with the lowest validation ADE
        out_dir/model_final.json   weights after the last epoch

    On return the model holds the best-ADE weights. With epochs=0 both
    checkpoints hold the initial weights unchanged.
    """
    if not scenarios:
        raise ValueError("no scenarios to train on")
    cfg = model.config
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_set, val_set, _ = split(scenarios, (1.0 - cfg.val_fraction, cfg.val_fraction, 0.0),
                                  seed=cfg.seed)
    if not train_set:
        raise ValueError("validation split left no training scenarios")

    rng = np.random.default_rng(cfg.seed)
    result = TrainResult()
    result.loss_csv = str(out_dir / "losses.csv")
    result.checkpoint_best = str(out_dir / "model_best.json")
    result.checkpoint_final = str(out_dir / "model_final.json")

    cfg.save(out_dir / "config.json")
    best_params = {k: v.value.copy() for k, v in model.named_parameters().items()}
    optimizer = MomentumSGD(model.parameters(), cfg.learning_rate, cfg.momentum)
    started = time.monotonic()
    rows = ["epoch,batch,l_reg,l_kin,l_pred,total,lambda_kin"]
    for epoch in range(cfg.epochs):
        lam = kin_lambda_at(cfg, epoch)
        if cfg.lr_decay_epoch and epoch == cfg.lr_decay_epoch:
            optimizer.learning_rate *= cfg.lr_decay_factor
        order = rng.permutation(len(train_set))
        for b, idx in enumerate(_batches(order, cfg.batch_size)):
            batch = [train_set[i] for i in idx]
            report = train_step(model, batch, seed=int(rng.integers(0, 2**63)),
                                optimizer=optimizer, lambda_kin=lam)
            result.history.append((epoch, b, report))
            rows.append(f"{epoch},{b},{report.l_reg!r},{report.l_kin!r},"
                        f"{report.l_pred!r},{report.total!r},{lam!r}")
        ade = validation_ade(model, val_set)
        result.val_ade.append(ade)
        if log:
            last = result.history[-1][2]
            log(f"epoch {epoch}: val ADE {ade:.4f}, last batch total {last.total:.4f}")
        # while the drift-matching weight is still warming up the model is not
        # yet optimizing the target objective, so those epochs cannot win
        eligible = epoch >= cfg.kin_warmup_epochs + cfg.kin_ramp_epochs
        if val_set and eligible and ade < result.best_val_ade:
            result.best_val_ade = ade
            result.best_epoch = epoch
            best_params = {k: v.value.copy() for k, v in model.named_parameters().items()}

    result.seconds = time.monotonic() - started
    (out_dir / "losses.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")

    model.save(result.checkpoint_final)
    if not val_set or result.best_epoch < 0:
        # nothing to select on: best == final
        best_params = {k: v.value.copy() for k, v in model.named_parameters().items()}
        result.best_epoch = cfg.epochs - 1
    # leave the model holding the best weights; model_final.json keeps the rest
    for k, v in model.named_parameters().items():
        v.value[...] = best_params[k]
    model.save(result.checkpoint_best)
    return result
