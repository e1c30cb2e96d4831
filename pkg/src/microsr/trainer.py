"""Two-phase training: pixel-loss pretraining, then adversarial fine-tuning.

Every batch is derived from (seed, phase, step) alone, so runs are
reproducible and a resumed run continues the exact loss sequence of an
unbroken one.  Phase 1 updates only the generator under the pixel loss;
phase 2 alternates one critic update and one generator update per step
under the composite objective.  Non-finite losses abort immediately.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import weights_io
from .autodiff import Tensor, backward, no_grad, zero_grads
from .discriminator import (DiscConfig, discriminator_forward,
                            init_discriminator_weights, relativistic_d_loss)
from .generator import ArchConfig, generator_forward, init_generator_weights
from .images import DatasetManifest, sample_patch_pair
from .perceptual import (FeatureNet, FeatureNetSpec, LossWeights, pixel_l1,
                         total_generator_loss)

log = logging.getLogger("microsr.trainer")


class TrainingDiverged(RuntimeError):
    """A loss component became non-finite; training state is not trustworthy."""


@dataclass(frozen=True)
class TrainConfig:
    arch: ArchConfig = field(default_factory=ArchConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)
    features: FeatureNetSpec = field(default_factory=FeatureNetSpec)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    batch_size: int = 4
    hr_crop: int = 96
    phase1_steps: int = 1000
    phase2_steps: int = 0
    lr_g: float = 2e-4   # phase-1 generator learning rate
    lr_d: float = 1e-4   # phase-2 learning rate (both networks)
    beta1: float = 0.9
    beta2: float = 0.999
    eps_opt: float = 1e-8
    checkpoint_every: int = 1000
    log_every: int = 10

    def __post_init__(self):
        if self.hr_crop % 4:
            raise ValueError(f"hr_crop must be divisible by 4, got {self.hr_crop}")
        if self.phase1_steps < 0 or self.phase2_steps < 0:
            raise ValueError("step counts must be >= 0")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.checkpoint_every < 1 or self.log_every < 1:
            raise ValueError("checkpoint_every and log_every must be >= 1")
        if self.disc.input_size != self.hr_crop:
            raise ValueError(f"discriminator input_size {self.disc.input_size} "
                             f"must equal hr_crop {self.hr_crop}")


# ---------------------------------------------------------------------------
# adaptive-moment optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray


def adam_step(param: Tensor, grad: np.ndarray, state: AdamState, t: int,
              lr: float, b1: float, b2: float, eps: float) -> None:
    """One bias-corrected moment update, in place; t counts from 1."""
    if grad.shape != param.data.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameter "
                         f"shape {param.data.shape}")
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * (grad * grad)
    m_hat = state.m / (1.0 - b1 ** t)
    v_hat = state.v / (1.0 - b2 ** t)
    param.data = param.data - lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamOptimizer:
    """Adam over a named parameter dict; iteration order is name-sorted."""

    def __init__(self, params: Mapping[str, Tensor], lr: float,
                 b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.state = {name: AdamState(np.zeros_like(p.data), np.zeros_like(p.data))
                      for name, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        for name in sorted(self.params):
            p = self.params[name]
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            adam_step(p, grad, self.state[name], self.t, self.lr, self.b1, self.b2,
                      self.eps)

    def state_tensors(self) -> dict[str, Tensor]:
        out = {"t": Tensor(np.float32(self.t))}
        for name, s in self.state.items():
            out[f"m.{name}"] = Tensor(s.m)
            out[f"v.{name}"] = Tensor(s.v)
        return out

    def load_state_tensors(self, tensors: Mapping[str, Tensor]) -> None:
        self.t = int(tensors["t"].item())
        for name in self.state:
            self.state[name] = AdamState(tensors[f"m.{name}"].data.copy(),
                                         tensors[f"v.{name}"].data.copy())


# ---------------------------------------------------------------------------
# batches and steps
# ---------------------------------------------------------------------------

def make_batch(manifest: DatasetManifest, cfg: TrainConfig, phase: int,
               step: int) -> tuple[Tensor, Tensor]:
    """Assemble an [B,3,h,w]/[B,3,4h,4w] pair, fully determined by (seed, phase, step)."""
    ss = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(phase, step))
    rng = np.random.Generator(np.random.PCG64(ss))
    indices = rng.integers(0, len(manifest), size=cfg.batch_size)
    pairs = [sample_patch_pair(manifest, int(i), cfg.hr_crop, rng) for i in indices]
    lr = Tensor(np.concatenate([p.lr.data for p in pairs], axis=0))
    hr = Tensor(np.concatenate([p.hr.data for p in pairs], axis=0))
    return lr, hr


def pretrain_step(lr: Tensor, hr: Tensor, gen_weights: dict[str, Tensor],
                  arch: ArchConfig, opt: AdamOptimizer) -> dict[str, float]:
    """One pixel-loss descent step on the generator alone."""
    zero_grads(gen_weights)
    sr = generator_forward(lr, gen_weights, arch)
    loss = pixel_l1(sr, hr)
    backward(loss)
    opt.step()
    return {"l1": loss.item()}


def gan_train_step(lr: Tensor, hr: Tensor, gen_weights: dict[str, Tensor],
                   arch: ArchConfig, disc_weights: dict[str, Tensor],
                   disc_cfg: DiscConfig, featnet: FeatureNet, lw: LossWeights,
                   opt_g: AdamOptimizer, opt_d: AdamOptimizer) -> dict[str, float]:
    """One critic update, then one generator update on the composite loss.

    The critic sees generated images without generator gradient flow; the
    generator update recomputes a fresh forward so its gradients pass
    through the current critic.  Real images stay constants with respect
    to the generator even though the relativistic loss reads their logits.
    """
    with no_grad():
        sr_detached = generator_forward(lr, gen_weights, arch)
    zero_grads(disc_weights)
    real_logits = discriminator_forward(hr, disc_weights, disc_cfg)
    fake_logits = discriminator_forward(sr_detached, disc_weights, disc_cfg)
    d_loss = relativistic_d_loss(real_logits, fake_logits)
    backward(d_loss)
    opt_d.step()

    zero_grads(gen_weights)
    zero_grads(disc_weights)
    sr = generator_forward(lr, gen_weights, arch)
    real_logits = discriminator_forward(hr, disc_weights, disc_cfg)
    fake_logits = discriminator_forward(sr, disc_weights, disc_cfg)
    parts = total_generator_loss(sr, hr, real_logits, fake_logits, featnet, lw)
    backward(parts["total"])
    opt_g.step()
    zero_grads(disc_weights)  # discard critic grads that leaked from the generator pass

    return {"total": parts["total"].item(), "percep": parts["percep"].item(),
            "adv": parts["adv"].item(), "l1": parts["l1"].item(),
            "d_loss": d_loss.item()}


# ---------------------------------------------------------------------------
# the run loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    final_weights: Path
    log_path: Path
    records: list[dict]


def arch_meta_tensor(arch: ArchConfig) -> Tensor:
    return Tensor(np.asarray([arch.num_rrdb, arch.num_features, arch.growth_channels,
                              arch.residual_scale, arch.leaky_slope], dtype=np.float32))


def arch_from_meta(t: Tensor) -> ArchConfig:
    vals = t.data.reshape(-1)
    return ArchConfig(num_rrdb=int(vals[0]), num_features=int(vals[1]),
                      growth_channels=int(vals[2]), residual_scale=float(vals[3]),
                      leaky_slope=float(vals[4]))


def save_generator(weights: Mapping[str, Tensor], arch: ArchConfig, path) -> None:
    bundle = dict(weights)
    bundle["meta.arch"] = arch_meta_tensor(arch)
    weights_io.write_archive(bundle, path)


def load_generator(path) -> tuple[dict[str, Tensor], ArchConfig]:
    """Read a generator archive, validating it against its embedded config."""
    from .generator import weight_shapes
    bundle = weights_io.read_archive(path)
    meta = bundle.pop("meta.arch", None)
    if meta is None:
        raise weights_io.ArchiveError(f"{path}: missing meta.arch entry")
    arch = arch_from_meta(meta)
    expected = weight_shapes(arch)
    for name in sorted(expected):
        if name not in bundle:
            raise weights_io.ArchiveError(f"{path}: missing tensor {name!r}")
        if bundle[name].shape != expected[name]:
            raise weights_io.ArchiveError(
                f"{path}: tensor {name!r} has shape {bundle[name].shape}, "
                f"expected {expected[name]}")
    extras = sorted(set(bundle) - set(expected))
    if extras:
        raise weights_io.ArchiveError(f"{path}: unexpected tensor {extras[0]!r}")
    for t in bundle.values():
        t.requires_grad = True
    return bundle, arch


def _format_record(record: dict) -> str:
    fields = " ".join(f"{k} {v:.9e}" for k, v in record.items()
                      if k not in ("phase", "step"))
    return f"phase {record['phase']} step {record['step']} {fields}"


def _check_finite(record: dict) -> None:
    for key, value in record.items():
        if key in ("phase", "step"):
            continue
        if not math.isfinite(value):
            raise TrainingDiverged(f"phase {record['phase']} step {record['step']}: "
                                   f"component {key!r} is {value}")


def _write_checkpoint(ckpt_dir: Path, phase: int, step: int, gen_weights, arch,
                      opt_g, disc_weights=None, disc_cfg=None, opt_d=None) -> None:
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    save_generator(gen_weights, arch, ckpt_dir / "gen.srwt")
    weights_io.write_archive(opt_g.state_tensors(), ckpt_dir / "opt_g.srwt")
    if disc_weights is not None:
        weights_io.write_archive(disc_weights, ckpt_dir / "disc.srwt")
        weights_io.write_archive(opt_d.state_tensors(), ckpt_dir / "opt_d.srwt")
    (ckpt_dir / "state.json").write_text(
        json.dumps({"phase": phase, "step": step}) + "\n", encoding="utf-8")


def run_training(manifest: DatasetManifest, cfg: TrainConfig, out_dir,
                 resume_from=None) -> TrainResult:
    """Run both phases, writing checkpoints, final archives and a loss log.

    resume_from names a checkpoint directory written by this function;
    training continues from the step after it and reproduces the loss
    sequence of an uninterrupted run bit for bit.
    """
    if len(manifest) == 0:
        raise ValueError("cannot train on an empty manifest")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "loss_log.txt"

    gen_weights = init_generator_weights(cfg.arch, seed=cfg.seed)
    featnet = FeatureNet.from_seed(cfg.features)
    opt_g = AdamOptimizer(gen_weights, cfg.lr_g, cfg.beta1, cfg.beta2, cfg.eps_opt)
    disc_weights = None
    opt_d = None

    start_phase, start_step = 1, 0
    if resume_from is not None:
        resume_from = Path(resume_from)
        state = json.loads((resume_from / "state.json").read_text(encoding="utf-8"))
        start_phase, start_step = state["phase"], state["step"]
        loaded, arch = load_generator(resume_from / "gen.srwt")
        # the meta tensor stores float32, so compare at float32 precision
        if not np.array_equal(arch_meta_tensor(arch).data,
                              arch_meta_tensor(cfg.arch).data):
            raise ValueError(f"checkpoint arch {arch} does not match config {cfg.arch}")
        gen_weights = loaded
        opt_g = AdamOptimizer(gen_weights,
                              cfg.lr_g if start_phase == 1 else cfg.lr_d,
                              cfg.beta1, cfg.beta2, cfg.eps_opt)
        opt_g.load_state_tensors(weights_io.read_archive(resume_from / "opt_g.srwt"))
        if start_phase == 2:
            disc_weights = weights_io.read_archive(resume_from / "disc.srwt")
            for t in disc_weights.values():
                t.requires_grad = True
            opt_d = AdamOptimizer(disc_weights, cfg.lr_d, cfg.beta1, cfg.beta2,
                                  cfg.eps_opt)
            opt_d.load_state_tensors(weights_io.read_archive(resume_from / "opt_d.srwt"))

    records: list[dict] = []
    log_lines: list[str] = []

    def emit(record: dict) -> None:
        _check_finite(record)
        records.append(record)
        if record["step"] % cfg.log_every == 0 or record["step"] == 1:
            line = _format_record(record)
            log_lines.append(line)
            log.info(line)

    # phase 1: pixel pretraining
    if start_phase == 1:
        for step in range(start_step + 1, cfg.phase1_steps + 1):
            lr, hr = make_batch(manifest, cfg, phase=1, step=step)
            stats = pretrain_step(lr, hr, gen_weights, cfg.arch, opt_g)
            emit({"phase": 1, "step": step, **stats})
            if step % cfg.checkpoint_every == 0 and step < cfg.phase1_steps:
                _write_checkpoint(out_dir / f"ckpt_phase1_step{step:06d}", 1, step,
                                  gen_weights, cfg.arch, opt_g)
        save_generator(gen_weights, cfg.arch, out_dir / "gen_phase1.srwt")
        start_phase, start_step = 2, 0

    # phase 2: adversarial fine-tuning from the phase-1 weights
    if cfg.phase2_steps > 0:
        if cfg.phase1_steps == 0:
            log.warning("phase1_steps is 0: adversarial phase starts from a fresh "
                        "generator, expect unstable early steps")
        if disc_weights is None:
            disc_weights = init_discriminator_weights(cfg.disc, seed=cfg.seed + 1)
            opt_d = AdamOptimizer(disc_weights, cfg.lr_d, cfg.beta1, cfg.beta2,
                                  cfg.eps_opt)
            opt_g = AdamOptimizer(gen_weights, cfg.lr_d, cfg.beta1, cfg.beta2,
                                  cfg.eps_opt)
        for step in range(start_step + 1, cfg.phase2_steps + 1):
            lr, hr = make_batch(manifest, cfg, phase=2, step=step)
            stats = gan_train_step(lr, hr, gen_weights, cfg.arch, disc_weights,
                                   cfg.disc, featnet, cfg.loss_weights, opt_g, opt_d)
            emit({"phase": 2, "step": step, **stats})
            if step % cfg.checkpoint_every == 0 and step < cfg.phase2_steps:
                _write_checkpoint(out_dir / f"ckpt_phase2_step{step:06d}", 2, step,
                                  gen_weights, cfg.arch, opt_g, disc_weights,
                                  cfg.disc, opt_d)
        weights_io.write_archive(disc_weights, out_dir / "disc_final.srwt")

    final_path = out_dir / "gen_final.srwt"
    save_generator(gen_weights, cfg.arch, final_path)
    log_path.write_text("\n".join(log_lines) + ("\n" if log_lines else ""),
                        encoding="utf-8")
    return TrainResult(final_weights=final_path, log_path=log_path, records=records)
