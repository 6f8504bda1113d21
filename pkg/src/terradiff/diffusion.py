"""Diffusion model state, training step, guided prediction, ancestral sampling.

Conventions:
- images are float tensors in [-1, 1], CHW inside this module;
- class id 0 is always the null (unconditional) class, for cities and for
  the optional auxiliary table alike;
- every stochastic routine takes an explicit seed or generator and is
  deterministic given it.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np
import torch

from .errors import ConfigError, DataError
from .schedule import NoiseSchedule, forward_noise
from .unet import ConditionalUNet

NULL_CLASS = 0
_RENOISE_SALT = 0x5EEDFACE


@dataclass(frozen=True)
class DiffusionConfig:
    resolution: int = 64
    base_channels: int = 32
    channel_mults: tuple[int, ...] = (1, 2, 2)
    res_blocks: int = 1
    in_channels: int = 3
    class_count: int = 2          # cities + null
    aux_class_count: int = 0      # 0 = no auxiliary table; else labels + null
    cfg_dropout: float = 0.1
    T: int = 200

    def __post_init__(self) -> None:
        if self.in_channels not in (3, 6):
            raise ConfigError(f"in_channels must be 3 or 6, got {self.in_channels}")
        if self.resolution % 8 != 0 or self.resolution <= 0:
            raise ConfigError(f"resolution must be a positive multiple of 8, got {self.resolution}")
        if not 0.0 <= self.cfg_dropout < 1.0:
            raise ConfigError(f"cfg_dropout must be in [0, 1), got {self.cfg_dropout}")
        if self.class_count < 1:
            raise ConfigError("class_count must include the null class")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        object.__setattr__(self, "channel_mults", tuple(int(m) for m in self.channel_mults))

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()

    @classmethod
    def toy(cls, **overrides) -> "DiffusionConfig":
        """Laptop-scale defaults: 64 px, 32 channels, T=200."""
        return cls(**overrides)

    @classmethod
    def paper_scale(cls, **overrides) -> "DiffusionConfig":
        """Full-scale preset: 512 px, 128 base channels, T=1000."""
        base = dict(
            resolution=512,
            base_channels=128,
            channel_mults=(1, 1, 2, 2, 4, 4),
            res_blocks=2,
            T=1000,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class GuidanceHook:
    """External scorer steering: each reverse step's mean shifts by scale * grad."""

    scorer: Callable[[torch.Tensor, int, Any], tuple[torch.Tensor, torch.Tensor]]
    scale: float
    context: Any = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.scale):
            raise ConfigError("guidance scale must be finite")


@dataclass
class TrainBatch:
    x0: torch.Tensor                      # (B, 3, H, W) in [-1, 1]
    cond_image: torch.Tensor | None       # (B, 3, H, W) or None
    class_ids: torch.Tensor               # (B,) long
    aux_ids: torch.Tensor | None = None   # (B,) long or None


class ModelState:
    """Denoiser parameters + optimizer + iteration counter."""

    def __init__(self, config: DiffusionConfig, net: ConditionalUNet, optimizer: torch.optim.Optimizer, iteration: int = 0):
        self.config = config
        self.net = net
        self.optimizer = optimizer
        self.iteration = iteration

    @classmethod
    def build(cls, config: DiffusionConfig, seed: int, lr: float = 2e-4) -> "ModelState":
        """Deterministic construction: same (config, seed) gives bit-identical parameters."""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            net = ConditionalUNet(
                in_channels=config.in_channels,
                base_channels=config.base_channels,
                channel_mults=config.channel_mults,
                res_blocks=config.res_blocks,
                class_count=config.class_count,
                aux_class_count=config.aux_class_count,
            )
        opt = torch.optim.Adam(net.parameters(), lr=lr)
        return cls(config, net, opt)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    @property
    def lr(self) -> float:
        return float(self.optimizer.param_groups[0]["lr"])

    def set_lr(self, lr: float) -> None:
        for g in self.optimizer.param_groups:
            g["lr"] = lr


def _gather(arr: np.ndarray, t: torch.Tensor, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    return torch.from_numpy(arr).to(dtype)[t][:, None, None, None]


def _check_cond(config: DiffusionConfig, cond_image: torch.Tensor | None) -> None:
    if config.in_channels == 6 and cond_image is None:
        raise DataError("6-channel model requires a conditioning image")
    if config.in_channels == 3 and cond_image is not None:
        raise DataError("3-channel model cannot take a conditioning image")


def _net_input(x: torch.Tensor, cond_image: torch.Tensor | None) -> torch.Tensor:
    return x if cond_image is None else torch.cat([x, cond_image], dim=1)


def train_step(state: ModelState, batch: TrainBatch, schedule: NoiseSchedule, rng: torch.Generator) -> float:
    """One denoising-objective step; returns the scalar loss.

    Per item: t ~ U{0..T-1}, eps ~ N(0, I); with probability cfg_dropout the
    class id is replaced by the null class so the model also learns the
    unconditional branch needed for classifier-free guidance.
    """
    b = batch.x0.shape[0] if batch.x0.ndim == 4 else 0
    if b == 0:
        raise DataError("empty batch")
    _check_cond(state.config, batch.cond_image)
    if batch.cond_image is not None and batch.cond_image.shape != batch.x0.shape:
        raise DataError("conditioning image shape mismatch")

    t = torch.randint(0, schedule.T, (b,), generator=rng)
    eps = torch.randn(batch.x0.shape, generator=rng)
    x_t = _gather(schedule.sqrt_alpha_bar, t) * batch.x0 + _gather(schedule.sqrt_one_minus_alpha_bar, t) * eps

    class_ids = batch.class_ids.clone()
    if state.config.cfg_dropout > 0:
        drop = torch.rand(b, generator=rng) < state.config.cfg_dropout
        class_ids[drop] = NULL_CLASS

    state.net.train()
    pred = state.net(_net_input(x_t, batch.cond_image), t, class_ids, batch.aux_ids)
    loss = torch.nn.functional.mse_loss(pred, eps)
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    state.iteration += 1
    return float(loss.detach())


def training_loss(state: ModelState, batch: TrainBatch, schedule: NoiseSchedule, t: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Loss at fixed (t, eps) without touching optimizer state.

    A deterministic function of the parameters; used by gradient checks.
    """
    dtype = batch.x0.dtype
    x_t = _gather(schedule.sqrt_alpha_bar, t, dtype) * batch.x0 + _gather(schedule.sqrt_one_minus_alpha_bar, t, dtype) * eps
    pred = state.net(_net_input(x_t, batch.cond_image), t, batch.class_ids, batch.aux_ids)
    return torch.nn.functional.mse_loss(pred, eps)


def flip_augment(batch: TrainBatch, rng: torch.Generator) -> TrainBatch:
    """Random horizontal/vertical flips applied jointly to image and conditioning."""
    x0 = batch.x0
    cond = batch.cond_image
    flips = torch.rand(2, generator=rng) < 0.5
    dims = [d for d, f in zip((3, 2), flips) if f]
    if dims:
        x0 = torch.flip(x0, dims)
        cond = torch.flip(cond, dims) if cond is not None else None
    return TrainBatch(x0, cond, batch.class_ids, batch.aux_ids)


def predict_eps(
    state: ModelState,
    x_t: torch.Tensor,
    t: int | torch.Tensor,
    cond_image: torch.Tensor | None = None,
    class_id: int | torch.Tensor | None = None,
    cfg_scale: float = 1.0,
    aux_id: int | torch.Tensor | None = None,
) -> torch.Tensor:
    """Classifier-free-guided noise estimate.

    Returns eps_uncond + s * (eps_cond - eps_uncond). The endpoints are exact:
    s=0 is a single null-class pass, s=1 a single conditional pass.
    """
    if x_t.ndim != 4:
        raise DataError(f"x_t must be (B, 3, H, W), got {tuple(x_t.shape)}")
    _check_cond(state.config, cond_image)
    b = x_t.shape[0]
    t_vec = torch.full((b,), int(t), dtype=torch.long) if isinstance(t, (int, np.integer)) else t
    inp = _net_input(x_t, cond_image)

    def ids(value) -> torch.Tensor:
        if value is None:
            return torch.full((b,), NULL_CLASS, dtype=torch.long)
        if isinstance(value, (int, np.integer)):
            return torch.full((b,), int(value), dtype=torch.long)
        return value

    aux = ids(aux_id) if aux_id is not None else None
    state.net.eval()
    with torch.no_grad():
        if class_id is None or cfg_scale == 0.0:
            return state.net(inp, t_vec, ids(None), aux)
        if cfg_scale == 1.0:
            return state.net(inp, t_vec, ids(class_id), aux)
        eps_cond = state.net(inp, t_vec, ids(class_id), aux)
        eps_uncond = state.net(inp, t_vec, ids(None), aux)
        return eps_uncond + cfg_scale * (eps_cond - eps_uncond)


def _reverse_step_mean(x_t: torch.Tensor, eps: torch.Tensor, t: int, schedule: NoiseSchedule, clip_denoised: bool) -> torch.Tensor:
    """Posterior mean of q(x_{t-1} | x_t, x0_hat), with x0_hat from the eps estimate."""
    ab = float(schedule.alpha_bar[t])
    x0 = (x_t - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
    if clip_denoised:
        x0 = x0.clamp(-1.0, 1.0)
    c0 = float(np.sqrt(schedule.alpha_bar_prev[t]) * schedule.beta[t] / (1.0 - schedule.alpha_bar[t]))
    c1 = float(np.sqrt(schedule.alpha[t]) * (1.0 - schedule.alpha_bar_prev[t]) / (1.0 - schedule.alpha_bar[t]))
    return c0 * x0 + c1 * x_t


def _stack_noise(shape: tuple[int, ...], gens: list[torch.Generator]) -> torch.Tensor:
    return torch.stack([torch.randn(shape, generator=g) for g in gens])


def ancestral_sample(
    state: ModelState,
    schedule: NoiseSchedule,
    seeds: list[int],
    cond_image: torch.Tensor | None = None,
    class_id: int | torch.Tensor | None = None,
    cfg_scale: float = 1.0,
    aux_id: int | torch.Tensor | None = None,
    guidance: GuidanceHook | None = None,
    known: tuple[torch.Tensor, torch.Tensor] | None = None,
    clip_denoised: bool = True,
) -> torch.Tensor:
    """Reverse process from pure noise; deterministic given per-image seeds.

    ``known`` enables inpainting: a (reference, mask) pair where mask is 1 on
    pixels to generate. After every reverse step the known (mask=0) region is
    overwritten with the reference renoised to the matching timestep, and the
    final output takes the reference verbatim there. Renoising draws come from
    a separate generator stream so a full mask reproduces plain sampling
    bit-for-bit at the same seed.
    """
    b = len(seeds)
    if b == 0:
        raise DataError("need at least one seed")
    _check_cond(state.config, cond_image)
    res = state.config.resolution
    shape = (3, res, res)
    gens = [torch.Generator().manual_seed(int(s)) for s in seeds]

    mask = reference = renoise_gens = None
    if known is not None:
        reference, mask = known
        if reference.shape != (b, *shape) or mask.shape[0] != b:
            raise DataError("reference/mask batch shape mismatch")
        renoise_gens = [torch.Generator().manual_seed(int(s) ^ _RENOISE_SALT) for s in seeds]

    x = _stack_noise(shape, gens)
    for t in range(schedule.T - 1, -1, -1):
        eps = predict_eps(state, x, t, cond_image, class_id, cfg_scale, aux_id)
        mean = _reverse_step_mean(x, eps, t, schedule, clip_denoised)
        if guidance is not None and guidance.scale != 0.0:
            _, grad = guidance.scorer(x, t, guidance.context)
            mean = mean + guidance.scale * grad
        if t > 0:
            sigma = float(np.sqrt(schedule.posterior_variance[t]))
            x = mean + sigma * _stack_noise(shape, gens)
        else:
            x = mean
        if known is not None:
            if t > 0:
                ref_t = forward_noise(reference, t - 1, _stack_noise(shape, renoise_gens), schedule)
                x = mask * x + (1.0 - mask) * ref_t
            else:
                x = mask * x + (1.0 - mask) * reference
    return x.clamp(-1.0, 1.0)


def sample(
    state: ModelState,
    schedule: NoiseSchedule,
    seed: int,
    cond_image: torch.Tensor | None = None,
    class_id: int | None = None,
    cfg_scale: float = 1.0,
    aux_id: int | None = None,
    guidance: GuidanceHook | None = None,
) -> torch.Tensor:
    """Single-image convenience wrapper; returns (3, H, W) in [-1, 1]."""
    cond = cond_image[None] if cond_image is not None and cond_image.ndim == 3 else cond_image
    return ancestral_sample(state, schedule, [seed], cond, class_id, cfg_scale, aux_id, guidance)[0]


CHECKPOINT_VERSION = 1


def save_checkpoint(
    state: ModelState,
    path: Path | str,
    kind: str = "image",
    cities: list[str] | None = None,
    aux_labels: list[str] | None = None,
) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "kind": kind,
        "config": asdict(state.config),
        "config_hash": state.config.config_hash(),
        "cities": cities or [],
        "aux_labels": aux_labels or [],
        "model": state.net.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "iteration": state.iteration,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path: Path | str, expected_config: DiffusionConfig | None = None):
    """Load (ModelState, meta). Refuses version or config-hash mismatches."""
    try:
        payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {path}") from None
    if payload.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {payload.get('version')!r}")
    cfg_dict = dict(payload["config"])
    cfg_dict["channel_mults"] = tuple(cfg_dict["channel_mults"])
    config = DiffusionConfig(**cfg_dict)
    if config.config_hash() != payload["config_hash"]:
        raise DataError("checkpoint config hash does not match its stored config")
    if expected_config is not None and expected_config.config_hash() != payload["config_hash"]:
        raise ConfigError(
            f"checkpoint config hash {payload['config_hash'][:12]} does not match "
            f"expected {expected_config.config_hash()[:12]}"
        )
    state = ModelState.build(config, seed=0)
    state.net.load_state_dict(payload["model"])
    state.optimizer.load_state_dict(payload["optimizer"])
    state.iteration = int(payload["iteration"])
    meta = {
        "kind": payload["kind"],
        "cities": list(payload["cities"]),
        "aux_labels": list(payload["aux_labels"]),
        "config_hash": payload["config_hash"],
    }
    return state, meta


def train_model(
    state: ModelState,
    schedule: NoiseSchedule,
    batch_fn: Callable[[torch.Generator], TrainBatch],
    iterations: int,
    rng: torch.Generator,
    metrics_path: Path | str | None = None,
    checkpoint_path: Path | str | None = None,
    checkpoint_every: int = 500,
    checkpoint_meta: dict | None = None,
    log_every: int = 50,
) -> list[float]:
    """Run the training loop; returns per-iteration losses.

    Metrics are appended as line-delimited JSON (iteration, loss, wall time).
    """
    losses: list[float] = []
    metrics_file = None
    if metrics_path is not None:
        metrics_file = open(metrics_path, "a")
    t_start = time.monotonic()
    try:
        for _ in range(iterations):
            batch = batch_fn(rng)
            loss = train_step(state, batch, schedule, rng)
            losses.append(loss)
            if metrics_file is not None and (state.iteration % log_every == 0 or len(losses) == iterations):
                rec = {"iteration": state.iteration, "loss": loss, "wall_time_s": round(time.monotonic() - t_start, 3)}
                metrics_file.write(json.dumps(rec) + "\n")
                metrics_file.flush()
            if checkpoint_path is not None and state.iteration % checkpoint_every == 0:
                save_checkpoint(state, checkpoint_path, **(checkpoint_meta or {}))
    finally:
        if metrics_file is not None:
            metrics_file.close()
    if checkpoint_path is not None:
        save_checkpoint(state, checkpoint_path, **(checkpoint_meta or {}))
    return losses
