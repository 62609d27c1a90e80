"""Residual-VQ motion autoencoder.

Temporal conv encoder (stride-2 blocks give the downsampling ratio), a stack
of residual codebooks with EMA updates and straight-through gradients, and a
mirrored transposed-conv decoder back to 6D pose frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint
from .errors import (
    CheckpointFormatError,
    ConfigError,
    InvalidTokenError,
    SequenceTooShortError,
    TrainingDivergedError,
)
from .rotgeom import PoseSequence

DEAD_ENTRY_THRESHOLD = 1e-3


@dataclass
class CodecConfig:
    joints: int
    num_residual_layers: int = 4
    downsample_ratio: int = 4
    codebook_size: int = 512
    latent_dim: int = 64
    channels: int = 128
    commitment_weight: float = 0.25
    ema_momentum: float = 0.99
    window: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.num_residual_layers < 1:
            raise ConfigError("num_residual_layers must be >= 1")
        r = self.downsample_ratio
        if r < 1 or (r & (r - 1)) != 0:
            raise ConfigError(f"downsample_ratio must be a power of 2, got {r}")
        if self.codebook_size < 2:
            raise ConfigError("codebook_size must be >= 2")
        if self.window % r != 0:
            raise ConfigError("window must be a multiple of downsample_ratio")

    @property
    def num_stages(self) -> int:
        return int(math.log2(self.downsample_ratio))


@dataclass
class MotionTokenGrid:
    """(timesteps, layers) residual codebook indices."""

    indices: np.ndarray
    codebook_size: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 2:
            raise InvalidTokenError(f"grid must be 2-D, got shape {self.indices.shape}")
        if self.indices.shape[0] < 1:
            raise InvalidTokenError("grid needs at least one timestep")
        if self.indices.size and (
                self.indices.min() < 0 or self.indices.max() >= self.codebook_size):
            raise InvalidTokenError(
                f"index outside [0, {self.codebook_size}) in token grid")

    @property
    def timesteps(self) -> int:
        return self.indices.shape[0]

    @property
    def layers(self) -> int:
        return self.indices.shape[1]


class _ResBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = nn.Conv1d(ch, ch, 3, padding=1)
        self.conv2 = nn.Conv1d(ch, ch, 3, padding=1)

    def forward(self, x):
        h = self.conv2(F.silu(self.conv1(F.silu(x))))
        return x + h


class _Encoder(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        ch = cfg.channels
        layers: list[nn.Module] = [nn.Conv1d(cfg.joints * 6, ch, 3, padding=1)]
        for _ in range(cfg.num_stages):
            layers += [_ResBlock(ch), nn.Conv1d(ch, ch, 4, stride=2, padding=1)]
        layers += [_ResBlock(ch)]
        self.stack = nn.Sequential(*layers)
        self.proj = nn.Conv1d(ch, cfg.latent_dim, 1)

    def forward(self, x):  # (B, J*6, T) -> (B, D, T')
        return self.proj(self.stack(x))


class _Decoder(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        ch = cfg.channels
        layers: list[nn.Module] = [nn.Conv1d(cfg.latent_dim, ch, 1), _ResBlock(ch)]
        for _ in range(cfg.num_stages):
            layers += [nn.ConvTranspose1d(ch, ch, 4, stride=2, padding=1), _ResBlock(ch)]
        layers += [nn.Conv1d(ch, cfg.joints * 6, 3, padding=1)]
        self.stack = nn.Sequential(*layers)

    def forward(self, z):  # (B, D, T') -> (B, J*6, T)
        return self.stack(z)


class ResidualQuantizer(nn.Module):
    """Stack of codebooks; layer l quantizes the residual left by layers < l.

    Codebooks are EMA-maintained buffers, not gradient parameters. They are
    lazily initialized from the first training batch's residual statistics.
    """

    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        L, K, D = cfg.num_residual_layers, cfg.codebook_size, cfg.latent_dim
        self.register_buffer("entries", torch.zeros(L, K, D))
        self.register_buffer("ema_cluster_size", torch.ones(L, K))
        self.register_buffer("ema_embed_sum", torch.zeros(L, K, D))
        self.register_buffer("initialized", torch.zeros((), dtype=torch.bool))
        self.gen = torch.Generator().manual_seed(cfg.seed + 7)

    def load_codebooks(self, books: list[np.ndarray]) -> None:
        """Install explicit codebooks (tests, checkpoint load)."""
        if len(books) != self.cfg.num_residual_layers:
            raise ConfigError(
                f"expected {self.cfg.num_residual_layers} codebooks, got {len(books)}")
        stacked = torch.as_tensor(np.stack(books), dtype=self.entries.dtype)
        if stacked.shape != self.entries.shape:
            raise ConfigError(f"codebook shape {tuple(stacked.shape)} does not match "
                              f"{tuple(self.entries.shape)}")
        if stacked.shape[1] == 0:
            raise ConfigError("empty codebook")
        with torch.no_grad():
            self.entries.copy_(stacked)
            self.ema_embed_sum.copy_(stacked)
            self.ema_cluster_size.fill_(1.0)
            self.initialized.fill_(True)

    def codebooks(self) -> list[np.ndarray]:
        return [layer.detach().cpu().numpy().copy() for layer in self.entries]

    def _init_from(self, z_flat: torch.Tensor) -> None:
        # Per layer: seed entries from that layer's residual distribution.
        with torch.no_grad():
            residual = z_flat
            K = self.cfg.codebook_size
            for layer in range(self.cfg.num_residual_layers):
                pick = torch.randint(0, residual.shape[0], (K,), generator=self.gen)
                chosen = residual[pick].clone()
                self.entries[layer].copy_(chosen)
                self.ema_embed_sum[layer].copy_(chosen)
                self.ema_cluster_size[layer].fill_(1.0)
                codes = self._nearest(residual, self.entries[layer])
                residual = residual - self.entries[layer][codes]
            self.initialized.fill_(True)

    @staticmethod
    def _nearest(x: torch.Tensor, book: torch.Tensor) -> torch.Tensor:
        # (N, D) x (K, D) -> (N,) argmin Euclidean
        d = (x * x).sum(1, keepdim=True) - 2.0 * x @ book.T + (book * book).sum(1)
        return d.argmin(dim=1)

    def forward(self, z: torch.Tensor, update: bool = False):
        """Quantize (B, T', D) latents.

        Returns (codes (B, T', L), quantized sum (B, T', D), per-layer mean
        squared residual energies AFTER each layer).
        """
        if not bool(self.initialized):
            if not update:
                raise ConfigError("codebooks not initialized; train or load first")
            self._init_from(z.reshape(-1, z.shape[-1]).detach())

        B, T, D = z.shape
        flat = z.reshape(-1, D).detach()
        residual = flat
        q_sum = torch.zeros_like(flat)
        codes = []
        energies = []
        for layer in range(self.cfg.num_residual_layers):
            idx = self._nearest(residual, self.entries[layer])
            chosen = self.entries[layer][idx]
            if update:
                self._ema_update(layer, residual, idx)
            residual = residual - chosen
            q_sum = q_sum + chosen
            codes.append(idx)
            energies.append(float((residual * residual).sum(1).mean().detach()))
        codes_t = torch.stack(codes, dim=1).reshape(B, T, -1)
        return codes_t, q_sum.reshape(B, T, D), energies

    def _ema_update(self, layer: int, vectors: torch.Tensor, idx: torch.Tensor) -> None:
        m = self.cfg.ema_momentum
        K = self.cfg.codebook_size
        with torch.no_grad():
            one_hot = F.one_hot(idx, K).to(vectors.dtype)
            counts = one_hot.sum(0)
            sums = one_hot.T @ vectors
            self.ema_cluster_size[layer].mul_(m).add_(counts, alpha=1.0 - m)
            self.ema_embed_sum[layer].mul_(m).add_(sums, alpha=1.0 - m)
            denom = self.ema_cluster_size[layer].clamp(min=1e-7)
            self.entries[layer].copy_(self.ema_embed_sum[layer] / denom[:, None])

    def reinit_dead_entries(self, z: torch.Tensor) -> int:
        """Move entries whose EMA cluster size collapsed onto random batch
        latents. Returns how many entries were reset."""
        flat = z.reshape(-1, z.shape[-1]).detach()
        n_reset = 0
        with torch.no_grad():
            for layer in range(self.cfg.num_residual_layers):
                dead = self.ema_cluster_size[layer] < DEAD_ENTRY_THRESHOLD
                n = int(dead.sum())
                if n == 0:
                    continue
                pick = torch.randint(0, flat.shape[0], (n,), generator=self.gen)
                self.entries[layer][dead] = flat[pick]
                self.ema_embed_sum[layer][dead] = flat[pick]
                self.ema_cluster_size[layer][dead] = 1.0
                n_reset += n
        return n_reset


def quantize_residual(z: torch.Tensor, codebooks: list[np.ndarray],
                      commitment_weight: float = 0.25):
    """Functional residual quantization against explicit codebooks.

    z is (T', D) or (B, T', D); returns (MotionTokenGrid or batch of index
    grids, quantized latents, commitment loss).
    """
    if not codebooks or any(np.asarray(b).shape[0] == 0 for b in codebooks):
        raise ConfigError("empty codebook")
    z = torch.as_tensor(np.asarray(z)) if not isinstance(z, torch.Tensor) else z
    single = z.dim() == 2
    zb = z.unsqueeze(0) if single else z
    cfg = CodecConfig(joints=1, num_residual_layers=len(codebooks),
                      codebook_size=codebooks[0].shape[0],
                      latent_dim=codebooks[0].shape[1], downsample_ratio=1, window=1)
    quant = ResidualQuantizer(cfg)
    quant.load_codebooks([np.asarray(b, dtype=np.float32) for b in codebooks])
    quant.entries = quant.entries.to(zb.dtype)
    codes, q, _ = quant(zb)
    commit = commitment_weight * ((zb - q.detach()) ** 2).mean()
    if single:
        return MotionTokenGrid(codes[0].cpu().numpy(), cfg.codebook_size), q[0], commit
    return codes, q, commit


class MotionCodec(nn.Module):
    def __init__(self, cfg: CodecConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = _Encoder(cfg)
        self.quantizer = ResidualQuantizer(cfg)
        self.decoder = _Decoder(cfg)

    # -- shaping helpers ---------------------------------------------------

    def _to_channels(self, x: torch.Tensor) -> torch.Tensor:
        # (B, T, J, 6) -> (B, J*6, T)
        B, T = x.shape[:2]
        return x.reshape(B, T, -1).transpose(1, 2)

    def _pad_to_ratio(self, x: torch.Tensor) -> torch.Tensor:
        T = x.shape[-1]
        r = self.cfg.downsample_ratio
        pad = (-T) % r
        if pad:
            x = F.pad(x, (0, pad), mode="replicate")
        return x

    # -- public ops ----------------------------------------------------------

    def encode(self, pose: np.ndarray | torch.Tensor) -> torch.Tensor:
        """(T, J, 6) -> (T', latent_dim), T' = ceil(T / ratio)."""
        x = torch.as_tensor(np.asarray(pose), dtype=self.encoder.proj.weight.dtype)
        if x.dim() != 3 or x.shape[-1] != 6:
            raise ValueError(f"expected (T, J, 6) pose array, got {tuple(x.shape)}")
        if not torch.isfinite(x).all():
            raise ValueError("pose input must be finite")
        if x.shape[0] < self.cfg.downsample_ratio:
            raise SequenceTooShortError(
                f"{x.shape[0]} frames < downsample ratio {self.cfg.downsample_ratio}")
        with torch.no_grad():
            h = self._pad_to_ratio(self._to_channels(x.unsqueeze(0)))
            return self.encoder(h)[0].T

    def encode_to_grid(self, pose: np.ndarray | torch.Tensor) -> MotionTokenGrid:
        z = self.encode(pose)
        codes, _, _ = self.quantizer(z.unsqueeze(0))
        return MotionTokenGrid(codes[0].cpu().numpy(), self.cfg.codebook_size)

    def decode(self, grid: MotionTokenGrid) -> np.ndarray:
        """Token grid -> (timesteps * ratio, J, 6) float32 pose frames."""
        if grid.layers != self.cfg.num_residual_layers:
            raise InvalidTokenError(
                f"grid has {grid.layers} layers, codec expects {self.cfg.num_residual_layers}")
        if grid.indices.max(initial=0) >= self.cfg.codebook_size or \
                grid.indices.min(initial=0) < 0:
            raise InvalidTokenError("token index outside codebook range")
        idx = torch.as_tensor(grid.indices)
        with torch.no_grad():
            q = torch.zeros(grid.timesteps, self.cfg.latent_dim,
                            dtype=self.entries_dtype)
            for layer in range(self.cfg.num_residual_layers):
                q += self.quantizer.entries[layer][idx[:, layer]]
            out = self.decoder(q.T.unsqueeze(0))[0]
        T_out = grid.timesteps * self.cfg.downsample_ratio
        frames = out.T.reshape(T_out, self.cfg.joints, 6)
        return frames.cpu().numpy().astype(np.float32)

    @property
    def entries_dtype(self):
        return self.quantizer.entries.dtype

    def reconstruct(self, pose: PoseSequence) -> PoseSequence:
        grid = self.encode_to_grid(pose.data)
        frames = self.decode(grid)[: pose.frames]
        return PoseSequence(frames, pose.fps)

    def forward(self, x: torch.Tensor, update_codebooks: bool = False):
        """Training path on (B, T, J, 6) with T a multiple of the ratio.

        Straight-through gradient bypasses the quantizer; the commitment
        loss already carries its beta weight.
        """
        if x.shape[1] % self.cfg.downsample_ratio != 0:
            raise ValueError(
                f"training windows must be a multiple of ratio "
                f"{self.cfg.downsample_ratio}, got length {x.shape[1]}")
        h = self._to_channels(x)
        z = self.encoder(h).transpose(1, 2)            # (B, T', D)
        codes, q, energies = self.quantizer(z, update=update_codebooks)
        z_q = z + (q - z).detach()
        recon = self.decoder(z_q.transpose(1, 2))
        recon = recon.transpose(1, 2).reshape(x.shape)
        commit = self.cfg.commitment_weight * ((z - q.detach()) ** 2).mean()
        return recon, codes, commit, {"latents": z, "energies": energies}


def init_codec(cfg: CodecConfig) -> MotionCodec:
    torch.manual_seed(cfg.seed)
    return MotionCodec(cfg)


# ---------------------------------------------------------------------------
# training


@dataclass
class CodecTrainPlan:
    # Milestone schedule mirrors the published recipe; desk runs pass their
    # own steps and a larger rate.
    lr: float = 1e-5
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    milestones: tuple[int, ...] = (50, 150, 250)
    decay: float = 0.4


@dataclass
class CodecTrainReport:
    step: int
    recon_loss: float
    commit_loss: float
    utilization: list[float]

    def total(self) -> float:
        return self.recon_loss + self.commit_loss


@dataclass
class CodecTrainState:
    model: MotionCodec
    optimizer: torch.optim.AdamW
    scheduler: torch.optim.lr_scheduler.MultiStepLR
    plan: CodecTrainPlan
    step: int = 0


def init_codec_trainer(cfg: CodecConfig, plan: CodecTrainPlan | None = None) -> CodecTrainState:
    plan = plan or CodecTrainPlan()
    model = init_codec(cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=plan.lr, betas=plan.betas,
                            weight_decay=plan.weight_decay)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones=list(plan.milestones),
                                                 gamma=plan.decay)
    return CodecTrainState(model, opt, sched, plan)


def codec_train_step(batch: np.ndarray | torch.Tensor, state: CodecTrainState) -> CodecTrainReport:
    """One optimizer step on a (B, window, J, 6) batch."""
    x = torch.as_tensor(np.asarray(batch), dtype=torch.float32)
    if x.dim() != 4 or x.shape[0] < 1:
        raise ValueError(f"batch must be (B, T, J, 6), got {tuple(x.shape)}")
    model = state.model
    model.train()
    recon, codes, commit, aux = model(x, update_codebooks=True)
    recon_loss = F.mse_loss(recon, x)
    loss = recon_loss + commit
    if not torch.isfinite(loss):
        raise TrainingDivergedError(state.step)
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    state.scheduler.step()
    model.quantizer.reinit_dead_entries(aux["latents"])
    state.step += 1
    K = model.cfg.codebook_size
    util = [float(torch.unique(codes[:, :, layer]).numel()) / K
            for layer in range(model.cfg.num_residual_layers)]
    return CodecTrainReport(state.step, float(recon_loss), float(commit), util)


def pad_or_crop(data: np.ndarray, window: int, rng: np.random.Generator) -> np.ndarray:
    """Random window crop; short sequences are edge-replicated on the right."""
    T = data.shape[0]
    if T >= window:
        start = int(rng.integers(0, T - window + 1))
        return data[start: start + window]
    pad = np.repeat(data[-1:], window - T, axis=0)
    return np.concatenate([data, pad], axis=0)


def make_training_batch(motions: list[np.ndarray], window: int, batch_size: int,
                        rng: np.random.Generator) -> np.ndarray:
    picks = rng.integers(0, len(motions), size=batch_size)
    return np.stack([pad_or_crop(motions[i], window, rng) for i in picks])


# ---------------------------------------------------------------------------
# checkpointing (shared trimodal.checkpoint format)


def save_codec(state: CodecTrainState, path: str | Path) -> None:
    model = state.model
    arrays = {f"param.{name}": p.detach().cpu().numpy()
              for name, p in model.named_parameters()}
    for name, buf in model.named_buffers():
        arrays[f"buffer.{name}"] = buf.detach().to(torch.float32).cpu().numpy()
    meta = {
        "kind": "motion_codec",
        "config": {**model.cfg.__dict__},
        "plan": {**state.plan.__dict__, "betas": list(state.plan.betas),
                 "milestones": list(state.plan.milestones)},
        "step": state.step,
        "seed": model.cfg.seed,
    }
    checkpoint.save_arrays(path, meta, arrays)


def load_codec(path: str | Path) -> CodecTrainState:
    meta, arrays = checkpoint.load_arrays(path)
    if meta.get("kind") != "motion_codec":
        raise CheckpointFormatError(f"not a motion codec checkpoint: {meta.get('kind')}")
    cfg = CodecConfig(**meta["config"])
    plan_raw = dict(meta["plan"])
    plan = CodecTrainPlan(lr=plan_raw["lr"], betas=tuple(plan_raw["betas"]),
                          weight_decay=plan_raw["weight_decay"],
                          milestones=tuple(plan_raw["milestones"]), decay=plan_raw["decay"])
    state = init_codec_trainer(cfg, plan)
    model = state.model
    with torch.no_grad():
        for name, p in model.named_parameters():
            key = f"param.{name}"
            if key not in arrays:
                raise CheckpointFormatError(f"checkpoint missing {key}")
            p.copy_(torch.as_tensor(arrays[key]))
        for name, buf in model.named_buffers():
            key = f"buffer.{name}"
            if key not in arrays:
                raise CheckpointFormatError(f"checkpoint missing {key}")
            buf.copy_(torch.as_tensor(arrays[key]).to(buf.dtype))
    state.step = int(meta["step"])
    # Fast-forward the milestone schedule to the checkpointed step.
    factor = plan.decay ** sum(1 for m in plan.milestones if m <= state.step)
    for group in state.optimizer.param_groups:
        group["lr"] = plan.lr * factor
    state.scheduler.last_epoch = state.step
    return state
