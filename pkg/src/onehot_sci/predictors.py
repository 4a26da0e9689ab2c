"""Learned components of the RegDif pipeline and analytic oracles.

The networks are deliberately small: each spatio-temporal block is
conv3d -> activation -> conv3d with a residual skip. Tensors use the layout
``(N, C, B, H, W)``; cubes convert with :func:`to_tensor` / :func:`from_tensor`.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .core import VideoCube
from .sde import DegenerateScaleError, Scheduler, SIGMA_BAR_FLOOR, coeffs_at, mean_state

T_MIN, T_MAX = 0.01, 0.99
DTYPE = torch.float64


def to_tensor(cube, dtype=DTYPE) -> torch.Tensor:
    """(H, W, B) cube or array -> (1, 1, B, H, W) tensor."""
    data = cube.data if isinstance(cube, VideoCube) else np.asarray(cube)
    return torch.tensor(data.transpose(2, 0, 1), dtype=dtype)[None, None]


def from_tensor(t: torch.Tensor) -> VideoCube:
    return VideoCube(t.detach().cpu().numpy()[0, 0].transpose(1, 2, 0))


def batch_tensor(cubes, dtype=DTYPE) -> torch.Tensor:
    return torch.cat([to_tensor(c, dtype) for c in cubes])


def module_dtype(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


@dataclass(frozen=True)
class ToyBlockConfig:
    hidden_channels: int = 16
    activation: str = "silu"  # "silu" or "linear"
    residual: bool = True
    noise_blocks: int = 3

    def __post_init__(self):
        if self.hidden_channels < 1:
            raise ValueError("hidden_channels must be >= 1")
        if self.activation not in ("silu", "linear"):
            raise ValueError(f"unknown activation {self.activation!r}")


def _act(name: str) -> nn.Module:
    return nn.SiLU() if name == "silu" else nn.Identity()


def _conv(cin: int, cout: int) -> nn.Conv3d:
    return nn.Conv3d(cin, cout, kernel_size=3, padding=1, dtype=DTYPE)


class ToyBlock(nn.Module):
    def __init__(self, cfg: ToyBlockConfig):
        super().__init__()
        c = cfg.hidden_channels
        self.conv1 = _conv(c, c)
        self.act = _act(cfg.activation)
        self.conv2 = _conv(c, c)
        self.residual = cfg.residual

    def forward(self, h):
        out = self.conv2(self.act(self.conv1(h)))
        return h + out if self.residual else out


class RegressorInitializer(nn.Module):
    """One-block regressor producing the coarse video from the masked init."""

    def __init__(self, cfg: ToyBlockConfig):
        super().__init__()
        c = cfg.hidden_channels
        self.head = _conv(1, c)
        self.block = ToyBlock(cfg)
        self.tail = _conv(c, 1)

    def forward(self, x):
        return self.tail(self.block(self.head(x)))


class TimestepPredictor(nn.Module):
    """3D convolutions plus global average pooling, squashed into (T_MIN, T_MAX)."""

    def __init__(self, cfg: ToyBlockConfig):
        super().__init__()
        c = cfg.hidden_channels
        self.conv1 = _conv(1, c)
        self.conv2 = _conv(c, c)
        self.act = _act(cfg.activation)
        self.out = nn.Linear(c, 1, dtype=DTYPE)

    def forward(self, x):
        h = self.act(self.conv2(self.act(self.conv1(x))))
        pooled = h.mean(dim=(2, 3, 4))
        # The clamp keeps t strictly inside the range when the sigmoid saturates.
        squash = torch.sigmoid(self.out(pooled)[:, 0]).clamp(1e-6, 1 - 1e-6)
        return T_MIN + (T_MAX - T_MIN) * squash


def timestep_features(t: torch.Tensor, dim: int = 16) -> torch.Tensor:
    """Sinusoidal features of t, shape (N, dim)."""
    half = dim // 2
    freqs = torch.exp(torch.linspace(0.0, math.log(1000.0), half, dtype=t.dtype))
    arg = t[:, None] * freqs[None, :]
    return torch.cat([torch.sin(arg), torch.cos(arg)], dim=1)


class NoisePredictor(nn.Module):
    """Predicts the noise eps from a state and its time.

    The time embedding is added channel-wise before every block.
    """

    def __init__(self, cfg: ToyBlockConfig, embed_dim: int = 16):
        super().__init__()
        c = cfg.hidden_channels
        self.embed_dim = embed_dim
        self.head = _conv(1, c)
        self.time = nn.Linear(embed_dim, c, dtype=DTYPE)
        self.blocks = nn.ModuleList(ToyBlock(cfg) for _ in range(cfg.noise_blocks))
        self.tail = _conv(c, 1)

    def forward(self, x, t):
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), float(t), dtype=x.dtype)
        temb = self.time(timestep_features(t, self.embed_dim))[:, :, None, None, None]
        h = self.head(x)
        for block in self.blocks:
            h = block(h + temb)
        return self.tail(h)


class FusionBranch(nn.Module):
    """Embedding(Y^C) injected into a main branch as a zero-initialised residual."""

    def __init__(self, cfg: ToyBlockConfig):
        super().__init__()
        c = cfg.hidden_channels
        self.embed = _conv(1, c)
        self.fuse1 = _conv(c + 1, c)
        self.fuse2 = _conv(c, 1)
        self.act = _act(cfg.activation)

    def zero_output(self) -> None:
        with torch.no_grad():
            self.fuse2.weight.zero_()
            self.fuse2.bias.zero_()

    def forward(self, main, y_c):
        # y_c: (N, H, W) broadcast over the temporal axis.
        frames = main.shape[2]
        emb = self.act(self.embed(y_c[:, None, None].expand(-1, 1, frames, -1, -1)))
        h = self.act(self.fuse1(torch.cat([main, emb], dim=1)))
        return main + self.fuse2(h)


class FusionSet(nn.Module):
    def __init__(self, cfg: ToyBlockConfig):
        super().__init__()
        self.x = FusionBranch(cfg)
        self.eps = FusionBranch(cfg)


class PredictorSet(nn.Module):
    """G (regressor), H (timestep), eps (noise) and optional dual-path fusion."""

    def __init__(self, cfg: ToyBlockConfig = ToyBlockConfig(), dual: bool = False, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.regressor = RegressorInitializer(cfg)
        self.timestep = TimestepPredictor(cfg)
        self.noise = NoisePredictor(cfg)
        self.fusion = FusionSet(cfg) if dual else None
        init_uniform(self, seed)
        if self.fusion is not None:
            self.fusion.x.zero_output()
            self.fusion.eps.zero_output()

    @property
    def dual(self) -> bool:
        return self.fusion is not None

    def add_fusion(self, seed: int = 0) -> None:
        """Attach a fresh, identity-initialised fusion set."""
        fusion = FusionSet(self.cfg)
        init_uniform(fusion, seed)
        fusion.x.zero_output()
        fusion.eps.zero_output()
        self.fusion = fusion.to(module_dtype(self))


def init_uniform(module: nn.Module, seed: int) -> None:
    """Uniform(+-1/sqrt(fan_in)) for every weight and bias, seeded."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, (nn.Conv3d, nn.Linear)):
                fan_in = sub.weight[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
                for p in (sub.weight, sub.bias):
                    p.copy_(torch.rand(p.shape, generator=gen, dtype=DTYPE) * 2 * bound - bound)


def oracle_noise(
    state: VideoCube, t: float, x0: VideoCube, x_dst: VideoCube, s: Scheduler
) -> VideoCube:
    """Noise that places ``state`` on the forward marginal at time t."""
    c = coeffs_at(s, t)
    if not c.sigma_bar > SIGMA_BAR_FLOOR * s.lam:
        raise DegenerateScaleError(f"sigma_bar={c.sigma_bar:.3g} at t={t} is below the floor")
    return VideoCube((state.data - mean_state(x0, x_dst, c.mu_bar)) / c.sigma_bar)


class OracleNoisePredictor:
    """Test-time noise predictor that knows the ground truth."""

    def __init__(self, x0: VideoCube, x_dst: VideoCube, s: Scheduler):
        self.x0, self.x_dst, self.s = x0, x_dst, s
        self.calls = 0

    def __call__(self, state: VideoCube, t: float) -> VideoCube:
        self.calls += 1
        return oracle_noise(state, t, self.x0, self.x_dst, self.s)


class NetworkNoisePredictor:
    """Adapts a trained :class:`NoisePredictor` to the cube-in, cube-out contract."""

    def __init__(self, net: NoisePredictor):
        self.net = net
        self.calls = 0

    def __call__(self, state: VideoCube, t: float) -> VideoCube:
        self.calls += 1
        with torch.no_grad():
            return from_tensor(self.net(to_tensor(state, module_dtype(self.net)), t))


def merge_known(x1, coarse, mask):
    """Keep measured pixels of ``x1`` and fill the rest from ``coarse``.

    Works on cubes (returns a cube) and on tensors of matching layout.
    """
    if torch.is_tensor(coarse):
        return torch.where(mask.bool(), x1, coarse)
    bits = mask.bits.astype(bool)
    return VideoCube(np.where(bits, x1.data, coarse.data))


def regress_init(g: RegressorInitializer, x1: VideoCube) -> VideoCube:
    with torch.no_grad():
        return from_tensor(g(to_tensor(x1, module_dtype(g))))


def predict_timestep(h: TimestepPredictor, x: VideoCube) -> float:
    with torch.no_grad():
        return float(h(to_tensor(x, module_dtype(h)))[0])


def fuse(f: FusionSet, coarse: VideoCube, eps: VideoCube, y_c) -> tuple[VideoCube, VideoCube]:
    if coarse.shape != eps.shape or coarse.shape[:2] != y_c.shape:
        raise ValueError(
            f"fusion dims disagree: coarse {coarse.shape}, eps {eps.shape}, y_c {y_c.shape}"
        )
    dtype = module_dtype(f)
    yc = torch.tensor(y_c.data, dtype=dtype)[None]
    with torch.no_grad():
        return (
            from_tensor(f.x(to_tensor(coarse, dtype), yc)),
            from_tensor(f.eps(to_tensor(eps, dtype), yc)),
        )


# --- OHSP1 checkpoints -------------------------------------------------------

CKPT_MAGIC = b"OHSP1"


def save_checkpoint(p: PredictorSet, path) -> None:
    meta = {
        "hidden_channels": p.cfg.hidden_channels,
        "activation": p.cfg.activation,
        "residual": int(p.cfg.residual),
        "noise_blocks": p.cfg.noise_blocks,
        "dual": int(p.dual),
    }
    blocks = [(f"#{k}={v}", np.zeros(0)) for k, v in meta.items()]
    blocks += [(name, t.detach().numpy()) for name, t in p.state_dict().items()]
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> PredictorSet:
    raw = Path(path).read_bytes()
    if raw[:5] != CKPT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {raw[:5]!r}")
    pos = 5
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    meta, state = {}, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos : pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        dims = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(dims)
        pos += 4 * size
        if name.startswith("#"):
            key, value = name[1:].split("=", 1)
            meta[key] = value
        else:
            state[name] = torch.as_tensor(arr.astype(np.float64))
    cfg = ToyBlockConfig(
        hidden_channels=int(meta["hidden_channels"]),
        activation=meta["activation"],
        residual=bool(int(meta["residual"])),
        noise_blocks=int(meta["noise_blocks"]),
    )
    p = PredictorSet(cfg, dual=bool(int(meta["dual"])))
    p.load_state_dict(state)
    return p
