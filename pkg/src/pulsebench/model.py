"""Two-branch rPPG network.

Identity branch: temporal compressor -> optional upsample -> 2D extractor ->
identity classifier. rPPG branch: three 3D stages, each halving the spatial
resolution while keeping every frame. The cross-task combiner injects the
channel-averaged identity features into the output of one rPPG stage.

Tensors follow torch conventions: clips are (B, T, C, H, W) at the API and
(B, C, T, H, W) inside the 3D branch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError, UnfittedParams
from .spectral import DEFAULT_TEMPERATURE, HrBand
from .tcu import TemporalCompressor, tcu_upsample

CHECKPOINT_FORMAT = "pulsebench-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    input_shape: tuple[int, int, int, int] = (64, 3, 128, 128)
    num_identities: int = 8
    stage_widths: tuple[int, int, int] = (16, 32, 64)
    identity_widths: tuple[int, int, int, int] = (16, 32, 64, 64)
    fusion_stage: int | None = 3
    tcu_upsample_factor: int = 1
    temperature: float = DEFAULT_TEMPERATURE
    band: HrBand = field(default_factory=HrBand)

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        self.stage_widths = tuple(int(v) for v in self.stage_widths)
        self.identity_widths = tuple(int(v) for v in self.identity_widths)
        if isinstance(self.band, dict):
            self.band = HrBand(**self.band)
        elif isinstance(self.band, (list, tuple)):
            self.band = HrBand(*self.band)
        if self.fusion_stage in ("none", 0):
            self.fusion_stage = None
        t, c, h, w = self.input_shape
        if c != 3:
            raise ValueError(f"expected 3 input channels, got {c}")
        if h % 8 or w % 8:
            raise ValueError(f"H and W must be divisible by 8, got {h}x{w}")
        if self.fusion_stage not in (None, 1, 2, 3):
            raise ValueError(f"fusion_stage must be 1, 2, 3 or None, got {self.fusion_stage}")
        if self.num_identities < 2:
            raise ValueError("need at least 2 identities")
        if len(self.stage_widths) != 3 or len(self.identity_widths) != 4:
            raise ValueError("need 3 stage widths and 4 identity widths")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["stage_widths"] = list(self.stage_widths)
        d["identity_widths"] = list(self.identity_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class ModelOutput(NamedTuple):
    bvp: torch.Tensor  # (B, T)
    id_logits: torch.Tensor  # (B, K)
    fused_map: torch.Tensor  # (B, C, T, H', W')


class RppgStage(nn.Module):
    """Two 3x3x3 conv blocks then 1x2x2 spatial max pooling."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv3d(in_ch, out_ch, 3, padding=1),
            nn.BatchNorm3d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv3d(out_ch, out_ch, 3, padding=1),
            nn.BatchNorm3d(out_ch),
            nn.ReLU(inplace=True),
        )
        self.pool = nn.MaxPool3d((1, 2, 2))

    def forward(self, x):
        if x.shape[-1] % 2 or x.shape[-2] % 2:
            raise ShapeError(f"spatial dims must be even, got {tuple(x.shape[-2:])}")
        return self.pool(self.block(x))


class IdentityExtractor(nn.Module):
    """Four 2D conv blocks; the first three halve the resolution."""

    def __init__(self, widths=(16, 32, 64, 64), in_ch: int = 3):
        super().__init__()
        layers = []
        for i, out_ch in enumerate(widths):
            layers += [nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True)]
            if i < 3:
                layers.append(nn.MaxPool2d(2))
            in_ch = out_ch
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        if x.shape[-1] % 8 or x.shape[-2] % 8:
            raise ShapeError(f"spatial dims must be divisible by 8, got {tuple(x.shape[-2:])}")
        return self.net(x)


class IdentityClassifier(nn.Module):
    def __init__(self, in_ch: int, num_identities: int):
        super().__init__()
        self.fc = nn.Linear(in_ch, num_identities)

    def forward(self, features):
        if features.dim() != 4:
            raise ShapeError(f"expected (B, C, H, W) features, got {tuple(features.shape)}")
        return self.fc(features.mean(dim=(2, 3)))


class CrossTaskFeatureCombiner(nn.Module):
    """Fuse a (B, 1, Hi, Wi) identity map into a (B, C, T, Hr, Wr) rPPG map.

    The identity map is resized to (Hr, Wr), replicated along time, lifted to
    C channels by a pointwise conv and added to a pointwise conv of the rPPG
    map: ``alpha * conv_i(stack) + beta * conv_r(fm_r)``.
    """

    def __init__(self, channels: int, init_scale: float = 0.01):
        super().__init__()
        self.alpha = nn.Parameter(torch.tensor(1.0))
        self.beta = nn.Parameter(torch.tensor(1.0))
        self.conv_i = nn.Conv3d(1, channels, 1, bias=False)
        self.conv_r = nn.Conv3d(channels, channels, 1, bias=False)
        with torch.no_grad():
            nn.init.normal_(self.conv_i.weight, std=init_scale)
            self.conv_r.weight.copy_(torch.eye(channels).view(channels, channels, 1, 1, 1))

    def forward(self, avg_map: torch.Tensor, fm_r: torch.Tensor) -> torch.Tensor:
        if avg_map.dim() != 4 or avg_map.shape[1] != 1:
            raise ShapeError(f"avg_map must be (B, 1, H, W), got {tuple(avg_map.shape)}")
        if fm_r.dim() != 5 or fm_r.shape[1] != self.conv_r.in_channels:
            raise ShapeError(f"fm_r must be (B, {self.conv_r.in_channels}, T, H, W), got {tuple(fm_r.shape)}")
        if avg_map.shape[0] != fm_r.shape[0]:
            raise ShapeError("batch sizes differ")
        _, _, t_r, h_r, w_r = fm_r.shape
        if avg_map.shape[-2:] != (h_r, w_r):
            avg_map = F.interpolate(avg_map, size=(h_r, w_r), mode="bilinear", align_corners=False)
        stack = avg_map.unsqueeze(2).expand(-1, -1, t_r, -1, -1)
        return self.alpha * self.conv_i(stack) + self.beta * self.conv_r(fm_r)


class RFaceNet(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        w = config.stage_widths
        self.tcu = TemporalCompressor()
        self.extractor2d = IdentityExtractor(config.identity_widths)
        self.id_head = IdentityClassifier(config.identity_widths[-1], config.num_identities)
        self.stages = nn.ModuleList([RppgStage(3, w[0]), RppgStage(w[0], w[1]), RppgStage(w[1], w[2])])
        self.ctfc = None
        if config.fusion_stage is not None:
            self.ctfc = CrossTaskFeatureCombiner(w[config.fusion_stage - 1])
        self.bvp_head = nn.Conv1d(w[2], 1, 1)
        # log sigma_i^2 for the bvp, hr and identity terms
        self.log_vars = nn.Parameter(torch.zeros(3))

    def extract_identity(self, map2d: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (features, avg_map); avg_map is the channel mean, (B, 1, H/8, W/8)."""
        features = self.extractor2d(map2d)
        return features, features.mean(dim=1, keepdim=True)

    def classify_identity(self, features: torch.Tensor) -> torch.Tensor:
        return self.id_head(features)

    def rppg_stage(self, x: torch.Tensor, k: int) -> torch.Tensor:
        return self.stages[k - 1](x)

    def _check_input(self, clip: torch.Tensor):
        _, c, h, w = self.config.input_shape
        if clip.dim() != 5 or tuple(clip.shape[2:]) != (c, h, w):
            raise ShapeError(f"expected clips shaped (B, T, {c}, {h}, {w}), got {tuple(clip.shape)}")

    def identity_branch(self, clip: torch.Tensor):
        map2d = tcu_upsample(self.tcu(clip), self.config.tcu_upsample_factor)
        features, avg_map = self.extract_identity(map2d)
        return avg_map, self.classify_identity(features)

    def forward(self, clip: torch.Tensor) -> ModelOutput:
        """clip: (B, T, 3, H, W) standardized frames."""
        self._check_input(clip)
        avg_map, id_logits = self.identity_branch(clip)
        x = clip.permute(0, 2, 1, 3, 4)
        fused = None
        for k in (1, 2, 3):
            x = self.rppg_stage(x, k)
            if k == self.config.fusion_stage:
                x = self.ctfc(avg_map, x)
                fused = x
        if fused is None:
            fused = x
        bvp = self.bvp_head(x.mean(dim=(3, 4))).squeeze(1)
        return ModelOutput(bvp, id_logits, fused)


@dataclass
class Checkpoint:
    """Model configuration plus named parameter arrays."""

    config: ModelConfig
    state_dict: dict
    info: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: RFaceNet, **info) -> "Checkpoint":
        state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        return cls(model.config, state, dict(info))

    def build_model(self) -> RFaceNet:
        model = RFaceNet(self.config)
        expected = set(model.state_dict())
        missing = expected - set(self.state_dict)
        if missing:
            raise UnfittedParams(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        dtype = next(iter(self.state_dict.values())).dtype
        if dtype == torch.float64:
            model.double()
        model.load_state_dict(self.state_dict)
        model.eval()
        return model

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        dtypes = {str(v.dtype) for v in self.state_dict.values() if v.is_floating_point()}
        torch.save(
            {
                "format": CHECKPOINT_FORMAT,
                "version": CHECKPOINT_VERSION,
                "config": self.config.to_dict(),
                "dtype": sorted(dtypes),
                "params": {k: list(v.shape) for k, v in self.state_dict.items()},
                "info": self.info,
                "state_dict": self.state_dict,
            },
            path,
        )
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        blob = torch.load(Path(path), map_location="cpu", weights_only=True)
        if blob.get("format") != CHECKPOINT_FORMAT:
            raise UnfittedParams(f"{path} is not a {CHECKPOINT_FORMAT} file")
        if blob.get("version", 0) > CHECKPOINT_VERSION:
            raise UnfittedParams(f"checkpoint version {blob['version']} is newer than supported")
        return cls(ModelConfig.from_dict(blob["config"]), blob["state_dict"], blob.get("info", {}))
