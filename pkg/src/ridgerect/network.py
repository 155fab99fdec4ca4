"""Dense distortion-regression network.

Two feature branches (ridge texture, ridge orientation) are refined by
residual blocks plus coordinate attention, fused with the downsampled mask,
passed through an atrous spatial pyramid, and regressed to a 2-channel
displacement grid at 1/16 of the input resolution.  The orientation branch
additionally emits per-block probabilities over 180 one-degree orientation
classes.
"""

from dataclasses import asdict, dataclass, field

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigError, ShapeMismatch

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    input_size_px: int = 512
    block_size_px: int = 16
    orientation_classes: int = 180
    atrous_rates: tuple = (1, 2, 4, 8)
    texture_widths: tuple = (32, 64, 128, 288)
    orientation_widths: tuple = (128, 256, 512)
    pyramid_width: int = 256
    head_widths: tuple = (256, 128)
    attention_reduction: int = 32
    use_orientation: bool = False
    use_mask: bool = True
    use_attention: bool = True
    use_pyramid: bool = True
    pyramid_global_pool: bool = True

    @property
    def grid_size(self):
        return self.input_size_px // self.block_size_px

    def validate(self):
        if self.input_size_px % self.block_size_px:
            raise ConfigError(
                f"input size {self.input_size_px} not divisible by block {self.block_size_px}"
            )
        if self.block_size_px != 16:
            raise ConfigError("the output grid is defined on 16-px blocks")
        if self.texture_widths and len(self.texture_widths) != 4:
            raise ConfigError("texture branch uses exactly 4 downsampling blocks")
        if len(self.orientation_widths) != 3:
            raise ConfigError("orientation branch uses exactly 3 convolution layers")


@dataclass
class NetworkOutput:
    field: torch.Tensor                   # (B, 2, H/16, W/16), px
    orientation_probs: torch.Tensor = None  # (B, 180, H/16, W/16) or None

    def field_numpy(self):
        return self.field.detach().cpu().numpy()


def conv_bn_relu(cin, cout, stride=1, dilation=1, kernel=3):
    pad = dilation * (kernel - 1) // 2
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, stride=stride, padding=pad, dilation=dilation, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class DownBlock(nn.Module):
    """Stride-2 downsampling block: two 3x3 convolutions."""

    def __init__(self, cin, cout):
        super().__init__()
        self.body = nn.Sequential(conv_bn_relu(cin, cout, stride=2), conv_bn_relu(cout, cout))

    def forward(self, x):
        return self.body(x)


class ResidualBlock(nn.Module):
    """Pre-activation residual block."""

    def __init__(self, ch):
        super().__init__()
        self.bn1 = nn.BatchNorm2d(ch)
        self.conv1 = nn.Conv2d(ch, ch, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(ch)
        self.conv2 = nn.Conv2d(ch, ch, 3, padding=1, bias=False)

    def forward(self, x):
        out = self.conv1(F.relu(self.bn1(x)))
        out = self.conv2(F.relu(self.bn2(out)))
        return x + out


class CoordinateAttention(nn.Module):
    """Channel attention with per-axis spatial pooling and per-axis gates."""

    def __init__(self, ch, reduction=32):
        super().__init__()
        mid = max(8, ch // reduction)
        self.conv1 = nn.Conv2d(ch, mid, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(mid)
        self.conv_h = nn.Conv2d(mid, ch, 1)
        self.conv_w = nn.Conv2d(mid, ch, 1)

    def forward(self, x):
        _, _, h, w = x.shape
        x_h = x.mean(dim=3, keepdim=True)                 # (B, C, H, 1)
        x_w = x.mean(dim=2, keepdim=True).permute(0, 1, 3, 2)  # (B, C, W, 1)
        y = F.relu(self.bn1(self.conv1(torch.cat([x_h, x_w], dim=2))))
        y_h, y_w = torch.split(y, [h, w], dim=2)
        gate_h = torch.sigmoid(self.conv_h(y_h))
        gate_w = torch.sigmoid(self.conv_w(y_w.permute(0, 1, 3, 2)))
        return x * gate_h * gate_w


class Refinement(nn.Module):
    """Two residual blocks followed by coordinate attention."""

    def __init__(self, ch, reduction=32, use_attention=True):
        super().__init__()
        self.res1 = ResidualBlock(ch)
        self.res2 = ResidualBlock(ch)
        self.attention = CoordinateAttention(ch, reduction) if use_attention else nn.Identity()

    def forward(self, x):
        return self.attention(self.res2(self.res1(x)))


class SpatialPyramid(nn.Module):
    """Parallel global-average-pool path plus atrous convolutions, projected."""

    def __init__(self, cin, cout, rates=(1, 2, 4, 8), global_pool=True):
        super().__init__()
        self.branches = nn.ModuleList(
            [conv_bn_relu(cin, cout, dilation=r) for r in rates]
        )
        self.global_pool = global_pool
        if global_pool:
            self.pool_conv = conv_bn_relu(cin, cout, kernel=1)
        n = len(rates) + (1 if global_pool else 0)
        self.project = conv_bn_relu(n * cout, cout, kernel=1)

    def forward(self, x):
        feats = [branch(x) for branch in self.branches]
        if self.global_pool:
            pooled = self.pool_conv(x.mean(dim=(2, 3), keepdim=True))
            feats.append(pooled.expand(-1, -1, x.shape[2], x.shape[3]))
        return self.project(torch.cat(feats, dim=1))


class TextureBranch(nn.Module):
    """Four stride-2 downsampling blocks: 1/16 resolution features."""

    def __init__(self, widths):
        super().__init__()
        stages = []
        cin = 1
        for w in widths:
            stages.append(DownBlock(cin, w))
            cin = w
        self.stages = nn.Sequential(*stages)

    def forward(self, x):
        return self.stages(x)


class OrientationBranch(nn.Module):
    """Three strided convolutions straight to 1/16 resolution features."""

    def __init__(self, widths):
        super().__init__()
        w1, w2, w3 = widths
        self.body = nn.Sequential(
            conv_bn_relu(1, w1, stride=4, kernel=5),
            conv_bn_relu(w1, w2, stride=2),
            conv_bn_relu(w2, w3, stride=2),
        )

    def forward(self, x):
        return self.body(x)


class _StubModel(nn.Module):
    """Zero-parameter placeholder built from an empty-width config."""

    def __init__(self, config):
        super().__init__()
        self.config = config

    def forward(self, *args, **kwargs):
        raise ConfigError("stub model has no layers")


class DistortionRegressionNet(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        config.validate()
        self.config = config
        red = config.attention_reduction

        self.texture = TextureBranch(config.texture_widths)
        tex_ch = config.texture_widths[-1]
        self.texture_refine = Refinement(tex_ch, red, config.use_attention)

        fused_ch = tex_ch + (1 if config.use_mask else 0)
        if config.use_orientation:
            ori_ch = config.orientation_widths[-1]
            self.orientation = OrientationBranch(config.orientation_widths)
            self.orientation_refine = Refinement(ori_ch, red, config.use_attention)
            self.classifier = nn.Conv2d(ori_ch, config.orientation_classes, 1)
            fused_ch += ori_ch

        self.fusion_refine = Refinement(fused_ch, red, config.use_attention)
        if config.use_pyramid:
            self.pyramid = SpatialPyramid(
                fused_ch, config.pyramid_width, config.atrous_rates, config.pyramid_global_pool
            )
            head_in = config.pyramid_width
        else:
            self.pyramid = None
            head_in = fused_ch

        head = []
        cin = head_in
        for w in config.head_widths:
            head.append(conv_bn_relu(cin, w))
            cin = w
        head.append(nn.Conv2d(cin, 2, 3, padding=1))  # linear output, px units
        self.head = nn.Sequential(*head)

    def downsample_mask(self, mask):
        """Pixel mask to 1/16 occupancy by area pooling and 0.5 threshold."""
        bs = self.config.block_size_px
        pooled = F.avg_pool2d(mask.float(), kernel_size=bs, stride=bs)
        return (pooled >= 0.5).float()

    def forward(self, skeleton, mask):
        if skeleton.ndim != 4 or skeleton.shape[1] != 1:
            raise ShapeMismatch(f"skeleton must be (B, 1, H, W), got {tuple(skeleton.shape)}")
        if skeleton.shape[-2:] != (self.config.input_size_px, self.config.input_size_px):
            raise ShapeMismatch(
                f"input must be {self.config.input_size_px} px square, got {tuple(skeleton.shape[-2:])}"
            )
        if mask.shape[-2:] != skeleton.shape[-2:]:
            raise ShapeMismatch("mask must match the skeleton resolution")
        if mask.ndim == 3:
            mask = mask[:, None]

        tex = self.texture_refine(self.texture(skeleton))
        feats = [tex]
        probs = None
        if self.config.use_orientation:
            ori = self.orientation_refine(self.orientation(skeleton))
            probs = torch.softmax(self.classifier(ori), dim=1)
            feats.append(ori)
        if self.config.use_mask:
            feats.append(self.downsample_mask(mask))
        fused = self.fusion_refine(torch.cat(feats, dim=1))
        if self.pyramid is not None:
            fused = self.pyramid(fused)
        return NetworkOutput(field=self.head(fused), orientation_probs=probs)


def build_network(config: NetworkConfig, rng_seed: int = 0):
    """Construct the network with a deterministic parameter initialization."""
    config.validate()
    if not config.texture_widths:
        return _StubModel(config)
    torch.manual_seed(rng_seed)
    return DistortionRegressionNet(config)


def count_parameters(model):
    """Total trainable scalar count."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def save_checkpoint(path, model, extra=None):
    """Self-describing checkpoint: version, config, named parameters."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
    }
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_checkpoint(path):
    """Load a checkpoint; returns (model, extra-dict)."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if "format_version" not in payload:
        raise ConfigError("checkpoint missing mandatory version field")
    if payload["format_version"] != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {payload['format_version']}")
    cfg_dict = dict(payload["config"])
    for key in ("atrous_rates", "texture_widths", "orientation_widths", "head_widths"):
        cfg_dict[key] = tuple(cfg_dict[key])
    config = NetworkConfig(**cfg_dict)
    model = DistortionRegressionNet(config)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload.get("extra", {})
