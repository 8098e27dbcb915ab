"""Image encoders mapping pixels to unit-sphere features."""
import torch
from torch import nn
import torch.nn.functional as F

from .core import checksum

INPUT_SHAPES = {
    "small_conv": (28, 28, 1),
    "resnet18": (224, 224, 3),
}


class SmallConv(nn.Module):
    """Three conv-BN-ReLU blocks, global average pool, linear head."""

    def __init__(self, d: int, in_channels: int = 1, width: int = 32):
        super().__init__()
        chans = [in_channels, width, 2 * width, 4 * width]
        blocks = []
        for i in range(3):
            blocks += [nn.Conv2d(chans[i], chans[i + 1], 3, padding=1, bias=False),
                       nn.BatchNorm2d(chans[i + 1]),
                       nn.ReLU(inplace=True)]
            if i < 2:
                blocks.append(nn.MaxPool2d(2))
        self.backbone = nn.Sequential(*blocks)
        self.head = nn.Linear(chans[-1], d)

    def forward(self, x):
        h = self.backbone(x)
        return self.head(h.mean(dim=(2, 3)))


def _resnet18(d: int) -> nn.Module:
    from torchvision.models import resnet18
    net = resnet18(weights=None)
    net.fc = nn.Linear(net.fc.in_features, d)
    return net


class Encoder(nn.Module):
    """Backbone plus linear head; ``forward`` returns L2-normalized features.

    Inputs are (n, H, W, C) pixel grids in [0, 1], matching the dataset layout.
    """

    def __init__(self, arch: str, d: int, seed: int = 0):
        super().__init__()
        if arch not in INPUT_SHAPES:
            raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(INPUT_SHAPES)}")
        if d < 1:
            raise ValueError("d must be positive")
        self.arch, self.d, self.seed = arch, d, seed
        self.frozen = False
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.net = SmallConv(d) if arch == "small_conv" else _resnet18(d)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return INPUT_SHAPES[self.arch]

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or tuple(images.shape[1:]) != self.input_shape:
            raise ValueError(f"{self.arch} expects images of shape (n, {', '.join(map(str, self.input_shape))}), "
                             f"got {tuple(images.shape)}")
        out = self.net(images.permute(0, 3, 1, 2).contiguous())
        if not bool(torch.isfinite(out).all()):
            raise FloatingPointError(f"non-finite activations in {self.arch} encoder")
        return F.normalize(out, dim=1, eps=1e-12)

    def freeze(self) -> "Encoder":
        self.frozen = True
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self

    def train(self, mode: bool = True):
        # a frozen encoder stays in inference mode (fixed BN statistics)
        return super().train(mode and not self.frozen)

    def checksum(self) -> str:
        return checksum(self.state_dict().values())


def build_encoder(arch: str, d: int, seed: int = 0) -> Encoder:
    return Encoder(arch, d, seed)


def embed(encoder: Encoder, images, batch_size: int = 512) -> torch.Tensor:
    """Features for a stack of images; no gradient, current train/eval mode kept."""
    images = torch.as_tensor(images, dtype=torch.float32)
    if len(images) == 0:
        return torch.empty(0, encoder.d)
    with torch.no_grad():
        return torch.cat([encoder(images[i:i + batch_size])
                          for i in range(0, len(images), batch_size)])
