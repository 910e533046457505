"""Network backbones: a tiny CPU-profile ConvNet plus the full-scale
reference architectures (residual classifier at 224px, five-conv regressor
at 227px). Every backbone exposes ``embedding_dim`` and an ``embed`` method
returning the penultimate feature vector.
"""

from __future__ import annotations

import torch
from torch import nn

ARCHITECTURES = ("tiny", "resnet50", "alexnet")


class TinyConvNet(nn.Module):
    """Five-conv backbone small enough to train on CPU in seconds."""

    def __init__(self, num_outputs: int, input_size: int = 64, width: int = 12, embedding_dim: int = 48):
        super().__init__()
        if input_size % 8 != 0:
            raise ValueError(f"tiny arch needs input_size divisible by 8, got {input_size}")
        w = width
        self.features = nn.Sequential(
            nn.Conv2d(1, w, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(w, 2 * w, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(2 * w, 4 * w, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(4 * w, 4 * w, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(4 * w, 4 * w, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        feat_side = input_size // 8
        self.fc1 = nn.Linear(4 * w * feat_side * feat_side, embedding_dim)
        self.fc2 = nn.Linear(embedding_dim, num_outputs)
        self.embedding_dim = embedding_dim

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        z = self.features(x).flatten(1)
        return torch.relu(self.fc1(z))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.embed(x))


class ResNetClassifier(nn.Module):
    """ResNet-50 adapted to single-channel input."""

    def __init__(self, num_outputs: int, pretrained: bool = False):
        super().__init__()
        from torchvision.models import resnet50

        weights = "IMAGENET1K_V2" if pretrained else None
        net = resnet50(weights=weights)
        old = net.conv1
        conv1 = nn.Conv2d(1, old.out_channels, old.kernel_size, old.stride, old.padding, bias=False)
        if pretrained:
            with torch.no_grad():
                conv1.weight.copy_(old.weight.sum(dim=1, keepdim=True))
        net.conv1 = conv1
        self.embedding_dim = net.fc.in_features
        net.fc = nn.Linear(self.embedding_dim, num_outputs)
        self.net = net

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        n = self.net
        x = n.maxpool(n.relu(n.bn1(n.conv1(x))))
        x = n.layer4(n.layer3(n.layer2(n.layer1(x))))
        return torch.flatten(n.avgpool(x), 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net.fc(self.embed(x))


class AlexNetRegressor(nn.Module):
    """AlexNet-style network, single-channel input, arbitrary output width."""

    def __init__(self, num_outputs: int):
        super().__init__()
        from torchvision.models import alexnet

        net = alexnet(weights=None)
        net.features[0] = nn.Conv2d(1, 64, kernel_size=11, stride=4, padding=2)
        self.embedding_dim = net.classifier[-1].in_features
        net.classifier[-1] = nn.Linear(self.embedding_dim, num_outputs)
        self.net = net

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        n = self.net
        x = torch.flatten(n.avgpool(n.features(x)), 1)
        for layer in list(n.classifier)[:-1]:
            x = layer(x)
        return x

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net.classifier[-1](self.embed(x))


def build_network(
    arch: str, num_outputs: int, input_size: int, pretrained: bool = False
) -> nn.Module:
    if arch == "tiny":
        if pretrained:
            raise ValueError("no pretrained weights exist for the tiny profile")
        return TinyConvNet(num_outputs, input_size=input_size)
    if arch == "resnet50":
        return ResNetClassifier(num_outputs, pretrained=pretrained)
    if arch == "alexnet":
        if pretrained:
            raise ValueError("pretrained initialization is not wired for the regressor")
        return AlexNetRegressor(num_outputs)
    raise ValueError(f"unknown architecture {arch!r}; choose from {ARCHITECTURES}")
