"""Dense operator networks (the per-worker parameters).

Set inputs are stacked along dim 0. Reductions over that dim sort first, so
the result does not depend on input order down to the last bit.
"""

import torch
import torch.nn as nn
import torch.nn.functional as F


def set_sum(x: torch.Tensor) -> torch.Tensor:
    return torch.sort(x, dim=0).values.sum(dim=0)


def set_mean(x: torch.Tensor) -> torch.Tensor:
    return set_sum(x) / x.shape[0]


def set_softmax(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over the set dimension (dim 0)."""
    shifted = logits - logits.max(dim=0, keepdim=True).values
    weights = torch.exp(shifted)
    return weights / set_sum(weights).unsqueeze(0)


def _linear(fan_in: int, fan_out: int) -> nn.Linear:
    layer = nn.Linear(fan_in, fan_out)
    nn.init.xavier_uniform_(layer.weight)
    nn.init.zeros_(layer.bias)
    return layer


class DeepSet(nn.Module):
    """Feature MLP per element, mean pooling, output MLP."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.feature = _linear(dim, hidden)
        self.output = _linear(hidden, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.output(set_mean(F.relu(self.feature(x))))


class SetAttention(nn.Module):
    """Per-dimension softmax weights over the set from a scoring MLP."""

    def __init__(self, dim: int, hidden: int, out_dim: int | None = None):
        super().__init__()
        self.layer1 = _linear(dim, hidden)
        self.layer2 = _linear(hidden, out_dim or dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return set_softmax(self.layer2(F.relu(self.layer1(x))))


class OffsetGate(nn.Module):
    """sigmoid(DeepSet) gate that can only shrink a box offset."""

    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.deepset = DeepSet(dim, hidden)

    def forward(self, offsets: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.deepset(offsets))


class PairMLP(nn.Module):
    """Two-layer MLP over a concatenated (query, relation) pair."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.layer1 = _linear(in_dim, hidden)
        self.layer2 = _linear(hidden, hidden)
        self.out = _linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.out(F.relu(self.layer2(F.relu(self.layer1(x)))))
