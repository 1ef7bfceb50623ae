"""Per-feature scalar tokenization.

Each covariate j gets its own embedding direction: token_j = x_j * W_j + b_j
+ pos_j, so a feature vector [n, p] becomes a token set [n, p, d]. The
positional row is what keeps attention able to tell features apart after
pooling.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Tensor, constant, mul, reshape
from .errors import DimensionError
from .rng import uniform_init


@dataclass
class TokenizerParams:
    w: Tensor  # [p, d], row j scales feature j
    b: Tensor  # [p, d]
    pos: Tensor  # [p, d]

    @classmethod
    def init(cls, rng, p, d):
        # scalar inputs: fan_in 1 for the value embedding, d for position
        return cls(
            w=ad.param(uniform_init(rng, (p, d), 1)),
            b=ad.param(uniform_init(rng, (p, d), 1)),
            pos=ad.param(uniform_init(rng, (p, d), d)),
        )

    def tensors(self):
        return [self.w, self.b, self.pos]

    def named_tensors(self):
        return [("w", self.w), ("b", self.b), ("pos", self.pos)]


def tokenize(x, params):
    """Map features [n, p] to tokens [n, p, d]."""
    n, p = x.data.shape if isinstance(x, Tensor) else x.shape
    if p != params.w.data.shape[0]:
        raise DimensionError(
            f"tokenizer built for {params.w.data.shape[0]} features, got {p}"
        )
    xt = x if isinstance(x, Tensor) else constant(x)
    cols = reshape(xt, (n, p, 1))
    return mul(cols, params.w) + params.b + params.pos
