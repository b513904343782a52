"""Model and training dimensions in one frozen bundle.

The token grid is fixed at three threads of one main post plus two
replies, so a bin never carries more than nine text tokens. Every
attention width must divide the model width, and the rolling prior
cannot look further back than the lookback itself.
"""

from __future__ import annotations

from dataclasses import dataclass


class HyperparamError(ValueError):
    """Raised when a dimension bundle is internally inconsistent."""


@dataclass(frozen=True)
class CmaHyperparams:
    # widths
    d_model: int = 512
    backbone_heads: int = 8
    e_layers: int = 2
    d_ff: int = 2048
    dropout: float = 0.1
    intra_bin_heads: int = 4
    intra_bin_layers: int = 1
    d_text: int = 768
    k_post: int = 3
    k_reply: int = 2
    # window geometry
    lookback: int = 14
    horizon: int = 7
    prior_window: int = 7
    c_out: int = 1
    # optimization
    lr_backbone: float = 1e-4
    lr_crossmodal: float = 3e-4
    lambda_aux: float = 0.05
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 32

    @property
    def t_max(self) -> int:
        """Token slots per bin: each thread is one main plus its replies."""
        return self.k_post * (1 + self.k_reply)

    def __post_init__(self) -> None:
        for name in ("d_model", "d_ff", "d_text", "e_layers", "k_post", "k_reply",
                     "lookback", "horizon", "c_out", "max_epochs", "batch_size",
                     "intra_bin_layers"):
            if getattr(self, name) < 1:
                raise HyperparamError(f"{name} must be positive")
        if self.d_model % self.backbone_heads != 0:
            raise HyperparamError("backbone heads must divide d_model")
        if self.d_model % self.intra_bin_heads != 0:
            raise HyperparamError("intra-bin heads must divide d_model")
        if not 0.0 <= self.dropout < 1.0:
            raise HyperparamError("dropout must lie in [0, 1)")
        if not 1 <= self.prior_window <= self.lookback:
            raise HyperparamError("prior window must fit inside the lookback")
        if self.patience < 0:
            raise HyperparamError("patience must be non-negative")
