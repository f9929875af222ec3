"""Mix-attention encoder: one attention head per kernel letter, post-norm transformer blocks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError
from .kernels import (
    ABSOLUTE,
    AbsoluteTimeEmbedding,
    BochnerTimeEmbedding,
    EmbeddingMode,
    ExpDiffKernel,
    GaussianDistanceWeights,
    Log1pDiffKernel,
    PositionalEmbedding,
    SinusoidDiffKernel,
    parse_mode,
    time_diff_matrix,
)
from .noisereg import NoisyLinear


def attention_mask(pad_mask: torch.Tensor) -> torch.Tensor:
    """B x N x N: query i may attend to real keys j <= i, and always to itself."""
    pad_mask = torch.as_tensor(pad_mask, dtype=torch.bool)
    n = pad_mask.shape[-1]
    causal = torch.ones(n, n, dtype=torch.bool).tril()
    eye = torch.eye(n, dtype=torch.bool)
    return (causal & pad_mask[:, None, :]) | eye


def masked_softmax(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    if not mask.any(-1).all():
        raise ValueError("attention row with no allowed key")
    return torch.softmax(logits.masked_fill(~mask, float("-inf")), dim=-1)


def scaled_dot_attention(q, k, v, mask, return_weights: bool = False):
    """Softmax(q k^T / sqrt(d)) v restricted to ``mask``; q, k, v are B x N x d."""
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    w = masked_softmax(logits, mask)
    out = w @ v
    return (out, w) if return_weights else out


def absolute_head(q, k, v, qa, ka, mask, return_weights: bool = False):
    """Attention(Q + Q^a, K + K^a, V); ``qa``/``ka`` broadcast over the batch."""
    return scaled_dot_attention(q + qa, k + ka, v, mask, return_weights)


def relative_head(q, k, v, R, w_r, b_r, mask, return_weights: bool = False):
    """Attention(Q, K, V) + Attention(Q + b^r, K^r, V) with ``K^r_ij = R_ij w_r^T``.

    ``R`` is B x N x N x c (raw kernel channels), ``w_r`` is d x c. The second
    score ``(q_i + b^r) . K^r_ij`` is computed as ``((q_i + b^r) w_r) . R_ij`` so
    K^r is never materialised.
    """
    plain, w1 = scaled_dot_attention(q, k, v, mask, return_weights=True)
    qr = (q + b_r) @ w_r
    logits = torch.einsum("bic,bijc->bij", qr, R) / math.sqrt(q.shape[-1])
    w2 = masked_softmax(logits, mask)
    out = plain + w2 @ v
    return (out, w2) if return_weights else out


def distance_head(q, k, v, G, mask, return_weights: bool = False):
    """Softmax(G * (q k^T / sqrt(d))) v."""
    logits = G * (q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]))
    w = masked_softmax(logits, mask)
    out = w @ v
    return (out, w) if return_weights else out


def dropout(x: torch.Tensor, p: float, training: bool, generator: torch.Generator | None = None):
    # own implementation so the training loop can own the RNG stream
    if not training or p == 0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep / (1 - p)


def predict_scores(hidden: torch.Tensor, item_table: torch.Tensor) -> torch.Tensor:
    """Dot-product logits over the vocabulary; the pad column is -inf."""
    logits = hidden @ item_table.T
    return logits.index_fill(-1, torch.tensor([0]), float("-inf"))


def default_head_dim(d_model: int, n_heads: int) -> int:
    """``d_model / H`` when that is an even integer, otherwise the next even width up."""
    d = math.ceil(d_model / n_heads)
    return d + (d % 2)


@dataclass
class ModelConfig:
    mode: str
    n_items: int
    d_model: int = 64
    n_layers: int = 2
    d_ff: int = 256
    max_len: int = 50
    dropout: float = 0.2
    head_dim: int | None = None
    pos_kind: str = "learnable"
    tau: float = 3600.0
    freq_base: float = 10000.0
    time_units: tuple[str, ...] = ("year", "month", "weekday", "hour")
    year_range: tuple[int, int] = (1990, 2030)
    bochner_scale: float = 86400.0
    t_min: int = 0
    sigma0: float = 0.017

    def __post_init__(self):
        self.time_units = tuple(self.time_units)
        self.year_range = tuple(self.year_range)

    @property
    def parsed_mode(self) -> EmbeddingMode:
        return parse_mode(self.mode)

    @property
    def d_head(self) -> int:
        return self.head_dim or default_head_dim(self.d_model, self.parsed_mode.n_heads)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncoderOutput:
    hidden: torch.Tensor
    layer_taps: list[torch.Tensor]
    attention_maps: list[dict[str, torch.Tensor]] = field(default_factory=list)


class MixAttentionLayer(nn.Module):
    def __init__(self, mode: EmbeddingMode, d_model: int, d_head: int, d_ff: int, p_drop: float):
        super().__init__()
        self.heads = mode.heads
        self.d_head = d_head
        width = len(self.heads) * d_head
        self.q = nn.Linear(d_model, width)
        self.k = nn.Linear(d_model, width)
        self.v = nn.Linear(d_model, width)
        self.abs_q = nn.ModuleDict({c: nn.Linear(d_head, d_head, bias=False) for c in mode.absolute_kernels})
        self.abs_k = nn.ModuleDict({c: nn.Linear(d_head, d_head, bias=False) for c in mode.absolute_kernels})
        rel = [c for c in mode.relative_kernels if c != "r"]
        self.rel_proj = nn.ModuleDict({c: nn.Linear(d_head, d_head, bias=False) for c in rel})
        self.rel_bias = nn.ParameterDict({c: nn.Parameter(torch.zeros(d_head)) for c in rel})
        self.out = nn.Linear(width, d_model)
        self.ffn_in = nn.Linear(d_model, d_ff)
        self.ffn_out = nn.Linear(d_ff, d_model)
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.p_drop = p_drop

    def forward(self, x, kernels: dict, mask, generator=None, return_attention=False):
        B, N, _ = x.shape
        q = self.q(x).view(B, N, -1, self.d_head)
        k = self.k(x).view(B, N, -1, self.d_head)
        v = self.v(x).view(B, N, -1, self.d_head)
        outs, maps = [], {}
        for h, letter in enumerate(self.heads):
            qh, kh, vh = q[:, :, h], k[:, :, h], v[:, :, h]
            if letter in ABSOLUTE:
                A = kernels[letter]
                out, w = absolute_head(qh, kh, vh, self.abs_q[letter](A), self.abs_k[letter](A), mask, True)
            elif letter == "r":
                out, w = distance_head(qh, kh, vh, kernels["r"], mask, True)
            else:
                out, w = relative_head(qh, kh, vh, kernels[letter], self.rel_proj[letter].weight,
                                       self.rel_bias[letter], mask, True)
            outs.append(out)
            if return_attention:
                maps[letter] = w.detach()
        a = self.out(torch.cat(outs, dim=-1))
        x = self.norm1(x + dropout(a, self.p_drop, self.training, generator))
        f = self.ffn_out(F.gelu(self.ffn_in(x)))
        x = self.norm2(x + dropout(f, self.p_drop, self.training, generator))
        return x, maps


def _trunc_normal_(t: torch.Tensor) -> None:
    nn.init.trunc_normal_(t, std=0.02, a=-0.04, b=0.04)


class ADRRec(nn.Module):
    """Item embedding -> noisy input projection -> L mix-attention layers -> tied readout."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        mode = cfg.parsed_mode
        self.mode = mode
        if cfg.n_layers < 1 or cfg.d_model < 1 or cfg.max_len < 1:
            raise ConfigError("d_model, n_layers and max_len must be positive")
        if not 0 <= cfg.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        d, dh = cfg.d_model, cfg.d_head
        if dh % 2 and ({"b", "s"} & set(mode.heads)):
            raise ConfigError(f"head width {dh} must be even for b/s kernels")
        self.item_emb = nn.Embedding(cfg.n_items + 1, d, padding_idx=0)
        self.embed = NoisyLinear(d, d, sigma0=cfg.sigma0, identity_init=True)
        self.input_norm = nn.LayerNorm(d)
        self.kernels = nn.ModuleDict()
        for c in mode.heads:
            if c == "p":
                self.kernels[c] = PositionalEmbedding(cfg.max_len, dh, cfg.pos_kind)
            elif c == "b":
                self.kernels[c] = BochnerTimeEmbedding(dh, cfg.t_min, cfg.bochner_scale)
            elif c == "t":
                self.kernels[c] = AbsoluteTimeEmbedding(dh, cfg.time_units, cfg.year_range)
            elif c == "s":
                self.kernels[c] = SinusoidDiffKernel(dh, cfg.freq_base)
            elif c == "e":
                self.kernels[c] = ExpDiffKernel(dh, cfg.freq_base)
            elif c == "l":
                self.kernels[c] = Log1pDiffKernel(dh, cfg.freq_base)
            elif c == "r":
                self.kernels[c] = GaussianDistanceWeights()
        self.layers = nn.ModuleList(
            MixAttentionLayer(mode, d, dh, cfg.d_ff, cfg.dropout) for _ in range(cfg.n_layers)
        )
        self._init_weights()

    def _init_weights(self) -> None:
        for m in self.modules():
            if isinstance(m, nn.Linear):
                _trunc_normal_(m.weight)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
        _trunc_normal_(self.item_emb.weight)
        with torch.no_grad():
            self.item_emb.weight[0].zero_()

    @property
    def item_table(self) -> torch.Tensor:
        return self.item_emb.weight

    @property
    def dtype(self) -> torch.dtype:
        return self.item_emb.weight.dtype

    def kernel_inputs(self, times: np.ndarray, pad_mask: torch.Tensor) -> dict[str, torch.Tensor]:
        N = times.shape[-1]
        out: dict[str, torch.Tensor] = {}
        D = None
        for c, mod in self.kernels.items():
            if c == "p":
                out[c] = mod(torch.arange(N))
            elif c == "b":
                out[c] = mod(times)
            elif c == "t":
                out[c] = mod(times, pad_mask.numpy())
            elif c == "r":
                out[c] = mod(N)
            else:
                if D is None:
                    D = time_diff_matrix(times, self.cfg.tau)
                out[c] = mod(D)
        return {c: t.to(self.dtype) for c, t in out.items()}

    def embedding_noise(self, items, eps) -> torch.Tensor:
        """Perturbation the noisy input layer adds under noise draw ``eps``."""
        return self.embed.perturbation(self.item_emb(torch.as_tensor(items)), eps)

    def forward(self, items, times, pad_mask, noise_input=None, generator=None,
                return_attention: bool = False) -> EncoderOutput:
        items = torch.as_tensor(np.asarray(items), dtype=torch.long)
        times = np.asarray(times, dtype=np.int64)
        pad_mask = torch.as_tensor(np.asarray(pad_mask), dtype=torch.bool)
        x = self.embed(self.item_emb(items))
        if noise_input is not None:
            x = x + noise_input
        h = dropout(self.input_norm(x), self.cfg.dropout, self.training, generator)
        kernels = self.kernel_inputs(times, pad_mask)
        mask = attention_mask(pad_mask)
        taps, maps = [], []
        for layer in self.layers:
            h, m = layer(h, kernels, mask, generator, return_attention)
            taps.append(h)
            maps.append(m)
        return EncoderOutput(h, taps, maps if return_attention else [])

    def score_candidates(self, items, times, pad_mask, candidates) -> torch.Tensor:
        """Scores of ``candidates`` (B x C item indices) from the last position's hidden state."""
        hidden = self.forward(items, times, pad_mask).hidden[:, -1]
        cand = self.item_table[torch.as_tensor(np.asarray(candidates), dtype=torch.long)]
        return torch.einsum("bd,bcd->bc", hidden, cand)
