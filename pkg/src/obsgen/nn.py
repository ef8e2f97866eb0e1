"""Transformer building blocks on top of the autodiff engine.

Post-norm residual blocks, additive -1e9 masking inside attention, inverted
dropout driven by a model-owned RNG. Everything is float64 and desk-scale:
sequences are 2D (length, hidden) with an explicit loop over attention heads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Parameter, Tensor
from .errors import ConfigError, NumericError

MASK_BIAS = -1e9
LAYER_NORM_EPS = 1e-5


@dataclass
class LayerConfig:
    """Shared transformer block dimensions."""

    hidden_size: int = 512
    num_heads: int = 8
    ffn_size: int = 512
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")


class Module:
    """Minimal parameter container; children discovered via attributes."""

    def named_parameters(self, prefix: str = ""):
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}" if prefix else attr
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{name}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(arrays)
        extra = set(arrays) - set(own)
        if missing or extra:
            raise ConfigError(
                f"parameter name mismatch; missing={sorted(missing)} extra={sorted(extra)}"
            )
        for name, p in own.items():
            if arrays[name].shape != p.data.shape:
                raise ConfigError(
                    f"shape mismatch for {name}: checkpoint {arrays[name].shape} "
                    f"vs model {p.data.shape}"
                )
            p.data = np.ascontiguousarray(arrays[name], dtype=np.float64)


def init_projection(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_embedding(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return rng.normal(0.0, 0.02, size=(rows, cols))


class Linear(Module):
    def __init__(self, rng, in_dim: int, out_dim: int):
        self.weight = Parameter(init_projection(rng, in_dim, out_dim))
        self.bias = Parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.weight) + self.bias


class Embedding(Module):
    def __init__(self, rng, rows: int, cols: int):
        self.table = Parameter(init_embedding(rng, rows, cols))

    def __call__(self, indices) -> Tensor:
        return ad.gather_rows(self.table, indices)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim))
        self.bias = Parameter(np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, eps=LAYER_NORM_EPS)


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator):
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        return ad.dropout(x, self.rate, self.rng, train)


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))


def mask_to_bias(mask: np.ndarray) -> np.ndarray:
    return np.where(mask, 0.0, MASK_BIAS)


class MultiHeadAttention(Module):
    """softmax((W_q q)(W_k k)^T / sqrt(d_head) + mask_bias) (W_v v), concatenated
    over heads and output-projected. Masked keys get exactly zero weight."""

    def __init__(self, rng, cfg: LayerConfig):
        self.num_heads = cfg.num_heads
        self.head_dim = cfg.hidden_size // cfg.num_heads
        self.wq = Linear(rng, cfg.hidden_size, cfg.hidden_size)
        self.wk = Linear(rng, cfg.hidden_size, cfg.hidden_size)
        self.wv = Linear(rng, cfg.hidden_size, cfg.hidden_size)
        self.wo = Linear(rng, cfg.hidden_size, cfg.hidden_size)
        self.drop = Dropout(cfg.dropout_rate, rng)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor,
                 mask: np.ndarray | None = None, train: bool = False,
                 weights_out: list | None = None) -> Tensor:
        lq, lk = q.data.shape[0], k.data.shape[0]
        if k.data.shape[0] != v.data.shape[0]:
            raise NumericError(
                f"key/value row counts differ: {k.data.shape} vs {v.data.shape}"
            )
        bias = None
        if mask is not None:
            if mask.shape != (lq, lk):
                raise NumericError(f"mask shape {mask.shape} != ({lq}, {lk})")
            if not mask.any(axis=1).all():
                raise NumericError("fully masked query row")
            bias = ad.constant(mask_to_bias(mask))
        qp, kp, vp = self.wq(q), self.wk(k), self.wv(v)
        scale = 1.0 / math.sqrt(self.head_dim)
        heads = []
        for h in range(self.num_heads):
            a, b = h * self.head_dim, (h + 1) * self.head_dim
            qh = ad.slice_cols(qp, a, b)
            kh = ad.slice_cols(kp, a, b)
            vh = ad.slice_cols(vp, a, b)
            scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), scale)
            if bias is not None:
                scores = scores + bias
            probs = ad.softmax_rows(scores)
            if weights_out is not None:
                weights_out.append(probs.data.copy())
            probs = self.drop(probs, train)
            heads.append(ad.matmul(probs, vh))
        return self.wo(ad.concat_cols(heads))


class FeedForward(Module):
    def __init__(self, rng, cfg: LayerConfig):
        self.lin1 = Linear(rng, cfg.hidden_size, cfg.ffn_size)
        self.lin2 = Linear(rng, cfg.ffn_size, cfg.hidden_size)
        self.drop = Dropout(cfg.dropout_rate, rng)

    def __call__(self, x: Tensor, train: bool = False) -> Tensor:
        return self.lin2(self.drop(ad.relu(self.lin1(x)), train))


class EncoderLayer(Module):
    """Self-attention + FFN, post-norm residuals; mask optional (adjacency etc.)."""

    def __init__(self, rng, cfg: LayerConfig):
        self.attn = MultiHeadAttention(rng, cfg)
        self.norm1 = LayerNorm(cfg.hidden_size)
        self.ffn = FeedForward(rng, cfg)
        self.norm2 = LayerNorm(cfg.hidden_size)
        self.drop = Dropout(cfg.dropout_rate, rng)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None,
                 train: bool = False, weights_out: list | None = None) -> Tensor:
        a = self.attn(x, x, x, mask=mask, train=train, weights_out=weights_out)
        x = self.norm1(x + self.drop(a, train))
        f = self.ffn(x, train)
        return self.norm2(x + self.drop(f, train))


class DecoderLayer(Module):
    """Causal self-attention, one cross-attention over memory, FFN."""

    def __init__(self, rng, cfg: LayerConfig):
        self.self_attn = MultiHeadAttention(rng, cfg)
        self.norm1 = LayerNorm(cfg.hidden_size)
        self.cross_attn = MultiHeadAttention(rng, cfg)
        self.norm2 = LayerNorm(cfg.hidden_size)
        self.ffn = FeedForward(rng, cfg)
        self.norm3 = LayerNorm(cfg.hidden_size)
        self.drop = Dropout(cfg.dropout_rate, rng)

    def __call__(self, x: Tensor, memory: Tensor, train: bool = False) -> Tensor:
        a = self.self_attn(x, x, x, mask=causal_mask(x.data.shape[0]), train=train)
        x = self.norm1(x + self.drop(a, train))
        c = self.cross_attn(x, memory, memory, train=train)
        x = self.norm2(x + self.drop(c, train))
        f = self.ffn(x, train)
        return self.norm3(x + self.drop(f, train))


class AdamW(Module):
    """Decoupled-weight-decay adaptive optimizer with linear lr decay to zero."""

    def __init__(self, params: list[Parameter], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, total_steps: int | None = None):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.total_steps = total_steps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in params]
        self._v = [np.zeros_like(p.data) for p in params]

    def current_lr(self) -> float:
        if not self.total_steps:
            return self.lr
        frac = max(0.0, 1.0 - self.t / self.total_steps)
        return self.lr * frac

    def step(self) -> None:
        lr = self.current_lr()
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            kernels.adamw_update(p.data, p.grad, m, v, lr, self.beta1, self.beta2,
                                 self.eps, self.weight_decay, bc1, bc2)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
