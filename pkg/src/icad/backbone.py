"""Prompt-guided representation module.

Sequences are assembled as

    inference: [prompt; refs; REF; target; TGT]
    training:  [prompt; refs; REF; positive; TGT; negative; NEG]

and passed through a causal transformer. The final hidden states at the
special-token positions are the representations of the reference set, the
target and the negative. Because attention is causal, the REF readout
depends only on the prompt and the references, so the inference sequence
is a prefix of the training sequence with the same REF state.
"""

import math
from dataclasses import dataclass
from typing import Optional, Protocol

import torch
from torch import nn
import torch.nn.functional as F

from .common import ContractError, NumericError, ShapeMismatchError


class Backbone(Protocol):
    """Anything mapping a (B, T, d_model) sequence to hidden states of the same shape."""

    d_model: int

    def __call__(self, sequence: torch.Tensor, pad_to: Optional[int] = None) -> torch.Tensor: ...


@dataclass(frozen=True)
class Anchors:
    """Positions of the special tokens within an assembled sequence."""

    ref: int
    target: int
    negative: Optional[int] = None
    length: int = 0


@dataclass
class RepresentationPair:
    """Final hidden states read at the anchors, each (B, d_model)."""

    h_ref: torch.Tensor
    h_target: torch.Tensor
    h_negative: Optional[torch.Tensor] = None


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=-1)
        q = q.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        future = torch.triu(torch.ones(t, t, dtype=torch.bool, device=x.device), diagonal=1)
        # Masked weights are exactly zero, so later positions never leak backwards
        weights = F.softmax(scores.masked_fill(future, float("-inf")), dim=-1)
        y = (weights @ v).transpose(1, 2).reshape(b, t, d)
        return self.out(y)


class Block(nn.Module):
    """Pre-norm residual block: attention then MLP."""

    def __init__(self, d_model: int, n_heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = CausalSelfAttention(d_model, n_heads)
        self.ln2 = nn.LayerNorm(d_model)
        self.mlp = nn.Sequential(
            nn.Linear(d_model, mlp_ratio * d_model),
            nn.GELU(),
            nn.Linear(mlp_ratio * d_model, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.mlp(self.ln2(x))


class CausalTransformer(nn.Module):
    """Decoder-style backbone with learned absolute positions.

    With zero layers the backbone is the identity map (no positions added).
    In static-length mode every sequence is right-padded (to ``pad_to`` if
    given, else ``max_seq_len``) so forwards over one reference set share a
    shape. Padding sits after every anchor and cannot influence it, and equal
    shapes make the readouts at shared prefix positions bit-identical.
    """

    def __init__(
        self,
        d_model: int,
        n_layers: int = 4,
        n_heads: int = 4,
        mlp_ratio: int = 4,
        max_seq_len: int = 1024,
        static_length: bool = True,
    ):
        super().__init__()
        self.d_model = d_model
        self.n_layers = n_layers
        self.max_seq_len = max_seq_len
        self.static_length = static_length
        self.positions = nn.Parameter(torch.randn(max_seq_len, d_model) * 0.02) if n_layers else None
        self.blocks = nn.ModuleList(Block(d_model, n_heads, mlp_ratio) for _ in range(n_layers))
        self.ln_f = nn.LayerNorm(d_model) if n_layers else None

    def forward(self, sequence: torch.Tensor, pad_to: Optional[int] = None) -> torch.Tensor:
        if sequence.dim() == 2:
            return self.forward(sequence.unsqueeze(0), pad_to).squeeze(0)
        b, t, d = sequence.shape
        if d != self.d_model:
            raise ShapeMismatchError("backbone input width", self.d_model, d)
        if t > self.max_seq_len:
            raise ShapeMismatchError("sequence length", f"<= {self.max_seq_len}", t)
        if self.n_layers == 0:
            return sequence

        x = sequence
        if self.static_length:
            length = self.max_seq_len if pad_to is None else pad_to
            if not t <= length <= self.max_seq_len:
                raise ShapeMismatchError("padded length", f"{t}..{self.max_seq_len}", length)
            if t < length:
                x = F.pad(x, (0, 0, 0, length - t))
        x = x + self.positions[: x.shape[1]]
        for i, block in enumerate(self.blocks):
            x = block(x)
            if not torch.isfinite(x).all():
                bad = (~torch.isfinite(x)).any(dim=-1).nonzero()
                raise NumericError(
                    f"non-finite activations after layer {i}",
                    {
                        "layer": i,
                        "positions": bad[:8].tolist(),
                        "input_abs_max": float(sequence.detach().abs().max()),
                    },
                )
        return self.ln_f(x)[:, :t]


class SpecialTokens(nn.Module):
    """Learnable REF, TGT and NEG anchor embeddings, each (1, d_model)."""

    def __init__(self, d_model: int):
        super().__init__()
        self.ref = nn.Parameter(torch.randn(1, d_model) * 0.02)
        self.target = nn.Parameter(torch.randn(1, d_model) * 0.02)
        self.negative = nn.Parameter(torch.randn(1, d_model) * 0.02)


class LearnedPrompt(nn.Module):
    """L learned vectors standing in for the tokenized instruction."""

    def __init__(self, length: int, d_model: int):
        super().__init__()
        if length < 1:
            raise ContractError(f"prompt length must be >= 1, got {length}")
        self.vectors = nn.Parameter(torch.randn(length, d_model) * 0.02)

    def forward(self) -> torch.Tensor:
        return self.vectors


def _check_block(name: str, block: torch.Tensor, d_model: int, allow_empty: bool = False) -> None:
    if block is None:
        raise ContractError(f"missing {name} block")
    if block.dim() != 2 or block.shape[1] != d_model:
        raise ShapeMismatchError(f"{name} block", f"(n, {d_model})", tuple(block.shape))
    if block.shape[0] == 0 and not allow_empty:
        raise ContractError(f"{name} block is empty")


def train_sequence_length(prompt_len: int, ref_tokens: int, n_tokens: int) -> int:
    """Length of [prompt; refs; REF; positive; TGT; negative; NEG], the longest layout."""
    return prompt_len + ref_tokens + 2 * n_tokens + 3


def assemble_prefix(prompt: torch.Tensor, e_ref: torch.Tensor, tokens: SpecialTokens) -> tuple[torch.Tensor, Anchors]:
    """Assemble [prompt; refs; REF], the part the reference readout depends on."""
    d_model = tokens.ref.shape[1]
    _check_block("prompt", prompt, d_model)
    _check_block("reference", e_ref, d_model)
    sequence = torch.cat([prompt, e_ref, tokens.ref])
    ref_pos = sequence.shape[0] - 1
    return sequence, Anchors(ref=ref_pos, target=-1, length=sequence.shape[0])


def assemble_inference_sequence(
    prompt: torch.Tensor,
    e_ref: torch.Tensor,
    e_tgt: torch.Tensor,
    tokens: SpecialTokens,
) -> tuple[torch.Tensor, Anchors]:
    """Assemble [prompt; refs; REF; target; TGT] and locate its anchors.

    Raises:
        ContractError: If the reference block is empty.
        ShapeMismatchError: If block widths differ.
    """
    prefix, anchors = assemble_prefix(prompt, e_ref, tokens)
    _check_block("target", e_tgt, prefix.shape[1])
    sequence = torch.cat([prefix, e_tgt, tokens.target])
    return sequence, Anchors(ref=anchors.ref, target=sequence.shape[0] - 1, length=sequence.shape[0])


def assemble_train_sequence(
    prompt: torch.Tensor,
    e_ref: torch.Tensor,
    e_tgt: torch.Tensor,
    e_neg: torch.Tensor,
    tokens: SpecialTokens,
) -> tuple[torch.Tensor, Anchors]:
    """Assemble [prompt; refs; REF; positive; TGT; negative; NEG].

    The positive sample sits in the target slot; the inference sequence
    built from the same blocks is a strict prefix of the result.
    """
    inference, anchors = assemble_inference_sequence(prompt, e_ref, e_tgt, tokens)
    _check_block("negative", e_neg, inference.shape[1])
    sequence = torch.cat([inference, e_neg, tokens.negative])
    return sequence, Anchors(
        ref=anchors.ref,
        target=anchors.target,
        negative=sequence.shape[0] - 1,
        length=sequence.shape[0],
    )


def extract_representations(hidden: torch.Tensor, anchors: Anchors) -> RepresentationPair:
    """Read hidden states at the anchors.

    Args:
        hidden: (T, d_model) or (B, T, d_model) final hidden states.
        anchors: Anchor positions shared by the batch.

    Raises:
        ContractError: If an anchor is out of range.
    """
    batched = hidden if hidden.dim() == 3 else hidden.unsqueeze(0)
    length = batched.shape[1]
    positions = [anchors.ref, anchors.target] + ([anchors.negative] if anchors.negative is not None else [])
    for pos in positions:
        if pos is not None and pos >= 0 and pos >= length:
            raise ContractError(f"anchor {pos} out of range for length {length}")
    if anchors.ref < 0:
        raise ContractError("reference anchor missing")

    def take(pos):
        if pos is None or pos < 0:
            return None
        out = batched[:, pos]
        return out if hidden.dim() == 3 else out[0]

    return RepresentationPair(
        h_ref=take(anchors.ref),
        h_target=take(anchors.target),
        h_negative=take(anchors.negative),
    )
