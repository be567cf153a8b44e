"""Modality-aware encoders projecting samples into the shared d_model space.

Output lengths per sample:
- time series: p vectors (one per time step of the patch)
- tabular: 1 vector
- log: w vectors (one per template id of the window)
"""

from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .common import DataError, ModalityMismatchError, NumericError, ShapeMismatchError
from .ingest import Modality, Sample


INSTANCE_NORM_EPS = 1e-5


def instance_norm(x: torch.Tensor, eps: float = INSTANCE_NORM_EPS) -> torch.Tensor:
    """Normalize each channel of a (..., p, d_raw) patch over time.

    A constant channel normalizes to zeros.
    """
    mean = x.mean(dim=-2, keepdim=True)
    var = x.var(dim=-2, keepdim=True, unbiased=False)
    return (x - mean) / torch.sqrt(var + eps)


class TimeEncoder(nn.Module):
    """Instance norm followed by 1-D convolutions over time (same padding)."""

    def __init__(self, d_raw: int, d_model: int, kernel: int = 3, layers: int = 1, eps: float = INSTANCE_NORM_EPS):
        super().__init__()
        self.d_raw = d_raw
        self.eps = eps
        convs = [nn.Conv1d(d_raw, d_model, kernel, padding=kernel // 2)]
        for _ in range(layers - 1):
            convs.append(nn.GELU())
            convs.append(nn.Conv1d(d_model, d_model, kernel, padding=kernel // 2))
        self.convs = nn.Sequential(*convs)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # (B, p, d_raw) -> (B, p, d_model)
        z = instance_norm(x, self.eps)
        return self.convs(z.transpose(1, 2)).transpose(1, 2)


class TabEncoder(nn.Module):
    """Two-layer perceptron mapping an F' row to one d_model vector."""

    def __init__(self, f_prime: int, d_model: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(f_prime, 2 * d_model),
            nn.GELU(),
            nn.Linear(2 * d_model, d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        # (B, F') -> (B, 1, d_model)
        return self.net(x).unsqueeze(1)


class LogEncoder(nn.Module):
    """Template-id embedding refined by a shallow bidirectional encoder.

    Ids at or above ``vocab_size`` share one reserved rare bucket.
    """

    def __init__(self, vocab_size: int, w: int, d_model: int, layers: int = 2, heads: int = 4):
        super().__init__()
        self.vocab_size = vocab_size
        self.rare_id = vocab_size
        self.embedding = nn.Embedding(vocab_size + 1, d_model)
        self.positions = nn.Parameter(torch.randn(w, d_model) * 0.02)
        if layers > 0:
            layer = nn.TransformerEncoderLayer(
                d_model,
                heads,
                dim_feedforward=2 * d_model,
                dropout=0.0,
                activation="gelu",
                batch_first=True,
                norm_first=True,
            )
            self.encoder = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)
        else:
            self.encoder = nn.Identity()

    def bucket(self, ids: torch.Tensor) -> torch.Tensor:
        if (ids < 0).any():
            raise DataError("negative template id")
        return torch.where(ids >= self.vocab_size, torch.full_like(ids, self.rare_id), ids)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        # (B, w) -> (B, w, d_model)
        h = self.embedding(self.bucket(ids)) + self.positions[: ids.shape[1]]
        return self.encoder(h)


class ModalityEncoder(nn.Module):
    """Routes samples to their modality branch.

    Branches exist only for modalities whose shape settings are known.
    """

    def __init__(
        self,
        d_model: int,
        *,
        p: Optional[int] = None,
        d_raw: Optional[int] = None,
        f_prime: Optional[int] = None,
        w: Optional[int] = None,
        vocab_size: Optional[int] = None,
        time_kernel: int = 3,
        time_conv_layers: int = 1,
        norm_eps: float = INSTANCE_NORM_EPS,
        log_layers: int = 2,
        log_heads: int = 4,
    ):
        super().__init__()
        self.d_model = d_model
        self.p = p
        self.d_raw = d_raw
        self.f_prime = f_prime
        self.w = w
        self.branches = nn.ModuleDict()
        if p is not None and d_raw is not None:
            self.branches[Modality.TIME_SERIES.value] = TimeEncoder(
                d_raw, d_model, time_kernel, time_conv_layers, norm_eps
            )
        if f_prime is not None:
            self.branches[Modality.TABULAR.value] = TabEncoder(f_prime, d_model)
        if w is not None and vocab_size is not None:
            self.branches[Modality.LOG.value] = LogEncoder(vocab_size, w, d_model, log_layers, log_heads)

    def expected_shape(self, modality: Modality) -> tuple:
        if modality is Modality.TIME_SERIES:
            return (self.p, self.d_raw)
        if modality is Modality.TABULAR:
            return (self.f_prime,)
        return (self.w,)

    def tokens_per_sample(self, modality: Modality) -> int:
        """Length N of one sample's embedding sequence."""
        return {Modality.TIME_SERIES: self.p, Modality.TABULAR: 1, Modality.LOG: self.w}[modality]

    def _branch(self, modality: Modality) -> nn.Module:
        if modality.value not in self.branches:
            raise ModalityMismatchError(f"model has no encoder for modality {modality.value}")
        return self.branches[modality.value]

    def to_tensor(self, modality: Modality, payloads: Sequence[np.ndarray]) -> torch.Tensor:
        """Stack payloads into a batch tensor, checking shapes."""
        expected = self.expected_shape(modality)
        for payload in payloads:
            if tuple(payload.shape) != expected:
                raise ShapeMismatchError(f"{modality.value} sample", expected, tuple(payload.shape))
        stacked = np.stack(payloads)
        if modality is Modality.LOG:
            return torch.as_tensor(stacked, dtype=torch.long)
        dtype = next(self.parameters()).dtype
        return torch.as_tensor(stacked, dtype=dtype)

    def encode_payloads(self, modality: Modality, x: torch.Tensor) -> torch.Tensor:
        """Encode a batch tensor into (B, N, d_model)."""
        modality = Modality(modality)
        out = self._branch(modality)(x)
        if not torch.isfinite(out).all():
            raise NumericError(
                f"non-finite {modality.value} embedding",
                {"modality": modality.value},
            )
        return out

    def encode(self, samples: Sequence[Sample]) -> torch.Tensor:
        """Encode samples of one modality into (B, N, d_model)."""
        if not samples:
            raise ShapeMismatchError("sample batch", "at least 1 sample", 0)
        modality = samples[0].modality
        if any(s.modality is not modality for s in samples):
            raise ModalityMismatchError("samples in one batch must share a modality")
        self._branch(modality)
        return self.encode_payloads(modality, self.to_tensor(modality, [s.payload for s in samples]))

    def encode_reference_set(self, refs: Sequence[Sample]) -> torch.Tensor:
        """Encode K references and concatenate them in selection order.

        Returns:
            (sum of N over refs, d_model) tensor.

        Raises:
            ModalityMismatchError: If refs mix modalities or datasets.
        """
        if not refs:
            raise ShapeMismatchError("reference set", "K >= 1 samples", 0)
        if len({s.modality for s in refs}) != 1 or len({s.dataset_id for s in refs}) != 1:
            raise ModalityMismatchError("reference samples must share one modality and dataset")
        encoded = self.encode(refs)
        return encoded.reshape(-1, encoded.shape[-1])
