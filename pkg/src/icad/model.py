"""The ICAD model: encoders, prompt, special tokens and causal backbone."""

import logging
from typing import Iterable, Optional, Sequence

import torch
from torch import nn

from .backbone import (
    Anchors,
    CausalTransformer,
    LearnedPrompt,
    RepresentationPair,
    SpecialTokens,
    assemble_inference_sequence,
    assemble_prefix,
    assemble_train_sequence,
    extract_representations,
    train_sequence_length,
)
from .common import ConfigError, ContractError
from .config import ModelConfig
from .encoder import ModalityEncoder
from .ingest import DatasetHandle, Modality, Sample

logger = logging.getLogger(__name__)


def resolve_model_config(config: ModelConfig, datasets: Iterable[DatasetHandle]) -> ModelConfig:
    """Fill unset shape settings from the prepared datasets.

    Explicit settings must agree with every dataset of their modality.

    Raises:
        ConfigError: If datasets of one modality disagree on a shape.
    """
    found: dict[str, set] = {"p": set(), "d_raw": set(), "F_prime": set(), "w": set()}
    vocab = 0
    for ds in datasets:
        samples = ds.train_normals or ds.test
        if not samples:
            continue
        shape = samples[0].payload.shape
        if ds.modality is Modality.TIME_SERIES:
            found["p"].add(shape[0])
            found["d_raw"].add(shape[1])
        elif ds.modality is Modality.TABULAR:
            found["F_prime"].add(shape[0])
        else:
            found["w"].add(shape[0])
            vocab = max(vocab, ds.vocab_size or 0)

    resolved = ModelConfig(**config.to_dict())
    for key, values in found.items():
        current = getattr(resolved, key)
        if current is not None:
            if values - {current}:
                raise ConfigError(f"model.{key}", f"datasets use {sorted(values)}, config says {current}")
            continue
        if len(values) > 1:
            raise ConfigError(f"model.{key}", f"datasets disagree: {sorted(values)}")
        if values:
            setattr(resolved, key, values.pop())
    if found["w"] and resolved.vocab_size is None:
        resolved.vocab_size = vocab
    return resolved.validate()


class ICADModel(nn.Module):
    """Scores a target against a reference set through a shared backbone."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.encoder = ModalityEncoder(
            d,
            p=config.p,
            d_raw=config.d_raw,
            f_prime=config.F_prime,
            w=config.w,
            vocab_size=config.vocab_size,
            time_kernel=config.time_kernel,
            time_conv_layers=config.time_conv_layers,
            norm_eps=config.norm_eps,
            log_layers=config.log_layers,
            log_heads=config.log_heads,
        )
        self.prompt = LearnedPrompt(config.prompt_len, d)
        self.tokens = SpecialTokens(d)
        self.backbone = CausalTransformer(
            d,
            n_layers=config.n_layers,
            n_heads=config.n_heads,
            mlp_ratio=config.mlp_ratio,
            max_seq_len=config.max_seq_len,
            static_length=config.static_length,
        )

    @property
    def d_model(self) -> int:
        return self.config.d_model

    @property
    def modalities(self) -> list[Modality]:
        return [Modality(name) for name in self.encoder.branches]

    def encode_reference_set(self, refs: Sequence[Sample]) -> torch.Tensor:
        return self.encoder.encode_reference_set(refs)

    def encode_sample(self, sample: Sample) -> torch.Tensor:
        """(N, d_model) embedding sequence of one sample."""
        return self.encoder.encode([sample])[0]

    def padded_length(self, ref_tokens: int, n_tokens: int) -> Optional[int]:
        """Shared forward length for one reference set in static-length mode."""
        if not self.config.static_length:
            return None
        return train_sequence_length(self.config.prompt_len, ref_tokens, n_tokens)

    def _forward(self, sequences: torch.Tensor, ref_tokens: int, n_tokens: int, rows: int) -> torch.Tensor:
        """Backbone over (B, T, d) sequences, repeating the last row up to ``rows``."""
        if sequences.shape[0] < rows:
            filler = sequences[-1:].expand(rows - sequences.shape[0], -1, -1)
            sequences = torch.cat([sequences, filler])
        return self.backbone(sequences, pad_to=self.padded_length(ref_tokens, n_tokens))

    def reference_representation(self, e_ref: torch.Tensor, n_tokens: int, rows: int = 1) -> torch.Tensor:
        """h_R from a forward over [prompt; refs; REF] only.

        ``rows`` sets the batch size of that forward, so it can match the
        batched target forwards it is compared against.
        """
        sequence, anchors = assemble_prefix(self.prompt(), e_ref, self.tokens)
        hidden = self._forward(sequence.unsqueeze(0), e_ref.shape[0], n_tokens, rows)
        return extract_representations(hidden, anchors).h_ref[0]

    def inference_batch(
        self,
        e_ref: torch.Tensor,
        targets: Sequence[Sample],
        rows: Optional[int] = None,
    ) -> RepresentationPair:
        """h_R and h_x from one forward over the inference sequences of ``targets``.

        Args:
            e_ref: (K*N, d_model) reference embeddings.
            targets: Samples of the reference set's modality.
            rows: Batch size of the forward (>= len(targets)); missing rows
                repeat the last target and are dropped from the result.

        Returns:
            RepresentationPair of (len(targets), d_model) tensors.
        """
        if not targets:
            raise ContractError("no targets to represent")
        rows = rows or len(targets)
        if rows < len(targets):
            raise ContractError(f"{len(targets)} targets do not fit in {rows} rows")
        e_tgt = self.encoder.encode(list(targets))
        prompt = self.prompt()
        sequences = []
        anchors: Anchors = None
        for i in range(len(targets)):
            sequence, anchors = assemble_inference_sequence(prompt, e_ref, e_tgt[i], self.tokens)
            sequences.append(sequence)
        hidden = self._forward(torch.stack(sequences), e_ref.shape[0], e_tgt.shape[1], rows)
        return extract_representations(hidden[: len(targets)], anchors)

    def inference_representations(self, e_ref: torch.Tensor, target: Sample) -> RepresentationPair:
        """h_R and h_x from the full inference sequence of one target."""
        reps = self.inference_batch(e_ref, [target])
        return RepresentationPair(h_ref=reps.h_ref[0], h_target=reps.h_target[0])

    def forward(
        self,
        refs: Sequence[Sequence[Sample]],
        positives: Sequence[Sample],
        negatives: Sequence[Sample],
    ) -> RepresentationPair:
        return self.train_representations(refs, positives, negatives)

    def train_representations(
        self,
        refs: Sequence[Sequence[Sample]],
        positives: Sequence[Sample],
        negatives: Sequence[Sample],
    ) -> RepresentationPair:
        """Batched h_R, h_pos and h_neg for B triplets of one modality.

        Returns:
            RepresentationPair of (B, d_model) tensors.
        """
        batch = len(positives)
        if batch == 0 or len(refs) != batch or len(negatives) != batch:
            raise ContractError("triplet batch components must have equal, non-zero length")
        k = len(refs[0])
        if any(len(r) != k for r in refs):
            raise ContractError("all reference sets in a batch must have the same size")

        flat_refs = [s for r in refs for s in r]
        e_refs = self.encoder.encode(flat_refs).reshape(batch, -1, self.d_model)
        e_pos = self.encoder.encode(list(positives))
        e_neg = self.encoder.encode(list(negatives))

        prompt = self.prompt()
        sequences = []
        anchors: Anchors = None
        for i in range(batch):
            sequence, anchors = assemble_train_sequence(prompt, e_refs[i], e_pos[i], e_neg[i], self.tokens)
            sequences.append(sequence)
        hidden = self._forward(torch.stack(sequences), e_refs.shape[1], e_pos.shape[1], batch)
        return extract_representations(hidden, anchors)
