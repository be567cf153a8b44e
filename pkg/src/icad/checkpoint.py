"""Versioned checkpoint container.

File layout:
    8 bytes   magic b"ICADCKPT"
    4 bytes   format version (big-endian)
    32 bytes  SHA-256 of the payload
    rest      msgpack payload

The payload holds every learnable parameter keyed by module, optimizer
moments, the model and run configuration, the template-inventory
reference, and the numpy and torch RNG states. Serialization is
deterministic, so save -> load -> save reproduces the file byte for byte.
"""

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import msgpack
import numpy as np
import torch

from .common import (
    PRODUCER,
    CheckpointError,
    CheckpointIntegrityError,
    CheckpointVersionError,
    ShapeMismatchError,
    utc_now_z,
)

MAGIC = b"ICADCKPT"
FORMAT_VERSION = 1
_HEADER_SIZE = len(MAGIC) + 4 + 32

_TENSOR_TAG = "__tensor__"


def _pack_tensor(t: torch.Tensor) -> dict:
    array = t.detach().cpu().contiguous().numpy()
    return {
        _TENSOR_TAG: True,
        "dtype": str(array.dtype),
        "shape": list(array.shape),
        "data": array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes(),
    }


def _unpack_tensor(data: dict) -> torch.Tensor:
    array = np.frombuffer(data["data"], dtype=np.dtype(data["dtype"]).newbyteorder("<"))
    array = array.astype(np.dtype(data["dtype"]), copy=True).reshape(data["shape"])
    return torch.from_numpy(array)


def _pack(obj: Any) -> Any:
    if isinstance(obj, torch.Tensor):
        return _pack_tensor(obj)
    if isinstance(obj, dict):
        return {k: _pack(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pack(v) for v in obj]
    return obj


def _unpack(obj: Any) -> Any:
    if isinstance(obj, dict):
        if obj.get(_TENSOR_TAG) is True:
            return _unpack_tensor(obj)
        return {k: _unpack(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_unpack(v) for v in obj]
    return obj


def _group_by_module(state: dict) -> dict:
    grouped: dict[str, dict] = {}
    for name, tensor in state.items():
        module, _, rest = name.partition(".")
        grouped.setdefault(module, {})[rest] = _pack_tensor(tensor)
    return grouped


def _flatten_modules(grouped: dict) -> dict:
    return {
        f"{module}.{rest}": entry
        for module, params in grouped.items()
        for rest, entry in params.items()
    }


@dataclass
class Checkpoint:
    """In-memory form of a checkpoint; tensors kept packed until restored."""

    model_config: dict
    parameters: dict
    optimizer: Optional[dict] = None
    run_config: dict = field(default_factory=dict)
    rng: dict = field(default_factory=dict)
    step: int = 0
    epoch: int = 0
    inventory_ref: Optional[str] = None
    datasets: list = field(default_factory=list)
    created_at: str = field(default_factory=utc_now_z)
    producer: dict = field(default_factory=lambda: dict(PRODUCER))

    @classmethod
    def capture(
        cls,
        model: torch.nn.Module,
        optimizer: Optional[torch.optim.Optimizer] = None,
        *,
        run_config: Optional[dict] = None,
        np_rng: Optional[np.random.Generator] = None,
        step: int = 0,
        epoch: int = 0,
        inventory_ref: Optional[str] = None,
        datasets: Optional[list] = None,
    ) -> "Checkpoint":
        """Snapshot a model (and optimizer) into a checkpoint."""
        rng = {"torch": _pack_tensor(torch.get_rng_state())}
        if np_rng is not None:
            # PCG64 state integers exceed 64 bits; JSON keeps them exact
            rng["numpy"] = json.dumps(np_rng.bit_generator.state, sort_keys=True)
        return cls(
            model_config=model.config.to_dict(),
            parameters=_group_by_module(model.state_dict()),
            optimizer=_pack(optimizer.state_dict()) if optimizer is not None else None,
            run_config=run_config or {},
            rng=rng,
            step=step,
            epoch=epoch,
            inventory_ref=inventory_ref,
            datasets=list(datasets or []),
        )

    def restore_model(self, model: torch.nn.Module) -> None:
        """Load parameters into a model, all or nothing.

        Raises:
            ShapeMismatchError: If any parameter is missing, extra or misshaped.
        """
        saved = _flatten_modules(self.parameters)
        current = model.state_dict()
        if set(saved) != set(current):
            missing = sorted(set(current) - set(saved))
            extra = sorted(set(saved) - set(current))
            raise ShapeMismatchError("checkpoint parameters", f"missing={missing[:3]}", f"extra={extra[:3]}")
        for name, entry in saved.items():
            if list(current[name].shape) != list(entry["shape"]):
                raise ShapeMismatchError(name, tuple(current[name].shape), tuple(entry["shape"]))
        state = {name: _unpack_tensor(entry).to(current[name].dtype) for name, entry in saved.items()}
        model.load_state_dict(state)

    def restore_optimizer(self, optimizer: torch.optim.Optimizer) -> None:
        if self.optimizer is None:
            raise CheckpointError(None, "checkpoint holds no optimizer state")
        state = _unpack(self.optimizer)
        state["state"] = {int(k): v for k, v in state["state"].items()}
        optimizer.load_state_dict(state)

    def restore_rng(self) -> Optional[np.random.Generator]:
        """Restore the torch RNG and return a numpy generator in the saved state."""
        if "torch" in self.rng:
            torch.set_rng_state(_unpack_tensor(self.rng["torch"]).to(torch.uint8))
        if "numpy" not in self.rng:
            return None
        rng = np.random.default_rng()
        rng.bit_generator.state = json.loads(self.rng["numpy"])
        return rng

    def to_payload(self) -> dict:
        return {
            "schema_name": "icad.checkpoint",
            "format_version": FORMAT_VERSION,
            "producer": self.producer,
            "created_at": self.created_at,
            "step": self.step,
            "epoch": self.epoch,
            "model_config": self.model_config,
            "run_config": self.run_config,
            "inventory_ref": self.inventory_ref,
            "datasets": self.datasets,
            "parameters": self.parameters,
            "optimizer": self.optimizer,
            "rng": self.rng,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Checkpoint":
        return cls(
            model_config=payload["model_config"],
            parameters=payload["parameters"],
            optimizer=payload.get("optimizer"),
            run_config=payload.get("run_config", {}),
            rng=payload.get("rng", {}),
            step=payload.get("step", 0),
            epoch=payload.get("epoch", 0),
            inventory_ref=payload.get("inventory_ref"),
            datasets=payload.get("datasets", []),
            created_at=payload["created_at"],
            producer=payload["producer"],
        )


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    payload = msgpack.packb(checkpoint.to_payload(), use_bin_type=True)
    return MAGIC + FORMAT_VERSION.to_bytes(4, "big") + hashlib.sha256(payload).digest() + payload


def decode_checkpoint(data: bytes, path: Optional[Path] = None) -> Checkpoint:
    """Parse checkpoint bytes, verifying magic, version and checksum."""
    if len(data) < _HEADER_SIZE or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(path, "not an ICAD checkpoint")
    version = int.from_bytes(data[len(MAGIC) : len(MAGIC) + 4], "big")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(path, f"format version {version}, expected {FORMAT_VERSION}")
    digest = data[len(MAGIC) + 4 : _HEADER_SIZE]
    payload = data[_HEADER_SIZE:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointIntegrityError(path, "payload checksum mismatch")
    try:
        decoded = msgpack.unpackb(payload, raw=False, strict_map_key=False)
        return Checkpoint.from_payload(decoded)
    except (ValueError, KeyError, TypeError, msgpack.UnpackException) as e:
        raise CheckpointError(path, f"unreadable payload: {e}")


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> str:
    """Write a checkpoint atomically.

    Returns:
        Digest reference of the written file.
    """
    path = Path(path)
    data = encode_checkpoint(checkpoint)
    path.parent.mkdir(parents=True, exist_ok=True)
    temp_path = path.with_suffix(f".tmp.{os.getpid()}")
    try:
        temp_path.write_bytes(data)
        temp_path.replace(path)
    except OSError as e:
        if temp_path.exists():
            try:
                temp_path.unlink()
            except OSError:
                pass
        raise CheckpointError(path, f"write failed: {e}")
    return f"sha256:{hashlib.sha256(data).hexdigest()}"


def load_checkpoint(path: Path) -> Checkpoint:
    """Read and verify a checkpoint file.

    Raises:
        CheckpointError: If the file is missing or not a checkpoint.
        CheckpointVersionError: On a format version mismatch.
        CheckpointIntegrityError: On a checksum mismatch.
    """
    path = Path(path)
    if not path.exists():
        raise CheckpointError(path, "checkpoint does not exist")
    return decode_checkpoint(path.read_bytes(), path)


def build_model(checkpoint: Checkpoint):
    """Instantiate the model a checkpoint describes and load its parameters."""
    from .config import ModelConfig
    from .model import ICADModel

    model = ICADModel(ModelConfig.from_dict(checkpoint.model_config))
    checkpoint.restore_model(model)
    model.eval()
    return model
