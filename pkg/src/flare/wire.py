"""Byte layouts for client<->sensor transfers.

Deployment payload: the serialized model blob followed by the reference
confidence sample as a u32 count plus float32 values. Upload payload: a
u32 row count, float32 feature rows, then one u8 label per row. All byte
counts charged to the traffic ledger come from these exact encodings.
"""

from __future__ import annotations

import struct

import numpy as np

from .data import LabeledDataset
from .errors import ContractError, DeploymentError
from .model import _HEADER, _LAYER_HEADER, _QPARAMS, SerializedModel, deserialize_model
from .stats import ConfidenceSample

__all__ = [
    "encode_deployment",
    "decode_deployment",
    "deployment_size",
    "encode_upload",
    "decode_upload",
    "upload_size",
]

_U32 = struct.Struct("<I")


def encode_deployment(blob: SerializedModel, reference: ConfidenceSample) -> bytes:
    ref = reference.values.astype("<f4")
    return blob.data + _U32.pack(ref.size) + ref.tobytes()


def deployment_size(blob: SerializedModel, reference_len: int) -> int:
    return blob.byte_count + 4 + 4 * reference_len


def _model_blob_len(payload: bytes) -> int:
    """Walk the self-describing model layout to find where the blob ends."""
    try:
        _, _, quantized, n_layers = _HEADER.unpack_from(payload, 0)
        offset = _HEADER.size
        for _ in range(n_layers):
            rows, cols, _ = _LAYER_HEADER.unpack_from(payload, offset)
            n = rows * cols + rows
            offset += _LAYER_HEADER.size + (n + _QPARAMS.size if quantized else 4 * n)
    except struct.error as exc:
        raise DeploymentError(f"truncated model blob in deployment payload: {exc}") from exc
    return offset


def decode_deployment(payload: bytes):
    """Split a deployment payload back into (SerializedModel, ConfidenceSample).

    The embedded model is validated by decoding it; malformed payloads raise
    DeploymentError.
    """
    blob_len = _model_blob_len(payload)
    blob_bytes = payload[:blob_len]
    deserialize_model(blob_bytes)
    try:
        (n_ref,) = _U32.unpack_from(payload, blob_len)
    except struct.error as exc:
        raise DeploymentError("deployment payload missing reference sample") from exc
    end = blob_len + 4 + 4 * n_ref
    if end != len(payload):
        raise DeploymentError(
            f"deployment payload length {len(payload)} != expected {end}"
        )
    ref = np.frombuffer(payload, dtype="<f4", count=n_ref, offset=blob_len + 4)
    quantized = bool(payload[6])
    blob = SerializedModel(data=blob_bytes, byte_count=blob_len, quantized=quantized)
    return blob, ConfidenceSample(ref.astype(float))


def encode_upload(data: LabeledDataset) -> bytes:
    if data.n_classes > 255:
        raise ContractError("upload labels are u8; need n_classes <= 255")
    rows = data.features.astype("<f4")
    labels = data.labels.astype(np.uint8)
    return _U32.pack(len(data)) + rows.tobytes() + labels.tobytes()


def upload_size(n_rows: int, dim: int) -> int:
    return 4 + n_rows * (4 * dim + 1)


def decode_upload(payload: bytes, dim: int, n_classes: int) -> LabeledDataset:
    try:
        (n_rows,) = _U32.unpack_from(payload, 0)
    except struct.error as exc:
        raise ContractError("upload payload missing row count") from exc
    expected = upload_size(n_rows, dim)
    if len(payload) != expected:
        raise ContractError(f"upload payload length {len(payload)} != expected {expected}")
    feats = np.frombuffer(payload, dtype="<f4", count=n_rows * dim, offset=4)
    labels = np.frombuffer(payload, dtype=np.uint8, count=n_rows, offset=4 + 4 * n_rows * dim)
    return LabeledDataset(
        feats.reshape(n_rows, dim).astype(float), labels.astype(np.int64), n_classes
    )
