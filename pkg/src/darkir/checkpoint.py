"""DKC1 checkpoint container.

Layout (integers little-endian):
    magic    4 bytes  b"DKC1"
    version  u32      (currently 1)
    count    u32      number of named tensors
    entries  count *  (u16 name length, name utf-8, DKT1 tensor)
    config   key=value text, utf-8, to end of file

Round trips are bit-exact for float32 models: save followed by load yields
identical parameter bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

from .dkt import FormatError, pack_tensor, unpack_tensor
from .model import DarkIRConfig, Model, config_from_text, config_to_text, parameter_names

__all__ = ["save", "load", "CheckpointError"]

MAGIC = b"DKC1"
VERSION = 1


class CheckpointError(ValueError):
    """Unreadable checkpoint or mismatch against the expected config."""


def save(model: Model, path) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(model.params))]
    for name, tensor in model.params.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise CheckpointError(f"parameter name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(pack_tensor(tensor))
    parts.append(config_to_text(model.config).encode("utf-8"))
    Path(path).write_bytes(b"".join(parts))


def load(path, config: DarkIRConfig | None = None) -> Model:
    """Read a checkpoint; with `config` given, verify it stores exactly the
    parameter set that config implies."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, want {VERSION}")
    offset = 12
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, offset)
        offset += 2
        name = buf[offset : offset + nlen].decode("utf-8")
        offset += nlen
        try:
            tensor, offset = unpack_tensor(buf, offset)
        except FormatError as exc:
            raise CheckpointError(f"entry {name!r}: {exc}") from exc
        params[name] = tensor
    stored_config = config_from_text(buf[offset:].decode("utf-8"))

    expected = parameter_names(stored_config)
    if list(params) != expected:
        raise CheckpointError("stored parameters do not match the stored config")
    if config is not None:
        want = parameter_names(config)
        if want != expected:
            missing = sorted(set(want) - set(expected))
            extra = sorted(set(expected) - set(want))
            raise CheckpointError(
                f"checkpoint does not fit the requested config; "
                f"missing={missing[:5]} extra={extra[:5]}"
            )
    return Model(stored_config, params)
