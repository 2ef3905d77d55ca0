from __future__ import annotations

import io
import json
import logging
from pathlib import Path

import numpy as np

from app.network import Network, Parameters

LOGGER = logging.getLogger(__name__)

FORMAT_NAME = "bernnet-checkpoint"
FORMAT_VERSION = 1
HEADER_KEY = "__header__"
VALUE_PREFIX = "param/"
BUFFER_PREFIX = "buffer/"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, net: Network, params: Parameters) -> Path:
    path = Path(path)
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "parameter_version": params.version,
        "network": net.to_dict(),
    }
    arrays = {HEADER_KEY: np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for key, value in params.values.items():
        arrays[VALUE_PREFIX + key] = value
    for key, value in params.buffers.items():
        arrays[BUFFER_PREFIX + key] = value

    path.parent.mkdir(parents=True, exist_ok=True)
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    tmp_path = path.with_suffix(".tmp")
    tmp_path.write_bytes(buffer.getvalue())
    tmp_path.replace(path)
    LOGGER.debug("Saved checkpoint %s (%d arrays)", path, len(arrays) - 1)
    return path


def load_checkpoint(path: str | Path) -> tuple[Network, Parameters]:
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc

    with archive:
        if HEADER_KEY not in archive.files:
            raise CheckpointError(f"{path}: missing header")
        header = json.loads(archive[HEADER_KEY].tobytes().decode("utf-8"))
        if header.get("format") != FORMAT_NAME:
            raise CheckpointError(f"{path}: unknown format {header.get('format')!r}")
        if header.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported version {header.get('version')!r}")
        values: dict[str, np.ndarray] = {}
        buffers: dict[str, np.ndarray] = {}
        for name in archive.files:
            if name.startswith(VALUE_PREFIX):
                values[name[len(VALUE_PREFIX):]] = archive[name]
            elif name.startswith(BUFFER_PREFIX):
                buffers[name[len(BUFFER_PREFIX):]] = archive[name]

    try:
        net = Network.from_dict(header["network"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: invalid network description ({exc})") from exc
    return net, Parameters(values=values, buffers=buffers, version=int(header["parameter_version"]))
