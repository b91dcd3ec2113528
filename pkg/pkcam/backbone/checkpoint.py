"""Little-endian checkpoint file.

Layout: magic ``PKCAM\\0``, u32 format version, u32 snapshot length and the UTF-8
``key = value`` config snapshot, then one record per parameter until end of file:
u32 name length, UTF-8 name, u32 rank, rank × u32 dims, float64 data.

Seed, epoch and the channel means used for normalisation travel inside the snapshot
under ``checkpoint.*`` keys.
"""

from dataclasses import dataclass
from dataclasses import field
from pathlib import Path

import numpy as np

from pkcam.errors import FormatError
from pkcam.numpy_ext import BinaryReader
from pkcam.numpy_ext import BinaryWriter
from pkcam.tensor.module import Module

MAGIC = b"PKCAM\0"
VERSION = 1
_META_PREFIX = "checkpoint."


@dataclass
class Checkpoint:
    snapshot: str
    parameters: dict[str, np.ndarray]
    seed: int = 0
    epoch: int = 0
    channel_means: tuple[float, ...] = field(default_factory=tuple)

    @classmethod
    def of(cls, model: Module, snapshot: str, **meta) -> "Checkpoint":
        return cls(snapshot=snapshot, parameters=model.state(), **meta)

    def restore(self, model: Module) -> None:
        model.load_state(self.parameters)

    def _snapshot_with_meta(self) -> str:
        means = ",".join(repr(float(m)) for m in self.channel_means)
        meta = [
            f"{_META_PREFIX}seed = {self.seed}",
            f"{_META_PREFIX}epoch = {self.epoch}",
            f"{_META_PREFIX}channel_means = {means}",
        ]
        text = self.snapshot
        if text and not text.endswith("\n"):
            text += "\n"
        return text + "\n".join(meta) + "\n"

    def to_bytes(self) -> bytes:
        writer = BinaryWriter()
        writer.write_bytes(MAGIC)
        writer.write(VERSION, "<u4")
        snapshot = self._snapshot_with_meta().encode("utf8")
        writer.write(len(snapshot), "<u4")
        writer.write_bytes(snapshot)
        for name, values in self.parameters.items():
            encoded = name.encode("utf8")
            writer.write(len(encoded), "<u4")
            writer.write_bytes(encoded)
            writer.write(values.ndim, "<u4")
            writer.write(values.shape, "<u4")
            writer.write(values, "<f8")
        return writer.getvalue()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "Checkpoint":
        reader = BinaryReader(payload)
        reader.expect(MAGIC)
        version_at = reader.offset
        version = reader.read_scalar("<u4", "format version")
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}", version_at)
        length = reader.read_scalar("<u4", "snapshot length")
        snapshot_at = reader.offset
        try:
            text = reader.read_bytes(length, "config snapshot").decode("utf8")
        except UnicodeDecodeError as exc:
            raise FormatError("config snapshot is not UTF-8", snapshot_at) from exc

        parameters = {}
        while not reader.exhausted:
            name_length = reader.read_scalar("<u4", "parameter name length")
            name_at = reader.offset
            try:
                name = reader.read_bytes(name_length, "parameter name").decode("utf8")
            except UnicodeDecodeError as exc:
                raise FormatError("parameter name is not UTF-8", name_at) from exc
            rank = reader.read_scalar("<u4", f"rank of {name}")
            shape = tuple(int(d) for d in reader.read("<u4", rank, f"dims of {name}"))
            count = int(np.prod(shape, dtype=np.int64))
            parameters[name] = reader.read("<f8", count, f"data of {name}").reshape(shape).copy()

        config_lines = []
        meta = {}
        for line in text.splitlines():
            key, _, value = line.partition("=")
            if key.strip().startswith(_META_PREFIX):
                meta[key.strip().removeprefix(_META_PREFIX)] = value.strip()
            else:
                config_lines.append(line)
        try:
            seed = int(meta.get("seed", 0))
            epoch = int(meta.get("epoch", 0))
            means = tuple(float(m) for m in meta.get("channel_means", "").split(",") if m)
        except ValueError as exc:
            raise FormatError(f"bad checkpoint metadata: {exc}", snapshot_at) from exc
        return cls(
            snapshot="\n".join(config_lines) + ("\n" if config_lines else ""),
            parameters=parameters,
            seed=seed,
            epoch=epoch,
            channel_means=means,
        )

    def save(self, path: Path) -> None:
        path.write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Path) -> "Checkpoint":
        return cls.from_bytes(path.read_bytes())
