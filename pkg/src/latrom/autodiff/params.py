"""Named parameter collections and their on-disk format.

A store serializes to a JSON manifest (path -> shape, byte offset, length)
plus a single flat little-endian float64 blob.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from ..errors import ContractError, FormatError
from .tensor import Tensor

_LE_F64 = np.dtype("<f8")


class ParamStore:
    """Path -> trainable Tensor, iterated in sorted path order."""

    def __init__(self, params: Mapping[str, Tensor] | None = None):
        self._params: dict[str, Tensor] = {}
        for path, t in (params or {}).items():
            self.add(path, t)

    def add(self, path: str, value) -> Tensor:
        if path in self._params:
            raise ContractError(f"duplicate parameter path {path!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        if not t.data.flags.c_contiguous:
            t.data = t.data.copy()
        t.requires_grad = True
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._params))

    def items(self) -> list[tuple[str, Tensor]]:
        return [(p, self._params[p]) for p in sorted(self._params)]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def copy(self) -> "ParamStore":
        return ParamStore({p: Tensor(t.data.copy()) for p, t in self.items()})

    def checksum(self) -> str:
        h = hashlib.sha256()
        for path, t in self.items():
            h.update(path.encode())
            h.update(repr(t.shape).encode())
            h.update(t.data.astype(_LE_F64).tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------ serialization

    def to_bytes(self) -> tuple[dict, bytes]:
        manifest: dict[str, dict] = {}
        chunks = []
        offset = 0
        for path, t in self.items():
            raw = t.data.astype(_LE_F64, order="C").tobytes()
            manifest[path] = {"shape": list(t.shape), "offset": offset, "length": t.size}
            chunks.append(raw)
            offset += len(raw)
        return {"params": manifest}, b"".join(chunks)

    @classmethod
    def from_bytes(cls, manifest: dict, blob: bytes) -> "ParamStore":
        store = cls()
        try:
            entries = manifest["params"]
        except (KeyError, TypeError):
            raise FormatError("parameter manifest lacks a 'params' table") from None
        for path in sorted(entries):
            e = entries[path]
            shape = tuple(int(n) for n in e["shape"])
            length, offset = int(e["length"]), int(e["offset"])
            if int(np.prod(shape)) != length:
                raise FormatError(f"{path}: shape {shape} does not match length {length}")
            end = offset + 8 * length
            if offset < 0 or end > len(blob):
                raise FormatError(f"{path}: byte range [{offset}, {end}) exceeds blob size {len(blob)}")
            arr = np.frombuffer(blob, dtype=_LE_F64, count=length, offset=offset)
            store.add(path, Tensor(arr.astype(np.float64).reshape(shape)))
        return store

    def save(self, stem: str | Path) -> None:
        """Write ``<stem>.json`` and ``<stem>.bin``."""
        stem = Path(stem)
        manifest, blob = self.to_bytes()
        stem.parent.mkdir(parents=True, exist_ok=True)
        stem.with_suffix(".bin").write_bytes(blob)
        stem.with_suffix(".json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    @classmethod
    def load(cls, stem: str | Path) -> "ParamStore":
        stem = Path(stem)
        try:
            manifest = json.loads(stem.with_suffix(".json").read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{stem}.json is not valid JSON: {exc}") from None
        return cls.from_bytes(manifest, stem.with_suffix(".bin").read_bytes())
