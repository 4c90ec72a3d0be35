"""Named parameter collections and their binary serialization.

A :class:`ParamSet` is an ordered, immutable collection of named float64
tensors. It represents a full model, a client update (delta between two
models), or a gradient set. All arithmetic between parameter sets requires
the two operands to be *conformant*: identical names, order, and shapes.
"""

from __future__ import annotations

import struct
from collections.abc import Iterable, Iterator

import numpy as np

MAGIC = b"FESP"
FORMAT_VERSION = 1


class ConformanceError(ValueError):
    """Two parameter sets do not share names, order, and shapes."""


class ParamSet:
    """Ordered collection of (name, float64 tensor) pairs.

    Tensors are stored C-contiguous and marked read-only, so a ParamSet is
    an immutable value that is safe to share across concurrent tasks.
    """

    __slots__ = ("_names", "_tensors", "_index")

    def __init__(self, items: Iterable[tuple[str, np.ndarray]], *, copy: bool = True):
        names: list[str] = []
        tensors: list[np.ndarray] = []
        for name, raw in items:
            arr = np.asarray(raw, dtype=np.float64)
            # copy(order="C") rather than ascontiguousarray: the latter
            # promotes rank-0 tensors to rank 1.
            if copy or not arr.flags.c_contiguous:
                arr = arr.copy(order="C")
            if not np.isfinite(arr).all():
                raise ValueError(f"tensor {name!r} contains non-finite values")
            arr.flags.writeable = False
            names.append(str(name))
            tensors.append(arr)
        if len(set(names)) != len(names):
            raise ValueError("duplicate tensor names in parameter set")
        self._names = tuple(names)
        self._tensors = tuple(tensors)
        self._index = {n: i for i, n in enumerate(names)}

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def tensors(self) -> tuple[np.ndarray, ...]:
        return self._tensors

    def items(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(zip(self._names, self._tensors))

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return self.items()

    def __len__(self) -> int:
        return len(self._names)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[self._index[name]]

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def __eq__(self, other: object) -> bool:
        """Bit-exact equality: same names, shapes, and payload bytes."""
        if not isinstance(other, ParamSet):
            return NotImplemented
        if self._names != other._names:
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self._tensors, other._tensors)
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}{t.shape}" for n, t in self.items())
        return f"ParamSet({inner})"

    @property
    def num_params(self) -> int:
        return sum(t.size for t in self._tensors)

    def shapes(self) -> tuple[tuple[str, tuple[int, ...]], ...]:
        return tuple((n, t.shape) for n, t in self.items())

    def conforms_to(self, other: ParamSet) -> bool:
        return self.shapes() == other.shapes()


def require_conformant(x: ParamSet, y: ParamSet) -> None:
    if not x.conforms_to(y):
        raise ConformanceError(
            f"parameter sets are not conformant: {x.shapes()} vs {y.shapes()}"
        )


def param_linear(a: float, x: ParamSet, b: float, y: ParamSet) -> ParamSet:
    """Element-wise linear combination a*x + b*y of conformant sets."""
    require_conformant(x, y)
    a = float(a)
    b = float(b)
    return ParamSet(
        ((name, a * tx + b * ty) for (name, tx), (_, ty) in zip(x.items(), y.items())),
        copy=False,
    )


def zeros_like(x: ParamSet) -> ParamSet:
    return ParamSet(((name, np.zeros_like(t)) for name, t in x.items()), copy=False)


def layer_norms(delta: ParamSet) -> list[tuple[str, float]]:
    """Euclidean norm of each named tensor."""
    return [(name, float(np.linalg.norm(t))) for name, t in delta.items()]


def global_norm(delta: ParamSet) -> float:
    """Euclidean norm of the whole set flattened into one vector."""
    return float(np.sqrt(sum(float(np.sum(t * t)) for t in delta.tensors)))


def dump_param_bytes(params: ParamSet) -> bytes:
    """Serialize to the binary format shared with the retention store.

    Layout (all integers little-endian u32): magic "FESP", format version,
    tensor count; then per tensor: name length, UTF-8 name, rank, dims,
    and data as little-endian float64. Round-trips bit-exactly.
    """
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", FORMAT_VERSION, len(params))
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<I", tensor.ndim)
        out += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        out += tensor.astype("<f8", copy=False).tobytes(order="C")
    return bytes(out)


def parse_param_bytes(buf: bytes) -> ParamSet:
    if buf[:4] != MAGIC:
        raise ValueError("bad magic: not a parameter-set blob")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter-set format version {version}")
        offset = 12
        items: list[tuple[str, np.ndarray]] = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            name = buf[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<I", buf, offset)
            offset += 4
            dims = struct.unpack_from(f"<{rank}I", buf, offset)
            offset += 4 * rank
            size = 1
            for d in dims:
                size *= d
            data = np.frombuffer(buf, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            items.append((name, data.reshape(dims).astype(np.float64)))
    except struct.error as exc:
        raise ValueError(f"truncated parameter-set blob: {exc}") from None
    if offset != len(buf):
        raise ValueError("trailing bytes after last tensor")
    return ParamSet(items, copy=False)


def save_params(params: ParamSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_param_bytes(params))


def load_params(path) -> ParamSet:
    with open(path, "rb") as fh:
        return parse_param_bytes(fh.read())
