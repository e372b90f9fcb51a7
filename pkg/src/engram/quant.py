"""Data-oblivious scalar quantization of unit-norm embeddings.

Pipeline: rotate by a fixed random orthogonal matrix, code each rotated
coordinate against a precomputed Lloyd-Max codebook, bit-pack the indices.
After rotation each coordinate of a unit vector is distributed like the
first coordinate of a uniform point on the sphere (Beta-projection law,
close to N(0, 1/d) for large d), so one shared scalar codebook per
bit-width serves every embedding. No training data is involved: the
codebook depends only on (bits, dim) and a canonical seeded sample set.

Rotation matrices and codebooks are immutable after construction and are
persisted as checksummed binary blobs beside the store.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SUPPORTED_BITS = (2, 4, 8)

# Canonical sample set defining the coordinate distribution for codebook
# construction. Samples are symmetrized (each draw paired with its negative)
# so Lloyd preserves the exact symmetry of the source law.
CODEBOOK_SAMPLE_SEED = 1715
CODEBOOK_SAMPLE_COUNT = 1 << 20

LLOYD_TOL = 1e-9
LLOYD_MAX_ITER = 10_000


class QuantError(Exception):
    """Base for quantization failures."""


class NonUnitInputError(QuantError):
    pass


class DimensionError(QuantError):
    pass


class ResourceMismatchError(QuantError):
    """Quantized payload does not match the supplied rotation/codebook."""


class PromotionError(QuantError):
    """Requantize asked to increase precision; the float32 source is gone."""


class LloydConvergenceError(QuantError):
    pass


class BlobFormatError(QuantError):
    """Persisted rotation/codebook blob is corrupt or mismatched."""


@dataclass(frozen=True)
class RotationMatrix:
    dim: int
    seed: int
    matrix: np.ndarray  # (dim, dim), orthogonal

    def orthogonality_error(self) -> float:
        eye = np.eye(self.dim)
        return float(np.max(np.abs(self.matrix @ self.matrix.T - eye)))


@dataclass(frozen=True)
class Codebook:
    bits: int
    dim: int
    centroids: np.ndarray  # strictly increasing, length 2**bits
    sample_seed: int = CODEBOOK_SAMPLE_SEED
    sample_count: int = CODEBOOK_SAMPLE_COUNT

    @property
    def codebook_id(self) -> str:
        return f"lloyd.b{self.bits}.d{self.dim}.n{self.sample_count}.s{self.sample_seed}"


@dataclass(frozen=True)
class QuantizedVector:
    bits: int
    dim: int
    packed: bytes
    rotation_seed: int
    codebook_id: str


def packed_length(bits: int, dim: int) -> int:
    return (bits * dim + 7) // 8


def make_rotation(dim: int, seed: int) -> RotationMatrix:
    """Random orthogonal matrix, uniform over the orthogonal group.

    QR of a seeded standard-Gaussian matrix with the R-diagonal sign fix
    that makes the factorization unique (and the sample Haar-distributed).
    Deterministic in (dim, seed).
    """
    if dim < 2:
        raise DimensionError(f"rotation dim must be >= 2, got {dim}")
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))
    return RotationMatrix(dim=dim, seed=seed, matrix=np.ascontiguousarray(q))


def coordinate_samples(dim: int, count: int = CODEBOOK_SAMPLE_COUNT,
                       seed: int = CODEBOOK_SAMPLE_SEED) -> np.ndarray:
    """Canonical sample set of one rotated coordinate, symmetrized to 2*count."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(count)
    r2 = rng.chisquare(dim - 1, count)
    t = z / np.sqrt(z * z + r2)
    return np.concatenate([t, -t])


def lloyd_step(sorted_samples: np.ndarray, prefix_sums: np.ndarray,
               centroids: np.ndarray) -> np.ndarray:
    """One Lloyd update: replace each centroid by the mean of its cell."""
    mids = 0.5 * (centroids[1:] + centroids[:-1])
    edges = np.concatenate([[0], np.searchsorted(sorted_samples, mids), [len(sorted_samples)]])
    counts = np.diff(edges)
    sums = prefix_sums[edges[1:]] - prefix_sums[edges[:-1]]
    # empty cells keep their centroid; does not occur with quantile init
    return np.where(counts > 0, sums / np.maximum(counts, 1), centroids)


def make_codebook(bits: int, dim: int, *, sample_count: int = CODEBOOK_SAMPLE_COUNT,
                  sample_seed: int = CODEBOOK_SAMPLE_SEED) -> Codebook:
    """Lloyd-Max centroids for the rotated-coordinate distribution.

    Runs Lloyd iteration on the canonical sample set to a fixed point
    (max centroid movement below LLOYD_TOL). Non-convergence inside the
    iteration cap signals a bug, not bad input.
    """
    if bits not in SUPPORTED_BITS:
        raise QuantError(f"unsupported bit width {bits}; expected one of {SUPPORTED_BITS}")
    if dim < 2:
        raise DimensionError(f"codebook dim must be >= 2, got {dim}")
    samples = np.sort(coordinate_samples(dim, sample_count, sample_seed))
    prefix = np.concatenate([[0.0], np.cumsum(samples)])
    n_levels = 2 ** bits
    centroids = np.quantile(samples, (np.arange(n_levels) + 0.5) / n_levels)
    for _ in range(LLOYD_MAX_ITER):
        updated = lloyd_step(samples, prefix, centroids)
        movement = float(np.max(np.abs(updated - centroids)))
        centroids = updated
        if movement < LLOYD_TOL:
            break
    else:
        raise LloydConvergenceError(
            f"Lloyd failed to converge for bits={bits} dim={dim} "
            f"after {LLOYD_MAX_ITER} iterations (last movement {movement:.3e})")
    return Codebook(bits=bits, dim=dim, centroids=np.ascontiguousarray(centroids),
                    sample_seed=sample_seed, sample_count=sample_count)


def pack_indices(indices: np.ndarray, bits: int) -> bytes:
    """Bit-pack centroid indices, little-endian within bytes, coordinate-major."""
    idx = np.asarray(indices, dtype=np.uint32)
    if idx.size and int(idx.max()) >= (1 << bits):
        raise QuantError(f"index out of range for {bits}-bit packing")
    if bits == 8:
        return idx.astype(np.uint8).tobytes()
    per_byte = 8 // bits
    pad = (-idx.size) % per_byte
    if pad:
        idx = np.concatenate([idx, np.zeros(pad, dtype=np.uint32)])
    grouped = idx.reshape(-1, per_byte)
    shifts = (np.arange(per_byte, dtype=np.uint32) * bits)
    return (grouped << shifts).sum(axis=1).astype(np.uint8).tobytes()


def unpack_indices(packed: bytes, bits: int, dim: int) -> np.ndarray:
    expected = packed_length(bits, dim)
    if len(packed) != expected:
        raise QuantError(f"packed payload is {len(packed)} bytes, expected {expected}")
    raw = np.frombuffer(packed, dtype=np.uint8)
    if bits == 8:
        out = raw.astype(np.int64)
    else:
        per_byte = 8 // bits
        shifts = np.arange(per_byte, dtype=np.uint16) * bits
        mask = (1 << bits) - 1
        out = ((raw[:, None].astype(np.uint16) >> shifts) & mask).reshape(-1).astype(np.int64)
    return out[:dim]


def assign_indices(rotated: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Nearest centroid per coordinate; exact midpoints go to the lower index."""
    mids = 0.5 * (codebook.centroids[1:] + codebook.centroids[:-1])
    return np.searchsorted(mids, rotated, side="left")


def quantize(x: np.ndarray, bits: int, rotation: RotationMatrix,
             codebook: Codebook) -> QuantizedVector:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (rotation.dim,):
        raise DimensionError(f"vector shape {x.shape} does not match rotation dim {rotation.dim}")
    if codebook.bits != bits or codebook.dim != rotation.dim:
        raise ResourceMismatchError("codebook does not match requested bits/dim")
    norm = float(np.linalg.norm(x))
    if abs(norm - 1.0) >= 1e-3:
        raise NonUnitInputError(f"input norm {norm:.6f} is not unit to 1e-3")
    rotated = rotation.matrix @ x
    idx = assign_indices(rotated, codebook)
    return QuantizedVector(bits=bits, dim=rotation.dim, packed=pack_indices(idx, bits),
                           rotation_seed=rotation.seed, codebook_id=codebook.codebook_id)


def dequantize(q: QuantizedVector, rotation: RotationMatrix, codebook: Codebook) -> np.ndarray:
    if q.rotation_seed != rotation.seed or q.dim != rotation.dim:
        raise ResourceMismatchError("quantized vector was produced under a different rotation")
    if q.codebook_id != codebook.codebook_id or q.bits != codebook.bits:
        raise ResourceMismatchError("quantized vector was produced under a different codebook")
    idx = unpack_indices(q.packed, q.bits, q.dim)
    return rotation.matrix.T @ codebook.centroids[idx]


def requantize(q: QuantizedVector, new_bits: int, rotation: RotationMatrix,
               old_codebook: Codebook, new_codebook: Codebook) -> QuantizedVector:
    """Demote a quantized vector to fewer bits. Promotion is refused: the
    float32 source is only retained while a memory is still full precision."""
    if new_bits > q.bits:
        raise PromotionError(f"cannot promote {q.bits}-bit payload to {new_bits} bits")
    if new_bits == q.bits:
        return QuantizedVector(bits=q.bits, dim=q.dim, packed=q.packed,
                               rotation_seed=q.rotation_seed, codebook_id=q.codebook_id)
    reconstructed = dequantize(q, rotation, old_codebook)
    reconstructed = reconstructed / np.linalg.norm(reconstructed)
    return quantize(reconstructed, new_bits, rotation, new_codebook)


class Quantizer:
    """Bundle of one rotation plus codebooks for every supported bit width."""

    def __init__(self, rotation: RotationMatrix, codebooks: dict[int, Codebook]):
        self.rotation = rotation
        self.codebooks = dict(codebooks)

    @property
    def dim(self) -> int:
        return self.rotation.dim

    @classmethod
    def create(cls, dim: int, rotation_seed: int) -> "Quantizer":
        rotation = make_rotation(dim, rotation_seed)
        books = {b: _cached_codebook(b, dim) for b in SUPPORTED_BITS}
        return cls(rotation, books)

    def quantize(self, x: np.ndarray, bits: int) -> QuantizedVector:
        return quantize(x, bits, self.rotation, self.codebooks[bits])

    def dequantize(self, q: QuantizedVector) -> np.ndarray:
        return dequantize(q, self.rotation, self.codebooks[q.bits])

    def requantize(self, q: QuantizedVector, new_bits: int) -> QuantizedVector:
        if new_bits in self.codebooks:
            new_cb = self.codebooks[new_bits]
        elif new_bits == q.bits:
            new_cb = self.codebooks[q.bits]
        else:
            raise QuantError(f"no codebook for {new_bits} bits")
        return requantize(q, new_bits, self.rotation, self.codebooks[q.bits], new_cb)

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_rotation(directory / rotation_filename(self.dim, self.rotation.seed), self.rotation)
        for b, cb in self.codebooks.items():
            save_codebook(directory / codebook_filename(b, self.dim), cb)

    @classmethod
    def load_or_create(cls, directory: str | Path, dim: int, rotation_seed: int) -> "Quantizer":
        """Load persisted blobs when present and valid, else build and persist."""
        directory = Path(directory)
        rot_path = directory / rotation_filename(dim, rotation_seed)
        try:
            rotation = load_rotation(rot_path)
            books = {b: load_codebook(directory / codebook_filename(b, dim))
                     for b in SUPPORTED_BITS}
            if rotation.dim == dim and rotation.seed == rotation_seed and \
                    all(books[b].dim == dim for b in SUPPORTED_BITS):
                return cls(rotation, books)
        except (FileNotFoundError, BlobFormatError):
            pass
        quantizer = cls.create(dim, rotation_seed)
        quantizer.save(directory)
        return quantizer


# In-process cache: codebooks depend only on (bits, dim) under the canonical
# sample definition, and the 8-bit build takes seconds.
_CODEBOOK_CACHE: dict[tuple[int, int, int, int], Codebook] = {}


def _cached_codebook(bits: int, dim: int) -> Codebook:
    key = (bits, dim, CODEBOOK_SAMPLE_SEED, CODEBOOK_SAMPLE_COUNT)
    if key not in _CODEBOOK_CACHE:
        _CODEBOOK_CACHE[key] = make_codebook(bits, dim)
    return _CODEBOOK_CACHE[key]


# ---------------------------------------------------------------------------
# Persistence: versioned binary blobs with a checksummed header.
# Layout: magic(8s) version(u16) kind(u8: 0=rotation 1=codebook) bits(u16)
#         dim(u32) seed(q) count(q) payload_len(u32) crc32(u32) payload
# Payload is the float64 little-endian matrix/centroid data.

_MAGIC = b"ENGQUANT"
_VERSION = 1
_HEADER = struct.Struct("<8sHBHIqqII")


def rotation_filename(dim: int, seed: int) -> str:
    return f"rotation-d{dim}-s{seed}.bin"


def codebook_filename(bits: int, dim: int) -> str:
    return f"codebook-b{bits}-d{dim}.bin"


def _write_blob(path: Path, kind: int, bits: int, dim: int, seed: int,
                count: int, payload: bytes) -> None:
    header = _HEADER.pack(_MAGIC, _VERSION, kind, bits, dim, seed, count,
                          len(payload), zlib.crc32(payload))
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(header + payload)
    tmp.replace(path)


def _read_blob(path: Path, expect_kind: int) -> tuple[int, int, int, int, bytes]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise BlobFormatError(f"{path}: truncated header")
    magic, version, kind, bits, dim, seed, count, plen, crc = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != _VERSION or kind != expect_kind:
        raise BlobFormatError(f"{path}: bad magic/version/kind")
    payload = data[_HEADER.size:]
    if len(payload) != plen or zlib.crc32(payload) != crc:
        raise BlobFormatError(f"{path}: checksum mismatch")
    return bits, dim, seed, count, payload


def save_rotation(path: str | Path, rotation: RotationMatrix) -> None:
    payload = rotation.matrix.astype("<f8").tobytes()
    _write_blob(Path(path), 0, 0, rotation.dim, rotation.seed, rotation.dim, payload)


def load_rotation(path: str | Path) -> RotationMatrix:
    _, dim, seed, _, payload = _read_blob(Path(path), 0)
    matrix = np.frombuffer(payload, dtype="<f8").reshape(dim, dim)
    return RotationMatrix(dim=dim, seed=seed, matrix=np.ascontiguousarray(matrix))


def save_codebook(path: str | Path, codebook: Codebook) -> None:
    payload = codebook.centroids.astype("<f8").tobytes()
    _write_blob(Path(path), 1, codebook.bits, codebook.dim,
                codebook.sample_seed, codebook.sample_count, payload)


def load_codebook(path: str | Path) -> Codebook:
    bits, dim, seed, count, payload = _read_blob(Path(path), 1)
    centroids = np.frombuffer(payload, dtype="<f8")
    return Codebook(bits=bits, dim=dim, centroids=np.ascontiguousarray(centroids),
                    sample_seed=seed, sample_count=count)
