"""Dataset ingestion, filtering, train/test split and the binary record cache.

Input files hold one ``SMILES[\\tlogP\\tMR]`` per line. Accepted molecules are
stored canonicalized in a little-endian ``.mgcd`` cache of fixed-width
records next to a JSON manifest that carries the split.

Cache layout::

    header  magic b"MGCD" | u16 version | u16 S | u16 A | u16 B | 8-byte schema hash | u64 count
    record  128-byte NUL-padded SMILES | f64 logP | f64 MR | i8 logP bin | i8 MR bin | packbits(X)
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from mgcvae.errors import (
    DataError,
    LineError,
    RejectedFeature,
    SchemaError,
    SizeOverflow,
    SmilesError,
    UnsupportedElement,
)
from mgcvae.molgraph import DEFAULT_SCHEMA, MolGraph, Schema, encode_matrix, validate
from mgcvae.numcore import make_rng
from mgcvae.props import CONDITION_DIM, LOGP_BINS, MR_BINS, ConditionVector, bin_conditions, properties
from mgcvae.smiles import parse_smiles, write_smiles

CACHE_MAGIC = b"MGCD"
CACHE_VERSION = 1
SMILES_WIDTH = 128
_HEADER = struct.Struct("<4sHHHH8sQ")

LOGP_RANGE = (-6.0, 5.0)
MR_RANGE = (5.0, 95.0)


def schema_hash(schema: Schema) -> str:
    blob = json.dumps({"S": schema.S, "A": schema.A, "B": schema.B, "layout": "count|atoms|bonds"},
                      sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- filtering ----------------------------------------------------------------------


class Acceptance(NamedTuple):
    accepted: bool
    reason: str | None
    graph: MolGraph | None = None
    logp: float | None = None
    mr: float | None = None


def accept_molecule(mol: MolGraph | Exception | str, logp: float | None = None, mr: float | None = None,
                    schema: Schema = DEFAULT_SCHEMA) -> Acceptance:
    """Apply the dataset filters.

    ``mol`` may be a SMILES string, an already parsed graph, or the exception a
    parse raised. Reject reasons are the SMILES feature name (``charge``,
    ``fragment``, ``bracket``, ``stereo``), ``syntax``, ``element``, ``size``,
    ``invalid``, ``logp_range`` or ``mr_range``. Properties are computed when
    not supplied.
    """
    if isinstance(mol, str):
        try:
            mol = parse_smiles(mol)
        except SmilesError as exc:
            mol = exc
    if isinstance(mol, Exception):
        if isinstance(mol, RejectedFeature):
            return Acceptance(False, mol.feature)
        if isinstance(mol, UnsupportedElement):
            return Acceptance(False, "element")
        return Acceptance(False, "syntax")
    if mol.n_atoms > schema.S:
        return Acceptance(False, "size", mol)
    if not validate(mol, schema.S).valid:
        return Acceptance(False, "invalid", mol)
    if logp is None or mr is None:
        logp, mr = properties(mol)
    if not LOGP_RANGE[0] < logp < LOGP_RANGE[1]:
        return Acceptance(False, "logp_range", mol, logp, mr)
    if not MR_RANGE[0] < mr < MR_RANGE[1]:
        return Acceptance(False, "mr_range", mol, logp, mr)
    return Acceptance(True, None, mol, logp, mr)


# -- records and cache --------------------------------------------------------------


@dataclass(frozen=True)
class DatasetRecord:
    smiles: str
    logp: float
    mr: float
    condition: ConditionVector
    matrix: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def from_graph(cls, g: MolGraph, logp: float, mr: float, schema: Schema = DEFAULT_SCHEMA) -> DatasetRecord:
        # the matrix follows the atom order of the canonical string, so every
        # record of a molecule is encoded identically whatever its input order
        smiles = write_smiles(g)
        return cls(smiles, float(logp), float(mr), bin_conditions(logp, mr),
                   encode_matrix(parse_smiles(smiles), schema))


def _record_size(schema: Schema) -> int:
    return SMILES_WIDTH + 16 + 2 + (schema.flat_size + 7) // 8


def _pack_record(rec: DatasetRecord) -> bytes:
    raw = rec.smiles.encode("ascii")
    if len(raw) > SMILES_WIDTH:
        raise DataError(f"SMILES longer than {SMILES_WIDTH} bytes: {rec.smiles}")
    bits = np.packbits(rec.matrix.reshape(-1).astype(np.uint8)).tobytes()
    return (raw.ljust(SMILES_WIDTH, b"\0") + struct.pack("<ddbb", rec.logp, rec.mr,
                                                       rec.condition.logp_bin, rec.condition.mr_bin // 10) + bits)


def write_cache(path: str | Path, records: list[DatasetRecord], schema: Schema = DEFAULT_SCHEMA) -> None:
    h = bytes.fromhex(schema_hash(schema))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, schema.S, schema.A, schema.B, h, len(records)))
        for rec in records:
            fh.write(_pack_record(rec))


@dataclass
class RecordCache:
    """A loaded cache: matrices stay bit-packed until a batch needs them."""

    schema: Schema
    schema_hash: str
    smiles: list[str]
    logp: np.ndarray
    mr: np.ndarray
    logp_bin: np.ndarray
    mr_bin: np.ndarray
    packed: np.ndarray

    def __len__(self) -> int:
        return len(self.smiles)

    def matrices(self, idx) -> np.ndarray:
        """Flattened float64 matrices for the given indices, shape ``(k, flat_size)``."""
        bits = np.unpackbits(self.packed[idx], axis=-1, count=self.schema.flat_size)
        return bits.astype(np.float64)

    def conditions(self, idx) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx))
        rows = np.arange(len(idx))
        out = np.zeros((len(idx), CONDITION_DIM))
        out[rows, self.logp_bin[idx] - LOGP_BINS[0]] = 1.0
        out[rows, len(LOGP_BINS) + (self.mr_bin[idx] - MR_BINS[0]) // 10] = 1.0
        return out

    def record(self, k: int) -> DatasetRecord:
        cond = ConditionVector(int(self.logp_bin[k]), int(self.mr_bin[k]))
        x = self.matrices([k])[0].reshape(self.schema.S, self.schema.width)
        return DatasetRecord(self.smiles[k], float(self.logp[k]), float(self.mr[k]), cond, x)


def read_cache(path: str | Path) -> RecordCache:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise DataError(f"{path}: truncated cache header")
    magic, version, S, A, B, h, count = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise DataError(f"{path}: not a record cache")
    if version != CACHE_VERSION:
        raise DataError(f"{path}: unsupported cache version {version}")
    schema = Schema(S, A, B)
    if h.hex() != schema_hash(schema):
        raise SchemaError(f"{path}: schema hash does not match its constants")
    size = _record_size(schema)
    body = data[_HEADER.size:]
    if len(body) != count * size:
        raise DataError(f"{path}: expected {count} records of {size} bytes, found {len(body)} bytes")
    rec = np.frombuffer(body, dtype=np.uint8).reshape(count, size)
    props = rec[:, SMILES_WIDTH:SMILES_WIDTH + 18].copy()
    smiles = [bytes(r).rstrip(b"\0").decode("ascii") for r in rec[:, :SMILES_WIDTH]]
    return RecordCache(
        schema=schema,
        schema_hash=h.hex(),
        smiles=smiles,
        logp=props[:, 0:8].copy().view("<f8").ravel(),
        mr=props[:, 8:16].copy().view("<f8").ravel(),
        logp_bin=props[:, 16].view(np.int8).astype(np.int64),
        mr_bin=props[:, 17].view(np.int8).astype(np.int64) * 10,
        packed=rec[:, SMILES_WIDTH + 18:].copy(),
    )


# -- manifest -----------------------------------------------------------------------


@dataclass
class DatasetManifest:
    source_path: str
    schema: dict
    schema_hash: str
    counts: dict
    split_seed: int
    train_indices: list[int]
    test_indices: list[int]
    cache_path: str
    # directory that a relative cache_path is resolved against; not serialized
    root: Path = field(default=Path("."), repr=False, compare=False)

    def to_json(self) -> str:
        data = {k: v for k, v in self.__dict__.items() if k != "root"}
        return json.dumps(data, indent=1, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> DatasetManifest:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls(**raw, root=Path(path).parent)
        except (json.JSONDecodeError, TypeError) as exc:
            raise DataError(f"{path}: malformed manifest ({exc})") from None

    @property
    def resolved_cache_path(self) -> Path:
        return self.root / self.cache_path

    def open_cache(self) -> RecordCache:
        cache = read_cache(self.resolved_cache_path)
        if cache.schema_hash != self.schema_hash or cache.schema.to_dict() != self.schema:
            raise SchemaError(f"cache {self.cache_path} schema {cache.schema_hash} "
                              f"does not match manifest {self.schema_hash}")
        return cache


@dataclass
class IngestConfig:
    schema: Schema = DEFAULT_SCHEMA
    split_seed: int = 0
    skip_bad_lines: bool = False


def _read_lines(path: Path, skip_bad: bool, counts: Counter) -> Iterator[tuple[int, str, float | None, float | None]]:
    text = path.read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        cols = line.split("\t")
        try:
            if len(cols) == 1:
                yield lineno, cols[0].strip(), None, None
                continue
            if len(cols) != 3:
                raise LineError(f"expected 1 or 3 tab-separated columns, got {len(cols)}", lineno)
            try:
                lp, mr = float(cols[1]), float(cols[2])
            except ValueError:
                raise LineError(f"property columns are not numbers: {cols[1]!r}, {cols[2]!r}", lineno) from None
            if not (math.isfinite(lp) and math.isfinite(mr)):
                raise LineError("property columns must be finite", lineno)
            yield lineno, cols[0].strip(), lp, mr
        except LineError:
            if not skip_bad:
                raise
            counts["bad_line"] += 1


def ingest(path: str | Path, out_dir: str | Path, config: IngestConfig | None = None) -> DatasetManifest:
    """Filter and tensorize ``path`` into ``out_dir/dataset.mgcd`` + ``manifest.json``."""
    config = config or IngestConfig()
    path, out_dir = Path(path), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rejected: Counter = Counter()
    records: list[DatasetRecord] = []
    total = 0
    for lineno, smi, lp, mr in _read_lines(path, config.skip_bad_lines, rejected):
        total += 1
        verdict = accept_molecule(smi, lp, mr, config.schema)
        if not verdict.accepted:
            rejected[verdict.reason] += 1
            continue
        try:
            records.append(DatasetRecord.from_graph(verdict.graph, verdict.logp, verdict.mr, config.schema))
        except SizeOverflow:
            rejected["size"] += 1
    cache_path = out_dir / "dataset.mgcd"
    write_cache(cache_path, records, config.schema)
    manifest = DatasetManifest(
        source_path=str(path),
        schema=config.schema.to_dict(),
        schema_hash=schema_hash(config.schema),
        counts={"total": total, "accepted": len(records), "rejected": dict(sorted(rejected.items()))},
        split_seed=config.split_seed,
        train_indices=[],
        test_indices=[],
        cache_path=cache_path.name,
        root=out_dir,
    )
    split(manifest, config.split_seed)
    manifest.save(out_dir / "manifest.json")
    return manifest


def split(manifest: DatasetManifest, seed: int) -> tuple[list[int], list[int]]:
    """Seeded shuffle then a 90/10 partition (test size rounded half up)."""
    n = manifest.counts["accepted"]
    perm = make_rng(seed, 0x5B17).permutation(n)
    n_test = (n + 5) // 10
    test = sorted(int(k) for k in perm[:n_test])
    train = sorted(int(k) for k in perm[n_test:])
    manifest.split_seed = int(seed)
    manifest.train_indices, manifest.test_indices = train, test
    return train, test


def batches(manifest: DatasetManifest, which: str, batch_size: int, epoch_seed: int,
            cache: RecordCache | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(X, c)`` minibatches of flattened matrices and condition vectors.

    The order is a fresh seeded shuffle per ``epoch_seed``; the final partial
    batch is included.
    """
    cache = cache if cache is not None else manifest.open_cache()
    if cache.schema_hash != manifest.schema_hash:
        raise SchemaError("cache and manifest schemas differ")
    if which not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {which!r}")
    idx = np.asarray(manifest.train_indices if which == "train" else manifest.test_indices, dtype=np.int64)
    order = idx[make_rng(epoch_seed, 0xBA7C).permutation(len(idx))]
    for start in range(0, len(order), batch_size):
        sel = order[start:start + batch_size]
        yield cache.matrices(sel), cache.conditions(sel)
