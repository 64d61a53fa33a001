"""Loading, validation and persistence of embeddings, tile manifests and clinical tables.

File formats owned here:
  * EMB1 binary: magic ``EMB1``, u32 version=1, u64 n_rows, u32 dim,
    then row-major little-endian float32 values.
  * Manifest CSV: ``tile_id,slide_id,patient_id[,label][,image_path][,x][,y]``.
  * Clinical CSV: ``patient_id,duration_years,event,<covariate...>``.

Loaded objects are immutable after construction and safe for shared reads.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, DataFormatError

EMB1_MAGIC = b"EMB1"
EMB1_VERSION = 1
_EMB1_HEADER = struct.Struct("<4sIQI")  # magic, version, n_rows, dim

MANIFEST_REQUIRED = ("tile_id", "slide_id", "patient_id")
MANIFEST_OPTIONAL = ("label", "image_path", "x", "y")
CLINICAL_REQUIRED = ("patient_id", "duration_years", "event")


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense n_rows x dim float32 feature matrix, row-aligned with a tile manifest."""

    values: np.ndarray
    tile_ids: tuple[str, ...] | None = None  # present when the source CSV carried them

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 2:
            raise DataFormatError(f"embedding matrix must be 2-d, got shape {values.shape}")
        object.__setattr__(self, "values", values)
        bad = np.where(~np.isfinite(values).all(axis=1))[0]
        if bad.size:
            raise DataFormatError(f"non-finite embedding value at row {bad[0]}")
        if self.tile_ids is not None and len(self.tile_ids) != values.shape[0]:
            raise DataFormatError(
                f"{len(self.tile_ids)} tile ids for {values.shape[0]} embedding rows"
            )

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def write_embeddings(matrix: EmbeddingMatrix, path: str | Path) -> None:
    """Write an EmbeddingMatrix in EMB1 binary form (bit-exact round trip)."""
    path = Path(path)
    header = _EMB1_HEADER.pack(EMB1_MAGIC, EMB1_VERSION, matrix.n_rows, matrix.dim)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(matrix.values.astype("<f4", copy=False).tobytes())


def load_embeddings(path: str | Path) -> EmbeddingMatrix:
    """Load embeddings from an EMB1 binary or CSV file.

    Dispatches on the file's leading magic bytes, so either format works
    regardless of extension. CSV may carry a leading ``tile_id`` column; when
    present the ids are retained so ``align`` can verify row order.
    """
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"embedding file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == EMB1_MAGIC:
        return _load_emb1(path)
    return _load_embedding_csv(path)


def _load_emb1(path: Path) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        raw = fh.read(_EMB1_HEADER.size)
        if len(raw) < _EMB1_HEADER.size:
            raise DataFormatError(f"{path}: truncated EMB1 header")
        magic, version, n_rows, dim = _EMB1_HEADER.unpack(raw)
        if magic != EMB1_MAGIC:
            raise DataFormatError(f"{path}: bad magic {magic!r}")
        if version != EMB1_VERSION:
            raise DataFormatError(f"{path}: unsupported EMB1 version {version}")
        data = np.fromfile(fh, dtype="<f4")
    if data.size != n_rows * dim:
        raise DataFormatError(
            f"{path}: header declares {n_rows}x{dim} values, file holds {data.size}"
        )
    values = data.reshape(n_rows, dim)
    bad = np.where(~np.isfinite(values).all(axis=1))[0]
    if bad.size:
        raise DataFormatError(f"{path}: non-finite value at row {bad[0]}")
    return EmbeddingMatrix(values=values)


def _load_embedding_csv(path: Path) -> EmbeddingMatrix:
    try:
        return _read_embedding_csv(path)
    except (csv.Error, UnicodeDecodeError) as exc:
        raise DataFormatError(f"{path}: not an EMB1 file and not parseable as CSV ({exc})") from None


def _read_embedding_csv(path: Path) -> EmbeddingMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty embedding CSV") from None
        has_ids = bool(header) and header[0].strip() == "tile_id"
        n_features = len(header) - (1 if has_ids else 0)
        if n_features < 1:
            raise DataFormatError(f"{path}: embedding CSV declares no feature columns")
        tile_ids: list[str] = []
        rows: list[list[float]] = []
        for i, raw in enumerate(reader):
            if len(raw) != len(header):
                raise DataFormatError(
                    f"{path}: row {i} has {len(raw)} fields, header has {len(header)}"
                )
            fields = raw[1:] if has_ids else raw
            if has_ids:
                tile_ids.append(raw[0])
            try:
                parsed = [float(v) for v in fields]
            except ValueError as exc:
                raise DataFormatError(f"{path}: row {i}: {exc}") from None
            if not all(np.isfinite(parsed)):
                raise DataFormatError(f"{path}: non-finite value at row {i}")
            rows.append(parsed)
    if not rows:
        raise DataFormatError(f"{path}: embedding CSV has a header but no rows")
    values = np.asarray(rows, dtype=np.float32)
    return EmbeddingMatrix(values=values, tile_ids=tuple(tile_ids) if has_ids else None)


@dataclass(frozen=True)
class TileRecord:
    tile_id: str
    slide_id: str
    patient_id: str
    label: str | None = None
    image_path: str | None = None
    x: float | None = None
    y: float | None = None


@dataclass(frozen=True)
class TileManifest:
    """Per-tile metadata in file order; tile ids unique."""

    records: tuple[TileRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def tile_ids(self) -> tuple[str, ...]:
        return tuple(r.tile_id for r in self.records)

    @property
    def patient_ids(self) -> tuple[str, ...]:
        return tuple(r.patient_id for r in self.records)

    @property
    def labels(self) -> tuple[str | None, ...]:
        return tuple(r.label for r in self.records)

    def index_of(self, tile_id: str) -> int:
        try:
            return self._id_index[tile_id]
        except AttributeError:
            object.__setattr__(
                self, "_id_index", {r.tile_id: i for i, r in enumerate(self.records)}
            )
            return self._id_index[tile_id]


def load_manifest(path: str | Path) -> TileManifest:
    """Load a tile manifest CSV, rejecting missing columns and duplicate tile ids."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"manifest file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataFormatError(f"{path}: empty manifest")
        missing = [c for c in MANIFEST_REQUIRED if c not in reader.fieldnames]
        if missing:
            raise DataFormatError(f"{path}: manifest missing required column(s) {missing}")
        records: list[TileRecord] = []
        seen: set[str] = set()
        for i, row in enumerate(reader):
            tile_id = (row.get("tile_id") or "").strip()
            patient_id = (row.get("patient_id") or "").strip()
            if not tile_id:
                raise DataFormatError(f"{path}: row {i}: empty tile_id")
            if tile_id in seen:
                raise DataFormatError(f"{path}: duplicate tile_id {tile_id!r}")
            if not patient_id:
                raise DataFormatError(f"{path}: row {i}: empty patient_id")
            seen.add(tile_id)
            records.append(
                TileRecord(
                    tile_id=tile_id,
                    slide_id=(row.get("slide_id") or "").strip(),
                    patient_id=patient_id,
                    label=_opt_str(row.get("label")),
                    image_path=_opt_str(row.get("image_path")),
                    x=_opt_float(row.get("x"), path, i, "x"),
                    y=_opt_float(row.get("y"), path, i, "y"),
                )
            )
    return TileManifest(records=tuple(records))


def _opt_str(value: str | None) -> str | None:
    if value is None:
        return None
    value = value.strip()
    return value or None


def _opt_float(value: str | None, path: Path, row: int, col: str) -> float | None:
    if value is None or not value.strip():
        return None
    try:
        return float(value)
    except ValueError:
        raise DataFormatError(f"{path}: row {row}: bad {col} value {value!r}") from None


@dataclass(frozen=True)
class ClinicalRecord:
    patient_id: str
    duration_years: float
    event: int
    covariates: dict[str, float | None]  # None marks a missing value, never a sentinel


@dataclass(frozen=True)
class ClinicalTable:
    """Per-patient follow-up table keyed by patient_id, in file order."""

    records: tuple[ClinicalRecord, ...]
    covariate_names: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.records)

    @property
    def patient_ids(self) -> tuple[str, ...]:
        return tuple(r.patient_id for r in self.records)

    @property
    def n_events(self) -> int:
        return sum(r.event for r in self.records)

    def by_id(self, patient_id: str) -> ClinicalRecord:
        for r in self.records:
            if r.patient_id == patient_id:
                return r
        raise KeyError(patient_id)

    @property
    def incomplete_patients(self) -> tuple[str, ...]:
        """Patients with at least one missing covariate value (flagged, never dropped)."""
        return tuple(
            r.patient_id for r in self.records if any(v is None for v in r.covariates.values())
        )


def load_clinical(path: str | Path) -> ClinicalTable:
    """Load a clinical CSV; all non-required columns become named covariates."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"clinical file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DataFormatError(f"{path}: empty clinical table")
        missing = [c for c in CLINICAL_REQUIRED if c not in reader.fieldnames]
        if missing:
            raise DataFormatError(f"{path}: clinical table missing required column(s) {missing}")
        covariate_names = tuple(c for c in reader.fieldnames if c not in CLINICAL_REQUIRED)
        records: list[ClinicalRecord] = []
        seen: set[str] = set()
        for i, row in enumerate(reader):
            pid = (row.get("patient_id") or "").strip()
            if not pid:
                raise DataFormatError(f"{path}: row {i}: empty patient_id")
            if pid in seen:
                raise DataFormatError(f"{path}: duplicate patient_id {pid!r}")
            seen.add(pid)
            try:
                duration = float(row["duration_years"])
            except (TypeError, ValueError):
                raise DataFormatError(
                    f"{path}: row {i}: bad duration_years {row.get('duration_years')!r}"
                ) from None
            if not np.isfinite(duration) or duration <= 0:
                raise DataFormatError(
                    f"{path}: row {i}: duration_years must be > 0, got {duration}"
                )
            raw_event = (row.get("event") or "").strip()
            if raw_event not in ("0", "1"):
                raise DataFormatError(
                    f"{path}: row {i}: event must be 0 or 1, got {raw_event!r}"
                )
            covariates: dict[str, float | None] = {}
            for name in covariate_names:
                raw = (row.get(name) or "").strip()
                if not raw:
                    covariates[name] = None
                    continue
                try:
                    covariates[name] = float(raw)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row {i}: bad value {raw!r} for covariate {name!r}"
                    ) from None
            records.append(
                ClinicalRecord(
                    patient_id=pid,
                    duration_years=duration,
                    event=int(raw_event),
                    covariates=covariates,
                )
            )
    return ClinicalTable(records=tuple(records), covariate_names=covariate_names)


@dataclass(frozen=True)
class AlignedDataset:
    """Row-aligned pairing of an embedding matrix and a tile manifest."""

    embeddings: EmbeddingMatrix
    manifest: TileManifest

    def __len__(self) -> int:
        return len(self.manifest)

    def row(self, i: int) -> tuple[np.ndarray, TileRecord]:
        return self.embeddings.values[i], self.manifest.records[i]


def align(embeddings: EmbeddingMatrix, manifest: TileManifest) -> AlignedDataset:
    """Pair embeddings with a manifest, verifying counts and (when present) tile-id order."""
    if embeddings.n_rows != len(manifest):
        raise AlignmentError(
            f"{embeddings.n_rows} embedding rows vs {len(manifest)} manifest rows"
        )
    if embeddings.tile_ids is not None:
        for i, (a, b) in enumerate(zip(embeddings.tile_ids, manifest.tile_ids)):
            if a != b:
                raise AlignmentError(
                    f"tile_id order mismatch at row {i}: embeddings have {a!r}, manifest has {b!r}"
                )
    return AlignedDataset(embeddings=embeddings, manifest=manifest)
