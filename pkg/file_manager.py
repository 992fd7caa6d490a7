"""
File Manager Module for the Sobolev Alignment Toolkit

Binary field, spectrum and parameter records, and discovery, validation and
loading of dataset archives.

Record layout (little-endian):
    16 bytes  magic, NUL-padded ("SOBFLD01", "SOBSPC01" or "SOBPRM01")
    u64       rows
    u64       cols
    f64 × rows·cols, row-major

Archive layout: a directory with a plain-text key=value `manifest.txt` and
numbered field pairs "000001_lq.fld" (condition) / "000001_hq.fld" (target).

Created: October 2026
Changes: Parameter files carry a .meta layout sidecar
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import parse_key_values
from data_models import Field2D, Spectrum2D
from errors import ArchiveError, ConfigError, ValidationError
from param_field import FieldParams, build_model


logger = logging.getLogger(__name__)

FIELD_MAGIC = b"SOBFLD01"
SPECTRUM_MAGIC = b"SOBSPC01"
PARAMS_MAGIC = b"SOBPRM01"
MAGIC_SIZE = 16
HEADER = struct.Struct("<16sQQ")
MANIFEST_NAME = "manifest.txt"


def encode_record(magic: bytes, values: np.ndarray) -> bytes:
    """Header plus little-endian float64 payload for a 2D array."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValidationError(f"Records hold 2D arrays, got ndim={values.ndim}")
    rows, cols = values.shape
    return HEADER.pack(magic.ljust(MAGIC_SIZE, b"\0"), rows, cols) + values.astype("<f8").tobytes(order="C")


def decode_record(data: bytes, magic: bytes, path: Optional[Path] = None) -> np.ndarray:
    """Inverse of encode_record; checks magic and payload length."""
    where = path or Path("<bytes>")
    if len(data) < HEADER.size:
        raise ArchiveError("Truncated record header", where)
    found, rows, cols = HEADER.unpack_from(data)
    if found.rstrip(b"\0") != magic:
        raise ArchiveError(f"Bad magic {found.rstrip(bytes(1))!r}, expected {magic!r}", where)
    expected = HEADER.size + 8 * rows * cols
    if len(data) != expected:
        raise ArchiveError(f"Record is {len(data)} bytes, expected {expected}", where)
    return np.frombuffer(data, dtype="<f8", offset=HEADER.size).reshape(rows, cols).astype(np.float64)


def _write_bytes(path: Path, data: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
    except OSError as e:
        raise ArchiveError(f"Could not write record ({e.strerror or e})", path)


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise ArchiveError(f"Could not read record ({e.strerror or e})", path)


def write_field(path: Path, field: Field2D) -> None:
    _write_bytes(Path(path), encode_record(FIELD_MAGIC, field.values))


def read_field(path: Path) -> Field2D:
    path = Path(path)
    return Field2D(decode_record(_read_bytes(path), FIELD_MAGIC, path))


def write_spectrum(path: Path, spectrum: Spectrum2D) -> None:
    _write_bytes(Path(path), encode_record(SPECTRUM_MAGIC, spectrum.coefficients))


def read_spectrum(path: Path) -> Spectrum2D:
    path = Path(path)
    return Spectrum2D(decode_record(_read_bytes(path), SPECTRUM_MAGIC, path))


def format_manifest(entries: Dict[str, str]) -> str:
    return "".join(f"{key}={value}\n" for key, value in entries.items())


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta")


def write_params(path: Path, model, params: FieldParams) -> None:
    """SOBPRM01 record of the flat parameter vector plus a `.meta` layout sidecar."""
    path = Path(path)
    meta = dict(model.describe())
    meta["param_count"] = str(params.param_count)
    meta["blocks"] = ";".join(f"{name}:{'x'.join(str(d) for d in params[name].shape)}" for name in params.names)
    if getattr(model, "kind", "") == "gain":
        meta["direction"] = ",".join(repr(float(v)) for v in model.direction.ravel())
    _write_bytes(path, encode_record(PARAMS_MAGIC, params.flatten()[None, :]))
    _write_bytes(_meta_path(path), format_manifest(meta).encode("utf-8"))
    logger.debug(f"Wrote {params.param_count} parameters to {path}")


def read_params(path: Path):
    """Returns (model, params) rebuilt from a parameter record and its sidecar."""
    path = Path(path)
    flat = decode_record(_read_bytes(path), PARAMS_MAGIC, path)
    meta_path = _meta_path(path)
    try:
        meta = parse_key_values(_read_bytes(meta_path).decode("utf-8"), meta_path)
    except (ConfigError, UnicodeDecodeError) as e:
        raise ArchiveError(f"Malformed parameter sidecar ({e})", meta_path)

    try:
        direction = None
        if "direction" in meta:
            height, width = (int(v) for v in meta["grid"].split("x"))
            direction = np.array([float(v) for v in meta["direction"].split(",")]).reshape(height, width)

        layout = []
        for entry in meta.get("blocks", "").split(";"):
            name, dims = entry.split(":")
            layout.append((name, tuple(int(d) for d in dims.split("x"))))
    except (KeyError, ValueError) as e:
        raise ArchiveError(f"Malformed parameter layout in sidecar ({e})", meta_path)
    model = build_model(meta, direction)

    blocks, offset = {}, 0
    vector = flat.ravel()
    for name, shape in layout:
        size = int(np.prod(shape))
        if offset + size > vector.size:
            raise ArchiveError(f"Sidecar describes more parameters than the record holds ({vector.size})", path)
        blocks[name] = vector[offset:offset + size].reshape(shape)
        offset += size
    if offset != vector.size:
        raise ArchiveError(f"Sidecar describes {offset} parameters, record holds {vector.size}", path)
    return model, FieldParams(blocks)


@dataclass
class ArchiveEntry:
    """One condition/target pair of a dataset archive."""
    index: int
    lq_path: Path
    hq_path: Path
    size_bytes: int


class ArchiveManager:
    """Discovers, validates and loads dataset archives."""

    def __init__(self, archive_dir: Path):
        """
        Initialize the manager for one archive directory.

        Args:
            archive_dir: Directory holding manifest.txt and the numbered field records
        """
        self.archive_dir = Path(archive_dir)
        self.logger = logging.getLogger(__name__)

    @property
    def manifest_path(self) -> Path:
        return self.archive_dir / MANIFEST_NAME

    @staticmethod
    def pair_names(index: int) -> Tuple[str, str]:
        return f"{index:06d}_lq.fld", f"{index:06d}_hq.fld"

    def write(self, manifest: Dict[str, str], pairs: List[Tuple[Field2D, Field2D]]) -> None:
        """
        Write the manifest and every (condition, target) pair.

        Raises:
            ArchiveError: If any file cannot be written (carries the path)
        """
        self.logger.info(f"Writing archive with {len(pairs)} pairs to: {self.archive_dir}")
        for index, (lq, hq) in enumerate(pairs, start=1):
            lq_name, hq_name = self.pair_names(index)
            write_field(self.archive_dir / lq_name, lq)
            write_field(self.archive_dir / hq_name, hq)
        _write_bytes(self.manifest_path, format_manifest(manifest).encode("utf-8"))

    def read_manifest(self) -> Dict[str, str]:
        """
        Parse the archive manifest.

        Raises:
            ArchiveError: If the manifest is missing or malformed
        """
        if not self.manifest_path.is_file():
            raise ArchiveError("Archive manifest not found", self.manifest_path)
        try:
            return parse_key_values(_read_bytes(self.manifest_path).decode("utf-8"), self.manifest_path)
        except (ConfigError, UnicodeDecodeError) as e:
            raise ArchiveError(f"Malformed manifest ({e})", self.manifest_path)

    def discover(self) -> List[ArchiveEntry]:
        """
        Find all numbered pairs and check them against the manifest count.

        Returns:
            Entries ordered by index
        """
        self.logger.info(f"Discovering archive in: {self.archive_dir}")
        manifest = self.read_manifest()
        try:
            count = int(manifest["count"])
        except (KeyError, ValueError):
            raise ArchiveError("Manifest has no valid 'count'", self.manifest_path)

        entries = []
        for index in range(1, count + 1):
            lq_name, hq_name = self.pair_names(index)
            lq_path, hq_path = self.archive_dir / lq_name, self.archive_dir / hq_name
            for path in (lq_path, hq_path):
                if not path.is_file():
                    raise ArchiveError("Archive record missing", path)
            size = lq_path.stat().st_size + hq_path.stat().st_size
            entries.append(ArchiveEntry(index=index, lq_path=lq_path, hq_path=hq_path, size_bytes=size))

        extra = [
            p for p in self.archive_dir.glob("*.fld") if p.name[:6].isdigit() and int(p.name[:6]) > count
        ]
        if extra:
            self.logger.warning(f"{len(extra)} records beyond the manifest count are ignored")

        self._log_archive_statistics(entries)
        return entries

    def load_pairs(self) -> List[Tuple[Field2D, Field2D]]:
        """Load every (condition, target) pair, checking that all share one grid."""
        pairs = []
        shape = None
        for entry in self.discover():
            lq, hq = read_field(entry.lq_path), read_field(entry.hq_path)
            hq.require_shape(lq.shape, f"pair {entry.index} target")
            if shape is None:
                shape = lq.shape
            lq.require_shape(shape, f"pair {entry.index}")
            pairs.append((lq, hq))
        return pairs

    def _log_archive_statistics(self, entries: List[ArchiveEntry]) -> None:
        """Log statistics about the discovered archive."""
        if not entries:
            self.logger.info("Archive holds no pairs")
            return
        total_mb = sum(e.size_bytes for e in entries) / (1024 * 1024)
        self.logger.info(f"Archive statistics: {len(entries)} pairs, {total_mb:.2f} MB")
