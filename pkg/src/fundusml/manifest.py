"""Dataset manifests, label catalogs and prediction matrices, with CSV I/O.

The on-disk form is plain CSV, UTF-8, LF line endings:
  manifest:    id,filepath,<acronym columns with 0/1 cells>
  predictions: id,<acronym columns with probability cells>
Sample ids are restricted to [A-Za-z0-9_-] so no quoting is ever needed in
the id column and files stay diff-friendly.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

_ID_RE = re.compile(r"^[A-Za-z0-9_-]+$")


class ManifestError(Exception):
    """Base class for manifest validation and I/O failures."""


class MissingColumn(ManifestError):
    pass


class NonBinaryCell(ManifestError):
    pass


class DuplicateId(ManifestError):
    pass


class OutOfRangeProbability(ManifestError):
    pass


@dataclass(frozen=True)
class LabelCatalog:
    """Ordered set of (acronym, full name) pairs with designated NORMAL and
    OTHER entries.  NORMAL anchors the binary disease-vs-healthy metrics,
    OTHER absorbs folded rare labels."""

    labels: tuple[tuple[str, str], ...]
    normal_index: int
    other_index: int

    def __post_init__(self):
        acronyms = [a for a, _ in self.labels]
        if len(set(acronyms)) != len(acronyms):
            raise ManifestError("duplicate acronyms in catalog")
        if any(not a for a in acronyms):
            raise ManifestError("empty acronym in catalog")
        n = len(self.labels)
        if not (0 <= self.normal_index < n and 0 <= self.other_index < n):
            raise ManifestError("normal/other index out of range")
        if self.normal_index == self.other_index:
            raise ManifestError("normal_index must differ from other_index")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def acronyms(self) -> tuple[str, ...]:
        return tuple(a for a, _ in self.labels)

    @property
    def normal_acronym(self) -> str:
        return self.labels[self.normal_index][0]

    @property
    def other_acronym(self) -> str:
        return self.labels[self.other_index][0]

    def index_of(self, acronym: str) -> int:
        for i, (a, _) in enumerate(self.labels):
            if a == acronym:
                return i
        raise ManifestError(f"unknown label {acronym!r}")

    @classmethod
    def from_acronyms(cls, acronyms, normal: str = "NORMAL", other: str = "OTHER") -> "LabelCatalog":
        """Build a catalog from bare acronyms (full name = acronym).

        NORMAL/OTHER are located by name; a source catalog that lacks them
        falls back to the first and last positions.
        """
        acronyms = list(acronyms)
        if len(acronyms) < 2:
            raise ManifestError("catalog needs at least two labels")
        ni = acronyms.index(normal) if normal in acronyms else 0
        oi = acronyms.index(other) if other in acronyms else len(acronyms) - 1
        if ni == oi:
            oi = 0 if ni != 0 else len(acronyms) - 1
        return cls(tuple((a, a) for a in acronyms), ni, oi)


#: The 20-class retinal disease catalog used as the default throughout.
DEFAULT_CATALOG = LabelCatalog(
    labels=(
        ("DR", "Diabetic Retinopathy"),
        ("NORMAL", "Normal Retina"),
        ("MH", "Media Haze"),
        ("ODC", "Optic Disc Cupping"),
        ("TSLN", "Tessellation"),
        ("ARMD", "Age-Related Macular Degeneration"),
        ("DN", "Drusen"),
        ("MYA", "Myopia"),
        ("BRVO", "Branch Retinal Vein Occlusion"),
        ("ODP", "Optic Disc Pallor"),
        ("CRVO", "Central Retinal Vein Occlusion"),
        ("CNV", "Choroidal Neovascularization"),
        ("RS", "Retinitis"),
        ("ODE", "Optic Disc Edema"),
        ("LS", "Laser Scars"),
        ("CSR", "Central Serous Retinopathy"),
        ("HTR", "Hypertensive Retinopathy"),
        ("ASR", "Arteriosclerotic Retinopathy"),
        ("CRS", "Chorioretinitis"),
        ("OTHER", "Other Diseases"),
    ),
    normal_index=1,
    other_index=19,
)


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: str
    labels: tuple[int, ...]  # 0/1 per catalog position

    def __post_init__(self):
        if not _ID_RE.match(self.id):
            raise ManifestError(f"invalid sample id {self.id!r}")
        if any(b not in (0, 1) for b in self.labels):
            raise ManifestError(f"non-binary label bits for {self.id!r}")


@dataclass(frozen=True)
class DatasetManifest:
    catalog: LabelCatalog
    samples: tuple[SampleRecord, ...]
    split_tag: str | None = None

    def __post_init__(self):
        n = len(self.catalog)
        ids = set()
        for s in self.samples:
            if len(s.labels) != n:
                raise ManifestError(f"label vector of {s.id!r} has wrong length")
            if s.id in ids:
                raise DuplicateId(f"duplicate sample id {s.id!r}")
            ids.add(s.id)

    def __len__(self) -> int:
        return len(self.samples)

    def label_matrix(self) -> np.ndarray:
        """|samples| x |labels| int array of the label bits."""
        if not self.samples:
            return np.zeros((0, len(self.catalog)), dtype=int)
        return np.array([s.labels for s in self.samples], dtype=int)


def label_counts(m: DatasetManifest) -> np.ndarray:
    """Per-label positive counts, recomputed from the records."""
    return m.label_matrix().sum(axis=0) if m.samples else np.zeros(len(m.catalog), dtype=int)


def unlabeled_count(m: DatasetManifest) -> int:
    return sum(1 for s in m.samples if not any(s.labels))


def _check_header(header, expected, path):
    if header is None:
        raise MissingColumn(f"{path}: empty file, expected header {expected}")
    if list(header) != list(expected):
        for i, name in enumerate(expected):
            if i >= len(header) or header[i] != name:
                raise MissingColumn(f"{path}: expected column {name!r} at position {i}, "
                                    f"got {header[i] if i < len(header) else '<missing>'!r}")
        raise MissingColumn(f"{path}: unexpected extra columns {list(header[len(expected):])}")


def load_manifest(path, catalog: LabelCatalog) -> DatasetManifest:
    """Parse a manifest CSV against `catalog`; row order is preserved.

    Raises MissingColumn / NonBinaryCell / DuplicateId with the offending
    row index.  Rows whose label bits are all zero are accepted (they occur
    transiently during label folding) but counted in a warning.
    """
    expected = ["id", "filepath", *catalog.acronyms]
    samples = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        _check_header(header, expected, path)
        for row_idx, row in enumerate(reader):
            if len(row) != len(expected):
                raise MissingColumn(f"{path} row {row_idx}: expected {len(expected)} cells, got {len(row)}")
            sid, fp, *cells = row
            if sid in seen:
                raise DuplicateId(f"{path} row {row_idx}: duplicate id {sid!r}")
            seen.add(sid)
            bits = []
            for col, cell in zip(catalog.acronyms, cells):
                if cell not in ("0", "1"):
                    raise NonBinaryCell(f"{path} row {row_idx}: column {col!r} has non-binary cell {cell!r}")
                bits.append(int(cell))
            samples.append(SampleRecord(sid, fp, tuple(bits)))
    m = DatasetManifest(catalog, tuple(samples))
    n_zero = unlabeled_count(m)
    if n_zero:
        log.warning("%s: %d record(s) with all-zero label vectors", path, n_zero)
    return m


def save_manifest(m: DatasetManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "filepath", *m.catalog.acronyms])
        for s in m.samples:
            w.writerow([s.id, s.image_path, *s.labels])


@dataclass(frozen=True, eq=False)
class PredictionMatrix:
    """Per-sample probability vectors aligned to a manifest by id."""

    ids: tuple[str, ...]
    probs: np.ndarray  # |samples| x |labels|, float64 in [0, 1]
    acronyms: tuple[str, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2:
            raise ManifestError("probs must be 2-D")
        if p.shape[0] != len(self.ids):
            raise ManifestError("ids and probs row count differ")
        if p.shape[1] != len(self.acronyms):
            raise ManifestError("probs and acronyms column count differ")
        if p.size and (not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0):
            raise OutOfRangeProbability("probabilities must be finite and within [0, 1]")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __eq__(self, other):
        return (isinstance(other, PredictionMatrix)
                and self.ids == other.ids
                and self.acronyms == other.acronyms
                and np.array_equal(self.probs, other.probs))

    def row_for(self, sample_id: str) -> np.ndarray:
        return self.probs[self.ids.index(sample_id)]


def save_predictions(p: PredictionMatrix, path) -> None:
    """Write `id,<probability columns>`; floats use repr so the round trip
    is exact well past 9 decimal digits."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", *p.acronyms])
        for sid, row in zip(p.ids, p.probs):
            w.writerow([sid, *(repr(float(v)) for v in row)])


def load_predictions(path, catalog: LabelCatalog) -> PredictionMatrix:
    expected = ["id", *catalog.acronyms]
    ids = []
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        _check_header(header, expected, path)
        for row_idx, row in enumerate(reader):
            if len(row) != len(expected):
                raise MissingColumn(f"{path} row {row_idx}: expected {len(expected)} cells, got {len(row)}")
            ids.append(row[0])
            try:
                vals = [float(c) for c in row[1:]]
            except ValueError as e:
                raise OutOfRangeProbability(f"{path} row {row_idx}: {e}") from None
            for col, v in zip(catalog.acronyms, vals):
                if not np.isfinite(v) or v < 0.0 or v > 1.0:
                    raise OutOfRangeProbability(f"{path} row {row_idx}: column {col!r} value {v} outside [0, 1]")
            rows.append(vals)
    probs = np.array(rows, dtype=float) if rows else np.zeros((0, len(catalog)))
    return PredictionMatrix(tuple(ids), probs, catalog.acronyms)
