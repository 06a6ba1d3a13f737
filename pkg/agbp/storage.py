"""Model, partition, event and classification files.

H is stored in Matrix Market coordinate format, observations as CSV
``row,z,v``, partitions as CSV ``variable,cluster`` and event streams as CSV
``time,factor,z,v``. Loaders report the offending line on malformed input.
"""
import csv
import json
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from agbp.config import get_logger
from agbp.errors import ParseError
from agbp.model import ClusterPartition, LinearModel

logger = get_logger(__name__)

PathLike = Union[str, Path]

MM_HEADER = "%%matrixmarket matrix coordinate real general"
OBSERVATION_FIELDS = ["row", "z", "v"]
PARTITION_FIELDS = ["variable", "cluster"]
EVENT_FIELDS = ["time", "factor", "z", "v"]


def _format(value: float) -> str:
    return format(float(value), ".17g")


def read_matrix_market(path: PathLike) -> Tuple[int, int, np.ndarray, np.ndarray, np.ndarray]:
    """Parse a coordinate Matrix Market file into 0-based triplets.

    Rejects duplicate positions and entry counts that disagree with the size
    line, which ``scipy.io.mmread`` would silently accept.
    """
    path = str(path)
    rows: List[int] = []
    cols: List[int] = []
    values: List[float] = []
    seen = set()
    size = None
    with open(path, "r") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if lineno == 1:
                tokens = line.lower().split()
                if tokens[:3] != ["%%matrixmarket", "matrix", "coordinate"]:
                    raise ParseError("expected a '%%MatrixMarket matrix coordinate' header", path, lineno)
                if len(tokens) != 5:
                    raise ParseError("header must name a field and a symmetry", path, lineno)
                field, symmetry = tokens[3], tokens[4]
                if field not in ("real", "integer"):
                    raise ParseError(f"unsupported field '{field}'", path, lineno)
                if symmetry != "general":
                    raise ParseError("only 'general' symmetry is supported", path, lineno)
                continue
            if not line or line.startswith("%"):
                continue
            parts = line.split()
            if size is None:
                if len(parts) != 3:
                    raise ParseError("size line must hold 'rows cols entries'", path, lineno)
                try:
                    size = tuple(int(p) for p in parts)
                except ValueError:
                    raise ParseError(f"invalid size line '{line}'", path, lineno) from None
                continue
            if len(parts) != 3:
                raise ParseError(f"entry line must hold 'row col value', got '{line}'", path, lineno)
            try:
                r, c, h = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
            except ValueError:
                raise ParseError(f"invalid entry '{line}'", path, lineno) from None
            if not (0 <= r < size[0] and 0 <= c < size[1]):
                raise ParseError(f"entry ({r + 1}, {c + 1}) outside a {size[0]}x{size[1]} matrix", path, lineno)
            if (r, c) in seen:
                raise ParseError(f"duplicate entry ({r + 1}, {c + 1})", path, lineno)
            seen.add((r, c))
            rows.append(r)
            cols.append(c)
            values.append(h)
    if size is None:
        raise ParseError("missing size line", path)
    if len(values) != size[2]:
        raise ParseError(f"size line announces {size[2]} entries, found {len(values)}", path)
    return size[0], size[1], np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(values)


def _read_csv(path: PathLike, fields: List[str]) -> List[Tuple[int, dict]]:
    path = str(path)
    with open(path, "r", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != fields:
            raise ParseError(f"expected header '{','.join(fields)}'", path, 1)
        return [(reader.line_num, {k.strip(): (v or "").strip() for k, v in rec.items()}) for rec in reader]


def read_observations(path: PathLike, rows: int) -> Tuple[np.ndarray, np.ndarray]:
    z = np.full(rows, np.nan)
    v = np.full(rows, np.nan)
    for lineno, rec in _read_csv(path, OBSERVATION_FIELDS):
        try:
            i, zi, vi = int(rec["row"]), float(rec["z"]), float(rec["v"])
        except (TypeError, ValueError):
            raise ParseError(f"invalid observation record {rec}", str(path), lineno) from None
        if not 0 <= i < rows:
            raise ParseError(f"row index {i} out of range [0, {rows})", str(path), lineno)
        if not np.isnan(z[i]):
            raise ParseError(f"duplicate observation for row {i}", str(path), lineno)
        if not (vi > 0 and np.isfinite(vi)):
            raise ParseError(f"variance of row {i} must be positive, got {rec['v']}", str(path), lineno)
        z[i], v[i] = zi, vi
    missing = np.flatnonzero(np.isnan(z))
    if missing.size:
        raise ParseError(f"no observation for row {missing[0]}", str(path))
    return z, v


def load_model(matrix_path: PathLike, observations_path: PathLike) -> LinearModel:
    m, n, rows, cols, values = read_matrix_market(matrix_path)
    z, v = read_observations(observations_path, m)
    model = LinearModel(m, n, rows, cols, values, z, v)
    logger.info("loaded %dx%d model with %d nonzeros from %s", m, n, model.nnz, matrix_path)
    return model


def save_model(model: LinearModel, matrix_path: PathLike, observations_path: PathLike) -> None:
    matrix = sp.coo_matrix((model.coefficients, (model.row_index, model.col_index)),
                           shape=(model.rows, model.cols))
    scipy.io.mmwrite(str(matrix_path), matrix, comment="agbp linear model H",
                     field="real", precision=17, symmetry="general")
    with open(observations_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(OBSERVATION_FIELDS)
        for i, (zi, vi) in enumerate(zip(model.observations, model.variances)):
            writer.writerow([i, _format(zi), _format(vi)])


def load_partition(path: PathLike, cluster_count: Optional[int] = None) -> ClusterPartition:
    records = _read_csv(path, PARTITION_FIELDS)
    assignment = np.full(len(records), -1, dtype=np.int64)
    for lineno, rec in records:
        try:
            j, c = int(rec["variable"]), int(rec["cluster"])
        except (TypeError, ValueError):
            raise ParseError(f"invalid partition record {rec}", str(path), lineno) from None
        if not 0 <= j < len(records) or assignment[j] != -1:
            raise ParseError(f"variable index {j} out of range or repeated", str(path), lineno)
        assignment[j] = c
    if cluster_count is None:
        cluster_count = int(assignment.max()) + 1 if assignment.size else 0
    return ClusterPartition(cluster_count, assignment)


def save_partition(partition: ClusterPartition, path: PathLike) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(PARTITION_FIELDS)
        for j, c in enumerate(partition.assignment):
            writer.writerow([j, int(c)])


def load_events(path: PathLike) -> list:
    from agbp.dynamics import ObservationEvent

    events = []
    for lineno, rec in _read_csv(path, EVENT_FIELDS):
        try:
            event = ObservationEvent(time=float(rec["time"]), factor=int(rec["factor"]),
                                     observation=float(rec["z"]), variance=float(rec["v"]))
        except (TypeError, ValueError) as e:
            raise ParseError(f"invalid event record {rec}: {e}", str(path), lineno) from None
        events.append(event)
    return events


def save_classification(graph, classification, path: PathLike) -> None:
    """Debug export of the internal/tie split as CSV ``factor,kind,cluster``."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["factor", "kind", "cluster"])
        for i in range(graph.factor_count):
            kind = "tie" if classification.is_tie[i] else "internal"
            writer.writerow([i, kind, int(classification.factor_cluster[i])])


def write_json(payload, path: PathLike) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
