"""CSV writers and readers.

Every file starts with one comment line naming the schema and its version,
and every float is written with 9 significant digits so that identical runs
give identical bytes.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Iterable, Sequence

SCHEMA_VERSION = 1
TRAJECTORY_COLUMNS = ("time_s", "vehicle_id", "class", "link_id", "position_m", "speed_mps", "accel_mps2")
EVENT_COLUMNS = ("time_s", "vehicle_id", "event_kind", "detail")
METRICS_COLUMNS = ("replication", "interval_start_s", "region", "density_veh_per_m", "flow_veh_per_s")
PHASE_COLUMNS = ("replication", "time_s", "k1", "k2", "k1_smoothed", "k2_smoothed")
BIFURCATION_COLUMNS = ("scenario", "replication", "detected", "index", "k1", "k2", "K", "ratio_to_jam")
COMPARISON_COLUMNS = ("source", "scenario", "replications", "detected", "mean_K", "sd_K", "mean_ratio_to_jam",
                      "sd_ratio_to_jam", "mean_distance_from_origin", "delta_mean_K")


class SchemaError(ValueError):
    pass


def fmt(x) -> str:
    """Fixed formatting: 9 significant digits for floats, plain ints and strings."""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isnan(x):
            return ""
        return "%.9g" % x
    if hasattr(x, "item"):  # numpy scalar
        return fmt(x.item())
    return str(x)


def header(kind: str) -> str:
    return f"# tworing {kind} schema v{SCHEMA_VERSION}\n"


def write_csv(path, kind: str, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    buf.write(header(kind))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    Path(path).write_text(buf.getvalue())


def write_columns(path, kind: str, columns: Sequence[str], arrays: Sequence) -> None:
    """Column-oriented variant of ``write_csv`` for large numeric tables."""
    write_csv(path, kind, columns, zip(*arrays))


def read_csv(path, kind: str) -> list[dict]:
    """Rows of a file written by ``write_csv``.

    Raises:
        SchemaError: if the header comment names another schema or version.
    """
    text = Path(path).read_text()
    first, _, rest = text.partition("\n")
    if first + "\n" != header(kind):
        raise SchemaError(f"{path}: expected '{header(kind).strip()}', found '{first.strip()}'")
    return list(csv.DictReader(io.StringIO(rest)))
