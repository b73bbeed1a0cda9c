"""Result tables, CSV files, run manifests and plot-data files."""

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from loguru import logger

from rtegrad import __version__
from rtegrad.core.domain import CellField
from rtegrad.core.errors import ConfigurationError

SCHEMA_VERSION = 1


@dataclass
class ResultTable:
    """Rows of a result file; ``kind`` is gradient, density or convergence."""

    kind: str
    columns: List[str]
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([float(row[name]) for row in self.rows])


def format_value(value: Any) -> str:
    """Decimal text with 17 significant digits for floats."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _position_columns(dim: int) -> List[str]:
    return ["cell_center"] if dim == 1 else ["x1", "x2"]


def field_table(
    values: CellField,
    kind: str,
    value_column: str,
    meta: Dict[str, Any],
    stderr: Optional[CellField] = None,
) -> ResultTable:
    """One row per cell in row-major order, prefixed by the ``meta`` columns."""
    dim = values.grid.domain.dim
    columns = list(meta) + _position_columns(dim) + [value_column]
    if stderr is not None:
        columns.append("stderr")
    centers = values.grid.centers
    rows = []
    for cell in range(values.grid.n_cells):
        row = dict(meta)
        for axis, name in enumerate(_position_columns(dim)):
            row[name] = float(centers[cell, axis])
        row[value_column] = float(values.values[cell])
        if stderr is not None:
            row["stderr"] = float(stderr.values[cell])
        rows.append(row)
    return ResultTable(kind=kind, columns=columns, rows=rows)


def gradient_table(
    gradient: CellField,
    experiment: str,
    method: str,
    N: Optional[int],
    seed: Union[int, str, None],
    stderr: Optional[CellField] = None,
) -> ResultTable:
    meta = {"experiment": experiment, "method": method, "N": N, "seed": seed}
    return field_table(gradient, "gradient", "gradient_value", meta, stderr)


def density_table(
    density: CellField, experiment: str, N: int, seed: int
) -> ResultTable:
    meta = {"experiment": experiment, "method": "mc", "N": N, "seed": seed}
    return field_table(density, "density", "density", meta)


def write_csv(table: ResultTable, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=table.columns, lineterminator="\n")
        writer.writeheader()
        for row in table.rows:
            writer.writerow({key: format_value(row.get(key)) for key in table.columns})
    logger.debug(f"Wrote {len(table.rows)} rows to {path}")
    return path


def read_csv(path: Union[str, Path]) -> ResultTable:
    """Read a result CSV back; the kind is recognized from its value column."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        columns = list(reader.fieldnames or [])
        rows = list(reader)
    for column, kind in (
        ("gradient_value", "gradient"),
        ("density", "density"),
        ("error", "convergence"),
    ):
        if column in columns:
            return ResultTable(kind=kind, columns=columns, rows=rows)
    raise ConfigurationError(f"{path} is not a result table")


def write_manifest(
    out_dir: Union[str, Path],
    config: Optional[Any],
    seeds: Sequence[int],
    extra: Optional[Dict[str, Any]] = None,
    name: str = "manifest.json",
) -> Path:
    """Write a JSON manifest next to the outputs of a run.

    Without a ``config`` (plot conversions) the config keys are left out.
    """
    manifest = {
        "seeds": [int(s) for s in seeds],
        "version": __version__,
        "schema_version": SCHEMA_VERSION,
    }
    if config is not None:
        canonical = config.canonical_json()
        manifest["config_sha256"] = hashlib.sha256(
            canonical.encode("utf-8")
        ).hexdigest()
        manifest["config"] = json.loads(canonical)
    if extra:
        manifest.update(extra)
    path = Path(out_dir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def file_sha256(path: Union[str, Path]) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_columns(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(header) + "\n")
        for values in zip(*columns):
            fh.write(" ".join(format_value(float(v)) for v in values) + "\n")
    return path


def emit_plotdata(
    table: ResultTable, out_dir: Union[str, Path], stem: str = "plot"
) -> List[Path]:
    """Write whitespace-separated plot data files with a header line.

    Field tables give ``(cell_center, value)`` or ``(x1, x2, value)``;
    convergence tables give ``(log10_N, log10_error)`` points plus the two
    endpoints of the least-squares line.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if table.kind == "convergence":
        log_n = np.log10(table.column("N"))
        with np.errstate(divide="ignore"):
            log_err = np.log10(table.column("error"))
        paths = [
            _write_columns(
                out / f"{stem}_points.dat", ["log10_N", "log10_error"], [log_n, log_err]
            )
        ]
        if len(log_n) >= 2 and np.all(np.isfinite(log_err)):
            slope, intercept = np.polyfit(log_n, log_err, 1)
            ends = np.array([log_n.min(), log_n.max()])
            paths.append(
                _write_columns(
                    out / f"{stem}_fit.dat",
                    ["log10_N", "log10_error"],
                    [ends, slope * ends + intercept],
                )
            )
        return paths
    value_column = "gradient_value" if table.kind == "gradient" else "density"
    if "cell_center" in table.columns:
        header = ["cell_center", "value"]
        columns = [table.column("cell_center"), table.column(value_column)]
    else:
        header = ["x1", "x2", "value"]
        columns = [table.column("x1"), table.column("x2"), table.column(value_column)]
    return [_write_columns(out / f"{stem}.dat", header, columns)]
