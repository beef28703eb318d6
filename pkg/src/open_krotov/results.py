"""
Result files of a run.

``convergence.csv``
    One row per iteration: ``k, J, fidelity, fluence, delta_J``.
``trajectory.csv``
    One row per grid node: ``t, D1_free, D1_controlled, xi``.
``decomposition.csv`` (optional)
    One row per consecutive pair of iterations:
    ``k, direct, projector_term, delta_term, eta_term, difference``.
``result.json``
    Scalar results, the validated configuration and run metadata.
``results.xlsx`` (optional)
    The same tables as spreadsheet sheets.

Floats in CSV files are written with 17 significant digits, so they read back bit-exact.
"""

from __future__ import annotations

import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Final

import numpy as np
from openpyxl import Workbook
from openpyxl.styles import Font

from open_krotov.liouville import RealArray
from open_krotov.logger import get_logger
from open_krotov.optimizer import DeltaJDecomposition, IterationRecord

type Scalar = float | int | bool | str | None

CONVERGENCE_COLUMNS: Final[tuple[str, ...]] = ('k', 'J', 'fidelity', 'fluence', 'delta_J')
TRAJECTORY_COLUMNS: Final[tuple[str, ...]] = ('t', 'D1_free', 'D1_controlled', 'xi')
DECOMPOSITION_COLUMNS: Final[tuple[str, ...]] = (
    'k',
    'direct',
    'projector_term',
    'delta_term',
    'eta_term',
    'difference',
)
FLOAT_FORMAT: Final[str] = '%.17g'
MAX_COLUMN_WIDTH: Final[int] = 50

CONVERGENCE_FILE: Final[str] = 'convergence.csv'
TRAJECTORY_FILE: Final[str] = 'trajectory.csv'
DECOMPOSITION_FILE: Final[str] = 'decomposition.csv'
RESULT_FILE: Final[str] = 'result.json'
XLSX_FILE: Final[str] = 'results.xlsx'

logger = get_logger('results')


@dataclass(frozen=True)
class TrajectoryTable:
    """Node-sampled observables of a run."""

    times: RealArray
    d1_free: RealArray
    d1_controlled: RealArray
    xi: RealArray

    def __post_init__(self) -> None:
        lengths = {len(self.times), len(self.d1_free), len(self.d1_controlled), len(self.xi)}
        if len(lengths) != 1:
            raise ValueError(f'Trajectory columns have different lengths {sorted(lengths)}')

    def as_array(self) -> RealArray:
        return np.column_stack([self.times, self.d1_free, self.d1_controlled, self.xi])


@dataclass(frozen=True)
class RunResult:
    """
    Everything a run writes to disk.

    Attributes:
        mode: Experiment mode.
        scalars: Headline numbers for ``result.json``.
        config: Validated configuration echoed into the metadata.
        records: Iteration history (empty for modes without optimization).
        trajectory: Node-sampled observables, if any.
        decomposition: Cost-increment decompositions, if requested.
    """

    mode: str
    scalars: Mapping[str, Scalar]
    config: Mapping[str, object]
    records: Sequence[IterationRecord] = ()
    trajectory: TrajectoryTable | None = None
    decomposition: Sequence[DeltaJDecomposition] = field(default=())


def convergence_rows(records: Sequence[IterationRecord]) -> RealArray:
    return np.array(
        [[r.k, r.J, r.fidelity, r.fluence, r.delta_J] for r in records],
        dtype=np.float64,
    ).reshape(-1, len(CONVERGENCE_COLUMNS))


def decomposition_rows(decomposition: Sequence[DeltaJDecomposition]) -> RealArray:
    return np.array(
        [
            [d.k, d.direct, d.projector_term, d.delta_term, d.eta_term, d.difference]
            for d in decomposition
        ],
        dtype=np.float64,
    ).reshape(-1, len(DECOMPOSITION_COLUMNS))


def _write_csv(path: Path, columns: Sequence[str], rows: RealArray, *, int_columns: int) -> Path:
    fmt = ['%d'] * int_columns + [FLOAT_FORMAT] * (len(columns) - int_columns)
    np.savetxt(path, rows, fmt=fmt, delimiter=',', header=','.join(columns), comments='')
    logger.debug('Wrote %s (%d rows)', path, rows.shape[0])
    return path


def write_convergence_csv(path: str | Path, records: Sequence[IterationRecord]) -> Path:
    return _write_csv(Path(path), CONVERGENCE_COLUMNS, convergence_rows(records), int_columns=1)


def write_trajectory_csv(path: str | Path, table: TrajectoryTable) -> Path:
    return _write_csv(Path(path), TRAJECTORY_COLUMNS, table.as_array(), int_columns=0)


def write_decomposition_csv(path: str | Path, decomposition: Sequence[DeltaJDecomposition]) -> Path:
    rows = decomposition_rows(decomposition)
    return _write_csv(Path(path), DECOMPOSITION_COLUMNS, rows, int_columns=1)


def _json_safe(value: object) -> object:
    """Replace non-finite floats (JSON has no literal for them) by strings."""
    match value:
        case float() if not math.isfinite(value):
            return str(value)
        case Mapping():
            return {str(k): _json_safe(v) for k, v in value.items()}
        case list() | tuple():
            return [_json_safe(v) for v in value]
        case _:
            return value


def write_result_json(path: str | Path, result: RunResult, metadata: Mapping[str, object]) -> Path:
    """Scalars, echoed configuration and metadata in one document."""
    document = {
        'mode': result.mode,
        'scalars': dict(result.scalars),
        'config': dict(result.config),
        'metadata': dict(metadata),
    }
    target = Path(path)
    target.write_text(
        json.dumps(_json_safe(document), indent=2, allow_nan=False) + '\n',
        encoding='utf-8',
    )
    return target


def _append_sheet(workbook: Workbook, title: str, columns: Sequence[str], rows: RealArray) -> None:
    sheet = workbook.create_sheet(title)
    sheet.append(list(columns))
    for cell in sheet[1]:
        cell.font = Font(bold=True)
    for row in rows:
        sheet.append([float(v) for v in row])
    for index, name in enumerate(columns, start=1):
        letter = sheet.cell(row=1, column=index).column_letter
        sheet.column_dimensions[letter].width = min(max(len(name), 24) + 2, MAX_COLUMN_WIDTH)


def write_xlsx(path: str | Path, result: RunResult, metadata: Mapping[str, object]) -> Path:
    """
    Spreadsheet with ``convergence``, ``trajectory`` and ``metadata`` sheets.

    Sheets without data are omitted, except ``metadata`` which is always present.
    """
    workbook = Workbook()
    workbook.remove(workbook.active)
    if result.records:
        rows = convergence_rows(result.records)
        _append_sheet(workbook, 'convergence', CONVERGENCE_COLUMNS, rows)
    if result.trajectory is not None:
        _append_sheet(workbook, 'trajectory', TRAJECTORY_COLUMNS, result.trajectory.as_array())
    if result.decomposition:
        _append_sheet(
            workbook,
            'decomposition',
            DECOMPOSITION_COLUMNS,
            decomposition_rows(result.decomposition),
        )

    sheet = workbook.create_sheet('metadata')
    sheet.append(['key', 'value'])
    for cell in sheet[1]:
        cell.font = Font(bold=True)
    flat = {**{f'scalars.{k}': v for k, v in result.scalars.items()}, **metadata}
    for key, value in flat.items():
        sheet.append([key, value if isinstance(value, (int, float, str)) else json.dumps(value)])
    sheet.column_dimensions['A'].width = 32
    sheet.column_dimensions['B'].width = MAX_COLUMN_WIDTH

    target = Path(path)
    workbook.save(target)
    return target


def write_run(
    result: RunResult,
    output_dir: str | Path,
    metadata: Mapping[str, object],
    *,
    xlsx: bool = False,
) -> list[Path]:
    """
    Write every file the run produces into ``output_dir`` (created if missing).

    Returns:
        Paths of the written files.
    """
    directory = Path(output_dir)
    directory.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if result.records:
        written.append(write_convergence_csv(directory / CONVERGENCE_FILE, result.records))
    if result.trajectory is not None:
        written.append(write_trajectory_csv(directory / TRAJECTORY_FILE, result.trajectory))
    if result.decomposition:
        written.append(
            write_decomposition_csv(directory / DECOMPOSITION_FILE, result.decomposition),
        )
    written.append(write_result_json(directory / RESULT_FILE, result, metadata))
    if xlsx:
        written.append(write_xlsx(directory / XLSX_FILE, result, metadata))
    logger.info('Results written to %s: %s', directory, ', '.join(p.name for p in written))
    return written
