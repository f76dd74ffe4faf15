"""CSV/JSON result files.

Columns follow ``ResultRow`` field order; unit suffixes in the names
(``_bits``, ``_slots``) document units in the header. Floats are written
with 12 significant digits, list cells as JSON arrays, missing values as
empty cells.
"""
import csv
import io
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Optional, Sequence, Union, get_args, get_origin

from pydantic import ValidationError

from src.models.errors import ResultsIoError
from src.models.schemas import ResultRow
from src.models.simulation import SlotTrace

logger = logging.getLogger(__name__)

COLUMNS = list(ResultRow.model_fields)
TRACE_COLUMNS = list(SlotTrace.model_fields)


def _is_list_field(name: str, model=ResultRow) -> bool:
    annotation = model.model_fields[name].annotation
    return get_origin(annotation) is list or any(get_origin(a) is list for a in get_args(annotation))


LIST_COLUMNS = {c for c in COLUMNS if _is_list_field(c)}


def format_number(value: Any) -> Any:
    """Round floats to 12 significant digits; other values pass through."""
    if isinstance(value, bool) or not isinstance(value, float):
        return value
    return float(f"{value:.12g}")


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.12g}"
    if isinstance(value, (list, tuple)):
        return json.dumps([format_number(v) for v in value])
    return str(value)


def _json_record(row: ResultRow) -> dict:
    record = {}
    for name, value in row.model_dump().items():
        record[name] = [format_number(v) for v in value] if isinstance(value, list) else format_number(value)
    return record


def render_results(rows: Sequence[ResultRow], fmt: str = "csv") -> str:
    if not rows:
        raise ResultsIoError("no result rows to write")
    if fmt == "json":
        return json.dumps([_json_record(r) for r in rows], indent=2) + "\n"
    if fmt != "csv":
        raise ResultsIoError(f"unknown result format '{fmt}'")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        data = row.model_dump()
        writer.writerow([_cell(data[c]) for c in COLUMNS])
    return buffer.getvalue()


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise ResultsIoError(f"could not write {path}: {e}") from e
    return path


def emit_results(rows: Sequence[ResultRow], fmt: str, path: Union[str, Path]) -> Path:
    """Write rows to ``path``; nothing is created when there are no rows."""
    text = render_results(rows, fmt)
    out = _write(Path(path), text)
    logger.info(f"Wrote {len(rows)} rows to {out}")
    return out


def parse_results(path: Union[str, Path], fmt: Optional[str] = None) -> List[ResultRow]:
    """Read a file written by ``emit_results`` back into rows."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix == ".json" else "csv")
    try:
        text = path.read_text()
    except OSError as e:
        raise ResultsIoError(f"could not read {path}: {e}") from e
    try:
        if fmt == "json":
            return [ResultRow.model_validate(r) for r in json.loads(text)]
        rows = []
        for record in csv.DictReader(io.StringIO(text)):
            data = {}
            for name, cell in record.items():
                if cell == "":
                    continue
                data[name] = json.loads(cell) if name in LIST_COLUMNS else cell
            rows.append(ResultRow.model_validate(data))
        return rows
    except (ValidationError, json.JSONDecodeError) as e:
        raise ResultsIoError(f"{path} is not a valid result file: {e}") from e


def emit_trace(records: Iterable[SlotTrace], path: Union[str, Path]) -> Path:
    """Per-slot trace as CSV, one line per (slot, user)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    count = 0
    for record in records:
        data = record.model_dump()
        writer.writerow([_cell(data[c]) for c in TRACE_COLUMNS])
        count += 1
    out = _write(Path(path), buffer.getvalue())
    logger.info(f"Wrote {count} trace records to {out}")
    return out
