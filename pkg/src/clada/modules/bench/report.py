import json
import logging
from pathlib import Path
from typing import Literal, Sequence

import pandas as pd

from clada.core.constants import REPORT_SCHEMA_VERSION
from clada.modules.bench.latency import BenchResult

logger = logging.getLogger(__name__)

DIM_FIELDS = ("n_layers", "d_model", "d_h", "n_heads", "vocab_size", "max_ctx")

REPORT_COLUMNS = (
    "schema_version",
    "mode",
    "prompt_len",
    "gen_len",
    "batch_size",
    "wall_time_s",
    "speedup_vs_dense",
    "mean_sparsity",
    "prefill_time_s",
    "cv",
    *DIM_FIELDS,
)


def report_frame(rows: Sequence[BenchResult]) -> pd.DataFrame:
    """Flatten bench rows into the report column order; model dims become plain columns."""
    records = []
    for row in rows:
        record = row.model_dump(exclude={"dims"})
        record.update(row.dims.model_dump())
        record["schema_version"] = REPORT_SCHEMA_VERSION
        records.append(record)
    return pd.DataFrame(records, columns=list(REPORT_COLUMNS))


def emit_report(rows: Sequence[BenchResult], fmt: Literal["csv", "json"], path: str | Path) -> Path:
    """Write bench rows as CSV (header-only when empty) or as a versioned JSON document."""
    path = Path(path)
    frame = report_frame(rows)
    if fmt == "csv":
        frame.to_csv(path, index=False)
    elif fmt == "json":
        document = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "columns": list(REPORT_COLUMNS),
            "rows": [row.model_dump() for row in rows],
        }
        path.write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    else:
        raise ValueError(f"unknown report format {fmt!r}, expected csv or json")
    logger.info(f"Wrote {len(frame)} bench rows to {path}")
    return path


def read_report(path: str | Path) -> list[BenchResult]:
    """Load rows back from a JSON report."""
    document = json.loads(Path(path).read_text(encoding="utf-8"))
    if document.get("schema_version") != REPORT_SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema {document.get('schema_version')!r}")
    return [BenchResult.model_validate(row) for row in document["rows"]]
