from .latency import BenchResult, bench_grid, bench_latency, parse_grid, random_prompts
from .report import REPORT_COLUMNS, emit_report, read_report, report_frame

__all__ = [
    "REPORT_COLUMNS",
    "BenchResult",
    "bench_grid",
    "bench_latency",
    "emit_report",
    "parse_grid",
    "random_prompts",
    "read_report",
    "report_frame",
]
