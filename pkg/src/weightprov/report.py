"""Report assembly: the JSON document the CLI emits.

Reports are reproducible artifacts: they echo the command, every seed, and
both the clamped display p-value and the unclamped log10, so a value like
1e-479 survives serialization.  The schema shipped in ``schemas/`` is the
stability contract for downstream tooling.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .stats import LogPValue

TOOL_VERSION = "0.1.0"
SCHEMA_VERSION = 1


def load_schema() -> dict:
    with resources.files("weightprov.schemas").joinpath("report-v1.json").open() as fh:
        return json.load(fh)


def _jsonable(value):
    if isinstance(value, LogPValue):
        return value.to_json()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


@dataclass
class TestResult:
    """One statistic's outcome: per-block entries plus optional aggregate."""

    statistic: str
    per_block: list[dict] = field(default_factory=list)
    aggregate: LogPValue | None = None
    raw_statistic: float | None = None
    config: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "statistic": self.statistic,
            "per_block": _jsonable(self.per_block),
            "aggregate": self.aggregate.to_json() if self.aggregate else None,
            "raw_statistic": self.raw_statistic,
            "config": _jsonable(self.config),
            "warnings": list(self.warnings),
        }

    def verdict_entry(self) -> dict:
        if self.aggregate is not None:
            return {
                "log10_p": self.aggregate.log10_p,
                "display_p": self.aggregate.display_p,
            }
        return {
            "log10_p": None,
            "display_p": None,
            "raw_statistic": self.raw_statistic,
        }


class ReportBuilder:
    def __init__(self, command: str, args: dict):
        self.command = command
        self.args = _jsonable(args)
        self.results: list[TestResult] = []
        self._start = time.monotonic()

    def add(self, result: TestResult) -> None:
        self.results.append(result)

    def document(self) -> dict:
        return {
            "tool_version": TOOL_VERSION,
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "args": self.args,
            "results": [r.to_json() for r in self.results],
            "verdict": {r.statistic: r.verdict_entry() for r in self.results},
            "timing": {"seconds": time.monotonic() - self._start},
        }

    def write(self, path) -> dict:
        doc = self.document()
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return doc


def block_entry(blocks: tuple[int, int], pvalue: LogPValue, assignment=None) -> dict:
    entry = {"blocks": [int(blocks[0]), int(blocks[1])], "pvalue": pvalue.to_json()}
    if assignment is not None:
        entry["assignment"] = [int(v) for v in assignment]
    return entry
