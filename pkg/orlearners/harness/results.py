"""
Results persistence: one CSV row per (job, cell, quantity) and a JSONL side
file with training histories, wall times and errors per job.

The CSV is rewritten in sorted order on every save, so a run produces the
same bytes however its jobs were scheduled.
"""
import json
import os
from pathlib import Path
from typing import Iterable, NamedTuple

import pandas as pd
from pydantic import BaseModel, ConfigDict

from orlearners.errors import DataValidationError
from orlearners.logging_config import get_logger

logger = get_logger(__name__)

HEADER = [
    "config_hash", "family", "invertible", "metric_kind", "alpha", "ipm",
    "selector", "loss", "seed", "quantity", "value", "baseline_value", "delta",
]
NO_IPM = "none"
NO_CELL = "-"
PLUGIN = "plugin"

# Sort order of row kinds within a job
METRIC_KINDS = ("baseline_rmse", "baseline_rpehe", "rmse", "rpehe", "ratio", "expansion", "failure")


class JobKey(NamedTuple):
    """One Stage-0 pipeline: everything downstream of one trained representation."""

    config_hash: str
    family: str
    invertible: bool
    alpha: float
    ipm: str
    seed: int

    def as_dict(self) -> dict:
        return self._asdict()


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_float(text: str) -> float | None:
    return None if text == "" else float(text)


class ResultRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    config_hash: str
    family: str
    invertible: bool
    metric_kind: str
    alpha: float
    ipm: str = NO_IPM
    selector: str = NO_CELL
    loss: str = NO_CELL
    seed: int
    quantity: str = NO_CELL
    value: float | None = None
    baseline_value: float | None = None
    delta: float | None = None

    @property
    def job_key(self) -> JobKey:
        return JobKey(self.config_hash, self.family, self.invertible, self.alpha, self.ipm, self.seed)

    @property
    def is_failure(self) -> bool:
        return self.metric_kind == "failure"

    def sort_key(self) -> tuple:
        kind = METRIC_KINDS.index(self.metric_kind) if self.metric_kind in METRIC_KINDS else len(METRIC_KINDS)
        return (*self.job_key, kind, self.metric_kind, self.selector, self.loss, self.quantity)

    def to_row(self) -> list[str]:
        return [_format(getattr(self, column)) for column in HEADER]

    @classmethod
    def from_row(cls, row: dict[str, str]) -> "ResultRecord":
        try:
            return cls(
                config_hash=row["config_hash"],
                family=row["family"],
                invertible=row["invertible"] == "true",
                metric_kind=row["metric_kind"],
                alpha=float(row["alpha"]),
                ipm=row["ipm"],
                selector=row["selector"],
                loss=row["loss"],
                seed=int(row["seed"]),
                quantity=row["quantity"],
                value=_parse_float(row["value"]),
                baseline_value=_parse_float(row["baseline_value"]),
                delta=_parse_float(row["delta"]),
            )
        except (KeyError, ValueError) as e:
            raise DataValidationError(f"Malformed results row {row}: {e}") from e


class ResultStore:
    """
    Results CSV plus its JSONL side file, merged per job.

    Rows of other config hashes already in the file are kept untouched, so
    several configurations can share one results file.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.side_path = self.path.with_suffix(".runs.jsonl")
        self._records: dict[JobKey, list[ResultRecord]] = {}
        self._runs: dict[JobKey, dict] = {}
        self.load()

    def load(self) -> None:
        self._records.clear()
        self._runs.clear()
        if self.path.exists():
            frame = pd.read_csv(self.path, dtype=str, keep_default_na=False)
            missing = [column for column in HEADER if column not in frame.columns]
            if missing:
                raise DataValidationError(f"{self.path} is not a results file (missing {', '.join(missing)})")
            for row in frame.to_dict(orient="records"):
                record = ResultRecord.from_row(row)
                self._records.setdefault(record.job_key, []).append(record)
            logger.info(f"Loaded {len(frame)} result rows from {self.path}")
        if self.side_path.exists():
            for line in self.side_path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    entry = json.loads(line)
                    self._runs[JobKey(**entry["job"])] = entry

    @property
    def records(self) -> list[ResultRecord]:
        rows = [record for records in self._records.values() for record in records]
        return sorted(rows, key=ResultRecord.sort_key)

    def completed_jobs(self, config_hash: str | None = None) -> set[JobKey]:
        """Jobs with rows and no recorded failure; these are skipped on rerun."""
        return {
            key for key, records in self._records.items()
            if records
            and not any(record.is_failure for record in records)
            and (config_hash is None or key.config_hash == config_hash)
        }

    def put_job(self, key: JobKey, records: Iterable[ResultRecord], run: dict | None = None) -> None:
        """Replace every row and the side entry of one job."""
        records = list(records)
        foreign = [record for record in records if record.job_key != key]
        if foreign:
            raise DataValidationError(f"Record {foreign[0].job_key} does not belong to job {key}")
        self._records[key] = records
        if run is not None:
            self._runs[key] = {"job": key.as_dict(), **run}

    def replace_kind(self, metric_kind: str, records: Iterable[ResultRecord], config_hash: str) -> None:
        """Swap all rows of one derived kind (e.g. ratios) for one config."""
        for key in list(self._records):
            if key.config_hash == config_hash:
                self._records[key] = [r for r in self._records[key] if r.metric_kind != metric_kind]
        for record in records:
            self._records.setdefault(record.job_key, []).append(record)

    def run_info(self, key: JobKey) -> dict | None:
        return self._runs.get(key)

    def frame(self, config_hash: str | None = None) -> pd.DataFrame:
        rows = [r.model_dump() for r in self.records if config_hash is None or r.config_hash == config_hash]
        return pd.DataFrame(rows, columns=HEADER)

    def save(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        body = pd.DataFrame([record.to_row() for record in self.records], columns=HEADER)
        tmp = self.path.with_suffix(".csv.tmp")
        body.to_csv(tmp, index=False, lineterminator="\n")
        os.replace(tmp, self.path)

        lines = [json.dumps(self._runs[key], sort_keys=True, default=_json_default) for key in sorted(self._runs)]
        side_tmp = self.side_path.with_suffix(".tmp")
        side_tmp.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        os.replace(side_tmp, self.side_path)
        logger.debug(f"Saved {len(body)} rows to {self.path}")
        return self.path


def _json_default(value):
    if hasattr(value, "model_dump"):
        return value.model_dump(mode="json")
    raise TypeError(f"Cannot serialise {type(value).__name__}")
