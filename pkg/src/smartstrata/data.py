"""Trial datasets: in-memory container, CSV schema, and validation.

The on-disk schema is a UTF-8 CSV with header
``id,a1,s,a2,<coordinates...>,y`` using ``NA`` for absent stage-2 arms
and for latent compliance coordinates.  A row's observed/NA pattern must
match the design's observed mask for the sequence implied by
(a1, s, a2) exactly; rows that do not are rejected with line numbers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Dataset", "SchemaError", "ingest", "write_dataset"]

NA = "NA"


class SchemaError(ValueError):
    """Input file does not satisfy the dataset schema."""


@dataclass
class Dataset:
    """Subjects of one SMART, aligned with a design.

    ``d_obs`` is (n, m) with NaN at latent coordinates; ``a2`` uses 0 for
    branches without a stage-2 randomization; ``seq`` is the 1-based
    treatment-sequence id per subject.
    """

    design: object
    ids: np.ndarray
    a1: np.ndarray
    s: np.ndarray
    a2: np.ndarray
    d_obs: np.ndarray
    y: np.ndarray
    seq: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.y)
        for name in ("ids", "a1", "s", "a2", "y"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has wrong length")
        if self.d_obs.shape != (n, self.design.m):
            raise ValueError("compliance matrix shape does not match design")
        if self.seq is None:
            self.seq = np.array(
                [
                    self.design.sequence_for(
                        self.a1[i], self.s[i], None if self.a2[i] == 0 else self.a2[i]
                    )
                    for i in range(n)
                ],
                dtype=int,
            )
        self._check_masks()

    def _check_masks(self):
        expected = self.design.observed_masks[self.seq - 1]
        actual = ~np.isnan(self.d_obs)
        bad = np.nonzero((expected != actual).any(axis=1))[0]
        if bad.size:
            raise SchemaError(
                "observed/NA pattern does not match the design mask for subjects "
                + ", ".join(str(self.ids[i]) for i in bad[:10])
            )
        obs_vals = self.d_obs[actual]
        if np.any((obs_vals < 0.0) | (obs_vals > 1.0)):
            raise SchemaError("compliance values must lie in [0,1]")
        if not np.all(np.isfinite(self.y)):
            raise SchemaError("outcomes must be finite")

    @property
    def n(self) -> int:
        return len(self.y)

    def rows_for_sequence(self, k):
        return np.nonzero(self.seq == k)[0]

    def missing_mask(self):
        """(n, m) True where the coordinate is latent for the subject."""
        return np.isnan(self.d_obs)


def _parse_cell(raw, line_no, col):
    raw = raw.strip()
    if raw.upper() == NA or raw == "":
        return math.nan
    try:
        return float(raw)
    except ValueError:
        raise SchemaError(f"line {line_no}: cannot parse {col}={raw!r}") from None


def ingest(path, design, y_transform=None, y_offset=0.5):
    """Read and validate a dataset CSV against a design.

    ``y_transform="log"`` replaces the outcome with log(y + y_offset),
    for count-like outcomes with zeros.
    """
    ids, a1s, ss, a2s, ds, ys = [], [], [], [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["id", "a1", "s", "a2", *design.coords, "y"]
        if header is None or [h.strip() for h in header] != expected:
            raise SchemaError(f"header mismatch: expected {','.join(expected)}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(expected):
                raise SchemaError(f"line {line_no}: expected {len(expected)} fields, got {len(row)}")
            ids.append(row[0].strip())
            a1 = int(row[1])
            s = int(row[2])
            a2_raw = row[3].strip().upper()
            a2 = 0 if a2_raw == NA or a2_raw == "" else int(row[3])
            try:
                design.sequence_for(a1, s, None if a2 == 0 else a2)
            except ValueError as exc:
                raise SchemaError(f"line {line_no}: {exc}") from None
            a1s.append(a1)
            ss.append(s)
            a2s.append(a2)
            ds.append([_parse_cell(row[4 + j], line_no, design.coords[j]) for j in range(design.m)])
            ys.append(_parse_cell(row[-1], line_no, "y"))
    if not ids:
        raise SchemaError("dataset is empty")
    y = np.asarray(ys, dtype=float)
    if y_transform == "log":
        y = np.log(y + y_offset)
    elif y_transform not in (None, "none"):
        raise ValueError(f"unknown y_transform {y_transform!r}")
    return Dataset(
        design=design,
        ids=np.asarray(ids, dtype=object),
        a1=np.asarray(a1s, dtype=int),
        s=np.asarray(ss, dtype=int),
        a2=np.asarray(a2s, dtype=int),
        d_obs=np.asarray(ds, dtype=float),
        y=y,
    )


def _fmt(v):
    return repr(float(v))


def write_dataset(dataset, path):
    """Write the dataset in the ingestion schema (floats as shortest repr)."""
    design = dataset.design
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "a1", "s", "a2", *design.coords, "y"])
        for i in range(dataset.n):
            row = [
                dataset.ids[i],
                int(dataset.a1[i]),
                int(dataset.s[i]),
                NA if dataset.a2[i] == 0 else int(dataset.a2[i]),
            ]
            row += [NA if math.isnan(v) else _fmt(v) for v in dataset.d_obs[i]]
            row.append(_fmt(dataset.y[i]))
            writer.writerow(row)
