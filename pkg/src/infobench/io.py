"""CSV input/output and run manifests.

All emitted CSVs are UTF-8 with a header row and shortest-roundtrip float
formatting, so identical data always serializes to identical bytes.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Forcing

FORCING_HEADER = ["day", "precip_mm", "pet_mm"]


class ForcingFormatError(ValueError):
    """Malformed forcing CSV."""


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def load_forcing_csv(path) -> Forcing:
    """Strictly parse a `day,precip_mm,pet_mm` file: any malformed, negative
    or non-finite row is an error naming its line number."""
    precip, pet = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != FORCING_HEADER:
            raise ForcingFormatError(
                f"{path}: expected header {','.join(FORCING_HEADER)!r}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ForcingFormatError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                p = float(row[1])
                e = float(row[2])
            except ValueError as exc:
                raise ForcingFormatError(f"{path}:{lineno}: {exc}") from None
            if not (np.isfinite(p) and np.isfinite(e)):
                raise ForcingFormatError(f"{path}:{lineno}: non-finite value")
            if p < 0 or e < 0:
                raise ForcingFormatError(f"{path}:{lineno}: negative value")
            precip.append(p)
            pet.append(e)
    if not precip:
        raise ForcingFormatError(f"{path}: no data rows")
    return Forcing(precip=np.array(precip), pet=np.array(pet))


def write_forcing_csv(path, forcing: Forcing):
    write_csv(path, FORCING_HEADER,
              [(d, forcing.precip[d], forcing.pet[d]) for d in range(forcing.n_days)])


def write_csv(path, header, rows):
    """Deterministic CSV writer; returns the path."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


@dataclass
class RunManifest:
    """Everything that influenced a run: the resolved config, the seed, stage
    timings and the emitted files. Written at start and finalized at the end."""

    path: str
    entries: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    def record(self, key: str, value):
        self.entries[str(key)] = value

    def record_config(self, mapping: dict, prefix: str = ""):
        for key, value in mapping.items():
            self.record(f"{prefix}{key}", value)

    def add_output(self, path: str):
        self.outputs.append(os.path.basename(path))

    def add_timing(self, stage: str, seconds: float):
        self.timings.append((stage, seconds))

    def write(self, status: str):
        os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
        lines = [f"status = {status}"]
        for key in sorted(self.entries):
            lines.append(f"{key} = {_fmt(self.entries[key])}")
        for stage, seconds in self.timings:
            lines.append(f"timing.{stage}_s = {seconds:.3f}")
        for name in self.outputs:
            lines.append(f"output = {name}")
        with open(self.path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
