"""Per-iteration records of bilevel runs."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

COLUMNS = ("iteration", "objective", "F", "reg", "tau0", "tau1", "shrinks", "lower_iterations",
           "psnr", "ssim")


@dataclass
class RunHistory:
    rows: list[dict] = field(default_factory=list)
    extra_columns: tuple[str, ...] = ()
    lower_solves: int = 0
    # Values at the initial weights (not a row).
    initial: dict = field(default_factory=dict)

    def append(self, **row):
        it = row.get("iteration")
        if self.rows and it is not None and it <= self.rows[-1]["iteration"]:
            raise ValueError("iteration indices must increase")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return [r.get(name) for r in self.rows]

    @property
    def objectives(self):
        return self.column("objective")

    @property
    def columns(self):
        return COLUMNS + tuple(self.extra_columns)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(self.columns)
            for r in self.rows:
                wr.writerow([_fmt(r.get(c)) for c in self.columns])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)
