"""Run traces and the communication/oracle accounting counters.

Counting convention: one oracle "call" is one synchronized step in which
every agent evaluates its oracle once (class A: grad f / prox g; class B:
A / A' matrix-vector products and the h* oracle).  ``comm_rounds``
increments exactly once per network-wide exchange.
"""

import csv
import math
from dataclasses import dataclass, field

CSV_HEADER = ["k", "gap", "primal_res", "dual_res", "consensus_res",
              "comm_rounds", "oracle_A", "oracle_B", "inner_iters"]
FLOAT_FIELDS = ("gap", "primal_res", "dual_res", "consensus_res")


@dataclass
class Counters:
    comm_rounds: int = 0
    oracle_A: int = 0
    oracle_B: int = 0

    def snapshot(self):
        return (self.comm_rounds, self.oracle_A, self.oracle_B)


@dataclass
class TraceRow:
    k: int
    gap: float
    primal_res: float
    dual_res: float
    consensus_res: float
    comm_rounds: int
    oracle_A: int
    oracle_B: int
    inner_iters: int
    # diagnostics kept in memory only (not part of the CSV schema)
    r_x: float = math.nan
    r_lambda: float = math.nan
    gossip_apps: int = 0
    rounds_per_apply: int = 1
    z: object = None
    x: object = None

    def csv_values(self):
        out = []
        for name in CSV_HEADER:
            value = getattr(self, name)
            out.append(f"{value:.17e}" if name in FLOAT_FIELDS else str(int(value)))
        return out


class RunTrace:
    """Per-outer-iteration records of one solver run."""

    def __init__(self):
        self.rows = []
        self.meta = {}  # run-level diagnostics (mode, rho, bootstrap costs, ...)

    def append(self, row):
        if self.rows and row.k <= self.rows[-1].k:
            raise ValueError("trace rows must be strictly increasing in k")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def column(self, name):
        return [getattr(r, name) for r in self.rows]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in self.rows:
                writer.writerow(row.csv_values())

    @classmethod
    def read_csv(cls, path):
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != CSV_HEADER:
                raise ValueError(f"unexpected trace header {header!r}")
            for rec in reader:
                kwargs = {}
                for name, raw in zip(CSV_HEADER, rec):
                    kwargs[name] = float(raw) if name in FLOAT_FIELDS else int(raw)
                trace.append(TraceRow(**kwargs))
        return trace
