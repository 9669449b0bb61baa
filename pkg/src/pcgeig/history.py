"""Per-iteration convergence records shared by all solvers.

A history is a list of snapshots, one per accepted iterate (row 0 is the
initial guess).  Snapshots carry the monitored quantities used in the
convergence studies:

* ``theta``        current Rayleigh quotient
* ``theta_err``    theta minus a caller-supplied reference eigenvalue (or None)
* ``nu``           normalized eigenresidual  ||A x - theta M x|| / ||x||_M
* ``phi``          |cos| of the M-angle between the iterate and the anchored
                   auxiliary vector, for the solvers that keep one
* ``delta_lambda`` sqrt(|theta_i/theta_{i-1} - 1|), the heuristic accuracy gauge
* ``delta_phi``    |phi_i/phi_{i-1} - 1|
* ``events``       labels of anything unusual during the step (basis
                   reductions, anchor updates, flag transitions, ...)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["IterationRecord", "ConvergenceHistory"]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    theta: float
    theta_err: float | None
    nu: float
    phi: float | None = None
    delta_lambda: float | None = None
    delta_phi: float | None = None
    events: tuple = ()


class ConvergenceHistory:
    """Append-only list of IterationRecords with strictly increasing index."""

    def __init__(self, records=None):
        self.records = []
        if records:
            for rec in records:
                self.append(rec)

    def append(self, record):
        if self.records and record.iteration != self.records[-1].iteration + 1:
            raise ValueError("iteration indices must increase by one; got %d "
                             "after %d" % (record.iteration,
                                           self.records[-1].iteration))
        if not self.records and record.iteration != 0:
            raise ValueError("history must start at iteration 0")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def __eq__(self, other):
        if not isinstance(other, ConvergenceHistory):
            return NotImplemented
        return self.records == other.records

    def thetas(self):
        return np.array([r.theta for r in self.records])

    def nus(self):
        return np.array([r.nu for r in self.records])

    def events_at(self, label):
        """Iteration indices whose record carries the given event label."""
        return [r.iteration for r in self.records if label in r.events]

    def final(self):
        if not self.records:
            raise IndexError("empty history")
        return self.records[-1]
