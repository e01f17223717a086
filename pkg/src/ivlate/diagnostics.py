"""Empirical checks of the instrument inequalities.

Under instrument validity and monotone compliance the observed cells obey
the polytope constraints: the treated margins cannot shrink and the
untreated margins cannot grow when the instrument switches on.  This
module evaluates those constraints on raw frequencies, optionally within
discrete covariate strata, and attaches binomial standard errors.

The output is descriptive.  A flag means an inequality is more than two
standard errors on the wrong side; it is not a formal test and no
multiplicity correction is applied.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .params import CellProbs, DomainError, check_delta

__all__ = ["StratumDiagnosis", "IvReport", "diagnose_iv"]

_MAX_LEVELS = 10

# (d, y, z_high, z_low): each monotone slack is p(d,y|z_high) - p(d,y|z_low)
_MONO_ARMS = {
    "mono_d1y0": (1, 0, 1, 0),
    "mono_d1y1": (1, 1, 1, 0),
    "mono_d0y0": (0, 0, 0, 1),
    "mono_d0y1": (0, 1, 0, 1),
}


@dataclass(frozen=True)
class StratumDiagnosis:
    """Inequality slacks for one covariate stratum."""

    label: str
    n: int
    n_by_arm: tuple = (0, 0)
    slacks: dict = field(default_factory=dict)
    ses: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)
    skipped: bool = False
    note: str = ""

    @property
    def flagged(self) -> bool:
        return any(self.flags.values())


@dataclass(frozen=True)
class IvReport:
    """Per-stratum inequality diagnostics; descriptive only."""

    strata: tuple

    @property
    def any_flag(self) -> bool:
        return any(s.flagged for s in self.strata)

    def to_dict(self) -> dict:
        return {
            "kind": "iv_diagnosis",
            "descriptive_only": True,
            "any_flag": self.any_flag,
            "strata": [
                {
                    "label": s.label,
                    "n": s.n,
                    "n_by_arm": list(s.n_by_arm),
                    "skipped": s.skipped,
                    "note": s.note,
                    "slacks": {k: float(v) for k, v in s.slacks.items()},
                    "ses": {k: float(v) for k, v in s.ses.items()},
                    "flags": {k: bool(v) for k, v in s.flags.items()},
                }
                for s in self.strata
            ],
        }


def _diagnose_rows(label: str, z, d, y) -> StratumDiagnosis:
    n = z.size
    n0 = int(np.sum(z == 0))
    n1 = n - n0
    if n0 == 0 or n1 == 0:
        return StratumDiagnosis(
            label=label, n=n, n_by_arm=(n0, n1), skipped=True,
            note="missing instrument arm; stratum skipped")

    p = np.empty((2, 2, 2))
    for zz, nz in ((0, n0), (1, n1)):
        arm = z == zz
        for dd in (0, 1):
            for yy in (0, 1):
                p[dd, yy, zz] = np.sum(arm & (d == dd) & (y == yy)) / nz

    report = check_delta(CellProbs(p))
    slacks = {k: float(v) for k, v in report.slacks.items()}

    ses = {}
    flags = {}
    for name, slack in slacks.items():
        arms = _MONO_ARMS.get(name)
        if arms is None:
            # nonnegativity and normalization hold by construction here
            ses[name] = 0.0
            flags[name] = slack < -1e-12
            continue
        dd, yy, z_hi, z_lo = arms
        q_hi, q_lo = p[dd, yy, z_hi], p[dd, yy, z_lo]
        m_hi = n1 if z_hi == 1 else n0
        m_lo = n1 if z_lo == 1 else n0
        se = float(np.sqrt(q_hi * (1 - q_hi) / m_hi
                           + q_lo * (1 - q_lo) / m_lo))
        ses[name] = se
        flags[name] = slack < -2.0 * se if se > 0 else slack < -1e-12

    return StratumDiagnosis(label=label, n=n, n_by_arm=(n0, n1),
                            slacks=slacks, ses=ses, flags=flags)


def diagnose_iv(data: Dataset, strata_cols: tuple = ()) -> IvReport:
    """Evaluate the instrument inequalities on empirical frequencies.

    With ``strata_cols`` (names of discrete covariate columns) the check
    runs separately within each observed level combination; a stratum
    missing one instrument arm is reported as skipped rather than
    evaluated.
    """
    if not strata_cols:
        return IvReport(strata=(_diagnose_rows("all", data.z, data.d,
                                               data.y),))

    idx = data.cols(tuple(strata_cols))
    values = data.x[:, list(idx)]
    for name, col in zip(strata_cols, values.T):
        if np.unique(col).size > _MAX_LEVELS:
            raise DomainError(
                f"column {name!r} has more than {_MAX_LEVELS} levels; "
                "strata columns must be discrete")

    strata = []
    for combo in sorted({tuple(row) for row in values.tolist()}):
        rows = np.all(values == np.asarray(combo), axis=1)
        label = ",".join(f"{name}={value:g}"
                         for name, value in zip(strata_cols, combo))
        strata.append(_diagnose_rows(label, data.z[rows], data.d[rows],
                                     data.y[rows]))
    return IvReport(strata=tuple(strata))
