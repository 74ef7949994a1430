"""Minimum sample size for developing a binary-outcome risk model.

Implements the three standard criteria for logistic prediction models:

1. shrinkage-based: n1 = p / ((S - 1) * ln(1 - R2/S)) with global shrinkage
   target S (default 0.9) and anticipated adjusted Cox-Snell R-squared R2;
2. small optimism in apparent fit: the same formula with S replaced by
   S2 = R2 / (R2 + delta * maxR2), margin delta (default 0.05);
3. precise prevalence: n3 = (1.96 / delta)^2 * phi * (1 - phi).

maxR2 is the largest attainable Cox-Snell value at prevalence phi,
1 - (phi^phi * (1-phi)^(1-phi))^2, which also converts a Nagelkerke
R-squared to the Cox-Snell scale (multiply by maxR2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class SampleSizeReport:
    """Outcome of the minimum-sample-size calculation.

    Criterion counts are each rounded up; n_min is their maximum. The
    fields tied to an actual dataset (n_available, events, epv, adequate)
    are filled only when that information was supplied.
    """

    df: int
    prevalence: float
    r2_cox_snell_adj: float
    shrinkage_target: float
    margin: float
    n_criterion_1: int
    n_criterion_2: int
    n_criterion_3: int
    n_min: int
    r2_nagelkerke: float | None = None
    n_available: int | None = None
    events: int | None = None
    epv: float | None = None
    adequate: bool | None = None

    def to_dict(self) -> dict:
        return {
            "df": self.df,
            "prevalence": self.prevalence,
            "r2_cox_snell_adj": self.r2_cox_snell_adj,
            "shrinkage_target": self.shrinkage_target,
            "margin": self.margin,
            "n_criterion_1": self.n_criterion_1,
            "n_criterion_2": self.n_criterion_2,
            "n_criterion_3": self.n_criterion_3,
            "n_min": self.n_min,
            "r2_nagelkerke": self.r2_nagelkerke,
            "n_available": self.n_available,
            "events": self.events,
            "epv": self.epv,
            "adequate": self.adequate,
        }


def max_cox_snell_r2(phi: float) -> float:
    """Largest attainable Cox-Snell R-squared at outcome prevalence phi."""
    if not 0.0 < phi < 1.0:
        raise ValueError("prevalence must be strictly between 0 and 1")
    lnl0 = phi * math.log(phi) + (1.0 - phi) * math.log(1.0 - phi)
    return 1.0 - math.exp(2.0 * lnl0)


def nagelkerke_to_cox_snell(r2_nagelkerke: float, phi: float) -> float:
    """Convert a Nagelkerke R-squared to the Cox-Snell scale at prevalence phi."""
    if not 0.0 <= r2_nagelkerke <= 1.0:
        raise ValueError("r2_nagelkerke must be in [0, 1]")
    return r2_nagelkerke * max_cox_snell_r2(phi)


def epv(events: int, df: int) -> float:
    """Events per candidate parameter."""
    if df <= 0:
        raise ValueError("df must be a positive integer")
    if events < 0:
        raise ValueError("events must be non-negative")
    return events / df


def _criterion_n(p: int, r2: float, s: float) -> float:
    return p / ((s - 1.0) * math.log(1.0 - r2 / s))


def min_sample_size(
    p: int,
    phi: float,
    r2_cs_adj: float,
    shrinkage: float = 0.9,
    delta: float = 0.05,
    *,
    n_available: int | None = None,
    events: int | None = None,
    r2_nagelkerke: float | None = None,
) -> SampleSizeReport:
    """Minimum development sample size over the three criteria.

    p is the number of candidate parameters, phi the anticipated outcome
    prevalence, r2_cs_adj the anticipated adjusted Cox-Snell R-squared.
    Requires 0 < r2_cs_adj < shrinkage < 1. When n_available (and
    optionally events) are given, the report also carries events per
    variable and the adequacy verdict n_available >= n_min.
    """
    if p < 1 or int(p) != p:
        raise ValueError("p must be a positive integer")
    if not 0.0 < phi < 1.0:
        raise ValueError("prevalence must be strictly between 0 and 1")
    if not 0.0 < r2_cs_adj < shrinkage < 1.0:
        raise ValueError("need 0 < r2_cs_adj < shrinkage < 1")
    if not 0.0 < delta < 1.0:
        raise ValueError("margin must be in (0, 1)")

    max_r2 = max_cox_snell_r2(phi)
    n1 = _criterion_n(p, r2_cs_adj, shrinkage)
    s2 = r2_cs_adj / (r2_cs_adj + delta * max_r2)
    n2 = _criterion_n(p, r2_cs_adj, s2)
    n3 = (1.96 / delta) ** 2 * phi * (1.0 - phi)
    c1, c2, c3 = math.ceil(n1), math.ceil(n2), math.ceil(n3)
    n_min = max(c1, c2, c3)

    ev = events
    if ev is None and n_available is not None:
        ev = round(phi * n_available)
    return SampleSizeReport(
        df=int(p),
        prevalence=phi,
        r2_cox_snell_adj=r2_cs_adj,
        shrinkage_target=shrinkage,
        margin=delta,
        n_criterion_1=c1,
        n_criterion_2=c2,
        n_criterion_3=c3,
        n_min=n_min,
        r2_nagelkerke=r2_nagelkerke,
        n_available=n_available,
        events=ev,
        epv=(epv(ev, int(p)) if ev is not None else None),
        adequate=(n_available >= n_min if n_available is not None else None),
    )
