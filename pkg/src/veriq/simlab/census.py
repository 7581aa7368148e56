"""Synthetic stand-in for the Census 1990 person records.

Columns (all integer-coded):

========== ==================================================================
age        0..90. Ages 0-17 carry 25% of the mass, 18-64 carry 62%, 65-90
           carry 13%; uniform within each band.
income     Annual income in dollars. 0 below age 16. Otherwise 0 with
           probability ``zero_income`` (20% working age, 10% retirees), else
           lognormal with median ``income_median`` (22000; 14000 over 64) and
           log-sd ``income_sigma`` (0.9), capped at 400000.
race       Codes 1..9 with ``race_probs`` (1 white 78%, 2 black 12%, ...,
           9 Japanese 1.5%).
marital    0 married, 1 widowed, 2 divorced, 3 separated, 4 never married;
           conditional on age band, everyone under 15 is never married.
sex        0 male (49%), 1 female.
pob_match  1 when place of birth equals place of work (55%).
========== ==================================================================
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .._validation import check_positive_int, check_random_state
from ..authstore import Schema
from ..queryeng import And, Equals, Or, Query, avg, count, gt, lt, total

CENSUS_SCHEMA = Schema(("age", "income", "race", "marital", "sex", "pob_match"))

MARRIED, WIDOWED, DIVORCED, SEPARATED, NEVER_MARRIED = range(5)
MALE, FEMALE = 0, 1


@dataclass(frozen=True)
class CensusProfile:
    age_band_weights: tuple[float, float, float] = (0.25, 0.62, 0.13)
    race_probs: tuple[float, ...] = (0.78, 0.12, 0.01, 0.03, 0.005, 0.02, 0.005, 0.015, 0.015)
    male_prob: float = 0.49
    pob_match_prob: float = 0.55
    zero_income: tuple[float, float] = (0.20, 0.10)
    income_median: tuple[float, float] = (22000.0, 14000.0)
    income_sigma: float = 0.9
    income_cap: int = 400_000
    # marital probabilities (married, widowed, divorced, separated, never) per band
    marital_15_29: tuple[float, ...] = (0.33, 0.0, 0.05, 0.02, 0.60)
    marital_30_64: tuple[float, ...] = (0.65, 0.04, 0.13, 0.03, 0.15)
    marital_65_up: tuple[float, ...] = (0.55, 0.35, 0.05, 0.0, 0.05)


def gen_census_like(rows: int, seed, profile: CensusProfile = CensusProfile()) -> np.ndarray:
    """``(rows, 6)`` int64 array in :data:`CENSUS_SCHEMA` column order."""
    rows = check_positive_int(rows, "rows")
    rng = check_random_state(seed)
    p = profile

    band = rng.choice(3, size=rows, p=np.asarray(p.age_band_weights) / sum(p.age_band_weights))
    lows, highs = np.array([0, 18, 65]), np.array([17, 64, 90])
    age = rng.integers(lows[band], highs[band] + 1)

    race = rng.choice(np.arange(1, 10), size=rows, p=np.asarray(p.race_probs) / sum(p.race_probs))
    sex = np.where(rng.random(rows) < p.male_prob, MALE, FEMALE)
    pob = (rng.random(rows) < p.pob_match_prob).astype(np.int64)

    marital = np.full(rows, NEVER_MARRIED)
    for lo, hi, probs in ((15, 29, p.marital_15_29), (30, 64, p.marital_30_64), (65, 200, p.marital_65_up)):
        sel = (age >= lo) & (age <= hi)
        marital[sel] = rng.choice(5, size=int(sel.sum()), p=np.asarray(probs) / sum(probs))

    senior = age >= 65
    median = np.where(senior, p.income_median[1], p.income_median[0])
    zero_p = np.where(senior, p.zero_income[1], p.zero_income[0])
    draw = np.exp(np.log(median) + p.income_sigma * rng.standard_normal(rows))
    income = np.minimum(np.rint(draw), p.income_cap).astype(np.int64)
    income[(rng.random(rows) < zero_p) | (age < 16)] = 0

    return np.column_stack([age, income, race, marital, sex, pob]).astype(np.int64)


def census_queries() -> dict[int, Query]:
    """The eight query archetypes over :data:`CENSUS_SCHEMA`."""
    return {
        1: count(Equals("race", 2)),
        2: count(gt("income", 40000)),
        3: count(And(gt("age", 30), Equals("marital", NEVER_MARRIED))),
        4: count(Or(lt("age", 18), lt("income", 10000))),
        5: total("income", Equals("marital", NEVER_MARRIED)),
        6: total("income", And(gt("age", 40), Equals("pob_match", 1))),
        7: avg("age", gt("income", 80000)),
        8: avg("income", And(Equals("sex", MALE), Equals("race", 9))),
    }
