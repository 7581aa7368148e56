"""Closed-form analysis of the verification games.

Two-cloud game: the owner sends the query to one of two servers at random
and, with probability ``alpha``, duplicates it to the other. Contract 1
fines both servers on a mismatch; Contract 2 audits and fines only the
identified cheater(s).

Single-cloud game: the owner locally verifies with probability ``alpha``
and audits on escalation; Contract 3 charges a caught cheater ``F + C(A)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator

from ._validation import check_probability
from .exceptions import ConfigError, UndeterrableError
from .verifier import ErrorRates

HONEST, CHEAT = "h", "c"
ACTIONS = (HONEST, CHEAT)
TWO_CLOUD_PROFILES = tuple((a, b) for a in ACTIONS for b in ACTIONS)


@dataclass(frozen=True)
class GameConfig:
    """Economic parameters of one query.

    ``cost_cheat_s2`` / ``info_cheat_s2`` let the second server's cheat
    differ from the first's in the two-cloud game; they default to the
    shared values.
    """

    price: float
    cost_honest: float
    cost_cheat: float
    fine: float
    info_honest: float
    info_cheat: float
    audit_cost: float = 0.0
    verify_cost: float = 0.0
    error_rates: ErrorRates = field(default_factory=lambda: ErrorRates(0.0, 1.0))
    alpha: float = 0.0
    cost_cheat_s2: float | None = None
    info_cheat_s2: float | None = None

    def __post_init__(self):
        for name in ("price", "cost_honest", "cost_cheat", "fine", "info_honest", "info_cheat", "audit_cost", "verify_cost"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        for name in ("cost_cheat_s2", "info_cheat_s2"):
            if getattr(self, name) is not None:
                object.__setattr__(self, name, float(getattr(self, name)))
        try:
            check_probability(self.alpha, "alpha")
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if isinstance(self.error_rates, dict):
            object.__setattr__(self, "error_rates", ErrorRates.from_json(self.error_rates))

    @property
    def gain(self) -> float:
        """G: what the (first) server saves by cheating."""
        return self.cost_honest - self.cost_cheat

    def cheat_cost(self, server: int) -> float:
        if server == 2 and self.cost_cheat_s2 is not None:
            return self.cost_cheat_s2
        return self.cost_cheat

    def cheat_info(self, server: int) -> float:
        if server == 2 and self.info_cheat_s2 is not None:
            return self.info_cheat_s2
        return self.info_cheat

    def with_alpha(self, alpha: float) -> "GameConfig":
        return replace(self, alpha=alpha)

    def violations(self, form: str) -> list[str]:
        """Violated assumptions for ``form`` ("two_cloud" or "single_cloud")."""
        out = []
        if self.fine < 0:
            out.append("F >= 0")
        if not self.cost_honest <= self.price:
            out.append("C(Q) <= P")
        for s in (1, 2) if form == "two_cloud" else (1,):
            if not self.cheat_cost(s) <= self.cost_honest:
                out.append(f"C(Q'{s if form == 'two_cloud' else ''}) <= C(Q)")
            if not self.cheat_info(s) < 0:
                out.append(f"I_v(Q'{s if form == 'two_cloud' else ''}) < 0")
        if not self.info_honest > 0:
            out.append("I_v(Q) > 0")
        if form == "two_cloud":
            if not self.info_honest >= (1 + self.alpha) * self.price:
                out.append("I_v(Q) >= (1+alpha)P")
        elif form == "single_cloud":
            if not self.info_honest >= self.price:
                out.append("I_v(Q) >= P")
            if not self.audit_cost < self.info_honest - self.info_cheat:
                out.append("C(A) < I_v(Q) - I_v(Q')")
        else:
            raise ValueError(f"unknown game form {form!r}")
        return out

    def validate(self, form: str) -> "GameConfig":
        bad = self.violations(form)
        if bad:
            raise ConfigError(f"{form} config violates: " + "; ".join(bad))
        return self

    def to_json(self) -> dict:
        out = {
            "price": self.price,
            "cost_honest": self.cost_honest,
            "cost_cheat": self.cost_cheat,
            "fine": self.fine,
            "info_honest": self.info_honest,
            "info_cheat": self.info_cheat,
            "audit_cost": self.audit_cost,
            "verify_cost": self.verify_cost,
            "error_rates": {"p_fn": self.error_rates.p_fn, "p_tn": self.error_rates.p_tn},
            "alpha": self.alpha,
        }
        if self.cost_cheat_s2 is not None:
            out["cost_cheat_s2"] = self.cost_cheat_s2
        if self.info_cheat_s2 is not None:
            out["info_cheat_s2"] = self.info_cheat_s2
        return out

    @classmethod
    def from_json(cls, obj) -> "GameConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown game config fields {sorted(unknown)}")
        try:
            kwargs = dict(obj)
            if "error_rates" in kwargs:
                kwargs["error_rates"] = ErrorRates.from_json(kwargs["error_rates"])
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad game config: {exc}") from None


@dataclass(frozen=True)
class UtilityTable:
    """Expected utility per (action profile, player)."""

    players: tuple[str, ...]
    values: dict

    def __getitem__(self, key):
        profile, player = key
        return self.values[profile][player]

    def __iter__(self) -> Iterator:
        return iter(self.values)

    @property
    def profiles(self):
        return tuple(self.values)

    def to_json(self):
        return {"-".join(p) if isinstance(p, tuple) else str(p): dict(v) for p, v in self.values.items()}


# ---------------------------------------------------------------- two cloud


def utilities_two_cloud(config: GameConfig, contract: int = 1, reimburse_audit: bool = True) -> UtilityTable:
    """Expected utilities of O, S1, S2 for every (S1, S2) action profile.

    On a detected mismatch (probability ``alpha`` when anyone cheats) the
    servers' computation costs are not charged; only the contract's
    transfers apply. Contract 2 fines identified cheaters only; with
    ``reimburse_audit`` cheaters also repay the audit cost (split when both
    cheat), otherwise the owner bears it.
    """
    if contract not in (1, 2):
        raise ConfigError(f"two-cloud game supports contracts 1 and 2, not {contract}")
    config.validate("two_cloud")
    a = config.alpha
    P, C, F, CA = config.price, config.cost_honest, config.fine, config.audit_cost
    info = {0: config.info_honest, 1: config.cheat_info(1), 2: config.cheat_info(2)}
    cost = {0: C, 1: config.cheat_cost(1), 2: config.cheat_cost(2)}

    table = {}
    for profile in TWO_CLOUD_PROFILES:
        cheats = [s for s, act in zip((1, 2), profile) if act == CHEAT]
        iv = [info[s] if s in cheats else info[0] for s in (1, 2)]
        cs = [cost[s] if s in cheats else cost[0] for s in (1, 2)]
        row = {}
        if not cheats:
            row["O"] = config.info_honest - (1 + a) * P
            for s in (1, 2):
                row[f"S{s}"] = 0.5 * (1 + a) * (P - C)
        else:
            undetected_o = 0.5 * (iv[0] + iv[1]) - P
            if contract == 1:
                caught_o = 2 * F + iv[0] + iv[1]
            else:
                caught_o = len(cheats) * F + iv[0] + iv[1] - (0.0 if reimburse_audit else CA)
            row["O"] = a * caught_o + (1 - a) * undetected_o
            for s in (1, 2):
                undetected = 0.5 * (1 - a) * (P - cs[s - 1])
                if contract == 1:
                    penalty = F
                elif s in cheats:
                    penalty = F + (CA / len(cheats) if reimburse_audit else 0.0)
                else:
                    penalty = 0.0
                row[f"S{s}"] = undetected - a * penalty
        table[profile] = row
    return UtilityTable(("O", "S1", "S2"), table)


def alpha_threshold_two_cloud(config: GameConfig, contract: int = 1, reimburse_audit: bool = True) -> float:
    """Duplication probability at which S1 is indifferent between h and c.

    Solves u_S1(h,h) = u_S1(c,h) from :func:`utilities_two_cloud`:
    ``G / (2F' + 2P - C(Q) - C(Q'))`` where ``F'`` is what a lone caught
    cheater pays (``F``, plus ``C(A)`` under a reimbursing Contract 2).
    """
    gain = config.cost_honest - config.cheat_cost(1)
    if gain <= 0:
        return 0.0
    penalty = config.fine
    if contract == 2 and reimburse_audit:
        penalty += config.audit_cost
    denom = 2 * penalty + 2 * config.price - config.cost_honest - config.cheat_cost(1)
    if denom <= 0:
        raise UndeterrableError("2F + 2P - C(Q) - C(Q') must be positive")
    return gain / denom


def alpha_threshold_two_cloud_printed(gain: float, fine: float, price: float) -> float:
    """The published closed form ``G / (2F + 2P + G)``.

    It comes from an algebra slip (the alpha coefficient should be
    ``F + P - (C(Q) + C(Q'))/2``, not ``F + P + G/2``) and understates the
    indifference point; kept for comparison.
    """
    if gain <= 0:
        return 0.0
    if fine + price <= 0:
        raise ConfigError("F + P must be positive")
    return gain / (2 * fine + 2 * price + gain)


def alpha_practical_two_cloud(price: float, fine: float) -> float:
    """Threshold the owner can use without knowing the costs.

    The exact threshold grows with C(Q) and shrinks with C(Q'), so the worst
    case under ``C(Q') <= C(Q) <= P`` is ``C(Q) = P, C(Q') = 0``: ``P / (2F + P)``.
    """
    if price <= 0:
        return 0.0
    if fine < 0:
        raise ConfigError("F must be non-negative")
    return price / (2 * fine + price)


def alpha_practical_two_cloud_printed(price: float, fine: float) -> float:
    """The published simplification P / (2F - P), kept for comparison."""
    if price <= 0:
        return 0.0
    if 2 * fine <= price:
        raise ConfigError("P / (2F - P) is undefined for 2F <= P")
    return price / (2 * fine - price)


def contract2_equivalent_fine(fine: float, audit_cost: float) -> float:
    """Contract 2 fine giving the owner Contract 1's payoff against a single cheater."""
    return 2 * fine + audit_cost


# ------------------------------------------------------------- single cloud

SINGLE_CLOUD_PROFILES = (("alpha", HONEST), ("alpha", CHEAT), ("v", HONEST), ("v", CHEAT), ("n", HONEST), ("n", CHEAT))


def utilities_single_cloud(config: GameConfig, contract: bool = True) -> UtilityTable:
    """Utilities of O and S for verify / no-verify / mixed (alpha) policies.

    With ``contract`` (Contract 3) a caught cheater pays ``F + C(A)`` to
    the owner, who therefore nets ``+F`` per caught cheat.
    """
    config.validate("single_cloud")
    P, C, Cp = config.price, config.cost_honest, config.cost_cheat
    I, Ip = config.info_honest, config.info_cheat
    CA, CV, F = config.audit_cost, config.verify_cost, config.fine
    r = config.error_rates
    a = config.alpha

    t = {
        ("n", HONEST): {"O": I - P, "S": P - C},
        ("n", CHEAT): {"O": Ip - P, "S": P - Cp},
        ("v", HONEST): {"O": I - P - CV - r.p_fn * CA, "S": P - C},
    }
    if contract:
        t[("v", CHEAT)] = {"O": Ip - CV + r.p_tn * F - r.p_fp * P, "S": r.p_fp * P - Cp - r.p_tn * (CA + F)}
    else:
        t[("v", CHEAT)] = {"O": Ip - CV - r.p_tn * CA - r.p_fp * P, "S": r.p_fp * P - Cp}
    for act in ACTIONS:
        t[("alpha", act)] = {p: a * t[("v", act)][p] + (1 - a) * t[("n", act)][p] for p in ("O", "S")}
    return UtilityTable(("O", "S"), {prof: t[prof] for prof in SINGLE_CLOUD_PROFILES})


def alpha_threshold_single_cloud(config: GameConfig) -> float:
    """``G / (p_tn (C(A) + F + P))``; values above 1 mean no alpha deters."""
    p_tn = config.error_rates.p_tn
    if p_tn <= 0:
        raise UndeterrableError("p_tn = 0: verification never catches a cheat")
    gain = config.gain
    if gain <= 0:
        return 0.0
    denom = p_tn * (config.audit_cost + config.fine + config.price)
    if denom <= 0:
        raise UndeterrableError("C(A) + F + P must be positive")
    return gain / denom


# -------------------------------------------------------------- rationality


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    margin: float

    def to_json(self):
        return {"name": self.name, "passed": self.passed, "margin": self.margin}


@dataclass(frozen=True)
class RationalityReport:
    form: str
    alpha: float
    threshold: float
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self):
        return {
            "form": self.form,
            "alpha": self.alpha,
            "threshold": self.threshold,
            "passed": self.passed,
            "checks": [c.to_json() for c in self.checks],
        }


def _ge(name, lhs, rhs, tol=1e-9):
    margin = lhs - rhs
    slack = tol * max(1.0, abs(lhs), abs(rhs))
    return Check(name, margin >= -slack, margin)


def check_rationality(config: GameConfig, alpha: float | None = None, form: str = "single_cloud", contract: int | None = None) -> RationalityReport:
    """Individual-rationality and incentive-compatibility report.

    Never raises on a failed inequality; each appears with its margin
    (positive means slack). IC compares the server's honest utility with
    its best cheating utility while the other server stays honest.
    """
    alpha = config.alpha if alpha is None else alpha
    cfg = config.with_alpha(alpha)
    P, C = cfg.price, cfg.cost_honest
    checks = [_ge("P >= C(Q)", P, C), _ge("C(Q) >= C(Q')", C, cfg.cost_cheat)]
    checks.append(Check("I_v(Q') < 0 < I_v(Q)", cfg.info_cheat < 0 < cfg.info_honest, min(-cfg.info_cheat, cfg.info_honest)))

    if form == "two_cloud":
        contract = contract or 1
        try:
            threshold = alpha_threshold_two_cloud(cfg, contract)
        except UndeterrableError:
            threshold = math.inf
        checks.append(_ge("I_v(Q) >= (1+alpha)P", cfg.info_honest, (1 + alpha) * P))
        if not cfg.violations("two_cloud"):
            table = utilities_two_cloud(cfg, contract)
            checks.append(_ge("u_O(h,h) >= 0", table[("h", "h"), "O"], 0.0))
            checks.append(_ge("u_S1(h,h) >= 0", table[("h", "h"), "S1"], 0.0))
            checks.append(_ge("IC: u_S1(h,h) >= u_S1(c,h)", table[("h", "h"), "S1"], table[("c", "h"), "S1"]))
            checks.append(_ge("IC: u_S2(h,h) >= u_S2(h,c)", table[("h", "h"), "S2"], table[("h", "c"), "S2"]))
    elif form == "single_cloud":
        try:
            threshold = alpha_threshold_single_cloud(cfg)
        except UndeterrableError:
            threshold = math.inf
        checks.append(_ge("I_v(Q) >= P", cfg.info_honest, P))
        checks.append(Check("C(A) < I_v(Q) - I_v(Q')", cfg.audit_cost < cfg.info_honest - cfg.info_cheat, cfg.info_honest - cfg.info_cheat - cfg.audit_cost))
        checks.append(Check("threshold <= 1 (deterrence feasible)", threshold <= 1.0, 1.0 - threshold))
        if not cfg.violations("single_cloud"):
            table = utilities_single_cloud(cfg)
            checks.append(_ge("u_O(alpha,h) >= 0", table[("alpha", "h"), "O"], 0.0))
            checks.append(_ge("u_S(alpha,h) >= 0", table[("alpha", "h"), "S"], 0.0))
            checks.append(_ge("IC: u_S(alpha,h) >= u_S(alpha,c)", table[("alpha", "h"), "S"], table[("alpha", "c"), "S"]))
    else:
        raise ValueError(f"unknown game form {form!r}")
    checks.append(_ge("alpha >= threshold", alpha, threshold))
    return RationalityReport(form, alpha, threshold, tuple(checks))
