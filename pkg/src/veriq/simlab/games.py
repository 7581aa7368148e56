"""Monte-Carlo play of the single-cloud and two-cloud verification games.

Two execution modes share one ledger layout:

``modeled``
    Verdicts are Bernoulli draws from ``config.error_rates`` and a
    mismatch occurs whenever a duplicated query meets a cheater. No
    relation is touched, so 10^5 rounds take milliseconds.
``pipeline``
    Every round runs the real machinery: the server answers through
    :func:`veriq.adversary.respond`, the owner draws a fresh sketch and
    calls :func:`veriq.verifier.local_verify`, escalations go to
    :func:`veriq.verifier.audit_exact`, and Contract 2 mismatches go to
    :func:`veriq.verifier.show_work_audit`.

Computation costs come from the game config in both modes (``C(Q)`` for an
honest answer, ``C(Q')`` for a cheat) so empirical means line up with the
closed-form tables in :mod:`veriq.incentives`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .._validation import check_positive_int, derive_seed
from ..adversary import Honest, ServerStrategy, is_cheat, respond
from ..authstore import SignedRelation, draw_sketch
from ..exceptions import ConfigError
from ..incentives import CHEAT, HONEST, GameConfig, utilities_single_cloud, utilities_two_cloud
from ..queryeng import Kind, Query, eval_exact, select
from ..verifier import AuditResult, EpsilonPolicy, audit_exact, local_verify, show_work_audit

MODES = ("modeled", "pipeline")
_CHUNK = 4096


@dataclass(frozen=True)
class RoundOutcome:
    round: int
    actions: tuple[str, ...]
    checked: bool  # verified (single cloud) or duplicated (two cloud)
    primary: int | None
    escalated: bool
    audited: bool
    flagged: tuple[bool, ...]
    payments: dict
    fines: dict
    reimbursements: dict
    net: dict

    @property
    def cash(self) -> dict:
        return {p: self.payments[p] + self.fines[p] + self.reimbursements[p] for p in self.net}


@dataclass
class SimulationResult:
    """Column-oriented round ledger. Row ``i`` is round ``i``.

    Transfer arrays are signed amounts received per player, shape
    ``(rounds, players)``.
    """

    form: str
    players: tuple[str, ...]
    actions: tuple[str, ...]
    checked: np.ndarray
    primary: np.ndarray
    escalated: np.ndarray
    audited: np.ndarray
    flagged: np.ndarray
    payments: np.ndarray
    fines: np.ndarray
    reimbursements: np.ndarray
    net: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_rounds(self) -> int:
        return len(self.checked)

    @property
    def cash(self) -> np.ndarray:
        return self.payments + self.fines + self.reimbursements

    def rounds(self) -> Iterator[RoundOutcome]:
        for i in range(self.n_rounds):
            row = lambda arr: {p: float(arr[i, j]) for j, p in enumerate(self.players)}  # noqa: E731
            primary = int(self.primary[i])
            yield RoundOutcome(
                i,
                self.actions,
                bool(self.checked[i]),
                primary if primary > 0 else None,
                bool(self.escalated[i]),
                bool(self.audited[i]),
                tuple(bool(x) for x in self.flagged[i]),
                row(self.payments),
                row(self.fines),
                row(self.reimbursements),
                row(self.net),
            )

    def summary(self) -> "TrialSummary":
        return TrialSummary.from_result(self)


@dataclass(frozen=True)
class TrialSummary:
    form: str
    actions: tuple[str, ...]
    rounds: int
    mean: dict
    se: dict
    p_fn: float
    p_tn: float
    checked: int
    audits: int
    detections: int
    fines: int
    outcomes: dict

    @classmethod
    def from_result(cls, res: SimulationResult) -> "TrialSummary":
        n = res.n_rounds
        mean = {p: float(res.net[:, j].mean()) for j, p in enumerate(res.players)}
        if n > 1:
            se = {p: float(res.net[:, j].std(ddof=1) / np.sqrt(n)) for j, p in enumerate(res.players)}
        else:
            se = {p: float("nan") for p in res.players}

        # error rates over checked rounds, split by whether the answering server cheated
        cheated = _answer_cheated(res)
        honest_checked = res.checked & ~cheated
        cheat_checked = res.checked & cheated
        p_fn = float(res.escalated[honest_checked].mean()) if honest_checked.any() else float("nan")
        p_tn = float(res.escalated[cheat_checked].mean()) if cheat_checked.any() else float("nan")

        if res.form == "single_cloud":
            outcomes = {
                "unverified": int((~res.checked).sum()),
                "accepted": int((res.checked & ~res.escalated).sum()),
                "escalated": int(res.escalated.sum()),
            }
        else:
            outcomes = {
                "single": int((~res.checked).sum()),
                "match": int((res.checked & ~res.escalated).sum()),
                "mismatch": int(res.escalated.sum()),
            }
        fined = (res.fines < 0).any(axis=1)
        return cls(
            res.form,
            res.actions,
            n,
            mean,
            se,
            p_fn,
            p_tn,
            int(res.checked.sum()),
            int(res.audited.sum()),
            int(res.flagged.any(axis=1).sum()),
            int(fined.sum()),
            outcomes,
        )

    def to_json(self) -> dict:
        return {
            "form": self.form,
            "actions": list(self.actions),
            "rounds": self.rounds,
            "mean": self.mean,
            "se": self.se,
            "p_fn": self.p_fn,
            "p_tn": self.p_tn,
            "checked": self.checked,
            "audits": self.audits,
            "detections": self.detections,
            "fines": self.fines,
            "outcomes": self.outcomes,
        }


def _answer_cheated(res: SimulationResult) -> np.ndarray:
    cheats = np.array([a == CHEAT for a in res.actions])
    if res.form == "single_cloud":
        return np.full(res.n_rounds, bool(cheats[0]))
    # two cloud: a duplicated round "cheats" when either answer is a cheat
    any_cheat = bool(cheats.any())
    return np.full(res.n_rounds, any_cheat)


def _check_common(config: GameConfig, rounds, mode):
    if not isinstance(config, GameConfig):
        raise ConfigError("config must be a GameConfig")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    return check_positive_int(rounds, "rounds")


def _empty_ledger(rounds, players, servers):
    z = lambda: np.zeros((rounds, len(players)))  # noqa: E731
    return dict(
        checked=np.zeros(rounds, dtype=bool),
        primary=np.zeros(rounds, dtype=np.int64),
        escalated=np.zeros(rounds, dtype=bool),
        audited=np.zeros(rounds, dtype=bool),
        flagged=np.zeros((rounds, servers), dtype=bool),
        payments=z(),
        fines=z(),
        reimbursements=z(),
        net=z(),
    )


# ---------------------------------------------------------------- single cloud


def run_single_cloud(
    relation: SignedRelation | None,
    query: Query | None,
    config: GameConfig,
    strategy: ServerStrategy,
    policy: EpsilonPolicy | None = None,
    k: int = 1000,
    rounds: int = 1000,
    seed=0,
    mode: str = "pipeline",
    contract: bool = True,
    key: bytes | None = None,
) -> SimulationResult:
    """Play ``rounds`` rounds of the single-cloud game.

    Each round the server answers, the owner verifies with probability
    ``config.alpha`` and audits on Escalate. Under Contract 3 a caught
    cheater forfeits P and pays F + C(A); an honest server is always paid,
    the owner absorbing any audit a false alarm triggers.
    """
    rounds = _check_common(config, rounds, mode)
    config.validate("single_cloud")
    cheat = is_cheat(strategy)
    P, C, Cp = config.price, config.cost_honest, config.cost_cheat
    CA, CV, F = config.audit_cost, config.verify_cost, config.fine
    cost = Cp if cheat else C
    info = config.info_cheat if cheat else config.info_honest

    if mode == "modeled":
        checked, escalated = _modeled_single(config, cheat, rounds, seed)
        caught = escalated & cheat
    else:
        if relation is None or query is None or policy is None:
            raise ConfigError("pipeline mode needs a relation, a query and a policy")
        checked, escalated, caught = _pipeline_single(relation, query, config, strategy, policy, k, rounds, seed, key)

    led = _empty_ledger(rounds, ("O", "S"), 1)
    led["checked"][:] = checked
    led["escalated"][:] = escalated
    led["audited"][:] = escalated
    led["flagged"][:, 0] = caught

    paid = ~caught if contract else np.ones(rounds, dtype=bool)
    pay = np.where(paid, P, 0.0)
    led["payments"][:, 0] = -pay
    led["payments"][:, 1] = pay
    if contract:
        led["fines"][:, 0] = np.where(caught, F, 0.0)
        led["fines"][:, 1] = -led["fines"][:, 0]
        led["reimbursements"][:, 0] = np.where(caught, CA, 0.0)
        led["reimbursements"][:, 1] = -led["reimbursements"][:, 0]

    cash = led["payments"] + led["fines"] + led["reimbursements"]
    led["net"][:, 0] = cash[:, 0] + info - np.where(checked, CV, 0.0) - np.where(escalated, CA, 0.0)
    led["net"][:, 1] = cash[:, 1] - cost
    action = CHEAT if cheat else HONEST
    return SimulationResult("single_cloud", ("O", "S"), (action,), meta={"mode": mode, "contract": contract}, **led)


def _modeled_single(config, cheat, rounds, seed):
    checked = np.empty(rounds, dtype=bool)
    escalated = np.empty(rounds, dtype=bool)
    p_esc = config.error_rates.p_tn if cheat else config.error_rates.p_fn
    for c, start in enumerate(range(0, rounds, _CHUNK)):
        stop = min(rounds, start + _CHUNK)
        rng = np.random.default_rng(derive_seed(seed, c))
        u = rng.random((stop - start, 2))
        checked[start:stop] = u[:, 0] < config.alpha
        escalated[start:stop] = checked[start:stop] & (u[:, 1] < p_esc)
    return checked, escalated


def _pipeline_single(relation, query, config, strategy, policy, k, rounds, seed, key):
    k = check_positive_int(k, "k")
    exact = None
    if query.is_aggregate:
        try:
            exact = eval_exact(relation, query)
        except Exception:  # undefined aggregate; respond handles it
            exact = None
    checked = np.zeros(rounds, dtype=bool)
    escalated = np.zeros(rounds, dtype=bool)
    caught = np.zeros(rounds, dtype=bool)
    for r in range(rounds):
        rng = np.random.default_rng(derive_seed(seed, r))
        response = respond(strategy, relation, query, rng, config, exact=exact)
        if rng.random() >= config.alpha:
            continue
        checked[r] = True
        sketch = draw_sketch(relation, k, rng)
        verdict = local_verify(sketch, query, response.claim, policy, key)
        if not verdict.accepted:
            escalated[r] = True
            caught[r] = audit_exact(relation, query, response.claim, key) is AuditResult.CHEAT
    return checked, escalated, caught


# ------------------------------------------------------------------- two cloud


def run_two_cloud(
    relation: SignedRelation | None,
    query: Query | None,
    config: GameConfig,
    strategies: tuple[ServerStrategy, ServerStrategy],
    contract: int = 1,
    rounds: int = 1000,
    seed=0,
    mode: str = "pipeline",
    reimburse_audit: bool = True,
    key: bytes | None = None,
) -> SimulationResult:
    """Play ``rounds`` rounds of the two-cloud game.

    The owner picks a primary server uniformly at random and duplicates the
    query to the other with probability ``config.alpha``. Matching answers
    are both paid. On a mismatch nobody is paid and no computation cost is
    booked; Contract 1 fines both servers, Contract 2 audits (cost C(A),
    repaid by the flagged cheaters when ``reimburse_audit``) and fines only
    those flagged.
    """
    rounds = _check_common(config, rounds, mode)
    if contract not in (1, 2):
        raise ConfigError(f"two-cloud game supports contracts 1 and 2, not {contract}")
    config.validate("two_cloud")
    if len(strategies) != 2:
        raise ConfigError("two strategies are required")
    cheats = np.array([is_cheat(s) for s in strategies])

    if mode == "modeled":
        primary, checked, mismatch, flagged = _modeled_two(config, cheats, rounds, seed)
    else:
        if relation is None or query is None:
            raise ConfigError("pipeline mode needs a relation and a query")
        if contract == 2 and key is None:
            raise ConfigError("Contract 2 pipeline audits need the MAC key")
        primary, checked, mismatch, flagged = _pipeline_two(relation, query, config, strategies, contract, rounds, seed, key)

    players = ("O", "S1", "S2")
    led = _empty_ledger(rounds, players, 2)
    led["checked"][:] = checked
    led["primary"][:] = primary
    led["escalated"][:] = mismatch
    led["audited"][:] = mismatch & (contract == 2)

    P, F, CA = config.price, config.fine, config.audit_cost
    cost = np.array([config.cheat_cost(s + 1) if cheats[s] else config.cost_honest for s in range(2)])
    info = np.array([config.cheat_info(s + 1) if cheats[s] else config.info_honest for s in range(2)])

    # who answered and got paid this round
    answered = np.zeros((rounds, 2), dtype=bool)
    answered[np.arange(rounds), primary - 1] = True
    answered |= checked[:, None]
    paid = answered & ~mismatch[:, None]

    pay = paid * P
    led["payments"][:, 1:] = pay
    led["payments"][:, 0] = -pay.sum(axis=1)

    if contract == 1:
        # no audit: both servers are fined on any mismatch
        fined = np.repeat(mismatch[:, None], 2, axis=1)
        led["flagged"][:] = fined
    else:
        led["flagged"][:] = flagged & mismatch[:, None]
        fined = led["flagged"]
    led["fines"][:, 1:] = -F * fined
    led["fines"][:, 0] = F * fined.sum(axis=1)
    audit_cost = np.where(led["audited"], CA, 0.0)
    if contract == 2 and reimburse_audit:
        n_flagged = fined.sum(axis=1)
        share = np.divide(CA, n_flagged, out=np.zeros(rounds), where=n_flagged > 0)
        led["reimbursements"][:, 1:] = -share[:, None] * fined
        led["reimbursements"][:, 0] = np.where(n_flagged > 0, CA, 0.0) * led["audited"]

    cash = led["payments"] + led["fines"] + led["reimbursements"]
    # the owner values every answer it ends up holding; a match is one answer
    primary_info = info[primary - 1]
    owner_info = np.where(mismatch, info.sum(), primary_info)
    led["net"][:, 0] = cash[:, 0] + owner_info - audit_cost
    booked = answered & ~mismatch[:, None]
    led["net"][:, 1:] = cash[:, 1:] - booked * cost[None, :]
    actions = tuple(CHEAT if c else HONEST for c in cheats)
    return SimulationResult(
        "two_cloud", players, actions, meta={"mode": mode, "contract": contract, "reimburse_audit": reimburse_audit}, **led
    )


def _modeled_two(config, cheats, rounds, seed):
    primary = np.empty(rounds, dtype=np.int64)
    checked = np.empty(rounds, dtype=bool)
    for c, start in enumerate(range(0, rounds, _CHUNK)):
        stop = min(rounds, start + _CHUNK)
        rng = np.random.default_rng(derive_seed(seed, c))
        u = rng.random((stop - start, 2))
        primary[start:stop] = np.where(u[:, 0] < 0.5, 1, 2)
        checked[start:stop] = u[:, 1] < config.alpha
    mismatch = checked & bool(cheats.any())
    flagged = np.repeat(cheats[None, :], rounds, axis=0)
    return primary, checked, mismatch, flagged


def _pipeline_two(relation, query, config, strategies, contract, rounds, seed, key):
    from ..verifier import _claims_agree

    exact = None
    if query.is_aggregate:
        try:
            exact = eval_exact(relation, query)
        except Exception:
            exact = None
    work = None
    if contract == 2 and query.kind is not Kind.SELECT:
        work = eval_exact(relation, select(query.predicate))

    primary = np.empty(rounds, dtype=np.int64)
    checked = np.zeros(rounds, dtype=bool)
    mismatch = np.zeros(rounds, dtype=bool)
    flagged = np.zeros((rounds, 2), dtype=bool)
    for r in range(rounds):
        rng = np.random.default_rng(derive_seed(seed, r))
        primary[r] = 1 if rng.random() < 0.5 else 2
        if rng.random() >= config.alpha:
            continue
        checked[r] = True
        with_work = contract == 2
        responses = [
            respond(s, relation, query, rng, config, with_work=with_work, exact=exact, exact_work=work) for s in strategies
        ]
        if _claims_agree(responses[0].claim, responses[1].claim, query):
            continue
        mismatch[r] = True
        if contract == 2:
            found = show_work_audit(query, responses[0], responses[1], key, relation.schema)
            flagged[r] = ("A" in found, "B" in found)
    return primary, checked, mismatch, flagged


# ------------------------------------------------------------- best response


def best_response(config: GameConfig, form: str = "single_cloud", contract: int = 1) -> str:
    """The server's utility-maximising action when the other party is honest.

    Ties go to honesty.
    """
    if form == "two_cloud":
        table = utilities_two_cloud(config, contract)
        honest, cheat = table[(HONEST, HONEST), "S1"], table[(CHEAT, HONEST), "S1"]
    elif form == "single_cloud":
        table = utilities_single_cloud(config)
        honest, cheat = table[("alpha", HONEST), "S"], table[("alpha", CHEAT), "S"]
    else:
        raise ValueError(f"unknown game form {form!r}")
    return CHEAT if cheat > honest else HONEST


def play_best_response(config: GameConfig, form: str = "single_cloud", contract: int = 1, rounds: int = 1000, seed=0) -> SimulationResult:
    """Simulate (modeled) a server that best-responds to ``config``."""
    action = best_response(config, form, contract)
    cheat = _SymbolicCheat() if action == CHEAT else Honest()
    if form == "two_cloud":
        return run_two_cloud(None, None, config, (cheat, Honest()), contract, rounds, seed, mode="modeled")
    return run_single_cloud(None, None, config, cheat, rounds=rounds, seed=seed, mode="modeled")


@dataclass(frozen=True)
class _SymbolicCheat:
    """Stand-in cheat for modeled runs, where only the action matters."""

    kind = "cheat"

    @property
    def param(self):
        return ""
