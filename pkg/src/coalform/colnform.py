"""Decentralised coalition formation by deferred acceptance.

Each round runs three barrier-synchronised stages against the state at the
start of the stage:

1. proposing: every non-suspended participant whose next preferred
   coalition beats its held one proposes it and drops it from its list;
2. evaluation: a proposal is rejected if any member does not strictly
   prefer it to what that member holds;
3. selection: every participant picks its favourite surviving proposal; a
   proposal becomes held when all members other than its proposer picked it.
   Holds it displaces are dissolved and their proposers may propose again.

Proposals that survive evaluation but are not selected stay on the table
for later rounds.  A rejection is withdrawn once every hold that caused it
has been dissolved, so a participant knocked back to standing alone is not
locked out of coalitions it turned down earlier.  Nothing is ever proposed
twice by the same participant.  The process stops after a round with no
proposals, no new holds and no withdrawn rejections.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

from .errors import InstanceTooLarge, NonConvergence
from .game import DEFAULT_EPSILON, Coalition, CoalitionStructure, Instance, MechanismKind
from .stability import game_table

log = logging.getLogger(__name__)

DEFAULT_PREFERENCE_BUDGET = 5_000_000


@dataclass
class PreferenceList:
    """Coalitions giving ``owner`` strictly positive utility, best first.

    Equal utilities fall back to smaller size, then lexicographic member ids,
    so every participant breaks ties the same way.
    """

    owner: int
    entries: list[Coalition]
    utilities: list[float]
    cursor: int = 0

    def top(self) -> Coalition | None:
        return self.entries[self.cursor] if self.cursor < len(self.entries) else None

    def remove_top(self) -> Coalition:
        coalition = self.entries[self.cursor]
        self.cursor += 1
        return coalition

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class AgentState:
    preferences: PreferenceList
    held: Coalition | None = None
    suspended: bool = False
    proposals_received: set = field(default_factory=set)


@dataclass
class RoundTrace:
    round_index: int
    proposals: list[tuple[int, Coalition]] = field(default_factory=list)
    rejections: list[tuple[int, Coalition]] = field(default_factory=list)
    holds_formed: list[Coalition] = field(default_factory=list)
    holds_broken: list[Coalition] = field(default_factory=list)
    held_after: dict[int, Coalition] = field(default_factory=dict)

    def to_json(self) -> str:
        data = asdict(self)
        data["held_after"] = {str(k): v for k, v in sorted(self.held_after.items())}
        return json.dumps(data, sort_keys=True)


def _preference_key(u: float, coalition: Coalition):
    return (-u, len(coalition), coalition)


def build_preferences(
    instance: Instance,
    mechanism: MechanismKind,
    epsilon: float = DEFAULT_EPSILON,
    budget: int = DEFAULT_PREFERENCE_BUDGET,
) -> dict[int, PreferenceList]:
    table = game_table(instance.oracle, instance.k)
    total = int(table.sizes[table.sizes > 1].sum())
    if total > budget:
        raise InstanceTooLarge(f"{total} preference entries exceed budget {budget}")
    util = table.utilities(mechanism)
    ranked: dict[int, list[tuple]] = {i: [] for i in range(instance.n)}
    for idx, coalition in enumerate(table.coalitions):
        if len(coalition) == 1:
            continue
        for i in coalition:
            u = float(util[idx, i])
            if u > epsilon:
                ranked[i].append(_preference_key(u, coalition))
    prefs = {}
    for i, keys in ranked.items():
        keys.sort()
        prefs[i] = PreferenceList(i, [k[2] for k in keys], [-k[0] for k in keys])
    return prefs


@dataclass
class ColnFormResult:
    structure: CoalitionStructure
    trace: list[RoundTrace]
    preference_entries: int

    def __iter__(self):
        # allows ``structure, trace = run(...)``
        return iter((self.structure, self.trace))


def run(
    instance: Instance,
    mechanism: MechanismKind,
    epsilon: float = DEFAULT_EPSILON,
    *,
    literal: bool = False,
) -> ColnFormResult:
    """Simulate the rounds until nobody can propose; see the module docstring.

    ``literal=True`` drops unselected proposals at the end of each round and
    never revives rejected ones.  That variant can stop at an unstable
    structure and is kept for comparison only.
    """
    table = game_table(instance.oracle, instance.k)
    util = table.utilities(mechanism)
    n = instance.n

    def u(i: int, coalition: Coalition | None) -> float:
        if coalition is None:
            return 0.0
        return float(util[table.index[coalition], i])

    def better(i: int, candidate: Coalition, current: Coalition | None) -> bool:
        return u(i, candidate) > u(i, current) + epsilon

    prefs = build_preferences(instance, mechanism, epsilon)
    agents = [AgentState(prefs[i]) for i in range(n)]
    proposer_of: dict[Coalition, int] = {}
    pending: dict[Coalition, int] = {}
    # rejected proposal -> (proposer, holds that caused the rejection)
    parked: dict[Coalition, tuple[int, set]] = {}
    entries = sum(len(p) for p in prefs.values())
    max_rounds = 2 * entries + n + 1
    trace: list[RoundTrace] = []

    round_index = 0
    while True:
        round_index += 1
        if round_index > max_rounds:
            raise NonConvergence(f"no termination within {max_rounds} rounds")
        record = RoundTrace(round_index)

        # proposing stage
        if literal:
            pending.clear()
        for i, agent in enumerate(agents):
            if agent.suspended:
                continue
            top = agent.preferences.top()
            if top is None or not better(i, top, agent.held):
                continue
            agent.preferences.remove_top()
            record.proposals.append((i, top))
            if top not in parked:
                pending.setdefault(top, i)  # same coalition from two proposers: first one keeps it
        for agent in agents:
            agent.proposals_received = set()
        for coalition in pending:
            for j in coalition:
                agents[j].proposals_received.add(coalition)

        # evaluation stage (against stage-start holds)
        reasons: dict[Coalition, set] = {}
        for j, agent in enumerate(agents):
            for coalition in sorted(agent.proposals_received):
                if not better(j, coalition, agent.held):
                    record.rejections.append((j, coalition))
                    reasons.setdefault(coalition, set()).add(agent.held)
        for agent in agents:
            agent.proposals_received -= reasons.keys()
        for coalition, why in reasons.items():
            proposer = pending.pop(coalition)
            if not literal and None not in why:
                parked[coalition] = (proposer, why)

        # selection stage
        picks: dict[int, Coalition] = {}
        for j, agent in enumerate(agents):
            if agent.proposals_received:
                picks[j] = min(agent.proposals_received, key=lambda g: _preference_key(u(j, g), g))
        candidates = [
            g for g, p in pending.items()
            if all(picks.get(k) == g for k in g if k != p)
        ]
        # Unanimous candidates (the proposer also picked its own) are pairwise
        # disjoint and go first; a proposer that picked someone else's
        # proposal only keeps its own if that one did not form.
        accepted: list[Coalition] = []
        taken: set[int] = set()
        for g in sorted(candidates, key=lambda g: (picks.get(pending[g]) != g, g)):
            if taken.isdisjoint(g):
                accepted.append(g)
                taken.update(g)

        displaced = {agents[k].held for g in accepted for k in g if agents[k].held is not None}
        for old in sorted(displaced):
            record.holds_broken.append(old)
            for member in old:
                agents[member].held = None
            agents[proposer_of.pop(old)].suspended = False
        for g in accepted:
            record.holds_formed.append(g)
            for k in g:
                agents[k].held = g
            proposer_of[g] = pending.pop(g)
            agents[proposer_of[g]].suspended = True

        # a rejection stands only while the hold behind it does
        revived = []
        for g, (proposer, why) in sorted(parked.items()):
            why.difference_update(displaced)
            if not why:
                revived.append(g)
                pending.setdefault(g, proposer)
        for g in revived:
            del parked[g]
        max_rounds += len(revived)

        record.held_after = {i: a.held for i, a in enumerate(agents) if a.held is not None}
        trace.append(record)
        if not record.proposals and not accepted and not revived:
            break

    held = {a.held for a in agents if a.held is not None}
    singles = [(i,) for i, a in enumerate(agents) if a.held is None]
    structure = tuple(sorted(list(held) + singles, key=lambda c: c[0]))
    log.debug("coalition formation finished after %d rounds, %d proposals", len(trace), total_proposals(trace))
    return ColnFormResult(structure, trace, entries)


def total_proposals(trace: list[RoundTrace]) -> int:
    return sum(len(r.proposals) for r in trace)
