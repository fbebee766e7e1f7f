"""Message planning and cost accounting for embedding exchange.

Three topologies: every collaborator reports to the ego (centralized), every
agent broadcasts to every other agent (fully decentralized), or every agent
talks to ``k`` ring neighbours.  Predicted costs instantiate the asymptotic
expressions with explicit unit constants so they can be checked exactly.
"""

from dataclasses import dataclass
from enum import Enum

EGO = 0
FLOAT_BYTES = 8


class TopologyError(ValueError):
    pass


class TopologyKind(str, Enum):
    CENTRALIZED = "CENTRALIZED"
    DECENTRALIZED_FULL = "DECENTRALIZED_FULL"
    DECENTRALIZED_K = "DECENTRALIZED_K"


@dataclass(frozen=True)
class Topology:
    kind: TopologyKind
    n_agents: int
    k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", TopologyKind(self.kind))
        if self.n_agents < 1:
            raise TopologyError(f"need at least one agent, got {self.n_agents}")
        if self.kind is TopologyKind.DECENTRALIZED_K and not 1 <= self.k <= self.n_agents - 1:
            raise TopologyError(f"k must lie in [1, {self.n_agents - 1}], got {self.k}")


@dataclass(frozen=True)
class CostModel:
    T_c: float = 1.0
    S_c: float = 1.0
    T_e: float = 1.0
    S_e: float = 1.0
    T: float = 1.0
    S: float = 1.0
    D: float = 1.0
    M_comm: float = 1.0

    def __post_init__(self):
        for name, value in vars(self).items():
            if value < 0:
                raise ValueError(f"cost constant {name} must be non-negative")


@dataclass
class CommLedger:
    topology: str
    n_agents: int
    k: int
    messages: int
    bytes: int
    predicted_time_units: float = 0.0
    predicted_space_units: float = 0.0
    measured_wall_latency: float = 0.0

    def per_batch(self, batch_size):
        return {"messages": self.messages * batch_size, "bytes": self.bytes * batch_size}

    def to_row(self):
        return {
            "topology": self.topology,
            "N": self.n_agents,
            "k": self.k,
            "messages": self.messages,
            "bytes": self.bytes,
            "predicted_time_units": self.predicted_time_units,
            "predicted_space_units": self.predicted_space_units,
        }


def ring_neighbours(i, n, k):
    """``k`` distinct neighbours of ``i``: i+1, i-1, i+2, i-2, ... (mod n)."""
    out = []
    step = 1
    while len(out) < k:
        for j in ((i + step) % n, (i - step) % n):
            if j != i and j not in out and len(out) < k:
                out.append(j)
        step += 1
    return out


def _providers(mask, n_agents):
    """``{modality: [agents]}`` from a ModalityMask, or every agent for one modality."""
    if mask is None:
        return {"embedding": list(range(n_agents))}
    out = {}
    for agent, mods in mask.entries:
        for m in mods:
            out.setdefault(getattr(m, "value", m), []).append(agent)
    return out


def message_plan(topology, mask=None):
    """Directed ``(sender, receiver, modality)`` messages for one step."""
    n = topology.n_agents
    plan = []
    for modality, providers in sorted(_providers(mask, n).items()):
        for sender in providers:
            if sender >= n:
                raise TopologyError(f"mask names agent {sender} but topology has {n}")
            if topology.kind is TopologyKind.CENTRALIZED:
                targets = [] if sender == EGO else [EGO]
            elif topology.kind is TopologyKind.DECENTRALIZED_FULL:
                targets = [j for j in range(n) if j != sender]
            else:
                targets = ring_neighbours(sender, n, topology.k)
            plan.extend((sender, receiver, modality) for receiver in targets)
    return plan


def predict_cost(topology, model=CostModel()):
    """``(time_units, space_units)`` from the closed-form complexity expressions."""
    n, k, c = topology.n_agents, topology.k, model
    if topology.kind is TopologyKind.CENTRALIZED:
        return (c.T_c * (n - 1) + c.D * (n - 1) + c.T_e, c.S_c * (n - 1) + c.M_comm * (n - 1) + c.S_e)
    if topology.kind is TopologyKind.DECENTRALIZED_FULL:
        return (n * c.T + n * n * c.D, n * c.S + n * n * c.M_comm)
    return (n * c.T + n * k * c.D, n * c.S + n * k * c.M_comm)


def message_coefficient(topology):
    """Coefficient of the per-message constant in ``predict_cost``."""
    n, k = topology.n_agents, topology.k
    return {
        TopologyKind.CENTRALIZED: n - 1,
        TopologyKind.DECENTRALIZED_FULL: n * n,
        TopologyKind.DECENTRALIZED_K: n * k,
    }[topology.kind]


def exact_message_count(topology, n_modalities=1):
    """Closed-form count of directed messages with every agent providing every modality.

    Equals ``message_coefficient`` except for full broadcast, where the pairwise
    term counts ``n * (n - 1)`` ordered pairs (the ``n`` self-pairs are never sent).
    """
    n, k = topology.n_agents, topology.k
    per = {
        TopologyKind.CENTRALIZED: n - 1,
        TopologyKind.DECENTRALIZED_FULL: n * (n - 1),
        TopologyKind.DECENTRALIZED_K: n * k,
    }[topology.kind]
    return per * n_modalities


def account(plan, embedding_bytes, topology=None, cost_model=CostModel(), latency=0.0):
    messages = len(plan)
    ledger = CommLedger(
        topology.kind.value if topology else "",
        topology.n_agents if topology else 0,
        topology.k if topology else 0,
        messages,
        messages * int(embedding_bytes),
        measured_wall_latency=latency,
    )
    if topology is not None:
        ledger.predicted_time_units, ledger.predicted_space_units = predict_cost(topology, cost_model)
    return ledger


def embedding_bytes(embed_dim, tokens=1):
    return int(embed_dim) * int(tokens) * FLOAT_BYTES


def ledger_for(topology, mask, embed_dim, tokens=1):
    return account(message_plan(topology, mask), embedding_bytes(embed_dim, tokens), topology)


def check_counts(max_agents=16):
    """Compare planned message counts with the closed forms for every topology and size.

    Returns a list of mismatch descriptions (empty when everything agrees).
    """
    problems = []
    for n in range(2, max_agents + 1):
        tops = [Topology(TopologyKind.CENTRALIZED, n), Topology(TopologyKind.DECENTRALIZED_FULL, n)]
        tops += [Topology(TopologyKind.DECENTRALIZED_K, n, k) for k in range(1, n)]
        for top in tops:
            measured = len(message_plan(top))
            expected = exact_message_count(top)
            if measured != expected:
                problems.append(f"{top.kind.value} N={n} k={top.k}: {measured} != {expected}")
            coef = message_coefficient(top)
            gap = n if top.kind is TopologyKind.DECENTRALIZED_FULL else 0
            if coef - measured != gap:
                problems.append(f"{top.kind.value} N={n} k={top.k}: coefficient {coef} vs {measured}")
    return problems
