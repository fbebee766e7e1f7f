"""Exact mutual information on small joint probability tables.

Axis 0 of a table is the label ``y``; axes ``1..n`` are the observations
``x_1..x_n``.  Everything is computed by marginalising the full table, in bits.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .nn import ParameterError
from .world import APPEARANCE_VALUE, BENIGN, HAZARD, Modality, generate_episode, xor_signals, zone_cells

MAX_SUPPORT = 10**6
SUM_TOL = 1e-12
CHAIN_TOL = 1e-9
NONNEG_TOL = 1e-12


class TableError(ValueError):
    pass


class AbstractionError(ValueError):
    pass


@dataclass(frozen=True)
class JointTable:
    cards: tuple
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        cards = tuple(int(c) for c in self.cards)
        if not cards or any(c < 1 for c in cards):
            raise TableError(f"cardinalities must be positive, got {cards}")
        size = int(np.prod(cards, dtype=np.int64))
        if size > MAX_SUPPORT:
            raise TableError(f"joint support {size} exceeds {MAX_SUPPORT}")
        p = np.asarray(self.probs, dtype=np.float64)
        if p.size != size:
            raise TableError(f"{p.size} probabilities for cardinalities {cards}")
        p = p.reshape(cards)
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise TableError("probabilities must be finite and non-negative")
        total = float(p.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise TableError(f"probabilities sum to {total!r}, not 1")
        p = p.copy()
        p.flags.writeable = False
        object.__setattr__(self, "cards", cards)
        object.__setattr__(self, "probs", p)

    @property
    def n_obs(self):
        return len(self.cards) - 1

    def marginal(self, keep):
        keep = sorted(set(keep))
        drop = tuple(a for a in range(len(self.cards)) if a not in keep)
        return self.probs.sum(axis=drop) if drop else self.probs

    def to_json(self):
        return {"cards": list(self.cards), "probs": self.probs.ravel().tolist()}

    @classmethod
    def from_json(cls, d):
        if set(d) != {"cards", "probs"}:
            raise TableError(f"a table needs exactly 'cards' and 'probs', got {sorted(d)}")
        return cls(tuple(d["cards"]), np.asarray(d["probs"], dtype=np.float64))

    @classmethod
    def from_counts(cls, cards, counts):
        counts = np.asarray(counts, dtype=np.float64).reshape(cards)
        total = counts.sum()
        if total <= 0:
            raise TableError("no observations to normalise")
        p = counts / total
        # renormalise once more so rounding cannot leave the sum a few ulps off
        return cls(cards, p / p.sum())


def load_table(path):
    with open(path) as fh:
        return JointTable.from_json(json.load(fh))


def save_table(table, path):
    with open(path, "w") as fh:
        json.dump(table.to_json(), fh)


def entropy(p):
    p = np.asarray(p, dtype=np.float64).ravel()
    p = p[p > 0]
    return float(-np.sum(p * np.log2(p)))


def _obs_axes(table, variables, name="vars"):
    axes = [int(v) for v in variables]
    for a in axes:
        if not 1 <= a <= table.n_obs:
            raise ParameterError(f"{name}: observation index {a} outside 1..{table.n_obs}")
    if len(set(axes)) != len(axes):
        raise ParameterError(f"{name}: repeated observation index")
    return axes


def _h(table, axes):
    return entropy(table.marginal(axes)) if axes else 0.0


def mutual_information(table, variables):
    """``I(y; x_S)`` in bits for the observation indices ``variables`` (1-based)."""
    axes = _obs_axes(table, variables)
    if not axes:
        raise ParameterError("mutual information needs at least one observation")
    return _h(table, [0]) + _h(table, axes) - _h(table, [0] + axes)


def conditional_mi(table, var, given=()):
    """``I(y; x_var | x_given)`` in bits."""
    (v,) = _obs_axes(table, [var], "var")
    g = _obs_axes(table, given, "given")
    if v in g:
        raise ParameterError(f"variable {v} also appears in the conditioning set")
    return _h(table, [0] + g) + _h(table, [v] + g) - _h(table, [0, v] + g) - _h(table, g)


@dataclass
class ChainRuleReport:
    total: float
    terms: list
    individual: list
    order: tuple
    problems: list

    @property
    def ok(self):
        return not self.problems

    def __str__(self):
        head = f"I(y;X)={self.total:.12f} bits, chain sum={sum(self.terms):.12f}"
        return head + ("" if self.ok else "\n  " + "\n  ".join(self.problems))


def chain_rule_check(table, order=None):
    """Check the chain-rule decomposition, term non-negativity and monotonicity."""
    n = table.n_obs
    if n < 1:
        raise ParameterError("table has no observation variables")
    order = tuple(range(1, n + 1)) if order is None else tuple(order)
    if sorted(order) != list(range(1, n + 1)):
        raise ParameterError(f"order {order} is not a permutation of 1..{n}")
    total = mutual_information(table, order)
    terms = [conditional_mi(table, v, order[:k]) for k, v in enumerate(order)]
    individual = [mutual_information(table, [i]) for i in range(1, n + 1)]
    problems = []
    gap = total - sum(terms)
    if abs(gap) > CHAIN_TOL:
        problems.append(f"chain rule off by {gap:.3e} bits (total {total!r}, terms {terms})")
    for k, (v, term) in enumerate(zip(order, terms)):
        if term < -NONNEG_TOL:
            problems.append(f"term {k} I(y; x{v} | x{list(order[:k])}) = {term!r} is negative")
    best = max(individual)
    if total < best - NONNEG_TOL:
        i = individual.index(best) + 1
        problems.append(f"I(y;X)={total!r} is below I(y;x{i})={best!r}")
    return ChainRuleReport(total, terms, individual, order, problems)


# -- constructions ---------------------------------------------------------------


def xor_table():
    """``y = x1 XOR x2`` with independent uniform bits."""
    p = np.zeros((2, 2, 2))
    for a in range(2):
        for b in range(2):
            p[a ^ b, a, b] = 0.25
    return JointTable((2, 2, 2), p)


def copy_table():
    """Uniform binary ``y`` observed exactly by ``x1``."""
    return JointTable((2, 2), np.array([[0.5, 0.0], [0.0, 0.5]]))


def append_duplicate(table, i):
    """Add ``x_{n+1}``, a deterministic copy of ``x_i``."""
    (i,) = _obs_axes(table, [i], "i")
    c = table.cards[i]
    idx = np.indices(table.cards)
    out = np.zeros(table.cards + (c,))
    out[tuple(idx) + (idx[i],)] = table.probs
    return JointTable(table.cards + (c,), out)


def random_table(rng, max_vars=4, max_card=3, alpha=None):
    """Dirichlet-sampled table with 1..max_vars observations of 2..max_card values."""
    n = int(rng.integers(1, max_vars + 1))
    cards = (int(rng.integers(2, max_card + 1)),) + tuple(int(rng.integers(2, max_card + 1)) for _ in range(n))
    size = int(np.prod(cards))
    a = float(alpha) if alpha is not None else float(rng.choice([0.1, 0.5, 1.0]))
    p = rng.dirichlet(np.full(size, a))
    return JointTable(cards, p / p.sum())


# -- bridge from the world ----------------------------------------------------------


def _zone_entity(world):
    zone = zone_cells(world)
    inside = [e for e in world.entities if e.position in zone]
    if not inside:
        return None
    hazards = [e for e in inside if e.cls == HAZARD]
    return (hazards or inside)[0]


def _reading(world, agent, entity, seed, cfg):
    """Per-agent symbol ``2 * visible + noisy_class`` for one entity."""
    from .world import render_observation

    if entity is None:
        return 0
    obs = render_observation(world, agent, Modality.APPEARANCE, seed, cfg)
    visible = bool(obs.payload[1][entity.position])
    if not visible:
        return 0
    threshold = (APPEARANCE_VALUE[HAZARD] + APPEARANCE_VALUE[BENIGN]) / 2
    return 2 + int(obs.payload[0][entity.position] > threshold)


def export_discrete_abstraction(cfg, seeds):
    """Empirical joint of ``(y, x_1..x_N)`` over the episodes generated from ``seeds``.

    ``x_i = 2 * vis_i + cls_i`` where ``vis_i`` says whether agent ``i`` has line of
    sight to the decisive entity (the hazard in the critical zone, or one object
    of the agent's xor signal block) and ``cls_i`` is that agent's noisy class reading.
    """
    seeds = list(seeds)
    if not seeds:
        raise AbstractionError("no seeds to enumerate")
    n = cfg.n_agents
    cards = (2,) + (4,) * n
    if int(np.prod(cards, dtype=np.int64)) > MAX_SUPPORT:
        raise AbstractionError(f"support {int(np.prod(cards, dtype=np.int64))} exceeds {MAX_SUPPORT}")
    counts = np.zeros(cards)
    for seed in seeds:
        ep = generate_episode(cfg, seed, (Modality.APPEARANCE,))
        world = ep.world
        if cfg.scenario == "xor":
            symbols = []
            for agent, entity in enumerate(xor_signals(world)):
                symbols.append(_reading(world, agent, entity, ep.episode_seed, cfg))
        else:
            entity = _zone_entity(world)
            symbols = [_reading(world, a, entity, ep.episode_seed, cfg) for a in range(n)]
        counts[(ep.expert_action,) + tuple(symbols)] += 1
    return JointTable.from_counts(cards, counts)
