"""Seeded gridworld with occluders, hazards and a privileged expert.

The world keeps the two ingredients that make collaboration and extra sensors
worth having: cells hidden from the ego by occluders but seen by teammates, and
modalities that disagree on what they measure well (class vs. position).

Coordinates are ``(row, col)`` with row 0 at the top.  The ego is agent 0.
"""

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import lru_cache

import numpy as np


class Modality(str, Enum):
    APPEARANCE = "APPEARANCE"
    RANGE = "RANGE"
    STATE = "STATE"


MODALITY_ORDER = (Modality.APPEARANCE, Modality.RANGE, Modality.STATE)

GO, BRAKE = 0, 1
BENIGN, HAZARD = 0, 1

# segmentation classes
FREE, OCCLUDER, SEG_BENIGN, SEG_HAZARD = 0, 1, 2, 3
NUM_SEG_CLASSES = 4

# appearance intensities
APPEARANCE_VALUE = {"occluder": 0.25, BENIGN: 0.5, HAZARD: 1.0}
RANGE_VALUE = {"occluder": 0.5, "entity": 1.0}

STATE_FEATURES = 5  # d_row, d_col, v_row, v_col, present

HEADINGS = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}


class GenerationError(RuntimeError):
    pass


class ModalityError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldConfig:
    grid_size: int = 16
    n_agents: int = 3
    sensing_radius: float = 7.0
    n_occluders: int = 3
    n_entities: int = 4
    p_brake: float = 0.4
    p_distractor: float = 0.5
    p_hidden_hazard: float = 0.5
    p_truck: float = 0.6
    p_hazard: float = 0.5
    p_decoy: float = 0.5
    visible_hazard: bool = True
    p_miss: float = 0.3
    zone_depth: int = 5
    zone_width: int = 3
    sigma_a: float = 0.3
    p_a: float = 0.15
    ensure_blindspot: bool = False
    ensure_modality_split: bool = False
    scenario: str = "default"
    state_cap: int = 8
    agent_positions: tuple = None
    max_retries: int = 50

    def __post_init__(self):
        if self.grid_size < 8:
            raise ConfigError(f"grid_size must be >= 8, got {self.grid_size}")
        if not 1 <= self.n_agents <= 8:
            raise ConfigError(f"n_agents must lie in [1, 8], got {self.n_agents}")
        if self.sensing_radius < 2:
            raise ConfigError(f"sensing_radius must be >= 2, got {self.sensing_radius}")
        if self.scenario not in ("default", "xor"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.scenario == "xor" and self.n_agents != 2:
            raise ConfigError("the xor scenario needs exactly 2 agents")
        for name in ("p_brake", "p_distractor", "p_hidden_hazard", "p_truck", "p_hazard", "p_decoy", "p_miss", "p_a"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.agent_positions is not None:
            pos = tuple(tuple(int(v) for v in p) for p in self.agent_positions)
            if len(pos) != self.n_agents:
                raise ConfigError("agent_positions must list one cell per agent")
            object.__setattr__(self, "agent_positions", pos)

    def to_dict(self):
        d = asdict(self)
        if d["agent_positions"] is not None:
            d["agent_positions"] = [list(p) for p in d["agent_positions"]]
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown world config keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("agent_positions") is not None:
            d["agent_positions"] = tuple(tuple(p) for p in d["agent_positions"])
        return cls(**d)


@dataclass(frozen=True)
class AgentPose:
    position: tuple
    heading: str = "N"
    radius: float = 7.0


@dataclass(frozen=True)
class Entity:
    position: tuple
    velocity: tuple
    cls: int


@dataclass(frozen=True)
class WorldState:
    grid_size: int
    occluders: frozenset
    entities: tuple
    agents: tuple
    zone_depth: int = 5
    zone_width: int = 3
    scenario: str = "default"

    @property
    def hazards(self):
        return tuple(e for e in self.entities if e.cls == HAZARD)

    @property
    def ego(self):
        return self.agents[0]


@dataclass
class Observation:
    agent_id: int
    modality: Modality
    payload: np.ndarray


@dataclass
class EpisodeRecord:
    world: WorldState
    observations: dict
    expert_action: int
    seg_labels: np.ndarray
    episode_seed: int
    config: WorldConfig = field(repr=False, default=None)


@dataclass
class CoverageReport:
    per_agent: dict
    union: frozenset


# -- geometry ------------------------------------------------------------------


def ray_cells(src, dst):
    """Cells strictly between ``src`` and ``dst`` on the centre-to-centre ray.

    Integer grid walk; where the ray passes exactly through a cell corner, both
    side cells are included, so corner-touching occluders block.
    """
    (r0, c0), (r1, c1) = src, dst
    dr, dc = r1 - r0, c1 - c0
    nr, nc = abs(dr), abs(dc)
    sr = 1 if dr > 0 else -1
    sc = 1 if dc > 0 else -1
    r, c = r0, c0
    ir = ic = 0
    cells = []
    while ir < nr or ic < nc:
        decision = (1 + 2 * ic) * nr - (1 + 2 * ir) * nc
        if decision == 0:
            cells.append((r, c + sc))
            cells.append((r + sr, c))
            r += sr
            c += sc
            ir += 1
            ic += 1
        elif decision < 0:
            c += sc
            ic += 1
        else:
            r += sr
            ir += 1
        cells.append((r, c))
    return [cell for cell in cells if cell != (r1, c1) and cell != (r0, c0)]


@lru_cache(maxsize=4096)
def _ray_table(grid_size, src):
    G = grid_size
    rays = [ray_cells(src, (r, c)) for r in range(G) for c in range(G)]
    width = max(1, max(len(x) for x in rays))
    table = np.full((G * G, width), G * G, dtype=np.int64)
    for i, cells in enumerate(rays):
        for j, (r, c) in enumerate(cells):
            table[i, j] = r * G + c
    rr, cc = np.divmod(np.arange(G * G), G)
    dist2 = (rr - src[0]) ** 2 + (cc - src[1]) ** 2
    return table, dist2


def visibility_mask(grid_size, occluders, position, radius):
    """Boolean ``G x G`` mask of cells the agent at ``position`` can see."""
    G = grid_size
    occ = np.zeros(G * G + 1, dtype=bool)
    for r, c in occluders:
        occ[r * G + c] = True
    table, dist2 = _ray_table(G, tuple(position))
    vis = ~occ[table].any(axis=1) & (dist2 <= radius * radius + 1e-9)
    return vis.reshape(G, G)


def zone_cells(world):
    """Closed critical zone ahead of the ego: ``zone_depth`` deep, ``zone_width`` wide."""
    ego = world.ego
    fr, fc = HEADINGS[ego.heading]
    lr, lc = fc, fr  # lateral axis
    half = world.zone_width // 2
    cells = set()
    G = world.grid_size
    for depth in range(1, world.zone_depth + 1):
        for lat in range(-half, world.zone_width - half):
            r = ego.position[0] + fr * depth + lr * lat
            c = ego.position[1] + fc * depth + lc * lat
            if 0 <= r < G and 0 <= c < G:
                cells.add((r, c))
    return frozenset(cells)


def xor_signals(world):
    """One representative entity of each agent's signal block (xor scenario)."""
    return world.entities[0], world.entities[XOR_BLOCK]


def expert_action(world):
    """BRAKE iff a true hazard sits in the critical zone (xor scenario: parity of the two signals)."""
    if world.scenario == "xor":
        a, b = xor_signals(world)
        return BRAKE if a.cls != b.cls else GO
    zone = zone_cells(world)
    return BRAKE if any(h.position in zone for h in world.hazards) else GO


def coverage(world):
    per_agent = {}
    for i, agent in enumerate(world.agents):
        mask = visibility_mask(world.grid_size, world.occluders, agent.position, agent.radius)
        per_agent[i] = frozenset(zip(*np.nonzero(mask)))
    per_agent = {i: frozenset((int(r), int(c)) for r, c in cells) for i, cells in per_agent.items()}
    union = frozenset().union(*per_agent.values())
    return CoverageReport(per_agent, union)


def segmentation_labels(world):
    G = world.grid_size
    seg = np.full((G, G), FREE, dtype=np.int64)
    for r, c in world.occluders:
        seg[r, c] = OCCLUDER
    for e in world.entities:
        seg[e.position] = SEG_HAZARD if e.cls == HAZARD else SEG_BENIGN
    return seg


# -- observations --------------------------------------------------------------


def _noise_rng(episode_seed, agent_id, modality):
    return np.random.default_rng([int(episode_seed), int(agent_id), MODALITY_ORDER.index(modality)])


def render_observation(world, agent_id, modality, seed, cfg=None):
    """Render one agent's view in one modality; noise is keyed by (seed, agent, modality)."""
    try:
        modality = Modality(modality)
    except ValueError:
        raise ModalityError(f"unknown modality {modality!r}") from None
    cfg = cfg or WorldConfig(grid_size=world.grid_size, n_agents=len(world.agents))
    G = world.grid_size
    agent = world.agents[agent_id]
    vis = visibility_mask(G, world.occluders, agent.position, agent.radius)
    rng = _noise_rng(seed, agent_id, modality)

    if modality is Modality.RANGE:
        occ = np.zeros((G, G))
        for cell in world.occluders:
            occ[cell] = RANGE_VALUE["occluder"]
        for e in world.entities:
            occ[e.position] = RANGE_VALUE["entity"]
        payload = np.stack([occ * vis, vis.astype(float)])
        return Observation(agent_id, modality, payload)

    if modality is Modality.APPEARANCE:
        img = np.zeros((G, G))
        for cell in world.occluders:
            img[cell] = APPEARANCE_VALUE["occluder"]
        flips = rng.random(len(world.entities)) < cfg.p_a
        offsets = rng.integers(-1, 2, size=(len(world.entities), 2))
        missed = rng.random(len(world.entities)) < cfg.p_miss
        for e, flip, off, miss in zip(world.entities, flips, offsets, missed):
            if miss:
                # the camera can fail to register an object; range returns never do
                continue
            cls = 1 - e.cls if flip else e.cls
            cell = e.position
            if cfg.ensure_modality_split:
                moved = (min(max(cell[0] + off[0], 0), G - 1), min(max(cell[1] + off[1], 0), G - 1))
                if vis[moved] and moved not in world.occluders:
                    cell = moved
            if vis[e.position]:
                img[cell] = max(img[cell], APPEARANCE_VALUE[cls])
        noise = rng.normal(0.0, cfg.sigma_a, size=(G, G)) if cfg.sigma_a > 0 else 0.0
        # noise sits on the class reading of observed objects; empty cells read 0
        img = (img + noise * (img > 0)) * vis
        return Observation(agent_id, modality, np.stack([img, vis.astype(float)]))

    ego = world.ego.position
    rows = []
    visible = [e for e in world.entities if vis[e.position]]
    visible.sort(key=lambda e: ((e.position[0] - agent.position[0]) ** 2 + (e.position[1] - agent.position[1]) ** 2, e.position))
    for e in visible[: cfg.state_cap]:
        rows.append([(e.position[0] - ego[0]) / G, (e.position[1] - ego[1]) / G, e.velocity[0], e.velocity[1], 1.0])
    payload = np.zeros((cfg.state_cap, STATE_FEATURES))
    if rows:
        payload[: len(rows)] = rows
    return Observation(agent_id, modality, payload.reshape(-1))


# -- generation ----------------------------------------------------------------


def episode_seed_for(dataset_seed, index):
    return int(np.random.SeedSequence([int(dataset_seed), int(index)]).generate_state(1)[0])


def _velocity(rng, cls, split):
    moves = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]
    if split:
        if rng.random() < 0.5:
            return (0, 0)
        return moves[rng.integers(len(moves))]
    if cls == HAZARD:
        return moves[rng.integers(len(moves))]
    return (0, 0)


def _pick(rng, cells):
    cells = sorted(cells)
    return cells[rng.integers(len(cells))] if cells else None


def _build_default(cfg, rng):
    G = cfg.grid_size
    R = float(cfg.sensing_radius)
    ego_pos = (G - 2, G // 2)
    if cfg.agent_positions is not None:
        ego_pos = cfg.agent_positions[0]
    probe = WorldState(G, frozenset(), (), (AgentPose(ego_pos, "N", R),), cfg.zone_depth, cfg.zone_width)
    zone = zone_cells(probe)
    half = cfg.zone_width // 2

    occluders = set()
    if rng.random() < cfg.p_truck:
        row = ego_pos[0] - int(rng.integers(1, 3))
        for dc in range(-half, cfg.zone_width - half):
            if 0 <= row < G and 0 <= ego_pos[1] + dc < G:
                occluders.add((row, ego_pos[1] + dc))
    for _ in range(cfg.n_occluders):
        h, w = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        r0, c0 = int(rng.integers(0, G - h + 1)), int(rng.integers(0, G - w + 1))
        block = {(r, c) for r in range(r0, r0 + h) for c in range(c0, c0 + w)}
        if block & zone:
            continue
        occluders |= block
    occluders.discard(ego_pos)

    agents = [AgentPose(ego_pos, "N", R)]
    if cfg.agent_positions is not None:
        for pos in cfg.agent_positions[1:]:
            occluders.discard(pos)
            agents.append(AgentPose(pos, "N", R))
    else:
        lo = max(0, ego_pos[0] - cfg.zone_depth - 4)
        candidates = {
            (r, c) for r in range(lo, G) for c in range(G)
            if abs(c - ego_pos[1]) >= 2 and (r, c) not in occluders and (r, c) not in zone
        }
        for _ in range(cfg.n_agents - 1):
            pos = _pick(rng, candidates - {a.position for a in agents})
            if pos is None:
                return None
            agents.append(AgentPose(pos, "N", R))
    occluders = frozenset(occluders)
    taken = set(occluders) | {a.position for a in agents}

    vis = [visibility_mask(G, occluders, a.position, a.radius) for a in agents]
    seen_by_team = np.zeros((G, G), dtype=bool)
    for m in vis[1:]:
        seen_by_team |= m
    blind = {(r, c) for r, c in zip(*np.nonzero(seen_by_team & ~vis[0]))}
    blind = {(int(r), int(c)) for r, c in blind} - taken

    entities = []

    def add(pos, cls):
        entities.append(Entity(pos, _velocity(rng, cls, cfg.ensure_modality_split), cls))
        taken.add(pos)

    free_zone = zone - taken
    if rng.random() < cfg.p_brake:
        hidden = free_zone & blind
        if hidden and (cfg.ensure_blindspot or rng.random() < cfg.p_hidden_hazard):
            add(_pick(rng, hidden), HAZARD)
        elif free_zone:
            # otherwise the hazard sits where the ego sees it, failing that where a teammate does
            seen = {c for c in free_zone if vis[0][c]} or {c for c in free_zone if seen_by_team[c]}
            if cfg.visible_hazard and seen:
                add(_pick(rng, seen), HAZARD)
            else:
                add(_pick(rng, free_zone), HAZARD)
    else:
        if free_zone and rng.random() < cfg.p_distractor:
            add(_pick(rng, free_zone), BENIGN)
        if rng.random() < cfg.p_decoy:
            # a hazard one cell outside the zone: only an exact position separates it from BRAKE
            rim = {(r + dr, c + dc) for r, c in zone for dr in (-1, 0, 1) for dc in (-1, 0, 1)}
            rim = {(r, c) for r, c in rim if 0 <= r < G and 0 <= c < G} - zone - taken
            if rim:
                add(_pick(rng, rim), HAZARD)

    outside = {(r, c) for r in range(G) for c in range(G)} - zone
    while len(entities) < cfg.n_entities:
        pos = _pick(rng, outside - taken)
        if pos is None:
            break
        add(pos, HAZARD if rng.random() < cfg.p_hazard else BENIGN)

    if cfg.ensure_blindspot:
        if not any(e.cls == HAZARD and e.position in blind for e in entities):
            pos = _pick(rng, (blind - zone) - taken)
            if pos is None:
                return None
            add(pos, HAZARD)

    return WorldState(G, occluders, tuple(entities), tuple(agents), cfg.zone_depth, cfg.zone_width, "default")


XOR_BLOCK = 9


def _build_xor(cfg, rng, episode_seed):
    G = cfg.grid_size
    R = float(cfg.sensing_radius)
    wall_col = G // 2
    occluders = frozenset((r, wall_col) for r in range(G))
    if cfg.agent_positions is not None:
        positions = cfg.agent_positions
    else:
        positions = ((G - 2, G // 4), (G - 2, wall_col + G // 4))
    agents = tuple(AgentPose(tuple(p), "N", R) for p in positions)
    bits = (episode_seed & 1, (episode_seed >> 1) & 1)
    entities = []
    for agent, bit in zip(agents, bits):
        # the signal is a 3x3 block of same-class objects fully inside the agent's view
        vis = visibility_mask(G, occluders, agent.position, agent.radius)
        blocked = set(occluders) | {a.position for a in agents}
        centres = set()
        for r in range(1, G - 1):
            for c in range(1, G - 1):
                block = [(r + dr, c + dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)]
                if all(vis[b] and b not in blocked for b in block):
                    centres.add((r, c))
        centre = _pick(rng, centres)
        if centre is None:
            return None
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                entities.append(Entity((centre[0] + dr, centre[1] + dc), (0, 0), int(bit)))
    return WorldState(G, occluders, tuple(entities), agents, cfg.zone_depth, cfg.zone_width, "xor")


def generate_world(cfg, seed):
    rng = np.random.default_rng(int(seed))
    for _ in range(cfg.max_retries):
        if cfg.scenario == "xor":
            world = _build_xor(cfg, rng, int(seed))
        else:
            world = _build_default(cfg, rng)
        if world is not None:
            return world
    constraint = "ensure_blindspot" if cfg.ensure_blindspot else "agent/entity placement"
    raise GenerationError(f"could not satisfy {constraint} after {cfg.max_retries} retries (seed {seed})")


def generate_episode(cfg, seed, modalities=MODALITY_ORDER):
    """Deterministic episode for ``(cfg, seed)``."""
    world = generate_world(cfg, seed)
    obs = {}
    for i in range(len(world.agents)):
        for m in modalities:
            m = Modality(m)
            obs[(i, m)] = render_observation(world, i, m, seed, cfg)
    return EpisodeRecord(world, obs, expert_action(world), segmentation_labels(world), int(seed), cfg)


def generate_episodes(cfg, n, seed, modalities=MODALITY_ORDER):
    return [generate_episode(cfg, episode_seed_for(seed, i), modalities) for i in range(n)]


def with_overrides(cfg, **kw):
    return replace(cfg, **kw)
