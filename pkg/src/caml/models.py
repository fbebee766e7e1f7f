"""Teacher, student and ablation networks built from shared pieces.

Every variant runs the same per-modality encoders (patch embedding, one
self-attention block, pooling, projection).  They differ in how embeddings from
several agents and modalities are combined before the prediction head:

* ``CAML_INTERMEDIATE``: per modality, the ego embedding queries all providers
  with cross-attention; the per-modality results are concatenated.
* ``PRE_FUSION``: each agent first fuses its own modalities with cross-attention;
  the per-agent vectors are concatenated and projected back to ``embed_dim``.
* ``LATE_COOP``: each (agent, modality) embedding gets its own head; logits are
  averaged over providers, then over modalities.
* ``SINGLE_AGENT``: ``CAML_INTERMEDIATE`` restricted to the ego.

A modality nobody provides is replaced by a learned null embedding, so any mask
yields a total forward function.
"""

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import tensor as T
from .data import PATCH, Batch, token_shape, tokenize
from .nn import MLP, AttentionBlock, Linear, Module, derive_seed
from .tensor import Tensor
from .world import MODALITY_ORDER, NUM_SEG_CLASSES, Modality


class ModelError(ValueError):
    pass


class DataError(KeyError):
    pass


class Variant(str, Enum):
    CAML_INTERMEDIATE = "CAML_INTERMEDIATE"
    PRE_FUSION = "PRE_FUSION"
    LATE_COOP = "LATE_COOP"
    SINGLE_AGENT = "SINGLE_AGENT"


class Task(str, Enum):
    DECISION = "DECISION"
    SEGMENTATION = "SEGMENTATION"


EGO = 0
READOUT_CHANNELS = 4
# each patch token predicts a SEG_SUB x SEG_SUB block of cells
SEG_SUB = 4


@dataclass(frozen=True)
class ModalityMask:
    """Which modalities each agent supplies, as ``((agent, (modality, ...)), ...)``."""

    entries: tuple

    @classmethod
    def from_mapping(cls, mapping):
        entries = []
        for agent in sorted(mapping):
            mods = tuple(m for m in MODALITY_ORDER if m in {Modality(x) for x in mapping[agent]})
            entries.append((int(agent), mods))
        return cls(tuple(entries))

    @classmethod
    def full(cls, n_agents, modalities):
        return cls.from_mapping({i: modalities for i in range(n_agents)})

    @classmethod
    def ego_only(cls, modalities):
        return cls.from_mapping({EGO: modalities})

    def as_dict(self):
        return {a: set(mods) for a, mods in self.entries}

    def agents(self):
        return tuple(a for a, mods in self.entries if mods)

    def modalities_of(self, agent):
        return dict(self.entries).get(agent, ())

    def providers(self, modality):
        modality = Modality(modality)
        return tuple(a for a, mods in self.entries if modality in mods)

    def issubset(self, other):
        theirs = other.as_dict()
        return all(set(mods) <= theirs.get(a, set()) for a, mods in self.entries)

    def to_json(self):
        return {str(a): [m.value for m in mods] for a, mods in self.entries}

    @classmethod
    def from_json(cls, d):
        return cls.from_mapping({int(a): mods for a, mods in d.items()})


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant = Variant.CAML_INTERMEDIATE
    modalities: tuple = (Modality.APPEARANCE, Modality.RANGE)
    mask: ModalityMask = None
    n_agents: int = 3
    embed_dim: int = 32
    head_hidden: int = 64
    task: Task = Task.DECISION
    grid_size: int = 16
    state_cap: int = 8
    num_classes: int = NUM_SEG_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "task", Task(self.task))
        mods = tuple(Modality(m) for m in self.modalities)
        object.__setattr__(self, "modalities", mods)
        if self.mask is None:
            n = 1 if self.variant is Variant.SINGLE_AGENT else self.n_agents
            object.__setattr__(self, "mask", ModalityMask.full(n, mods))
        for agent, agent_mods in self.mask.entries:
            if not 0 <= agent < self.n_agents:
                raise ModelError(f"mask names agent {agent} outside [0, {self.n_agents})")
            extra = set(agent_mods) - set(mods)
            if extra:
                raise ModelError(f"mask modalities {sorted(m.value for m in extra)} not in spec modalities")
        if self.variant is Variant.SINGLE_AGENT and set(self.mask.agents()) - {EGO}:
            raise ModelError("SINGLE_AGENT masks may only list the ego")
        if self.task is Task.SEGMENTATION and self.grid_size % (2 * (self.grid_size // PATCH)):
            raise ModelError("segmentation needs grid_size divisible by 2 * patch count")

    @property
    def is_full(self):
        if self.variant is Variant.SINGLE_AGENT:
            return self.mask == ModalityMask.ego_only(self.modalities)
        return self.mask == ModalityMask.full(self.n_agents, self.modalities)

    @property
    def out_dim(self):
        return 2 if self.task is Task.DECISION else SEG_SUB * SEG_SUB * self.num_classes

    def with_mask(self, mask):
        return replace(self, mask=mask)

    def to_json(self):
        return {
            "variant": self.variant.value,
            "modalities": [m.value for m in self.modalities],
            "mask": self.mask.to_json(),
            "n_agents": self.n_agents,
            "embed_dim": self.embed_dim,
            "head_hidden": self.head_hidden,
            "task": self.task.value,
            "grid_size": self.grid_size,
            "state_cap": self.state_cap,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        d["mask"] = ModalityMask.from_json(d["mask"])
        d["modalities"] = tuple(d["modalities"])
        return cls(**d)


def teacher_spec(n_agents=3, modalities=(Modality.APPEARANCE, Modality.RANGE), **kw):
    return ModelSpec(modalities=tuple(modalities), n_agents=n_agents, **kw)


def student_spec(teacher, retained):
    """Same architecture as ``teacher``; every agent keeps only ``retained``."""
    retained = {Modality(m) for m in retained}
    mapping = {a: [m for m in mods if m in retained] for a, mods in teacher.mask.entries}
    return teacher.with_mask(ModalityMask.from_mapping(mapping))


def assert_homologous(teacher, student):
    """Student and teacher specs may differ only in their masks."""
    if replace(student, mask=teacher.mask) != teacher:
        raise ModelError("student spec differs from teacher beyond the modality mask")
    if not student.mask.issubset(teacher.mask):
        raise ModelError("student mask is not a subset of the teacher mask")


class Encoder(Module):
    """Patch embedding, one residual self-attention block, then a readout.

    For decisions every token is squeezed to a few channels and the token map is
    flattened into a fully connected layer, so token positions are kept without
    a wide (and easily memorising) readout.  For segmentation each token is
    projected separately so the map stays spatial.
    """

    def __init__(self, n_tokens, token_dim, dim, seed, readout_channels=READOUT_CHANNELS):
        self.n_tokens = n_tokens
        self.patch = Linear(token_dim, dim, derive_seed(seed, 0))
        self.attn = AttentionBlock(dim, "self", derive_seed(seed, 1))
        self.squeeze = Linear(dim, readout_channels, derive_seed(seed, 4))
        self.out = Linear(n_tokens * readout_channels, dim, derive_seed(seed, 2))
        self.token_out = Linear(dim, dim, derive_seed(seed, 3))

    def __call__(self, tokens, pool=True):
        h = T.relu(self.patch(tokens))
        h = h + self.attn(h)
        if pool:
            h = T.relu(self.squeeze(h))
            return self.out(T.reshape(h, h.shape[:-2] + (-1,)))
        return self.token_out(h)


class FusionModel(Module):
    def __init__(self, spec, seed=0):
        self.spec = spec
        self.seed = seed
        d = spec.embed_dim
        self.encoders = {}
        for j, m in enumerate(spec.modalities):
            n_tokens, token_dim = token_shape(m, spec.grid_size, spec.state_cap)
            self.encoders[m.value] = Encoder(n_tokens, token_dim, d, derive_seed(seed, 1, j))
        hidden = spec.head_hidden
        null_rng = np.random.default_rng(derive_seed(seed, 2))
        v = spec.variant
        if v in (Variant.CAML_INTERMEDIATE, Variant.SINGLE_AGENT):
            self.cross = {m.value: AttentionBlock(d, "cross", derive_seed(seed, 3, j)) for j, m in enumerate(spec.modalities)}
            self.null = {m.value: Tensor(null_rng.normal(0, 0.1, d), requires_grad=True) for m in spec.modalities}
            self.head = MLP((len(spec.modalities) * d, hidden, hidden, spec.out_dim), derive_seed(seed, 4))
        elif v is Variant.PRE_FUSION:
            active = spec.mask.agents()
            if not active:
                raise ModelError("PRE_FUSION needs at least one agent with a modality")
            self.fuse = AttentionBlock(d, "cross", derive_seed(seed, 3))
            self.project = Linear(len(active) * d, d, derive_seed(seed, 5))
            self.head = MLP((d, hidden, hidden, spec.out_dim), derive_seed(seed, 4))
        elif v is Variant.LATE_COOP:
            if not spec.mask.agents():
                raise ModelError("LATE_COOP needs at least one provider")
            self.heads = {m.value: MLP((d, hidden, hidden, spec.out_dim), derive_seed(seed, 4, j)) for j, m in enumerate(spec.modalities)}

    # -- stages -----------------------------------------------------------------

    def encode(self, batch):
        """``{modality: (providers, Tensor[B, S, d] or [B, S, P, d])}`` for masked slots."""
        spec = self.spec
        pool = spec.task is Task.DECISION
        out = {}
        for m in spec.modalities:
            providers = spec.mask.providers(m)
            if not providers:
                continue
            if m not in batch.tokens:
                raise DataError(f"batch has no {m.value} observations for agents {providers}")
            x = np.asarray(batch.tokens[m])[:, list(providers)]
            B, S = x.shape[:2]
            emb = self.encoders[m.value](Tensor(x.reshape((B * S,) + x.shape[2:])), pool=pool)
            out[m] = (providers, T.reshape(emb, (B, S) + emb.shape[1:]))
        return out

    def aggregate_intermediate(self, embeddings, batch_size):
        spec = self.spec
        d = spec.embed_dim
        slots = []
        for m in spec.modalities:
            if m not in embeddings:
                lead = (batch_size,) if spec.task is Task.DECISION else (batch_size, self._n_tokens)
                slots.append(T.expand(self.null[m.value], lead + (d,)))
                continue
            providers, E = embeddings[m]
            kv, lead = _flatten_sources(E)
            if EGO in providers:
                q = kv[:, providers.index(EGO): providers.index(EGO) + 1, :]
            else:
                q = T.expand(self.null[m.value], (kv.shape[0], 1, d))
            fused = self.cross[m.value](q, kv)
            slots.append(T.reshape(fused, lead + (d,)))
        return T.concat(slots, axis=-1)

    def aggregate_prefusion(self, embeddings):
        spec = self.spec
        d = spec.embed_dim
        per_agent = []
        for agent in spec.mask.agents():
            rows = []
            for m in spec.mask.modalities_of(agent):
                providers, E = embeddings[m]
                rows.append(E[:, providers.index(agent)])
            stacked = T.stack(rows, axis=-2)  # [B, M, d] or [B, P, M, d]
            lead = stacked.shape[:-2]
            kv = T.reshape(stacked, (-1,) + stacked.shape[-2:])
            q = T.mean(kv, axis=-2, keepdims=True)
            fused = self.fuse(q, kv)
            per_agent.append(T.reshape(fused, lead + (d,)))
        if not per_agent:
            raise ModelError("PRE_FUSION: every agent is empty")
        return self.project(T.concat(per_agent, axis=-1))

    def late_coop_logits(self, embeddings):
        per_modality = []
        for m in self.spec.modalities:
            if m not in embeddings:
                continue
            _, E = embeddings[m]
            per_modality.append(T.mean(self.heads[m.value](E), axis=1))
        if not per_modality:
            raise ModelError("LATE_COOP: no provider for any modality")
        total = per_modality[0]
        for x in per_modality[1:]:
            total = total + x
        return T.scalar_mul(total, 1.0 / len(per_modality))

    @property
    def _n_tokens(self):
        return (self.spec.grid_size // PATCH) ** 2

    def __call__(self, batch):
        return self.forward(batch)

    def forward(self, batch):
        """Logits: ``[B, 2]`` for decisions, ``[B, G, G, C]`` for segmentation."""
        spec = self.spec
        emb = self.encode(batch)
        if spec.variant is Variant.LATE_COOP:
            out = self.late_coop_logits(emb)
        else:
            if spec.variant is Variant.PRE_FUSION:
                fused = self.aggregate_prefusion(emb)
            else:
                fused = self.aggregate_intermediate(emb, len(batch))
            out = self.head(fused)
        if spec.task is Task.SEGMENTATION:
            out = segmentation_map(out, spec.grid_size, spec.num_classes)
        return out


def _flatten_sources(E):
    """``[B, S, d]`` -> ``[B, S, d]``; ``[B, S, P, d]`` -> ``[B*P, S, d]``."""
    if E.ndim == 3:
        return E, (E.shape[0],)
    B, S, P, d = E.shape
    return T.reshape(T.transpose(E, (0, 2, 1, 3)), (B * P, S, d)), (B, P)


def segmentation_map(token_logits, grid_size, num_classes):
    """Per-token ``SEG_SUB x SEG_SUB`` blocks -> coarse grid -> nearest-neighbour upsample to ``G``."""
    B, P, _ = token_logits.shape
    n = int(round(P ** 0.5))
    C, k = num_classes, SEG_SUB
    coarse = T.reshape(token_logits, (B, n, n, k, k, C))
    coarse = T.reshape(T.transpose(coarse, (0, 1, 3, 2, 4, 5)), (B, k * n, k * n, C))
    return upsample_nearest(coarse, grid_size // (k * n))


def upsample_nearest(x, factor):
    B, H, W, C = x.shape
    if factor == 1:
        return x
    y = T.expand(T.reshape(x, (B, H, 1, W, 1, C)), (B, H, factor, W, factor, C))
    return T.reshape(y, (B, H * factor, W * factor, C))


def batch_from_episodes(spec, episodes):
    """Tokenise episodes for ``spec``; every masked slot must have an observation."""
    tokens = {}
    for m in spec.modalities:
        providers = spec.mask.providers(m)
        if not providers:
            continue
        n_tok, dim = token_shape(m, spec.grid_size, spec.state_cap)
        arr = np.zeros((len(episodes), spec.n_agents, n_tok, dim))
        for b, ep in enumerate(episodes):
            for a in providers:
                obs = ep.observations.get((a, m))
                if obs is None:
                    raise DataError(f"missing observation for agent {a}, modality {m.value}")
                arr[b, a] = tokenize(obs, spec.state_cap)
        tokens[m] = arr
    actions = np.array([ep.expert_action for ep in episodes], dtype=np.int64)
    seg = np.stack([ep.seg_labels for ep in episodes])
    return Batch(tokens, actions, seg)


def encode(model, episode):
    """``{(agent, modality): embedding}`` for one episode."""
    emb = model.encode(batch_from_episodes(model.spec, [episode]))
    out = {}
    for m, (providers, E) in emb.items():
        for i, a in enumerate(providers):
            out[(a, m)] = E.data[0, i]
    return out


def forward(model, episode):
    """Prediction for one episode: ``[2]`` logits or ``[G, G, C]`` logits."""
    out = model.forward(batch_from_episodes(model.spec, [episode]))
    return out[0]
