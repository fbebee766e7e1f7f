"""Array-backed datasets of episodes, tokenised for the encoders."""

from dataclasses import dataclass

import numpy as np

from .world import MODALITY_ORDER, STATE_FEATURES, Modality, generate_episodes

PATCH = 4


class DatasetError(ValueError):
    pass


def grid_tokens(payload, patch=PATCH):
    """``[C, G, G]`` map -> ``[P, C*patch*patch + P]`` patch tokens with one-hot position."""
    C, G, _ = payload.shape
    if G % patch:
        raise DatasetError(f"grid size {G} is not divisible by patch {patch}")
    n = G // patch
    x = payload.reshape(C, n, patch, n, patch).transpose(1, 3, 0, 2, 4).reshape(n * n, C * patch * patch)
    return np.concatenate([x, np.eye(n * n)], axis=1)


def state_tokens(payload, cap):
    x = payload.reshape(cap, STATE_FEATURES)
    return np.concatenate([x, np.eye(cap)], axis=1)


def tokenize(observation, state_cap=8):
    if Modality(observation.modality) is Modality.STATE:
        return state_tokens(observation.payload, state_cap)
    return grid_tokens(observation.payload)


def token_shape(modality, grid_size, state_cap=8):
    if Modality(modality) is Modality.STATE:
        return state_cap, STATE_FEATURES + state_cap
    n = (grid_size // PATCH) ** 2
    return n, 2 * PATCH * PATCH + n


@dataclass
class Dataset:
    tokens: dict
    actions: np.ndarray
    seg: np.ndarray
    seeds: np.ndarray
    grid_size: int
    n_agents: int

    def __len__(self):
        return len(self.actions)

    @property
    def modalities(self):
        return tuple(m for m in MODALITY_ORDER if m in self.tokens)

    def batch(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Batch({m: t[idx] for m, t in self.tokens.items()}, self.actions[idx], self.seg[idx])

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset({m: t[idx] for m, t in self.tokens.items()}, self.actions[idx], self.seg[idx],
                       self.seeds[idx], self.grid_size, self.n_agents)

    @classmethod
    def from_episodes(cls, episodes, modalities=MODALITY_ORDER):
        if not episodes:
            raise DatasetError("no episodes")
        cfg = episodes[0].config
        state_cap = cfg.state_cap if cfg is not None else 8
        n_agents = len(episodes[0].world.agents)
        tokens = {}
        for m in modalities:
            m = Modality(m)
            tokens[m] = np.stack([
                np.stack([tokenize(ep.observations[(i, m)], state_cap) for i in range(n_agents)])
                for ep in episodes
            ])
        actions = np.array([ep.expert_action for ep in episodes], dtype=np.int64)
        seg = np.stack([ep.seg_labels for ep in episodes])
        seeds = np.array([ep.episode_seed for ep in episodes], dtype=np.int64)
        return cls(tokens, actions, seg, seeds, episodes[0].world.grid_size, n_agents)


@dataclass
class Batch:
    tokens: dict
    actions: np.ndarray
    seg: np.ndarray

    def __len__(self):
        return len(self.actions)


def build_dataset(cfg, n, seed, modalities=MODALITY_ORDER):
    return Dataset.from_episodes(generate_episodes(cfg, n, seed, modalities), modalities)
