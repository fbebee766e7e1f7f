"""
An occluded gridworld with three agents
=======================================

Generate one episode, draw it, and look at who sees what.
"""

from caml import world as W

cfg = W.WorldConfig(ensure_blindspot=True)
ep = W.generate_episode(cfg, seed=3)
world = ep.world

# '#' occluder, 'H' hazard, 'b' benign object, digits are agents (0 is the ego), '.' critical zone
zone = W.zone_cells(world)
cells = {c: "#" for c in world.occluders}
cells.update({c: "." for c in zone if c not in cells})
for e in world.entities:
    cells[e.position] = "H" if e.cls == W.HAZARD else "b"
for i, a in enumerate(world.agents):
    cells[a.position] = str(i)
for r in range(world.grid_size):
    print(" ".join(cells.get((r, c), " ") for c in range(world.grid_size)))

print("expert action:", "BRAKE" if ep.expert_action == W.BRAKE else "GO")

cov = W.coverage(world)
for i, seen in cov.per_agent.items():
    print(f"agent {i} sees {len(seen)} cells")
print("team sees", len(cov.union), "cells")

# a hazard the ego cannot see but a teammate can
for h in world.hazards:
    ego = h.position in cov.per_agent[0]
    team = [i for i in cov.per_agent if i and h.position in cov.per_agent[i]]
    print(f"hazard at {h.position}: ego sees it {ego}, teammates {team}")
