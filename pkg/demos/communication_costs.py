"""
Message accounting for three topologies
=======================================
"""

from caml import comms
from caml.models import ModalityMask

n = 4
teacher = ModalityMask.full(n, ["APPEARANCE", "RANGE"])
student = ModalityMask.full(n, ["APPEARANCE"])

tops = [comms.Topology("CENTRALIZED", n), comms.Topology("DECENTRALIZED_FULL", n)]
tops += [comms.Topology("DECENTRALIZED_K", n, k) for k in (1, 2)]
for top in tops:
    t = comms.ledger_for(top, teacher, 32)
    s = comms.ledger_for(top, student, 32)
    print(f"{top.kind.value:>18} k={top.k}: teacher {t.messages} msgs / {t.bytes} B, student {s.messages} msgs / {s.bytes} B")

# ring neighbours for odd k are i+1, i-1, i+2, ...
print("agent 0 of 6, k=3:", comms.ring_neighbours(0, 6, 3))
