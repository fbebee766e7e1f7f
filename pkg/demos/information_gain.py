"""
How much does a second agent tell you?
======================================

Exact mutual information on small joint tables, then on tables counted from
generated worlds.
"""

from caml import info
from caml.world import WorldConfig

xor = info.xor_table()
print("xor: I(y;x1) =", info.mutual_information(xor, [1]))
print("xor: I(y;x1,x2) =", info.mutual_information(xor, [1, 2]))

dup = info.append_duplicate(info.copy_table(), 1)
print("copy of x1 adds", info.conditional_mi(dup, 2, [1]), "bits")

# the default world: does the team know more than the ego?
table = info.export_discrete_abstraction(WorldConfig(), range(2000))
report = info.chain_rule_check(table)
print(report)
for i, v in enumerate(report.individual, 1):
    print(f"I(y; agent {i}) = {v:.4f} bits")
