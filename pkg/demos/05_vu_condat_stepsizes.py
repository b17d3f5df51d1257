"""
How large may the dual step be? For the normalized scalar example
(unit coupling, unit Lipschitz constants, primal step ``mu``) the
script bisects for the largest admissible dual step ``nu`` under the
Fejer-type condition and under the classical averagedness condition.
The Fejer-type condition admits considerably larger steps.
"""

from tripd.solver import vu_condat_thresholds

print(f"{'mu':>5} {'lambda':>7} {'nu (Fejer)':>12} {'nu (averaged)':>14} {'ratio':>7}")
for mu in (0.5, 1.0, 1.5):
    for lam in (0.5, 1.0, 1.5):
        ours, theirs = vu_condat_thresholds(mu, lam)
        # thresholds below 1e-9 mean no admissible dual step
        ratio = f"{ours / theirs:7.2f}" if min(ours, theirs) > 1e-9 else f"{'-':>7}"
        print(f"{mu:5.2f} {lam:7.2f} {ours:12.6f} {theirs:14.6f} {ratio}")
