"""
Proxy localization and the greedy randomization search
======================================================

Proxy models regress three object offsets from two views.  Their error on a
held-out pseudo-real appearance ranks randomization settings cheaply.  The
greedy search below fixes one factor at a time, so its cost is the sum of
the candidate counts rather than their product.
"""

from drforge.evalsearch import SweepPlan, greedy_dr_search

plan = SweepPlan(
    factors=(
        ("texture_mode", ("off", "assets")),
        ("light_coeff", (None, 0.3)),
    ),
    budget=30,
    n_images=64,
    resolution=(40, 32),
)
best, report = greedy_dr_search(plan, workdir="demo_out/sweep")
print("trainings run:", report.trainings)
print(report.curves_text())
print(report.ablation_text())
print("selected texture mode:", best.texture_mode, "light:", best.light, best.light_coeff_offset)
