"""
Group maximum differentiation between two models
================================================

The defender's scores cut the pool into equal-frequency levels. Within each
level the attacker picks the pair it separates most. Ground truth then says
which model was right.
"""

import numpy as np

from ssl_iqa.evaluation import format_gmad, gmad_pairs

rng = np.random.default_rng(3)
ids = [f"img{i:03d}" for i in range(150)]
truth = rng.uniform(0, 100, len(ids))

# %%
# A good model tracks truth closely, a weak one is noisy.
good = dict(zip(ids, truth + rng.normal(0, 5, len(ids))))
weak = dict(zip(ids, truth + rng.normal(0, 30, len(ids))))
mos = dict(zip(ids, truth))

for name, defender, attacker in (("good defends", good, weak), ("weak defends", weak, good)):
    pairs = gmad_pairs(defender, attacker, num_levels=5)
    print(f"\n{name}")
    print(format_gmad(pairs), end="")
    # the attacker wins a level if ground truth agrees with its ordering
    wins = sum(mos[p.top_id] > mos[p.bottom_id] for p in pairs)
    print(f"attacker right on {wins}/{len(pairs)} levels")
