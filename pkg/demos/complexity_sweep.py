"""How the oracle cost grows as the tolerance tightens.

Solves one ill-conditioned inverse problem at four tolerances and fits the log-log slope of oracle queries against 1/eps.
Run with ``python3 demos/complexity_sweep.py``; it takes about a minute.
"""

import numpy as np

import bivfa

data = bivfa.generate_data(bivfa.InstanceSpec("IEP", n=50, rank_deficiency=10, seed=7))
instance = bivfa.build_instance(data)

eps_values = [1e-3, 1e-4, 1e-5, 1e-6]
queries = []
for eps in eps_values:
    rep = bivfa.solve(instance, bivfa.OuterConfig(eps=eps))
    queries.append(rep.total_queries.total)
    print(f"eps = {eps:.0e}: {rep.exit_kind.value:>10}, {rep.outer_iterations:>2} outer iterations, "
          f"{queries[-1]:>8} queries, {rep.seconds:6.2f} s")

slope = np.polyfit(np.log(1 / np.array(eps_values)), np.log(queries), 1)[0]
print(f"\nlog-log slope of queries against 1/eps: {slope:.2f}")
