"""Walk through one solve on an ill-conditioned inverse problem.

The lower problem is a rank-deficient least-squares fit, so it has a whole
affine set of minimizers. The upper objective picks the one with the
smallest regularization value. Run with ``python3 demos/iep_walkthrough.py``
(the reference step needs the ``reference`` extra).
"""

import numpy as np

import bivfa

spec = bivfa.InstanceSpec("IEP", n=30, rank_deficiency=5, seed=1)
data = bivfa.generate_data(spec)
instance = bivfa.build_instance(data)

# Independent interior-point reference for the optimal values; 1e-9 is
# comfortably below the solver tolerances used here.
ref = bivfa.reference_solve(data, tol=1e-9)
print(f"g* = {ref.g_star:.10f}   p* = {ref.p_star:.10f}   (reference accuracy {ref.tolerance_achieved:.1e})")

cfg = bivfa.OuterConfig(eps=1e-5)
print(f"\ntargets: upper gap <= {cfg.eps_f:.0e}, lower gap <= {cfg.eps_g:.0e}\n")
print(f"{'iter':>4} {'queries':>8} {'branch':>11} {'level c':>14} {'bracket u - l':>14}")


def show(row):
    print(f"{row.iteration:>4} {row.queries:>8} {row.branch.value:>11} {row.c:>14.8f} {row.u - row.l:>14.3e}")


report = bivfa.solve(instance, cfg, reference=ref, on_iteration=show)

print(f"\nexit: {report.exit_kind.value} after {report.outer_iterations} outer iterations")
print(f"f - p* = {report.f_gap:.2e}   g - g* = {report.g_gap:.2e}")
print(f"oracle queries: {report.total_queries.as_dict()}")
# A negative upper gap is allowed: the guarantee is f - p* <= eps_f and
# g - g* <= eps_g. The lower objective is very flat along its smallest
# singular directions, so a lower-level slack of a few eps_g already
# permits points with a clearly smaller upper value than p*.
print(f"distance to the reference point: {np.linalg.norm(report.x_final - ref.x_ref):.2e}")
