"""Tour of the transportation solver that underlies every earth-mover metric.

Run:  python demos/01_transport_basics.py
"""

import numpy as np

from renderscore import Signature, emd_value, solve_transport

print("=== a tiny transportation problem ===")
# two suppliers, two consumers, crossing is expensive
supply = [0.7, 0.3]
demand = [0.5, 0.5]
cost = [[0.0, 1.0], [1.0, 0.0]]
plan = solve_transport(supply, demand, cost)
print(f"supplies {supply}, demands {demand}, cost rows {cost}")
for r, c, f in zip(plan.rows, plan.cols, plan.values):
    print(f"  move {f:.2f} from supply {r} to demand {c}")
print(f"objective {plan.objective:.3f}, moved mass {plan.moved_mass:.3f}")

print("\n=== earth mover's distance between gray histograms ===")
# all mass at black vs all mass at white, |Δvalue| ground cost
print("black -> white:", emd_value([1.0], [1.0], [[1.0]]))
# half black/half white vs all mid-gray: two flows of 0.5 mass, 0.5 apart
print("bimodal -> mid: ",
      emd_value([0.5, 0.5], [1.0], [[0.5], [0.5]]))

print("\n=== signatures drop zero-mass support points ===")
sig = Signature(points=np.array([[0.0], [0.5], [1.0]]),
                weights=np.array([0.25, 0.0, 0.75]))
print("kept points:", sig.points.ravel().tolist(),
      "weights:", sig.weights.tolist())

print("\n=== unequal totals: only the smaller side's mass moves ===")
plan = solve_transport([2.0], [0.5, 0.5], [[1.0, 3.0]])
print(f"objective {plan.objective:.2f} over moved mass {plan.moved_mass:.2f}"
      f" -> EMD {plan.objective / plan.moved_mass:.2f}")

print("\n=== opt-in entropic approximation for big supports ===")
rng = np.random.default_rng(0)
k = 150
masses = np.full(k, 1.0 / k)
big_cost = rng.random((k, k))
exact = solve_transport(masses, masses, big_cost)
approx = solve_transport(masses, masses, big_cost, method="sinkhorn")
print(f"exact objective   {exact.objective:.6f}")
print(f"sinkhorn estimate {approx.objective:.6f} "
      f"(flagged approximate={approx.approximate})")
