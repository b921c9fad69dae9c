"""Quick check of the compiled extension: python python/smoke_test.py"""
import math

import graph_phase as gp

g = gp.Graph(2, [(0, 1, 1.0)], r=0.0)
assert max(abs(a - b) for a, b in zip(sorted(g.eigenvalues), [0.0, 2.0])) < 1e-12

tau = math.log(2) / 2
d = g.diffuse([1.0, 0.0], tau)
assert abs(d[0] - 0.75) < 1e-12 and abs(d[1] - 0.25) < 1e-12

sd = gp.sd_step(g, [1.0, 0.0], tau, lambda_=0.5)
assert sd["u_next"] == [1.0, 0.0]
assert abs(sd["nu"] - 0.25) < 1e-12

mbo = gp.mbo_step(g, [1.0, 0.0], tau)
assert mbo["u_next"] == [1.0, 0.0] and mbo["theta"] == 1.0
assert gp.mbo_is_unique(g, [1.0, 0.0], tau)

value, argmax = gp.mbo_oracle(g, [1.0, 0.0], tau)
assert abs(value - 0.75) < 1e-12 and argmax == [[1.0, 0.0]]

tri = gp.Graph(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)])
u = [0.7, 0.2, 0.4]
step = gp.sd_step(tri, u, 0.1, epsilon=0.3)
oracle = gp.variational_oracle(tri, u, 0.1, 0.1 / 0.3)
assert max(abs(a - b) for a, b in zip(step["u_next"], oracle)) < 1e-6

traj = gp.run_trajectory(tri, u, 0.1, 50, epsilon=0.3)
assert all(b <= a + 1e-12 for a, b in zip(traj["h"], traj["h"][1:]))
assert max(abs(m - traj["mass"][0]) for m in traj["mass"]) < 1e-12

mc = gp.multiclass_step(tri, [[1, 0, 0], [0, 1, 0], [0, 0, 1]], 0.5, 0.01, conserve_mass=True)
assert mc["converged"]
assert max(abs(a - b) for a, b in zip(mc["class_masses_in"], mc["class_masses_out"])) < 1e-8

try:
    gp.Graph(3, [(0, 1, 1.0)])
except ValueError as e:
    assert "disconnected" in str(e).lower()
else:
    raise AssertionError("disconnected graph accepted")

print("smoke test passed")
