"""Quick check of the compiled module (build it with maturin first)."""

import json
import math

import rydspin

basis = rydspin.basis(4)
assert len(basis) == 16 and basis[0] == (4, 0, 0, 0)

coherent = rydspin.State.coherent(16)
assert abs(coherent.squeezing_parameter() - 0.25) < 1e-12

cat = rydspin.cat_generate(20)
even, odd = cat.final_state.parity_weights()
assert abs(even - 0.92) < 0.02 and abs(odd - 0.08) < 0.02
assert cat.view("rotated_phi").parity_weights()[1] < 0.02
assert json.loads(cat.to_json())["protocol"] == "cat"

dyn = rydspin.dynamic_squeeze(16, evolve_time=10.0, prep="ideal")
assert dyn.metrics["delta_jz"] < 2.0

x, eig = rydspin.spectrum(16, 11)
assert abs(eig[0][-1] - 8.0) < 1e-9 and abs(eig[-1][-1] - math.sqrt(32)) < 1e-9

q = coherent.q_function(19, 37)
assert abs(max(max(row) for row in q) - 1.0) < 1e-9

try:
    rydspin.cat_generate(0)
except ValueError:
    pass
else:
    raise AssertionError("N=0 accepted")

print("smoke test passed:", cat, dyn.metrics["delta_jz"])
