use hyperq_py::hyperq_module;
use pyo3::prelude::*;

const SCRIPT: &std::ffi::CStr = cr#"
import hyperq

s = hyperq.System(1.0, [1.0], [1.0, 1.0], [[1, 2]])
assert s.n_units == 2 and s.buffer_capacity == 0
sol = hyperq.solve(s)
assert sol.converged
p = sol.distribution.probabilities
for got, want in zip(p, [0.4, 0.3, 0.1, 0.2]):
    assert abs(got - want) < 1e-9, p
rho = sol.distribution.utilization(s)
assert abs(rho[0] - 0.5) < 1e-9 and abs(rho[1] - 0.3) < 1e-9

direct = hyperq.solve_direct(s)
assert hyperq.mpre(direct.probabilities, p) < 1e-6

par = hyperq.solve(s, workers=2, batch_size=1)
assert par.distribution.probabilities == p

phi, ok = hyperq.System(1.0, [1.0], [2.0, 1.0], [[1, 2]]).check_assumption()
assert ok and abs(phi[0] - 0.5) < 1e-12

g = hyperq.generate(6, 0.5, seed=3)
again = hyperq.System.from_json(g.to_json())
a, b = again.to_json(), g.to_json()
assert a == b, [(x, y) for x, y in zip(a.splitlines(), b.splitlines()) if x != y][:3]

try:
    hyperq.System(1.0, [1.0], [1.0, 1.0], [[1, 1]])
    raise AssertionError("accepted a bad preference list")
except hyperq.HyperqError:
    pass

est = hyperq.simulate(s, arrivals=20000, replications=4, seed=1)
assert len(est["utilization"]) == 2
"#;

#[test]
fn module_from_embedded_interpreter() {
    pyo3::append_to_inittab!(hyperq_module);
    pyo3::prepare_freethreaded_python();
    Python::with_gil(|py| {
        if let Err(e) = py.run(SCRIPT, None, None) {
            e.print(py);
            panic!("python script failed");
        }
    });
}
