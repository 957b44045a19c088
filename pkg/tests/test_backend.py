import json
import os
import subprocess
import sys

import numpy as np
import pytest

from car_heavytail import _backend, _kernels_py

compiled = _backend.implementations().get("compiled")
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


@needs_compiled
class TestEquivalence:
    @pytest.mark.parametrize("kind", [_backend.TRIWEIGHT, _backend.GAUSSIAN])
    @pytest.mark.parametrize("seed", range(5))
    def test_kernel_sums(self, kind, seed):
        rng = np.random.default_rng(seed)
        sample = np.sort(rng.standard_cauchy(rng.integers(1, 400)))
        y = np.concatenate([rng.standard_cauchy(300), sample[:5]])
        sigma = rng.uniform(0.05, 3.0)
        for a, b in zip(compiled.kernel_sums(sample, y, sigma, kind), _kernels_py.kernel_sums(sample, y, sigma, kind)):
            assert np.allclose(a, b, rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_efron(self, seed):
        rng = np.random.default_rng(seed)
        u = rng.random(500)
        pi, p = rng.choice([0.5, 1 / 3, 0.7]), rng.uniform(0.55, 0.95)
        assert np.array_equal(compiled.efron_sequence(u, pi, p), _kernels_py.efron_sequence(u, pi, p))

    @pytest.mark.parametrize("seed", range(5))
    def test_minimization(self, seed):
        rng = np.random.default_rng(seed)
        levels = np.array([2, 3, 4], dtype=np.int64)
        codes = np.column_stack([rng.integers(0, k, 300) for k in levels]).astype(np.int64)
        w = rng.uniform(0.1, 1.0, 3)
        u = rng.random(300)
        assert np.array_equal(compiled.minimization_sequence(codes, levels, w, u, 0.5, 0.8),
                              _kernels_py.minimization_sequence(codes, levels, w, u, 0.5, 0.8))


def test_default_backend():
    assert _backend.BACKEND == ("compiled" if compiled is not None and not os.environ.get("CAR_HEAVYTAIL_PURE")
                                else "python")


_SNIPPET = """
import json, numpy as np
import car_heavytail as ch
from car_heavytail.estimators import TrialData, tdim
rng = np.random.default_rng(0)
s = rng.integers(0, 3, 400); a = (rng.random(400) < 0.5).astype(int)
d = TrialData(rng.standard_cauchy(400) + a, a, s)
print(json.dumps({"backend": ch.BACKEND, "tau": tdim(d, seed=1).tau_hat}))
"""


def _run(env_extra):
    env = {k: v for k, v in os.environ.items() if k != "CAR_HEAVYTAIL_PURE"}
    env.update(env_extra)
    out = subprocess.run([sys.executable, "-c", _SNIPPET], capture_output=True, text=True, check=True, env=env)
    return json.loads(out.stdout)


@pytest.mark.slow
def test_pure_switch_same_results():
    pure = _run({"CAR_HEAVYTAIL_PURE": "1"})
    default = _run({})
    assert pure["backend"] == "python"
    assert default["backend"] == ("compiled" if compiled is not None else "python")
    assert pure["tau"] == pytest.approx(default["tau"], rel=1e-10, abs=1e-12)
