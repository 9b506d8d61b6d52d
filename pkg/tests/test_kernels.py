import os
import subprocess
import sys

import numpy as np
import pytest

from coalform import _pykernels, kernels
from coalform.game import MechanismKind
from coalform.instances import random_corpus
from coalform.stability import game_table

compiled = kernels.available_backends().get("cython")
needs_compiled = pytest.mark.skipif(compiled is None, reason="extension not built")


def random_problem(rng, n=6, n_coal=40, n_mech=2, n_struct=30):
    members = np.full((n_coal, 3), -1, dtype=np.int64)
    sizes = np.empty(n_coal, dtype=np.int64)
    for c in range(n_coal):
        size = int(rng.integers(1, 4))
        members[c, :size] = np.sort(rng.choice(n, size=size, replace=False))
        sizes[c] = size
    util = rng.normal(size=(n_mech, n_coal, n))
    util[rng.random(util.shape) < 0.1] = -np.inf
    cur = rng.normal(size=(n_struct, n))
    return members, sizes, util, cur


@needs_compiled
@pytest.mark.parametrize("seed", range(20))
def test_backends_agree_on_random_arrays(seed):
    rng = np.random.default_rng(seed)
    members, sizes, util, cur = random_problem(rng)
    for eps in (0.0, 1e-9, 0.5):
        a = compiled.scan_blocking(members, sizes, util, cur, eps)
        b = _pykernels.scan_blocking(members, sizes, util, cur, eps)
        assert np.array_equal(a, b)
        assert compiled.first_blocking(members, sizes, util, cur[0], eps) == int(b[0])


@needs_compiled
def test_backends_agree_on_game_tables():
    for inst in random_corpus(10, seed=12):
        table = game_table(inst.oracle, inst.k)
        space = table.space(10**6)
        util = table.utility_stack(list(MechanismKind))
        cur = space.current_utilities(table.utilities(MechanismKind.EQUAL_SPLIT))
        a = compiled.scan_blocking(table.members, table.sizes, util, cur, 1e-9)
        b = _pykernels.scan_blocking(table.members, table.sizes, util, cur, 1e-9)
        assert np.array_equal(a, b)


def test_fallback_semantics_by_hand():
    members = np.array([[0, -1], [0, 1]], dtype=np.int64)
    sizes = np.array([1, 2], dtype=np.int64)
    util = np.array([[[0.0, 0.0], [1.0, 1.0]]])
    cur = np.array([[0.0, 0.0], [2.0, 0.0], [0.5, 0.5]])
    assert _pykernels.scan_blocking(members, sizes, util, cur, 1e-9).tolist() == [1, -1, 1]


def test_env_var_forces_fallback():
    env = dict(os.environ, COALFORM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import coalform.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_backend_reported():
    assert kernels.BACKEND in kernels.available_backends()
