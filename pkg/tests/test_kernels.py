import numpy as np
import pytest

from maskdiff import _pykernels, kernels
from maskdiff.batch import conditional_logprobs
from maskdiff.oracle import PottsChain
from maskdiff.predictor import optimal
from maskdiff.sampler import step_log_probs
from maskdiff.schedule import MaskSchedule, MaskTrajectory, balanced_schedule, sample_labels

try:
    from maskdiff import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
    if _ckernels is not None:
        assert kernels.BACKEND == "cython"


@pytest.mark.skipif(_ckernels is None, reason="extension not built")
@pytest.mark.parametrize("K,L,T,J", [(2, 5, 2, 1.1), (10, 100, 10, 2.0), (4, 37, 7, 0.0), (3, 1, 1, 1.0)])
def test_backends_agree(K, L, T, J, rng):
    d = PottsChain(K, L, J)
    x = np.ascontiguousarray(d.sample(500, rng), dtype=np.int64)
    labels = sample_labels(balanced_schedule(L, T), 500, rng)
    a = _ckernels.potts_conditional_logprobs(x, labels, d.log_powers, float(np.log(K)))
    b = _pykernels.potts_conditional_logprobs(x, labels, d.log_powers, float(np.log(K)))
    assert np.array_equal(a, b)


def test_kernel_matches_oracle(rng):
    d = PottsChain(3, 9, 1.4)
    sch = MaskSchedule((3, 2, 2, 2))
    x = d.sample(40, rng)
    labels = sample_labels(sch, 40, rng)
    out = conditional_logprobs(d, x, labels)
    for r in range(40):
        traj = MaskTrajectory.from_labels(labels[r])
        per_step = step_log_probs(x[r], traj, optimal(d))
        assert abs(out[r].sum() - per_step.sum()) < 1e-10


def test_tabular_batch_matches_potts(rng):
    d = PottsChain(2, 4, 0.9)
    x = d.sample(300, rng)
    labels = sample_labels(MaskSchedule((2, 1, 1)), 300, rng)
    assert np.allclose(conditional_logprobs(d, x, labels), conditional_logprobs(d.tabular, x, labels), atol=1e-12)
