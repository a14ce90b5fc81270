"""Backend selection and numba/numpy kernel agreement."""

import math

import numpy as np
import pytest

from stepshape import kernels

pytestmark = pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba not installed")


@pytest.fixture(autouse=True)
def _restore_backend():
    yield
    kernels.set_backend(None)


def test_backend_selection_env_and_override(monkeypatch):
    kernels.set_backend(None)
    assert kernels.active_backend() == "numba"
    monkeypatch.setenv("STEPSHAPE_NO_NUMBA", "1")
    assert kernels.active_backend() == "numpy"
    kernels.set_backend("numba")
    assert kernels.active_backend() == "numba"
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


def _case(rng, n):
    lp_new = rng.normal(-1.0, 0.4, n)
    lp_old = lp_new + rng.normal(0.0, 0.05, n)
    adv = rng.normal(0.0, 1.0, n)
    return lp_new, lp_old, adv


def test_fill_think_mean_bitwise_parity():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 400))
        adv = rng.normal(0.0, 1.0, n)
        mask = rng.random(n) < rng.random()
        a, b = adv.copy(), adv.copy()
        kernels.fill_think_mean(a, mask, backend="numpy")
        kernels.fill_think_mean(b, mask, backend="numba")
        assert (a == b).all()


def test_fill_think_mean_constant_fast_path_exact():
    adv = np.full(64, 0.3333333333333333)
    mask = np.zeros(64, dtype=bool)
    mask[::3] = True
    for backend in ("numpy", "numba"):
        out = adv.copy()
        kernels.fill_think_mean(out, mask, backend=backend)
        assert (out == 0.3333333333333333).all()


def test_fill_think_mean_all_think_is_noop():
    adv = np.array([1.0, 2.0, 3.0])
    mask = np.ones(3, dtype=bool)
    out = adv.copy()
    kernels.fill_think_mean(out, mask)
    assert (out == adv).all()


def test_fill_think_mean_matches_sequential_oracle():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(2, 200))
        adv = rng.normal(0.0, 1.0, n)
        mask = rng.random(n) < 0.4
        expected = adv.copy()
        response = [v for v, m in zip(adv, mask) if not m]
        if response:
            total = 0.0
            for v in response:
                total += v
            mean = response[0] if all(v == response[0] for v in response) else total / len(response)
            for i in range(n):
                if mask[i]:
                    expected[i] = mean
        out = adv.copy()
        kernels.fill_think_mean(out, mask, backend="numpy")
        assert (out == expected).all()


def test_policy_and_kl_cross_backend_tolerance():
    # exp rounds differently between numpy's vector path and libm, so the two
    # backends agree to ulps, not bits.
    rng = np.random.default_rng(13)
    for _ in range(25):
        n = int(rng.integers(1, 3000))
        lp_new, lp_old, adv = _case(rng, n)
        p1 = kernels.policy_term_sum(lp_new, lp_old, adv, 0.2, backend="numpy")
        p2 = kernels.policy_term_sum(lp_new, lp_old, adv, 0.2, backend="numba")
        assert p1 == pytest.approx(p2, rel=1e-11, abs=1e-11)
        k1 = kernels.kl_term_sum(lp_new, lp_old, backend="numpy")
        k2 = kernels.kl_term_sum(lp_new, lp_old, backend="numba")
        assert k1 == pytest.approx(k2, rel=1e-11, abs=1e-11)


def test_policy_and_kl_bit_stable_within_backend():
    rng = np.random.default_rng(17)
    lp_new, lp_old, adv = _case(rng, 2048)
    for backend in ("numpy", "numba"):
        first_p = kernels.policy_term_sum(lp_new, lp_old, adv, 0.2, backend=backend)
        first_k = kernels.kl_term_sum(lp_new, lp_old, backend=backend)
        for _ in range(3):
            assert kernels.policy_term_sum(lp_new, lp_old, adv, 0.2, backend=backend) == first_p
            assert kernels.kl_term_sum(lp_new, lp_old, backend=backend) == first_k


def test_policy_term_matches_scalar_oracle():
    rng = np.random.default_rng(19)
    for backend in ("numpy", "numba"):
        for _ in range(20):
            n = int(rng.integers(1, 60))
            lp_new, lp_old, adv = _case(rng, n)
            got = kernels.policy_term_sum(lp_new, lp_old, adv, 0.2, backend=backend)
            want = 0.0
            for i in range(n):
                ratio = math.exp(lp_new[i] - lp_old[i])
                want += min(ratio * adv[i], min(max(ratio, 0.8), 1.2) * adv[i])
            assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


def test_kl_term_matches_scalar_oracle_and_nonnegative():
    rng = np.random.default_rng(23)
    for backend in ("numpy", "numba"):
        for _ in range(20):
            n = int(rng.integers(1, 60))
            lp_new, lp_old, _ = _case(rng, n)
            got = kernels.kl_term_sum(lp_new, lp_old, backend=backend)
            want = 0.0
            for i in range(n):
                delta = lp_old[i] - lp_new[i]
                want += math.exp(delta) - delta - 1.0
            assert got == pytest.approx(want, rel=1e-12, abs=1e-12)
            assert got >= 0.0


def test_empty_inputs_are_zero():
    empty = np.zeros(0)
    assert kernels.policy_term_sum(empty, empty, empty, 0.2) == 0.0
    assert kernels.kl_term_sum(empty, empty) == 0.0
