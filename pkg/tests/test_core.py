import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vacuumcloud.core import (
    DomainError,
    EquationOfState,
    density_to_makino,
    makino_to_density,
    pressure,
    sound_speed,
)

K_VALUES = st.floats(1e-3, 1e3)
GAMMAS = st.floats(1.05, 3.0)


def test_worked_examples():
    e2 = EquationOfState(1.0, 2.0)
    e53 = EquationOfState(1.0, 5.0 / 3.0)
    assert density_to_makino(0.0, e2) == 0.0
    assert density_to_makino(2.0, e2) == pytest.approx(4.0, rel=1e-14)
    assert density_to_makino(1.0, e53) == pytest.approx(3.0 * math.sqrt(5.0 / 3.0), rel=1e-14)
    assert makino_to_density(4.0, e2) == pytest.approx(2.0, rel=1e-14)
    assert makino_to_density(2.0 * math.sqrt(2.0), e2) == pytest.approx(1.0, rel=1e-14)
    assert pressure(3.0, e2) == pytest.approx(9.0)
    assert pressure(1.0, EquationOfState(2.0, 5.0 / 3.0)) == pytest.approx(2.0)
    assert sound_speed(2.0 * math.sqrt(2.0), e2) == pytest.approx(math.sqrt(2.0), rel=1e-14)
    assert sound_speed(3.0, e53) == pytest.approx(1.0, rel=1e-14)
    assert sound_speed(0.0, e53) == 0.0


def test_formula_against_independent_evaluation():
    # alpha = 2 sqrt(K gamma)/(gamma-1) rho^((gamma-1)/2), evaluated literally
    K, g, rho = 0.7, 1.4, 3.3
    expected = 2 * math.sqrt(K * g) / (g - 1) * rho ** ((g - 1) / 2)
    assert density_to_makino(rho, EquationOfState(K, g)) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("kwargs", [
    dict(K=0.0, gamma=2.0), dict(K=-1.0, gamma=2.0), dict(K=1.0, gamma=1.0),
    dict(K=1.0, gamma=1.8, regularity_case="A"), dict(K=1.0, gamma=2.0, regularity_case="B"),
    dict(K=1.0, gamma=1.5, regularity_case="C"),
])
def test_invalid_eos(kwargs):
    with pytest.raises(DomainError):
        EquationOfState(**kwargs)


def test_case_messages_name_the_constraint():
    with pytest.raises(DomainError, match="gamma < 2"):
        EquationOfState(1.0, 2.5, "B")
    EquationOfState(1.0, 5.0 / 3.0, "A")
    EquationOfState(1.0, 1.99, "B")


@pytest.mark.parametrize("fn", [density_to_makino, makino_to_density, pressure, sound_speed])
def test_negative_input_rejected(fn):
    with pytest.raises(DomainError):
        fn(-1e-3, EquationOfState(1.0, 2.0))
    with pytest.raises(DomainError):
        fn(np.array([1.0, -1.0]), EquationOfState(1.0, 2.0))


@given(K=K_VALUES, gamma=GAMMAS, rho=st.floats(0.0, 1e6))
def test_round_trip(K, gamma, rho):
    eos = EquationOfState(K, gamma)
    a = density_to_makino(rho, eos)
    assert a >= 0
    back = makino_to_density(a, eos)
    assert back == pytest.approx(rho, rel=1e-12, abs=1e-300)
    assert density_to_makino(back, eos) == pytest.approx(a, rel=1e-12, abs=1e-300)


@given(K=K_VALUES, gamma=GAMMAS, rho=st.floats(1e-8, 1e6))
def test_sound_speed_identity(K, gamma, rho):
    eos = EquationOfState(K, gamma)
    a = density_to_makino(rho, eos)
    assert sound_speed(a, eos) == pytest.approx(math.sqrt(K * gamma) * rho ** ((gamma - 1) / 2), rel=1e-12)


@given(K=K_VALUES, gamma=GAMMAS, r1=st.floats(0.0, 1e3), r2=st.floats(0.0, 1e3))
def test_pressure_monotone(K, gamma, r1, r2):
    eos = EquationOfState(K, gamma)
    lo, hi = sorted((r1, r2))
    assert 0.0 <= pressure(lo, eos) <= pressure(hi, eos)


def test_array_inputs_keep_shape():
    eos = EquationOfState(1.0, 2.0)
    rho = np.linspace(0, 2, 12).reshape(3, 4)
    out = density_to_makino(rho, eos)
    assert out.shape == rho.shape
    np.testing.assert_allclose(makino_to_density(out, eos), rho, rtol=1e-13)
