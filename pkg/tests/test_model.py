import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from valleycross.model import (
    ModelError,
    ModelParams,
    MutationKernel,
    derive_landscape,
    load_model,
    params_from_fitness,
    save_model,
    validate_valley,
)


def test_unit_rates_give_unit_equilibria():
    p = params_from_fitness([-0.5, 0.5], [-0.3, -0.2], K=100)
    land = derive_landscape(p)
    assert np.allclose(land.xbar, 1.0)


def test_critical_resident_has_zero_equilibrium():
    # b_0 = d_0 clamps xbar_0 at 0 and f_i0 reduces to b_i - d_i
    p = ModelParams(
        L=1,
        b=[1.0, 1.0],
        d=[1.0, 0.25],
        c=[[1.0, 0.5], [0.5, 1.0]],
        kernel="one_sided",
        K=100,
        mu=0.0,
    )
    land = derive_landscape(p)
    assert land.xbar[0] == 0.0
    assert np.allclose(land.f[:, 0], p.b - p.d)


def test_two_trait_fitness_recovery():
    # with unit rates, c_ij = 1 - f_ij inverts the fitness definition
    f10, f01 = 0.5, -0.3
    p = ModelParams(
        L=1,
        b=[1.0, 1.0],
        d=[0.0, 0.0],
        c=[[1.0, 1 - f01], [1 - f10, 1.0]],
        kernel="one_sided",
        K=100,
        mu=0.0,
    )
    land = derive_landscape(p)
    assert land.f[1, 0] == pytest.approx(0.5, abs=1e-14)
    assert land.f[0, 1] == pytest.approx(-0.3, abs=1e-14)


def test_diagonal_fitness_zero_at_positive_equilibrium():
    p = params_from_fitness([-1.0, -0.4, 0.6], [-0.7, -0.2, -0.9], K=50)
    land = derive_landscape(p)
    assert np.allclose(np.diag(land.f), 0.0, atol=1e-14)


def test_validate_six_trait_landscape(six_trait_one_sided):
    report = validate_valley(derive_landscape(six_trait_one_sided))
    assert report.valid, report.violated


def test_validate_flags_tie():
    p = params_from_fitness([-0.5, -0.5, 0.7], [-0.4, -0.3, -0.2], K=10)
    report = validate_valley(derive_landscape(p))
    assert not report.valid
    assert "distinct_resident_fitnesses" in report.violated


def test_validate_flags_unfit_terminal():
    p = params_from_fitness([-0.5, -0.1], [-0.4, -0.3], K=10)
    report = validate_valley(derive_landscape(p))
    assert not report.valid
    assert "terminal_fit_vs_resident" in report.violated


def test_build_rejects_fitness_of_one():
    with pytest.raises(ModelError):
        params_from_fitness([-0.5, 1.0], [-0.4, -0.3])


def test_build_competition_from_fitness():
    p = params_from_fitness([-1.0, 0.5], [-0.4, -0.3])
    assert p.c[1, 0] == pytest.approx(2.0)


def test_zero_self_competition_rejected():
    with pytest.raises(ModelError):
        ModelParams(
            L=1, b=[1, 1], d=[0, 0], c=[[0.0, 1], [1, 1]],
            kernel="one_sided", K=10, mu=0.0,
        )


@st.composite
def _valley_columns(draw):
    L = draw(st.integers(min_value=2, max_value=6))
    interior = draw(
        st.lists(
            st.floats(min_value=-3, max_value=-0.05),
            min_size=L - 1, max_size=L - 1, unique=True,
        )
    )
    fl0 = draw(st.floats(min_value=0.05, max_value=0.95))
    col0 = interior + [fl0]
    colL = draw(
        st.lists(
            st.floats(min_value=-3, max_value=-0.05),
            min_size=L, max_size=L, unique=True,
        )
    )
    return col0, colL


@given(_valley_columns())
@settings(max_examples=60, deadline=None)
def test_roundtrip_fitness_columns(cols):
    col0, colL = cols
    p = params_from_fitness(col0, colL, K=100)
    land = derive_landscape(p)
    L = p.L
    assert np.allclose(land.f[1:, 0], col0, atol=1e-12)
    assert np.allclose(land.f[:L, L], colL, atol=1e-12)


def test_monotonicity_in_competition():
    p = params_from_fitness([-0.5, 0.5], [-0.4, -0.3], K=100)
    land = derive_landscape(p)
    c2 = p.c.copy()
    c2[1, 0] += 0.5
    p2 = ModelParams(L=p.L, b=p.b, d=p.d, c=c2, kernel=p.kernel, K=p.K, mu=p.mu)
    assert derive_landscape(p2).f[1, 0] < land.f[1, 0]


@given(st.floats(min_value=0.05, max_value=20.0))
@settings(max_examples=40, deadline=None)
def test_valley_verdict_invariant_under_time_rescale(lam):
    p = params_from_fitness([-0.5, -1.2, 0.7], [-0.6, -0.2, -0.9], K=100)
    scaled = ModelParams(
        L=p.L, b=p.b * lam, d=p.d * lam, c=p.c * lam,
        kernel=p.kernel, K=p.K, mu=p.mu,
    )
    r1 = validate_valley(derive_landscape(p))
    r2 = validate_valley(derive_landscape(scaled))
    assert r1.valid == r2.valid
    assert [cl.passed for cl in r1.clauses] == [cl.passed for cl in r2.clauses]


def test_model_json_roundtrip(tmp_path, six_trait_two_sided):
    path = tmp_path / "model.json"
    save_model(six_trait_two_sided, path)
    loaded = load_model(path)
    assert loaded == six_trait_two_sided
    assert loaded.digest() == six_trait_two_sided.digest()


def test_model_json_requires_schema_version(tmp_path):
    doc = params_from_fitness([-0.5, 0.5], [-0.4, -0.3]).to_dict()
    del doc["v"]
    path = tmp_path / "model.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelError, match="schema version"):
        load_model(path)


def test_model_json_corruption_reports_position(tmp_path):
    path = tmp_path / "model.json"
    path.write_text('{"v": 1, "L": }')
    with pytest.raises(ModelError, match="line 1"):
        load_model(path)


def test_mu_out_of_range_rejected():
    with pytest.raises(ModelError):
        params_from_fitness([-0.5, 0.5], [-0.4, -0.3], mu=1.5)
