import numpy as np
import pytest

from graphflow.errors import ChartError
from graphflow.manifold import (builtin_chart, chart_from_spec, christoffel_at,
                                fd_christoffel_at, load_metric_table, metric_at)


def test_euclidean_metric_is_identity():
    chart = builtin_chart("euclidean", n=2)
    sig, inv, vol = metric_at(chart, [0.3, 0.7])
    assert np.array_equal(sig, np.eye(2))
    assert np.array_equal(inv, np.eye(2))
    assert vol == 1.0
    assert np.array_equal(christoffel_at(chart, [0.3, 0.7]), np.zeros((2, 2, 2)))


def test_poincare_metric_value():
    # sigma_11 at (0.5, 0): 4 / (1 - 0.25)^2 = 64/9
    chart = builtin_chart("poincare_disk", n=2)
    sig, inv, vol = metric_at(chart, [0.5, 0.0])
    assert sig[0, 0] == pytest.approx(64.0 / 9.0, rel=1e-14)
    assert sig[0, 1] == 0.0
    assert vol == pytest.approx(64.0 / 9.0, rel=1e-13)


def test_sphere_equator_metric():
    chart = builtin_chart("sphere_polar")
    sig, inv, vol = metric_at(chart, [np.pi / 2, 0.3])
    assert np.allclose(sig, np.eye(2), atol=1e-15)
    assert vol == pytest.approx(1.0, abs=1e-15)


def test_sphere_christoffel_value():
    # Gamma^theta_{phi phi} = -sin(theta) cos(theta) = -sqrt(3)/4 at theta = pi/3
    chart = builtin_chart("sphere_polar")
    gam = christoffel_at(chart, [np.pi / 3, 0.8])
    assert gam[0, 1, 1] == pytest.approx(-np.sqrt(3.0) / 4.0, rel=1e-14)
    assert gam[1, 0, 1] == pytest.approx(1.0 / np.tan(np.pi / 3), rel=1e-14)
    assert gam[1, 0, 1] == gam[1, 1, 0]


def test_warped_christoffel_values():
    chart = builtin_chart("warped_product", n=2, params={"a": 1.0, "b": 0.25})
    x = np.array([0.4, 0.6])
    w, dw = 1.0 + 0.25 * 0.4, 0.25
    gam = christoffel_at(chart, x)
    assert gam[0, 1, 1] == pytest.approx(-w * dw, rel=1e-14)
    assert gam[1, 0, 1] == pytest.approx(dw / w, rel=1e-14)


@pytest.mark.parametrize("kind,params", [
    ("euclidean", {}),
    ("poincare_disk", {}),
    ("sphere_polar", {}),
    ("warped_product", {"a": 1.0, "b": 0.25}),
])
def test_inverse_consistency(kind, params):
    chart = builtin_chart(kind, n=2, params=params)
    rng = np.random.default_rng(11)
    lo = np.array([b[0] for b in chart.box])
    hi = np.array([b[1] for b in chart.box])
    pts = lo + (hi - lo) * (0.05 + 0.9 * rng.random((100, 2)))
    prod = chart.metric(pts) @ chart.inverse(pts)
    assert np.max(np.abs(prod - np.eye(2))) < 1e-12


@pytest.mark.parametrize("kind,params,x", [
    ("poincare_disk", {}, [0.31, -0.22]),
    ("sphere_polar", {}, [1.1, 0.7]),
])
def test_fd_christoffels_converge_second_order(kind, params, x):
    chart = builtin_chart(kind, n=2, params=params)
    exact = christoffel_at(chart, x)
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        errs.append(np.max(np.abs(fd_christoffel_at(chart, np.asarray(x, float), h) - exact)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.9)


def test_fd_christoffels_symmetric():
    chart = builtin_chart("poincare_disk", n=2)
    gam = fd_christoffel_at(chart, np.array([0.2, 0.4]), 1e-3)
    assert np.max(np.abs(gam - np.swapaxes(gam, -1, -2))) < 1e-8


def test_point_outside_box_rejected():
    chart = builtin_chart("euclidean", n=2)
    with pytest.raises(ChartError):
        metric_at(chart, [1.5, 0.5])


def test_unknown_kind_rejected():
    with pytest.raises(ChartError):
        builtin_chart("lorentzian")


def test_indefinite_table_rejected():
    axes = [np.linspace(0, 1, 3)] * 2
    table = np.zeros((3, 3, 2, 2))
    table[..., 0, 0] = 1.0
    table[..., 1, 1] = -1.0  # signature (+,-): not a metric
    with pytest.raises(ChartError):
        builtin_chart("custom_table", n=2, box=[[0, 1], [0, 1]],
                      params={"axes": axes, "table": table})


def test_table_chart_interpolates_and_differences(tmp_path):
    # Sample the poincare metric on a fine lattice; the table chart must
    # reproduce metric and (differenced) Christoffels to interpolation error.
    ref = builtin_chart("poincare_disk", n=2)
    axes = [np.linspace(-0.6, 0.6, 121)] * 2
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    table = ref.metric(grid)
    rows = ["x1,x2,s11,s12,s21,s22"]
    for i in range(121):
        for j in range(121):
            vals = [grid[i, j, 0], grid[i, j, 1], *table[i, j].ravel()]
            rows.append(",".join(repr(float(v)) for v in vals))
    path = tmp_path / "metric.csv"
    path.write_text("\n".join(rows) + "\n")

    chart = chart_from_spec({"kind": "custom_table", "n": 2,
                             "box": [[-0.5, 0.5], [-0.5, 0.5]],
                             "params": {"csv": str(path)}})
    x = np.array([0.17, -0.23])
    sig_t, inv_t, _ = metric_at(chart, x)
    sig_r, _, _ = metric_at(ref, x)
    assert np.max(np.abs(sig_t - sig_r)) < 5e-4
    assert np.max(np.abs(sig_t @ inv_t - np.eye(2))) < 1e-8
    gam = christoffel_at(chart, x)
    assert chart.christoffel_field.source == "finite-difference"
    assert np.max(np.abs(gam - christoffel_at(ref, x))) < 5e-3


def test_load_metric_table_rejects_ragged(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("x1,x2,s11,s12,s21,s22\n0,0,1,0,0,1\n0,1,1,0,0,1\n1,0,1,0,0,1\n")
    with pytest.raises(ChartError):
        load_metric_table(str(path), 2)


def test_chart_spec_roundtrip():
    chart = chart_from_spec({"kind": "sphere_polar", "n": 2,
                             "box": [[0.5, 2.5], [0.0, 1.0]], "params": {"radius": 2.0}})
    sig, _, _ = metric_at(chart, [np.pi / 2, 0.5])
    assert sig[0, 0] == pytest.approx(4.0)
    assert sig[1, 1] == pytest.approx(4.0)
