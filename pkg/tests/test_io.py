import json
import math
from pathlib import Path

import numpy as np
import pytest

from jointsparse.experiments import SyntheticConfig, generate_synthetic, run_realdata
from jointsparse.io import (
    ManifestError,
    coefficients_from_dict,
    coefficients_to_dict,
    covariance_from_dict,
    covariance_to_dict,
    download_hint,
    dumps,
    export_dataset,
    load_json,
    load_manifest,
    read_task_csv,
    save_json,
    standardize_task,
)
from jointsparse.model import (
    CoefficientSet,
    DiagonalCovariance,
    DiagPlusLowRank,
    FullCovariance,
    SolveTrace,
    covariance_as_matrix,
)

TOY = Path(__file__).parent / "data" / "toy"


def test_covariance_round_trip(tmp_path):
    A = np.random.default_rng(0).standard_normal((3, 3))
    for est in (
        DiagonalCovariance([1.0, 0.0, 2.5]),
        FullCovariance(A @ A.T),
        DiagPlusLowRank(DiagonalCovariance([1.0, 0.0, 0.0]), FullCovariance(np.ones((3, 3))), 1),
    ):
        data = covariance_to_dict(est, SolveTrace([2.0, 1.0], 1, True, 2))
        save_json(data, tmp_path / "c.json")
        back = covariance_from_dict(load_json(tmp_path / "c.json"))
        assert type(back) is type(est)
        assert np.array_equal(covariance_as_matrix(back), covariance_as_matrix(est))
        assert data["trace"] == {"iterations": 1, "converged": True, "final_objective": 1.0}


def test_covariance_from_bad_dict():
    with pytest.raises(ValueError, match="lacks field"):
        covariance_from_dict({"structure": "full"})
    with pytest.raises(ValueError, match="unknown covariance structure"):
        covariance_from_dict({"structure": "banded", "d": 1, "matrix": [1.0]})


def test_coefficients_round_trip():
    B = CoefficientSet(np.arange(6.0).reshape(2, 3))
    back = coefficients_from_dict(json.loads(dumps(coefficients_to_dict(B))))
    assert np.array_equal(back.betas, B.betas)


def test_dumps_numpy_scalars():
    assert json.loads(dumps({"a": np.float64(1.5), "b": np.int64(2), "c": np.bool_(True), "d": (1, 2)})) == {
        "a": 1.5, "b": 2, "c": True, "d": [1, 2]
    }


def test_toy_manifest_loads():
    ds = load_manifest(TOY / "toy.json")
    assert (ds.m, ds.d) == (2, 2)
    assert [t.n for t in ds.tasks] == [3, 4]


def test_missing_task_file_is_named():
    with pytest.raises(ManifestError, match="missing_task.csv"):
        load_manifest(TOY / "broken.json")
    with pytest.raises(ManifestError, match="manifest not found"):
        load_manifest(TOY / "nope.json")


def test_bad_csv_header(tmp_path):
    (tmp_path / "t.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ManifestError, match="header"):
        read_task_csv(tmp_path / "t.csv")
    (tmp_path / "m.json").write_text(json.dumps({"tasks": []}))
    with pytest.raises(ManifestError, match="non-empty"):
        load_manifest(tmp_path / "m.json")


def test_standardize():
    X = np.array([[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]])
    Xs, ys = standardize_task(X, np.array([1.0, 2.0, 3.0]))
    assert np.allclose(Xs.mean(axis=0), 0) and np.allclose(Xs[:, 0].std(), 1)
    assert np.all(Xs[:, 1] == 0) and np.allclose(ys, [-1, 0, 1])


@pytest.mark.parametrize("method,mode", [("ols", "cv"), ("gl", "fixed:0")])
def test_toy_rmse_matches_hand_solution(method, mode):
    # task A: beta = (4/3, 7/3), residuals (-1/3, -1/3, 1/3); task B: beta = (1, 1/3), RMSE 1/sqrt(6)
    rows = run_realdata(TOY / "toy.json", [method], split_spec="all", lambda_mode=mode)
    assert rows[0].rmse == pytest.approx((1 / 3 + 1 / math.sqrt(6)) / 2, abs=1e-8)


def test_noiseless_export_round_trip(tmp_path):
    ds, truth = generate_synthetic(SyntheticConfig(m=3, d=4, n=12, k=2, noise_variance=0.0, seed=1))
    manifest = export_dataset(ds, tmp_path, "noiseless", truth)
    back = load_manifest(manifest)
    assert all(np.array_equal(a.design, b.design) for a, b in zip(ds.tasks, back.tasks))
    assert load_json(tmp_path / "truth.json")["shared_support"] == list(truth.shared_support)
    rows = run_realdata(manifest, ["ols", "gl"], split_spec="all", lambda_mode="fixed:0")
    assert all(r.rmse < 1e-10 for r in rows)


def test_download_hint():
    assert download_hint("sarcos").startswith("http")
    assert download_hint("school") is None
