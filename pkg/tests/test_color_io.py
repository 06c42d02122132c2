import hashlib
import json

import numpy as np
import pytest

from uotkit.color import (
    build_histogram_pair,
    color_cost_matrix,
    color_transfer,
    kmeans_objective,
    quantize_image,
    read_image,
    read_ppm,
    write_image,
    write_ppm,
)
from uotkit.core import UotProblem
from uotkit.exceptions import ValidationError
from uotkit.experiments import ExperimentConfig, generate_synthetic
from uotkit.io import (
    load_problem,
    plan_from_csv,
    plan_to_csv,
    read_plan_csv,
    save_problem,
    write_json_report,
    write_rows_csv,
)


def gradient_image(seed, h=12, w=16):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    base = np.stack([xx * 255 / (w - 1), yy * 255 / (h - 1), np.full((h, w), 128.0)], axis=2)
    if seed % 2:
        base = base[..., ::-1]
    return np.clip(base + rng.normal(0, 12, base.shape), 0, 255).astype(np.uint8)


class TestPpm:
    def test_round_trip(self, tmp_path):
        img = gradient_image(3)
        write_ppm(tmp_path / "x.ppm", img)
        assert np.array_equal(read_ppm(tmp_path / "x.ppm"), img)

    def test_header_comments_and_maxval(self, tmp_path):
        body = bytes([0, 1, 2, 3, 4, 5])
        (tmp_path / "c.ppm").write_bytes(b"P6\n# made by hand\n2 1\n# depth\n5\n" + body)
        img = read_ppm(tmp_path / "c.ppm")
        assert img.shape == (1, 2, 3)
        assert img[0, 1].tolist() == [153, 204, 255]

    def test_rejects_other_formats(self, tmp_path):
        (tmp_path / "a.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
        with pytest.raises(ValidationError):
            read_ppm(tmp_path / "a.ppm")

    def test_truncated(self, tmp_path):
        (tmp_path / "t.ppm").write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(ValidationError):
            read_ppm(tmp_path / "t.ppm")

    def test_png_through_pillow(self, tmp_path):
        pytest.importorskip("PIL")
        img = gradient_image(4)
        write_image(tmp_path / "x.png", img)
        assert np.array_equal(read_image(tmp_path / "x.png"), img)


class TestQuantize:
    def test_single_color(self):
        img = np.full((4, 5, 3), [10, 20, 30], dtype=np.uint8)
        cents, lab = quantize_image(img, 1)
        assert cents.tolist() == [[10.0, 20.0, 30.0]]
        assert np.all(lab == 0)

    def test_two_colors(self):
        img = np.zeros((4, 4, 3), dtype=np.uint8)
        img[:, 2:] = [200, 100, 50]
        pair = build_histogram_pair(img, img, 2)
        assert sorted(map(tuple, pair.source_centroids.tolist())) == [(0.0, 0.0, 0.0), (200.0, 100.0, 50.0)]
        assert pair.a.weights.tolist() == [0.5, 0.5]

    def test_too_many_colors(self):
        with pytest.raises(ValidationError):
            quantize_image(np.zeros((2, 2, 3), dtype=np.uint8), 2)

    @pytest.mark.parametrize("seed", range(5))
    def test_lloyd_monotone(self, seed):
        img = gradient_image(seed)
        cents, lab, hist = quantize_image(img, 6, seed=seed, tol=0.0, max_iters=50, return_history=True)
        assert all(b <= a + 1e-9 * a for a, b in zip(hist, hist[1:]))
        assert kmeans_objective(img, cents, lab) == pytest.approx(hist[-1], rel=1e-12)

    def test_deterministic(self):
        img = gradient_image(7)
        a = quantize_image(img, 5, seed=3)
        b = quantize_image(img, 5, seed=3)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_histograms_on_simplex(self):
        pair = build_histogram_pair(gradient_image(1), gradient_image(2), 8)
        assert abs(pair.a.total - 1) <= 1e-12 and abs(pair.b.total - 1) <= 1e-12


class TestCost:
    def test_examples(self):
        s = np.array([[0.0, 0.0, 0.0], [255.0, 255.0, 255.0]])
        C = color_cost_matrix(s, s).entries
        assert np.all(np.diag(C) == 0)
        assert C[0, 1] == 1.0

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        s = rng.uniform(0, 255, (4, 3))
        t = rng.uniform(0, 255, (4, 3))
        assert np.allclose(color_cost_matrix(s, t).entries, color_cost_matrix(t, s).entries.T, rtol=0, atol=0)


class TestTransfer:
    def test_identity(self):
        img = gradient_image(5)
        res = color_transfer(img, img, n=8, tau=1e3)
        quantized = np.rint(res.pair.source_centroids[res.pair.source_assignments])
        assert np.max(np.abs(res.image.astype(int) - quantized.astype(int))) <= 1

    def test_sparsity_and_range(self):
        src, dst = gradient_image(1), gradient_image(2)
        g = color_transfer(src, dst, n=8, solver="gem-uot")
        s = color_transfer(src, dst, n=8, solver="sinkhorn")
        assert g.sparsity > s.sparsity
        assert np.all(s.plan > 0)
        assert g.image.dtype == np.uint8

    def test_golden(self, tmp_path):
        res = color_transfer(gradient_image(1), gradient_image(2), n=8)
        write_ppm(tmp_path / "o.ppm", res.image)
        digest = hashlib.sha256((tmp_path / "o.ppm").read_bytes()).hexdigest()
        assert digest == "56da3c311d48422615161f701b8fc4b335178fc91f565da0235192b99d1e5def"

    def test_unknown_solver(self):
        with pytest.raises(ValidationError):
            color_transfer(gradient_image(1), gradient_image(2), n=4, solver="lp")


class TestFiles:
    def test_problem_round_trip(self, tmp_path, skew2):
        save_problem(tmp_path / "p.json", skew2)
        q = load_problem(tmp_path / "p.json")
        assert np.array_equal(q.C, skew2.C) and q.tau == skew2.tau
        assert np.array_equal(q.a.weights, skew2.a.weights)

    def test_problem_errors(self, tmp_path):
        (tmp_path / "bad.json").write_text("{not json")
        with pytest.raises(ValidationError):
            load_problem(tmp_path / "bad.json")
        (tmp_path / "miss.json").write_text(json.dumps({"a": [1.0]}))
        with pytest.raises(ValidationError, match="missing"):
            load_problem(tmp_path / "miss.json")

    def test_plan_csv_exact(self, tmp_path):
        X = np.random.default_rng(1).uniform(0, 1, (3, 3)) / 7
        write_plan_csv = plan_to_csv(X)
        assert write_plan_csv.startswith("n=3\n")
        assert np.array_equal(plan_from_csv(write_plan_csv), X)
        (tmp_path / "p.csv").write_text(write_plan_csv)
        assert np.array_equal(read_plan_csv(tmp_path / "p.csv"), X)

    def test_plan_csv_shape_error(self):
        with pytest.raises(ValidationError):
            plan_from_csv("n=2\n1.0,2.0\n")

    def test_rows_and_report(self, tmp_path):
        write_rows_csv(tmp_path / "r.csv", ["tau", "ok"], [{"tau": 10.0, "ok": True}, {"tau": 0.1, "ok": False}])
        assert (tmp_path / "r.csv").read_text() == "tau,ok\n10.0,true\n0.1,false\n"
        write_json_report(tmp_path / "r.json", {"x": np.float64(1.5), "y": float("inf"), "z": np.arange(2)})
        d = json.loads((tmp_path / "r.json").read_text())
        assert d == {"version": "0.1.0", "x": 1.5, "y": None, "z": [0, 1]}


class TestGenerator:
    def test_deterministic_and_defaults(self):
        cfg = ExperimentConfig()
        p, q = generate_synthetic(cfg), generate_synthetic(cfg)
        assert p.C.tobytes() == q.C.tobytes()
        assert p.a.weights.tobytes() == q.a.weights.tobytes()
        assert (p.n, p.tau) == (200, 55.0)
        assert p.a.total == pytest.approx(4.0) and p.b.total == pytest.approx(5.0)
        assert p.a.min_entry > 0 and p.b.min_entry > 0
        assert 0.1 <= p.C.min() and p.C.max() <= 1.0

    def test_floor_keeps_positive(self):
        p = generate_synthetic(ExperimentConfig(n=50, b_sigma=5.0))
        assert p.b.min_entry > 0

    def test_invalid(self):
        with pytest.raises(ValidationError):
            ExperimentConfig(alpha=0.0)
        assert isinstance(generate_synthetic(ExperimentConfig(n=3)), UotProblem)
