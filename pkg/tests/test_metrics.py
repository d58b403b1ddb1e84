import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from claysculpt.geometry import PointCloud, rotate_z
from claysculpt.metrics import chamfer, emd, hausdorff, report


def cloud(n, seed, scale=0.05):
    rng = np.random.default_rng(seed)
    return PointCloud(rng.uniform(0, scale, size=(n, 3)))


def nn_oracle(a, b):
    """Per-point nearest-neighbor distances, naive double loop."""
    out = []
    for p in a:
        best = math.inf
        for q in b:
            d = math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2)
            if d < best:
                best = d
        out.append(best)
    return out


class TestChamfer:
    def test_identical_is_zero(self):
        c = cloud(30, 0)
        assert chamfer(c, c) == 0.0

    def test_single_pair(self):
        a = PointCloud(np.array([[0.0, 0.0, 0.0]]))
        b = PointCloud(np.array([[0.0, 0.0, 1.0]]))
        assert chamfer(a, b) == 1.0

    def test_matches_brute_force_oracle(self):
        for seed in range(10):
            a, b = cloud(32, seed), cloud(32, seed + 100)
            fwd = nn_oracle(a.points, b.points)
            bwd = nn_oracle(b.points, a.points)
            expected = 0.5 * (sum(fwd) / 32 + sum(bwd) / 32)
            assert abs(chamfer(a, b) - expected) <= 1e-12

    def test_empty_cloud_errors(self):
        with pytest.raises(ValueError):
            chamfer(PointCloud(np.zeros((0, 3))), cloud(3, 0))


class TestHausdorff:
    def test_identical_is_zero(self):
        c = cloud(30, 1)
        assert hausdorff(c, c) == 0.0

    def test_three_four_five(self):
        a = PointCloud(np.array([[0.0, 0.0, 0.0]]))
        b = PointCloud(np.array([[3.0, 4.0, 0.0]]))
        assert hausdorff(a, b) == 5.0

    def test_matches_brute_force_exactly(self):
        for seed in range(10):
            a, b = cloud(32, seed + 7), cloud(32, seed + 200)
            expected = max(max(nn_oracle(a.points, b.points)), max(nn_oracle(b.points, a.points)))
            assert hausdorff(a, b) == expected


class TestEmd:
    def test_identical_any_order_is_zero(self):
        c = cloud(64, 2)
        perm = PointCloud(c.points[np.random.default_rng(0).permutation(64)])
        assert emd(c, perm, "exact") == 0.0

    def test_two_point_permutation(self):
        a = PointCloud(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
        b = PointCloud(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]))
        assert emd(a, b, "exact") == 0.0

    def test_unequal_sizes_error(self):
        with pytest.raises(ValueError, match="equal-size"):
            emd(cloud(4, 0), cloud(5, 0))

    def test_exact_matches_assignment_oracle(self):
        for seed in range(8):
            a, b = cloud(64, seed + 11), cloud(64, seed + 300)
            diff = a.points[:, None, :] - b.points[None, :, :]
            cost = np.sqrt((diff**2).sum(-1))
            r, c = linear_sum_assignment(cost)
            expected = cost[r, c].mean()
            assert abs(emd(a, b, "exact") - expected) <= 1e-9

    def test_exact_matches_permutation_enumeration(self):
        # tiny clouds let us enumerate every perfect matching
        import itertools

        a, b = cloud(6, 5), cloud(6, 6)
        diff = a.points[:, None, :] - b.points[None, :, :]
        cost = np.sqrt((diff**2).sum(-1))
        best = min(
            sum(cost[i, p[i]] for i in range(6)) for p in itertools.permutations(range(6))
        )
        assert abs(emd(a, b, "exact") - best / 6) <= 1e-12

    def test_approximate_within_five_percent(self):
        for seed in range(6):
            a, b = cloud(128, seed + 21), cloud(128, seed + 400)
            ex = emd(a, b, "exact")
            ap = emd(a, b, "approximate")
            assert abs(ap - ex) / ex < 0.05

    def test_exact_gate(self):
        with pytest.raises(ValueError, match="gated"):
            emd(cloud(300, 0), cloud(300, 1), "exact")


class TestProperties:
    def test_symmetry(self):
        a, b = cloud(60, 31), cloud(60, 32)
        assert abs(chamfer(a, b) - chamfer(b, a)) <= 1e-12
        assert abs(hausdorff(a, b) - hausdorff(b, a)) <= 1e-12
        assert abs(emd(a, b, "exact") - emd(b, a, "exact")) <= 1e-12
        assert abs(emd(a, b, "approximate") - emd(b, a, "approximate")) <= 1e-6

    def test_rigid_rotation_invariance(self):
        a, b = cloud(50, 41), cloud(50, 42)
        ra, rb = rotate_z(a, 1.1, (0.02, 0.01)), rotate_z(b, 1.1, (0.02, 0.01))
        assert abs(chamfer(a, b) - chamfer(ra, rb)) <= 1e-9
        assert abs(hausdorff(a, b) - hausdorff(ra, rb)) <= 1e-9
        assert abs(emd(a, b, "exact") - emd(ra, rb, "exact")) <= 1e-9

    def test_hausdorff_dominates_chamfer(self):
        for seed in range(5):
            a, b = cloud(40, seed + 51), cloud(40, seed + 500)
            assert hausdorff(a, b) >= chamfer(a, b)

    def test_exact_emd_dominates_chamfer(self):
        for seed in range(5):
            a, b = cloud(40, seed + 61), cloud(40, seed + 600)
            assert emd(a, b, "exact") >= chamfer(a, b)

    def test_report_identical(self):
        c = cloud(40, 70)
        rep = report(c, c)
        assert rep.chamfer == 0.0 and rep.hausdorff == 0.0
        assert rep.emd <= 1e-9
        assert set(rep.to_dict().keys()) == {"chamfer", "emd", "hausdorff"}
