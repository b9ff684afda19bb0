import numpy as np
import pytest
from conftest import linear_net, margin

from randaudit.attacks import (NetClassifier, PgdConfig, pgd_attack, pgd_budgets,
                               step_direction, subspace_pgd, subspace_pgd_budgets)
from randaudit.rng import derive_stream
from randaudit.subspace import L2, LINF, Subspace, make_basis, vector_norm


class Recorder:
    """Counts predict calls and keeps every evaluated point."""

    def __init__(self, clf):
        self.clf = clf
        self.points = []

    def predict(self, x):
        self.points.append(np.array(x))
        return self.clf.predict(x)


def test_linear_closed_form_found():
    net = NetClassifier(linear_net([1.0, 0.0]))
    x = np.array([0.3, 0.5])
    assert net.predict(x) == 1
    out = pgd_attack(net.predict, net.gradient, x, 1, PgdConfig(0.5, L2), derive_stream(1))
    assert out.found
    assert 0.3 - 1e-12 <= out.distance <= 0.5 + 1e-9
    assert net.predict(out.adversarial_point) != 1


def test_linear_out_of_reach():
    net = NetClassifier(linear_net([1.0, 0.0], 0.5))
    x = np.array([0.3, 0.5])
    assert margin([1.0, 0.0], 0.5, x) == pytest.approx(0.8)
    out = pgd_attack(net.predict, net.gradient, x, 1, PgdConfig(0.5, L2, restarts=5), derive_stream(1))
    assert not out.found and out.adversarial_point is None and out.distance is None


def test_clean_error_short_circuit():
    net = NetClassifier(linear_net([1.0, 0.0]))
    x = np.array([0.3, 0.5])
    out = pgd_attack(net.predict, net.gradient, x, 0, PgdConfig(), derive_stream(1))
    assert out.found and out.distance == 0.0 and out.queries == 1 and out.clean_error


@pytest.mark.parametrize("norm", [L2, LINF])
@pytest.mark.parametrize("early", [True, False])
def test_query_accounting_and_feasibility(small_net, small_data, norm, early):
    clf = NetClassifier(small_net)
    cfg = PgdConfig(0.3, norm, steps=10, restarts=3, early_exit=early)
    for i, (x, y) in enumerate(zip(small_data[1].points[:15], small_data[1].labels[:15])):
        rec = Recorder(clf)
        out = pgd_attack(rec.predict, clf.gradient, x, int(y), cfg, derive_stream(2, [("p", i)]))
        assert out.queries == len(rec.points)
        for p in rec.points:
            assert vector_norm(p - x, norm) <= 0.3 + 1e-9
            assert p.min() >= 0.0 and p.max() <= 1.0
        if out.found:
            assert clf.predict(out.adversarial_point) != y
            assert out.distance <= 0.3 + 1e-9


def test_pgd_deterministic(small_net, small_data):
    clf = NetClassifier(small_net)
    x, y = small_data[1].points[0], int(small_data[1].labels[0])
    cfg = PgdConfig(0.6, L2, steps=20, restarts=4)
    a = pgd_attack(clf.predict, clf.gradient, x, y, cfg, derive_stream(3))
    b = pgd_attack(clf.predict, clf.gradient, x, y, cfg, derive_stream(3))
    assert a.to_dict() == b.to_dict()


def test_budgets_are_prefix_monotone(small_net, small_data):
    clf = NetClassifier(small_net)
    cfg = PgdConfig(0.35, L2, steps=10)
    found = {1: set(), 10: set(), 20: set()}
    for i, (x, y) in enumerate(zip(small_data[1].points, small_data[1].labels)):
        s = derive_stream(4, [("p", i)])
        multi = pgd_budgets(clf.predict, clf.gradient, x, int(y), cfg, s, [1, 10, 20], i)
        for r, out in zip((1, 10, 20), multi):
            # a standalone run with r restarts gives the same verdict
            single = pgd_attack(clf.predict, clf.gradient, x, int(y),
                                PgdConfig(0.35, L2, steps=10, restarts=r), s, i)
            assert single.found == out.found
            if out.found:
                found[r].add(i)
    assert found[1] <= found[10] <= found[20]
    assert found[20]


def test_identity_subspace_matches_full_space(small_net):
    clf = NetClassifier(small_net)
    x = np.full(8, 0.5)
    y = int(clf.predict(x))
    cfg = PgdConfig(0.25, L2, steps=15, restarts=2, early_exit=False)
    full, sub = Recorder(clf), Recorder(clf)
    a = pgd_attack(full.predict, clf.gradient, x, y, cfg, derive_stream(5))
    b = subspace_pgd(sub.predict, clf.gradient, Subspace(np.eye(8)), x, y, cfg, derive_stream(5))
    assert a.found == b.found and a.queries == b.queries
    for p, q in zip(full.points, sub.points):
        assert np.max(np.abs(p - q)) < 1e-9


@pytest.mark.parametrize("offset,expect", [(0.3, True), (0.45, True), (0.6, False)])
def test_subspace_aligned_with_w(offset, expect):
    w = np.array([0.6, 0.8, 0.0])
    x = np.array([0.5, 0.5, 0.5])
    b = offset - float(w @ x)  # margin = offset / |w| = offset
    clf = NetClassifier(linear_net(w, b))
    sub = Subspace(w[None, :] / np.linalg.norm(w))
    out = subspace_pgd(clf.predict, clf.gradient, sub, x, 1, PgdConfig(0.5, L2), derive_stream(6))
    assert out.found == (margin(w, b, x) <= 0.5)
    assert out.found == expect


def test_subspace_orthogonal_to_w():
    w = np.array([1.0, 0.0, 0.0])
    x = np.array([0.5, 0.5, 0.5])
    clf = NetClassifier(linear_net(w, -0.2))
    sub = Subspace(np.array([[0.0, 1.0, 0.0]]))
    out = subspace_pgd(clf.predict, clf.gradient, sub, x, 1, PgdConfig(0.5, L2, restarts=10),
                       derive_stream(7))
    assert not out.found


def test_subspace_budgets_feasible(small_net, small_data):
    clf = NetClassifier(small_net)
    sub = make_basis(derive_stream(8), 3, 8)
    cfg = PgdConfig(0.4, L2, steps=8)
    for i, (x, y) in enumerate(zip(small_data[1].points[:10], small_data[1].labels[:10])):
        rec = Recorder(clf)
        outs = subspace_pgd_budgets(rec.predict, clf.gradient, sub, x, int(y), cfg,
                                    derive_stream(8, [("p", i)]), [1, 5])
        assert max(o.queries for o in outs) == len(rec.points)
        for p in rec.points:
            assert np.linalg.norm(p - x) <= 0.4 + 1e-9
            # points lie on the lifted subspace up to clamping
            assert p.min() >= 0 and p.max() <= 1


def test_nonfinite_gradient_raises(small_net):
    clf = NetClassifier(small_net)
    bad = lambda x, y: np.full(8, np.nan)
    with pytest.raises(FloatingPointError):
        pgd_attack(clf.predict, bad, np.full(8, 0.5), int(clf.predict(np.full(8, 0.5))),
                   PgdConfig(), derive_stream(0))


def test_step_direction():
    g = np.array([3.0, -4.0])
    assert step_direction(g, LINF).tolist() == [1.0, -1.0]
    assert np.allclose(step_direction(g, L2), [0.6, -0.8])
    assert step_direction(np.zeros(2), L2).tolist() == [0.0, 0.0]


def test_config_validation():
    assert PgdConfig(0.5, steps=40).alpha == pytest.approx(2.5 * 0.5 / 40)
    with pytest.raises(ValueError):
        PgdConfig(0.5, step_size=1.5)
    with pytest.raises(ValueError):
        PgdConfig(0.0)
    with pytest.raises(ValueError):
        PgdConfig(restarts=0)
