import numpy as np
import pytest

from randaudit.model import DatasetSpec, Network, TrainParams, gen_dataset, train
from randaudit.rng import derive_stream


def linear_net(w, b=0.0):
    """Two-class net with logits (0, w.x + b): class 1 iff w.x + b > 0."""
    w = np.asarray(w, dtype=np.float64)
    weights = [np.vstack([np.zeros_like(w), w])]
    biases = [np.array([0.0, float(b)])]
    return Network((w.size, 2), weights, biases)


def margin(w, b, x):
    w = np.asarray(w, dtype=np.float64)
    return abs(float(w @ x + b)) / float(np.linalg.norm(w))


@pytest.fixture(scope="session")
def small_data():
    spec = DatasetSpec("blobs", 8, 3, 60, 0.15)
    s = derive_stream(11, [("data", 0)])
    return gen_dataset(spec, s, "train"), gen_dataset(spec, s, "test")


@pytest.fixture(scope="session")
def small_net(small_data):
    tr, te = small_data
    net, _ = train(Network.zeros((8, 16, 3)), tr, TrainParams(epochs=15), derive_stream(11, [("train", 0)]))
    return net


def fd_gradient(net, x, y, h=1e-4):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (net.loss(x + e, y) - net.loss(x - e, y)) / (2 * h)
    return g


def kwta_masks_stable(net, x, h=1e-4):
    """True when no +-h coordinate nudge changes any kWTA winner set."""
    base = net._forward_cached(x)[1]
    for i in range(x.size):
        for s in (h, -h):
            e = np.zeros_like(x)
            e[i] = s
            masks = net._forward_cached(x + e)[1]
            if any(not np.array_equal(a, b) for a, b in zip(base, masks)):
                return False
    return True


def gradient_instances(activation, count, seed=0):
    """(net, x, y, analytic, finite-difference) for random small instances."""
    out = []
    i = 0
    while len(out) < count:
        s = derive_stream(seed, [(activation, i)])
        i += 1
        net = Network.init((6, 12, 10, 3), s.child(("net", 0)), activation, 0.3)
        for layer in net.biases:
            layer += 0.1 * s.child(("bias", 0)).gaussians(layer.size)
        x = 0.2 + 0.6 * s.child(("x", 0)).uniforms(6)
        y = int(s.child(("y", 0)).next_u64() % 3)
        if activation == "kwta" and not kwta_masks_stable(net, x):
            continue
        out.append((net, x, y, net.input_gradient(x, y), fd_gradient(net, x, y)))
    return out


def rel_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


# acceptance reporting: one line per criterion at the end of the session

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
