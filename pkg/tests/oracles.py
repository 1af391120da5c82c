"""Independent reference computations shared by the unit and acceptance tests."""
import numpy as np

from regionscope.net import backward, forward_batch, init_mlp, param_count


def unit(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def fan_area(poly):
    """Sum of triangle areas fanned from the first vertex."""
    o = poly[0]
    tot = 0.0
    for p, q in zip(poly[1:-1], poly[2:]):
        tot += 0.5 * abs((p[0] - o[0]) * (q[1] - o[1]) - (p[1] - o[1]) * (q[0] - o[0]))
    return tot


def random_convex(rng, k=7):
    t = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    r = rng.uniform(0.5, 2.0)
    return np.column_stack([r * np.cos(t), r * np.sin(t)]) + rng.normal(size=2)


def random_planar_net(seed):
    """Seeded 2-input ReLU net with 1-3 hidden layers of width 2-8."""
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 4))
    widths = rng.integers(2, 9, size=depth).tolist()
    return init_mlp([2] + widths + [2], rng)


def fd_check(loss_of_outputs, n_inputs, seed=0, d_in=6, d_out=5):
    """Worst relative error between backprop and central differences over every parameter.

    ``loss_of_outputs`` maps a list of network outputs to (loss, list of
    output gradients); each input batch goes through the same network.
    """
    rng = np.random.default_rng(seed)
    net = init_mlp([d_in, 8, d_out], rng)
    assert param_count(net) >= 100
    Xs = [rng.normal(size=(6, d_in)) for _ in range(n_inputs)]

    def value():
        return loss_of_outputs([forward_batch(net, X)[0] for X in Xs])[0]

    fwd = [forward_batch(net, X) for X in Xs]
    _, grads = loss_of_outputs([o for o, _ in fwd])
    analytic = [np.zeros_like(p) for p in net.parameters()]
    for (o, cache), g in zip(fwd, grads):
        for acc, gp in zip(analytic, backward(net, g, cache).flat()):
            acc += gp
    worst = 0.0
    h = 1e-6
    for p, a in zip(net.parameters(), analytic):
        for i in range(p.size):
            old = p.flat[i]
            p.flat[i] = old + h
            up = value()
            p.flat[i] = old - h
            dn = value()
            p.flat[i] = old
            num = (up - dn) / (2 * h)
            worst = max(worst, abs(num - a.flat[i]) / max(1.0, abs(num), abs(a.flat[i])))
    return worst
