import numpy as np


def crandn(rng, *shape):
    """Circularly symmetric complex normal draws with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def to_lists(a):
    return np.asarray(a).tolist()


def gradient_check(model, h, seed=0, step=1e-5, floor=1e-8, stage_weights=None):
    """Largest relative error between backprop and central differences.

    Dropout masks are replayed by reseeding the forward pass each time.
    Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    from lowres_hbf.pcnet import backward, forward, model_input, total_loss

    x = model_input(model.arch, h)
    loss_input = model.arch.loss_input

    def loss_at(m):
        tr = forward(m, x, "train", np.random.default_rng(seed))
        return total_loss(tr, h, loss_input, stage_weights)

    tr = forward(model, x, "train", np.random.default_rng(seed))
    grads = backward(model, tr, h, stage_weights)
    worst = 0.0
    for p, g in zip(model.params, grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = loss_at(model)
            flat[i] = old - step
            down = loss_at(model)
            flat[i] = old
            num = (up - down) / (2 * step)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, err)
    return worst
