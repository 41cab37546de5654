import numpy as np

from driftlab.autodiff import Tensor


def finite_diff_grad(func, arrays: dict[str, np.ndarray], step: float = 1e-6):
    """Central finite differences of a scalar function of named arrays."""
    grads = {}
    for name, base in arrays.items():
        g = np.zeros_like(base)
        flat = base.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = func(arrays)
            flat[i] = orig - step
            f_minus = func(arrays)
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * step)
        grads[name] = g
    return grads


def check_gradients(build_loss, arrays: dict[str, np.ndarray],
                    step: float = 1e-6, tol: float = 1e-4):
    """Compare reverse-mode gradients against central differences.

    ``build_loss`` maps a dict of Tensors to a scalar Tensor. The
    relative error uses ||ad - fd|| / max(1, ||fd||) per array.
    """
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()}
    loss = build_loss(tensors)
    loss.backward()

    def numeric(vals):
        ts = {k: Tensor(v) for k, v in vals.items()}
        return float(build_loss(ts).data)

    fd = finite_diff_grad(numeric, {k: v.copy() for k, v in arrays.items()}, step=step)
    for name, t in tensors.items():
        ad = t.grad if t.grad is not None else np.zeros_like(t.data)
        err = np.linalg.norm(ad - fd[name]) / max(1.0, np.linalg.norm(fd[name]))
        assert err < tol, f"gradient mismatch for {name}: rel err {err:.3e}"


def check_net_gradients(net, inputs: dict[str, np.ndarray], loss_fn,
                        step: float = 1e-6, tol: float = 1e-4,
                        param_subset=None):
    """Finite-difference check of a built network's parameter and input grads.

    ``loss_fn(net, input_tensors) -> scalar Tensor``. Parameters are
    perturbed in place (layers alias the same Tensor objects).
    """
    from driftlab.autodiff import zero_grads

    in_tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in inputs.items()}
    zero_grads(net.params)
    loss = loss_fn(net, in_tensors)
    loss.backward()
    names = list(net.params) if param_subset is None else list(param_subset)

    def numeric():
        ts = {k: Tensor(t.data) for k, t in in_tensors.items()}
        return float(loss_fn(net, ts).data)

    for name in names:
        tensor = net.params[name]
        base = tensor.data.copy()
        ad = tensor.grad
        ad = np.zeros_like(base) if ad is None else ad
        fd = np.zeros_like(base)
        fdflat = fd.reshape(-1)
        for i in range(base.size):
            bumped = base.reshape(-1).copy()
            bumped[i] += step
            tensor.data = bumped.reshape(base.shape)
            f_plus = numeric()
            bumped[i] -= 2.0 * step
            tensor.data = bumped.reshape(base.shape)
            f_minus = numeric()
            fdflat[i] = (f_plus - f_minus) / (2.0 * step)
        tensor.data = base
        err = np.linalg.norm(ad - fd) / max(1.0, np.linalg.norm(fd))
        assert err < tol, f"param gradient mismatch for {name}: rel err {err:.3e}"

    for key, t in in_tensors.items():
        ad = t.grad if t.grad is not None else np.zeros_like(t.data)
        fd = np.zeros_like(t.data)
        flat, fdflat = t.data.ravel(), fd.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = numeric()
            flat[i] = orig - step
            f_minus = numeric()
            flat[i] = orig
            fdflat[i] = (f_plus - f_minus) / (2.0 * step)
        err = np.linalg.norm(ad - fd) / max(1.0, np.linalg.norm(fd))
        assert err < tol, f"input gradient mismatch for {key}: rel err {err:.3e}"
