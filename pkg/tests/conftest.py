import numpy as np


def naive_conv2d(x, w, b, stride, pad):
    """Direct nested-loop convolution used as an independent oracle."""
    c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((oc, ho, wo))
    for o in range(oc):
        for i in range(ho):
            for j in range(wo):
                region = xp[:, i * stride : i * stride + kh, j * stride : j * stride + kw]
                out[o, i, j] = (region * w[o]).sum() + b[o]
    return out


def fd_check_params(params, loss_fn, grads, step=1e-4, rtol=1e-4, atol=1e-6):
    """Central finite differences against analytic gradients, every parameter."""
    checked = 0
    for key, grad in grads.items():
        flat = params[key].ravel()
        gflat = np.asarray(grad).ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = loss_fn()
            flat[idx] = orig - step
            down = loss_fn()
            flat[idx] = orig
            fd = (up - down) / (2.0 * step)
            err = abs(gflat[idx] - fd)
            assert err <= atol + rtol * max(abs(fd), abs(gflat[idx])), (
                f"{key}[{idx}]: analytic {gflat[idx]!r} vs fd {fd!r}"
            )
            checked += 1
    return checked
