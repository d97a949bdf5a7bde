"""Brute-force scalar reference implementations used as test oracles.

Everything here uses Python floats and explicit loops; nothing is shared
with the vectorised package code.
"""

import math


def heaviside(x):
    return 1.0 if x > 0 else 0.0


def layer_forward(w_exc, w_inh, pre, theta, c):
    """Return (net inputs, clamped amplitudes) for one layer."""
    nets, amps = [], []
    for j in range(len(w_exc)):
        s = 0.0
        for i in range(len(pre)):
            s += pre[i] * (w_exc[j][i] - w_inh[j][i])
        net = s + c - theta[j]
        nets.append(net)
        amps.append(min(1.0, max(0.0, net)))
    return nets, amps


def apply_delta(w_exc, w_inh, m_exc, m_inh, j, i, delta, eps):
    # positive delta strengthens excitation and weakens inhibition
    if m_exc[j][i]:
        v = w_exc[j][i] + delta
        w_exc[j][i] = v if v > 0 else eps
    if m_inh[j][i]:
        v = w_inh[j][i] - delta
        w_inh[j][i] = v if v > 0 else eps


def homeostasis(w_inh, nets, eta, mode):
    for j, net in enumerate(nets):
        if mode == "text":
            sign = 1.0 if net > 0 else (-1.0 if net < 0 else 0.0)
            factor = 1.0 + eta * sign
        else:
            factor = 1.0 - eta * heaviside(net)
        for i in range(len(w_inh[j])):
            w_inh[j][i] *= factor


def itp(theta, rate, amps, eta):
    for j in range(len(theta)):
        theta[j] += eta * (heaviside(amps[j]) - rate[j])
        if theta[j] < 0:
            theta[j] = 0.0


def annealed(eta0, t, total):
    return eta0 * (1.0 - t / total) ** 2


def train_presentation(net, spikes, place, h, t, total):
    """One presentation on a dict-of-lists network; mutates ``net`` in place.

    Keys: if_exc, if_inh, if_mexc, if_minh, f_theta, f_rate,
    fo_exc, fo_inh, o_theta, o_rate (lists / lists of lists).
    ``h`` is a mapping with the hyperparameter names of the package.
    """
    eta = annealed(h["eta_stdp_init"], t, total)
    eta_itp = annealed(h["eta_itp_init"], t, total)
    c, eps, mode = h["constant_input"], h["epsilon"], h["homeostasis"]

    # input -> feature: STDP, ITP, homeostasis
    nets_f, feat = layer_forward(net["if_exc"], net["if_inh"], spikes, net["f_theta"], c)
    for j in range(len(feat)):
        for i in range(len(spikes)):
            delta = eta / net["f_rate"][j] * heaviside(spikes[i]) * heaviside(feat[j]) * (0.5 - feat[j])
            apply_delta(net["if_exc"], net["if_inh"], net["if_mexc"], net["if_minh"], j, i, delta, eps)
    itp(net["f_theta"], net["f_rate"], feat, eta_itp)
    homeostasis(net["if_inh"], nets_f, eta, mode)

    # feature -> output: spike forcing, ITP, homeostasis
    nets_o, out = layer_forward(net["fo_exc"], net["fo_inh"], feat, net["o_theta"], c)
    ones = [[True] * len(feat) for _ in out]
    for j in range(len(out)):
        target = h["x_force"] if j == place else 0.0
        for i in range(len(feat)):
            delta = eta / net["o_rate"][j] * feat[i] * (target - out[j])
            apply_delta(net["fo_exc"], net["fo_inh"], ones, ones, j, i, delta, eps)
    itp(net["o_theta"], net["o_rate"], out, eta_itp)
    homeostasis(net["fo_inh"], nets_o, eta, mode)
    return feat, out


def infer(net, spikes, c):
    _, feat = layer_forward(net["if_exc"], net["if_inh"], spikes, net["f_theta"], c)
    _, out = layer_forward(net["fo_exc"], net["fo_inh"], feat, net["o_theta"], c)
    return out


def bilinear(img, width, height):
    """Half-pixel-centre bilinear resize of a list-of-rows image, clamped at borders."""
    h_in, w_in = len(img), len(img[0])

    def coord(k, n_in, n_out):
        x = (k + 0.5) * n_in / n_out - 0.5
        x = min(max(x, 0.0), n_in - 1)
        lo = int(math.floor(x))
        hi = min(lo + 1, n_in - 1)
        return lo, hi, x - lo

    out = []
    for r in range(height):
        y0, y1, fy = coord(r, h_in, height)
        row = []
        for c in range(width):
            x0, x1, fx = coord(c, w_in, width)
            top = img[y0][x0] * (1 - fx) + img[y0][x1] * fx
            bottom = img[y1][x0] * (1 - fx) + img[y1][x1] * fx
            row.append(top * (1 - fy) + bottom * fy)
        out.append(row)
    return out


def rank_by_sort(row):
    """Indices sorted by (-value, index) via exhaustive comparison."""
    return sorted(range(len(row)), key=lambda k: (-row[k], k))
