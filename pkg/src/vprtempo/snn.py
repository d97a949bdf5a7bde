"""One expert module: input -> feature -> one-hot output spiking network.

Spikes are single amplitudes in [0, 1] per neuron per presentation; the
amplitude stands for the spike's timing inside one theta-cycle timestep, so
each image is a single feedforward pass with no membrane dynamics.

Weights are stored as ``(post, pre)`` matrices. Excitatory weights and
inhibitory magnitudes live in separate non-negative matrices and the
effective synapse is ``w_exc - w_inh``.

The rule kernels (``_net_input``, ``_apply_update``, ``_present`` ...) accept
arrays with any number of leading batch axes, which is how the ensemble trains
a stack of modules through one batched product. The public functions operate
on a single :class:`ModuleNetwork`.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import numba
import numpy as np

from .errors import InvalidInputError, InvalidStateError

LAYERS = ("IF", "FO")
HOMEOSTASIS_MODES = ("text", "literal")
WEIGHT_INITS = ("uniform", "uniform_l1")
DTYPES = ("float32", "float64")


@dataclass(frozen=True)
class Hyperparams:
    theta_max: float = 0.5
    eta_stdp_init: float = 0.005
    eta_itp_init: float = 0.15
    f_min: float = 0.2
    f_max: float = 0.9
    p_exc: float = 0.1
    p_inh: float = 0.5
    constant_input: float = 0.1
    x_force: float = 0.5
    epsilon: float = 1e-6
    epochs: int = 4
    homeostasis: str = "text"
    weight_init: str = "uniform_l1"
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 <= self.f_min <= self.f_max <= 1.0 or self.f_max <= 0.0:
            raise InvalidInputError(
                f"need 0 <= f_min <= f_max <= 1 and f_max > 0, got [{self.f_min}, {self.f_max}]"
            )
        for name in ("p_exc", "p_inh"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidInputError(f"{name} must be a probability")
        if self.theta_max <= 0.0:
            raise InvalidInputError("theta_max must be > 0")
        if self.epsilon <= 0.0:
            raise InvalidInputError("epsilon must be > 0")
        if not 0.0 <= self.eta_stdp_init < 1.0 or self.eta_itp_init < 0.0:
            raise InvalidInputError("learning rates must satisfy 0 <= eta_stdp < 1, eta_itp >= 0")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be >= 1")
        if self.homeostasis not in HOMEOSTASIS_MODES:
            raise InvalidInputError(f"homeostasis must be one of {HOMEOSTASIS_MODES}")
        if self.weight_init not in WEIGHT_INITS:
            raise InvalidInputError(f"weight_init must be one of {WEIGHT_INITS}")
        if self.dtype not in DTYPES:
            raise InvalidInputError(f"dtype must be one of {DTYPES}")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)


@dataclass
class LayerPair:
    """Connections from a pre-synaptic layer to a post-synaptic layer.

    ``w_eff`` mirrors ``w_exc - w_inh`` and is kept current by every learning
    rule; call :meth:`refresh` after editing the weight matrices by hand.
    """

    w_exc: np.ndarray
    w_inh: np.ndarray
    mask_exc: np.ndarray
    mask_inh: np.ndarray
    dense: bool = False
    w_eff: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("w_exc", "w_inh", "mask_exc", "mask_inh"):
            arr = getattr(self, name)
            if not arr.flags.c_contiguous:
                setattr(self, name, np.ascontiguousarray(arr))
        self.refresh()

    @property
    def pre_size(self) -> int:
        return self.w_exc.shape[-1]

    @property
    def post_size(self) -> int:
        return self.w_exc.shape[-2]

    def refresh(self) -> None:
        self.w_eff = self.w_exc - self.w_inh

    def effective(self) -> np.ndarray:
        return self.w_eff


@dataclass
class NeuronState:
    theta: np.ndarray
    target_rate: np.ndarray
    last_amplitude: np.ndarray
    last_input: np.ndarray


@dataclass
class AnnealClock:
    """Shared schedule for both learning rates: ``eta(t) = eta0 * (1 - t/T)**2``."""

    t: int = 0
    total: int = 0

    def rate(self, initial: float) -> float:
        if self.total <= 0:
            raise InvalidStateError("training schedule not set (total iterations is 0)")
        return initial * (1.0 - self.t / self.total) ** 2

    @property
    def exhausted(self) -> bool:
        return self.t >= self.total


@dataclass
class ModuleNetwork:
    input_size: int
    feature_size: int
    output_size: int
    layer_if: LayerPair
    layer_fo: LayerPair
    feature_state: NeuronState
    output_state: NeuronState
    hyper: Hyperparams
    clock: AnnealClock
    seed: int

    def layer(self, name: str) -> tuple[LayerPair, NeuronState]:
        if name == "IF":
            return self.layer_if, self.feature_state
        if name == "FO":
            return self.layer_fo, self.output_state
        raise InvalidInputError(f"unknown layer {name!r}, expected one of {LAYERS}")

    def effective_weights(self) -> tuple[np.ndarray, np.ndarray]:
        return self.layer_if.w_eff, self.layer_fo.w_eff


# ---------------------------------------------------------------------------
# construction


def _draw_weights(rng: np.random.Generator, mask: np.ndarray, scheme: str) -> np.ndarray:
    w = np.where(mask, 1.0 - rng.random(mask.shape), 0.0)
    if scheme == "uniform_l1":
        norm = w.sum(axis=-1, keepdims=True)
        norm[norm == 0.0] = 1.0
        w /= norm
    return w


def init_module(
    input_size: int,
    feature_size: int,
    output_size: int,
    hyper: Hyperparams,
    seed: int,
    total_iterations: int = 0,
) -> ModuleNetwork:
    """Build a module with sampled connectivity, weights, thresholds and target rates.

    I->F connections are sampled i.i.d. per entry with ``p_exc`` (excitatory)
    and ``p_inh`` (inhibitory); an entry can be both. F->O is fully connected
    with both signs. Live weights are uniform on (0, 1] (optionally L1
    normalised per post-synaptic neuron), thresholds uniform on
    ``[0, theta_max]`` and target rates uniform on ``[f_min, f_max]``.
    """
    for name, size in (("input", input_size), ("feature", feature_size), ("output", output_size)):
        if int(size) < 1:
            raise InvalidInputError(f"{name} size must be >= 1, got {size}")
    rng = np.random.default_rng(seed)
    dt = hyper.np_dtype

    mask_exc = rng.random((feature_size, input_size)) < hyper.p_exc
    mask_inh = rng.random((feature_size, input_size)) < hyper.p_inh
    w_exc = _draw_weights(rng, mask_exc, hyper.weight_init).astype(dt)
    w_inh = _draw_weights(rng, mask_inh, hyper.weight_init).astype(dt)
    layer_if = LayerPair(w_exc, w_inh, mask_exc, mask_inh, dense=False)

    full = np.ones((output_size, feature_size), dtype=bool)
    fo_exc = _draw_weights(rng, full, hyper.weight_init).astype(dt)
    fo_inh = _draw_weights(rng, full, hyper.weight_init).astype(dt)
    layer_fo = LayerPair(fo_exc, fo_inh, full, full.copy(), dense=True)

    def state(n: int) -> NeuronState:
        theta = rng.uniform(0.0, hyper.theta_max, n).astype(dt)
        rate = rng.uniform(hyper.f_min, hyper.f_max, n).astype(dt)
        return NeuronState(theta, rate, np.zeros(n, dt), np.zeros(n, dt))

    return ModuleNetwork(
        input_size=input_size,
        feature_size=feature_size,
        output_size=output_size,
        layer_if=layer_if,
        layer_fo=layer_fo,
        feature_state=state(feature_size),
        output_state=state(output_size),
        hyper=hyper,
        clock=AnnealClock(0, total_iterations),
        seed=seed,
    )


# ---------------------------------------------------------------------------
# rule kernels (batch-agnostic)


def _heaviside(x: np.ndarray) -> np.ndarray:
    return (x > 0).astype(x.dtype)


def _col(eta, dtype) -> np.ndarray:
    return np.asarray(eta, dtype=dtype)[..., None]


def _net_input(weights: np.ndarray, pre: np.ndarray, theta: np.ndarray, constant: float) -> np.ndarray:
    return np.matmul(weights, pre[..., None])[..., 0] + constant - theta


def _clip(net: np.ndarray) -> np.ndarray:
    return np.clip(net, 0.0, 1.0)


@numba.njit(cache=True, nogil=True)
def _update_kernel(w_exc, w_inh, w_eff, m_exc, m_inh, dense, g, h, factor, eps):
    # per entry: signed shift by g[j]*h[i], sign-reset to eps, inhibitory scaling
    nb, npost, npre = w_exc.shape
    one = w_exc.dtype.type(1)
    zero = w_exc.dtype.type(0)
    for b in range(nb):
        for j in range(npost):
            gj = g[b, j]
            fj = factor[b, j]
            for i in range(npre):
                d = gj * h[b, i]
                if dense:
                    e = w_exc[b, j, i] + d
                    n = w_inh[b, j, i] - d
                    e = e if e > 0 else eps
                    n = n if n > 0 else eps
                else:
                    me = one if m_exc[b, j, i] else zero
                    mi = one if m_inh[b, j, i] else zero
                    e = w_exc[b, j, i] + d * me
                    n = w_inh[b, j, i] - d * mi
                    e = e if e > 0 else eps * me
                    n = n if n > 0 else eps * mi
                n = n * fj
                w_exc[b, j, i] = e
                w_inh[b, j, i] = n
                w_eff[b, j, i] = e - n


def _stack3(a: np.ndarray) -> np.ndarray:
    out = a.reshape((-1,) + a.shape[-2:])
    if not np.shares_memory(out, a):
        raise InvalidStateError("weight arrays must be C-contiguous for in-place updates")
    return out


def _apply_update(layer: LayerPair, post_term, pre_term, factor, eps) -> None:
    """Shift every live synapse by ``post_term[j] * pre_term[i]`` then scale inhibition by ``factor[j]``.

    The shift applies to the signed weight, so it raises ``w_exc`` and lowers
    the inhibitory magnitude ``w_inh``. A live weight that would reach zero or
    change sign is reset to ``eps``; masked-out entries stay exactly zero.
    """
    dt = layer.w_exc.dtype
    lead = layer.w_exc.shape[:-2]
    npost, npre = layer.w_exc.shape[-2:]
    g = np.ascontiguousarray(np.broadcast_to(post_term, lead + (npost,)), dtype=dt).reshape(-1, npost)
    h = np.ascontiguousarray(np.broadcast_to(pre_term, lead + (npre,)), dtype=dt).reshape(-1, npre)
    f = np.ascontiguousarray(np.broadcast_to(factor, lead + (npost,)), dtype=dt).reshape(-1, npost)
    _update_kernel(
        _stack3(layer.w_exc), _stack3(layer.w_inh), _stack3(layer.w_eff),
        _stack3(layer.mask_exc), _stack3(layer.mask_inh), layer.dense,
        g, h, f, dt.type(eps),
    )


def _stdp_term(post, rate, eta) -> np.ndarray:
    # post-synaptic factor of the STDP rule; the pre factor is heaviside(pre)
    return _col(eta, post.dtype) / rate * _heaviside(post) * (0.5 - post)


def _force_term(post, target, rate, eta) -> np.ndarray:
    # post-synaptic factor of spike forcing; the pre factor is the raw pre amplitude
    return _col(eta, post.dtype) / rate * (target - post)


def _homeostasis_factor(net_input, eta, mode: str) -> np.ndarray:
    eta = _col(eta, net_input.dtype)
    if mode == "text":
        return 1.0 + eta * np.sign(net_input)
    return 1.0 - eta * _heaviside(net_input)


def _itp(state: NeuronState, post: np.ndarray, eta) -> None:
    state.theta += _col(eta, post.dtype) * (_heaviside(post) - state.target_rate)
    np.maximum(state.theta, 0.0, out=state.theta)


def _present(layer_if, fstate, layer_fo, ostate, hyper, spikes, target, eta_stdp, eta_itp):
    """One training presentation; ``target`` is the one-hot forced output.

    Per layer: forward, STDP (I->F) or spike forcing (F->O), ITP, homeostasis.
    Homeostasis keys on the pre-clamp input of this presentation's forward
    pass, and ITP never touches weights, so the weight shift and the
    inhibitory scaling run fused in one kernel pass.
    """
    c, eps, mode = hyper.constant_input, hyper.epsilon, hyper.homeostasis

    net_f = _net_input(layer_if.w_eff, spikes, fstate.theta, c)
    feat = _clip(net_f)
    _apply_update(
        layer_if, _stdp_term(feat, fstate.target_rate, eta_stdp), _heaviside(spikes),
        _homeostasis_factor(net_f, eta_stdp, mode), eps,
    )
    _itp(fstate, feat, eta_itp)

    net_o = _net_input(layer_fo.w_eff, feat, ostate.theta, c)
    out = _clip(net_o)
    _apply_update(
        layer_fo, _force_term(out, target, ostate.target_rate, eta_stdp), feat,
        _homeostasis_factor(net_o, eta_stdp, mode), eps,
    )
    _itp(ostate, out, eta_itp)

    fstate.last_input, fstate.last_amplitude = net_f, feat
    ostate.last_input, ostate.last_amplitude = net_o, out
    return feat, out


# ---------------------------------------------------------------------------
# public operations on one module


def _as_amplitudes(x, size: int, dtype) -> np.ndarray:
    x = np.asarray(x, dtype=dtype)
    if x.shape != (size,):
        raise InvalidInputError(f"expected amplitude vector of length {size}, got shape {x.shape}")
    return x


def _training_rates(net: ModuleNetwork) -> tuple[float, float]:
    if net.clock.total <= 0:
        raise InvalidStateError("training schedule not set (total iterations is 0)")
    if net.clock.exhausted:
        raise InvalidStateError(f"annealing clock exhausted (t={net.clock.t}, T={net.clock.total})")
    return net.clock.rate(net.hyper.eta_stdp_init), net.clock.rate(net.hyper.eta_itp_init)


def forward(net: ModuleNetwork, pre, layer: str) -> np.ndarray:
    """Propagate ``pre`` through one layer pair and record the result on the post layer."""
    pair, state = net.layer(layer)
    pre = _as_amplitudes(pre, pair.pre_size, net.hyper.np_dtype)
    net_in = _net_input(pair.effective(), pre, state.theta, net.hyper.constant_input)
    state.last_input = net_in
    state.last_amplitude = _clip(net_in)
    return state.last_amplitude.copy()


def stdp_update(net: ModuleNetwork, pre, post, layer: str) -> None:
    eta, _ = _training_rates(net)
    pair, state = net.layer(layer)
    dt = net.hyper.np_dtype
    pre = _as_amplitudes(pre, pair.pre_size, dt)
    post = _as_amplitudes(post, pair.post_size, dt)
    _apply_update(pair, _stdp_term(post, state.target_rate, eta), _heaviside(pre), 1.0, net.hyper.epsilon)


def spike_force_update(net: ModuleNetwork, pre, target_neuron: int) -> None:
    """Delta-rule update of F->O towards a one-hot ``x_force`` target.

    The computed output amplitudes are those recorded by the last ``forward``
    through the FO layer.
    """
    if not 0 <= int(target_neuron) < net.output_size:
        raise InvalidInputError(f"target neuron {target_neuron} outside [0, {net.output_size})")
    eta, _ = _training_rates(net)
    dt = net.hyper.np_dtype
    pre = _as_amplitudes(pre, net.feature_size, dt)
    target = np.zeros(net.output_size, dt)
    target[int(target_neuron)] = net.hyper.x_force
    post = net.output_state.last_amplitude
    term = _force_term(post, target, net.output_state.target_rate, eta)
    _apply_update(net.layer_fo, term, pre, 1.0, net.hyper.epsilon)


def itp_update(net: ModuleNetwork, post, layer: str) -> None:
    _, eta = _training_rates(net)
    pair, state = net.layer(layer)
    _itp(state, _as_amplitudes(post, pair.post_size, net.hyper.np_dtype), eta)


def homeostasis_update(net: ModuleNetwork, layer: str, net_input=None) -> None:
    """Scale inhibitory magnitudes by the sign of each post neuron's net input.

    ``net_input`` defaults to the pre-clamp input recorded by the last
    ``forward`` through ``layer``.
    """
    eta, _ = _training_rates(net)
    pair, state = net.layer(layer)
    if net_input is None:
        net_input = state.last_input
    net_input = _as_amplitudes(net_input, pair.post_size, net.hyper.np_dtype)
    factor = _homeostasis_factor(net_input, eta, net.hyper.homeostasis)
    _apply_update(pair, 0.0, 0.0, factor, net.hyper.epsilon)


def train_presentation(net: ModuleNetwork, spikes, place: int) -> ModuleNetwork:
    """Present one image for ``place`` (a local output index) and advance the clock."""
    if not 0 <= int(place) < net.output_size:
        raise InvalidInputError(f"place {place} outside [0, {net.output_size})")
    eta_stdp, eta_itp = _training_rates(net)
    dt = net.hyper.np_dtype
    spikes = _as_amplitudes(spikes, net.input_size, dt)
    target = np.zeros(net.output_size, dt)
    target[int(place)] = net.hyper.x_force
    _present(
        net.layer_if, net.feature_state, net.layer_fo, net.output_state,
        net.hyper, spikes, target, eta_stdp, eta_itp,
    )
    net.clock.t += 1
    return net


def infer(net: ModuleNetwork, spikes) -> np.ndarray:
    """Output amplitudes for one query; never mutates the network."""
    spikes = _as_amplitudes(spikes, net.input_size, net.hyper.np_dtype)
    w_if, w_fo = net.effective_weights()
    c = net.hyper.constant_input
    feat = _clip(_net_input(w_if, spikes, net.feature_state.theta, c))
    return _clip(_net_input(w_fo, feat, net.output_state.theta, c))


def clone(net: ModuleNetwork) -> ModuleNetwork:
    """Deep copy of all arrays and the clock."""
    def copy_pair(p: LayerPair) -> LayerPair:
        return LayerPair(p.w_exc.copy(), p.w_inh.copy(), p.mask_exc.copy(), p.mask_inh.copy(), p.dense)

    def copy_state(s: NeuronState) -> NeuronState:
        return NeuronState(s.theta.copy(), s.target_rate.copy(), s.last_amplitude.copy(), s.last_input.copy())

    return replace(
        net,
        layer_if=copy_pair(net.layer_if),
        layer_fo=copy_pair(net.layer_fo),
        feature_state=copy_state(net.feature_state),
        output_state=copy_state(net.output_state),
        clock=AnnealClock(net.clock.t, net.clock.total),
    )
