"""Disjoint expert modules trained and queried as one stacked 3-D tensor.

Places are split into contiguous blocks, one block per module. Training runs
the modules of a worker group in lockstep: at every step each module gets its
own next image, and all of them go through a single batched product over
``(modules, post, pre)`` weight stacks. A module that finished its schedule
keeps stepping with learning rate zero, which leaves it bit-for-bit unchanged,
so results do not depend on how modules are grouped across workers.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from . import snn
from .errors import DatasetError, InvalidInputError
from .snn import Hyperparams, LayerPair, ModuleNetwork, NeuronState

log = logging.getLogger(__name__)

PresentationLog = Callable[[int, int, int], None]


@dataclass(frozen=True)
class PlaceAssignment:
    """Global place index <-> (module, local neuron), contiguous blocks in order."""

    sizes: tuple[int, ...]

    def __post_init__(self):
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise InvalidInputError(f"module sizes must be positive, got {self.sizes}")

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.sizes)[:-1]]))

    @cached_property
    def total_places(self) -> int:
        return int(sum(self.sizes))

    @property
    def module_count(self) -> int:
        return len(self.sizes)

    def module_range(self, module: int) -> range:
        start = self.offsets[module]
        return range(start, start + self.sizes[module])

    def locate(self, place: int) -> tuple[int, int]:
        if not 0 <= place < self.total_places:
            raise InvalidInputError(f"place {place} outside [0, {self.total_places})")
        module = int(np.searchsorted(self.offsets, place, side="right")) - 1
        return module, place - self.offsets[module]

    def global_index(self, module: int, local: int) -> int:
        if not 0 <= local < self.sizes[module]:
            raise InvalidInputError(f"local neuron {local} outside module {module}")
        return self.offsets[module] + local


def partition_places(total_places: int, places_per_module: int) -> PlaceAssignment:
    if total_places < 1 or places_per_module < 1:
        raise InvalidInputError("total_places and places_per_module must be >= 1")
    full, rest = divmod(total_places, places_per_module)
    sizes = [places_per_module] * full + ([rest] if rest else [])
    return PlaceAssignment(tuple(sizes))


def module_seed(master_seed: int, module: int) -> int:
    """Independent per-module seed split off the master seed."""
    seq = np.random.SeedSequence(master_seed, spawn_key=(module,))
    return int(seq.generate_state(1, np.uint32)[0])


@dataclass
class MatchResult:
    global_place: int
    amplitude: float
    per_module_argmax: list[tuple[int, int, float]]
    amplitudes: np.ndarray = field(repr=False)


@dataclass
class _Stack:
    """Padded stacked view of a group of modules (output rows padded to the largest)."""

    layer_if: LayerPair
    layer_fo: LayerPair
    feature_state: NeuronState
    output_state: NeuronState
    sizes: list[int]


def _stack_modules(modules: Sequence[ModuleNetwork]) -> _Stack:
    width = max(m.output_size for m in modules)
    dt = modules[0].hyper.np_dtype

    def pad_rows(a: np.ndarray, fill) -> np.ndarray:
        if a.shape[0] == width:
            return a
        extra = np.full((width - a.shape[0],) + a.shape[1:], fill, dtype=a.dtype)
        return np.concatenate([a, extra])

    layer_if = LayerPair(
        np.stack([m.layer_if.w_exc for m in modules]),
        np.stack([m.layer_if.w_inh for m in modules]),
        np.stack([m.layer_if.mask_exc for m in modules]),
        np.stack([m.layer_if.mask_inh for m in modules]),
        dense=False,
    )
    layer_fo = LayerPair(
        np.stack([pad_rows(m.layer_fo.w_exc, 0) for m in modules]),
        np.stack([pad_rows(m.layer_fo.w_inh, 0) for m in modules]),
        np.stack([pad_rows(m.layer_fo.mask_exc, True) for m in modules]),
        np.stack([pad_rows(m.layer_fo.mask_inh, True) for m in modules]),
        dense=True,
    )

    def state(states: list[NeuronState], pad: bool) -> NeuronState:
        grow = (lambda a, fill: pad_rows(a, fill)) if pad else (lambda a, fill: a)
        return NeuronState(
            np.stack([grow(s.theta, 0) for s in states]),
            np.stack([grow(s.target_rate, 1) for s in states]).astype(dt),
            np.stack([grow(s.last_amplitude, 0) for s in states]),
            np.stack([grow(s.last_input, 0) for s in states]),
        )

    return _Stack(
        layer_if, layer_fo,
        state([m.feature_state for m in modules], pad=False),
        state([m.output_state for m in modules], pad=True),
        [m.output_size for m in modules],
    )


def _unstack_into(stack: _Stack, modules: Sequence[ModuleNetwork]) -> None:
    for k, m in enumerate(modules):
        n = stack.sizes[k]
        m.layer_if = LayerPair(
            stack.layer_if.w_exc[k].copy(), stack.layer_if.w_inh[k].copy(),
            m.layer_if.mask_exc, m.layer_if.mask_inh, dense=False,
        )
        m.layer_fo = LayerPair(
            stack.layer_fo.w_exc[k, :n].copy(), stack.layer_fo.w_inh[k, :n].copy(),
            m.layer_fo.mask_exc, m.layer_fo.mask_inh, dense=True,
        )
        fs, os_ = stack.feature_state, stack.output_state
        m.feature_state = NeuronState(
            fs.theta[k].copy(), m.feature_state.target_rate,
            fs.last_amplitude[k].copy(), fs.last_input[k].copy(),
        )
        m.output_state = NeuronState(
            os_.theta[k, :n].copy(), m.output_state.target_rate,
            os_.last_amplitude[k, :n].copy(), os_.last_input[k, :n].copy(),
        )


def presentation_schedule(
    n_places: int, n_variants: int, epochs: int, rng: Optional[np.random.Generator] = None
) -> list[tuple[int, int]]:
    """(local place, variant) pairs: place-major, variants consecutive, epoch after epoch.

    With ``rng`` the place order is permuted independently in each epoch.
    """
    order = []
    for _ in range(epochs):
        places = rng.permutation(n_places) if rng is not None else range(n_places)
        order.extend((int(p), v) for p in places for v in range(n_variants))
    return order


def train_modules_lockstep(
    modules: Sequence[ModuleNetwork],
    schedules: Sequence[Sequence[tuple[int, int]]],
    images: Sequence[np.ndarray],
    on_present: Optional[Callable[[int, int, int], None]] = None,
) -> None:
    """Train ``modules`` together through the batched kernels.

    ``images[k]`` is module k's ``(variants, local places, inputs)`` array and
    ``schedules[k]`` its list of (local place, variant) presentations. Each
    module's clock must already hold ``len(schedules[k])`` as its total.
    """
    hyper = modules[0].hyper
    dt = hyper.np_dtype
    stack = _stack_modules(modules)
    width = stack.layer_fo.post_size
    n_mod = len(modules)
    steps = max(len(s) for s in schedules)
    spikes = np.zeros((n_mod, modules[0].input_size), dt)
    target = np.zeros((n_mod, width), dt)
    eta_stdp = np.zeros(n_mod)
    eta_itp = np.zeros(n_mod)

    for step in range(steps):
        spikes.fill(0.0)
        target.fill(0.0)
        eta_stdp.fill(0.0)
        eta_itp.fill(0.0)
        for k, m in enumerate(modules):
            if step >= len(schedules[k]):
                continue
            place, variant = schedules[k][step]
            spikes[k] = images[k][variant, place]
            target[k, place] = hyper.x_force
            eta_stdp[k] = m.clock.rate(hyper.eta_stdp_init)
            eta_itp[k] = m.clock.rate(hyper.eta_itp_init)
            if on_present is not None:
                on_present(k, place, variant)
        snn._present(
            stack.layer_if, stack.feature_state, stack.layer_fo, stack.output_state,
            hyper, spikes, target, eta_stdp, eta_itp,
        )
        for k, m in enumerate(modules):
            if step < len(schedules[k]):
                m.clock.t += 1

    _unstack_into(stack, modules)


@dataclass
class Ensemble:
    modules: list[ModuleNetwork]
    assignment: PlaceAssignment
    seed: int = 0
    _query_stack: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.modules) != self.assignment.module_count:
            raise InvalidInputError("module count does not match place assignment")
        first = self.modules[0]
        for m, size in zip(self.modules, self.assignment.sizes):
            if m.output_size != size:
                raise InvalidInputError("module output size does not match its place block")
            if (m.input_size, m.feature_size) != (first.input_size, first.feature_size) or m.hyper != first.hyper:
                raise InvalidInputError("all modules must share layer sizes and hyperparameters")

    @property
    def input_size(self) -> int:
        return self.modules[0].input_size

    @property
    def hyper(self) -> Hyperparams:
        return self.modules[0].hyper

    @property
    def total_places(self) -> int:
        return self.assignment.total_places

    def invalidate(self) -> None:
        self._query_stack = None

    def query_tensors(self) -> tuple:
        """Stacked effective weights and thresholds used by the batched forward pass."""
        if self._query_stack is None:
            stack = _stack_modules(self.modules)
            stack.layer_if.refresh()
            stack.layer_fo.refresh()
            valid = np.zeros((len(self.modules), stack.layer_fo.post_size), dtype=bool)
            for k, n in enumerate(stack.sizes):
                valid[k, :n] = True
            self._query_stack = (
                stack.layer_if.w_eff, stack.feature_state.theta,
                stack.layer_fo.w_eff, stack.output_state.theta, valid,
            )
        return self._query_stack


def train_ensemble(
    spikes,
    hyper: Hyperparams = Hyperparams(),
    places_per_module: int = 1000,
    seed: int = 0,
    feature_size: Optional[int] = None,
    workers: int = 1,
    shuffle: bool = False,
    on_present: Optional[PresentationLog] = None,
) -> Ensemble:
    """Train one module per contiguous place block.

    ``spikes`` has shape ``(variants, places, inputs)``; place ``i`` of every
    variant shows the same location. Modules are split into ``workers``
    contiguous groups; each group trains in lockstep in its own thread.
    ``on_present(module, global_place, variant)`` sees every presentation.
    """
    spikes = np.asarray(spikes)
    if spikes.ndim != 3 or spikes.shape[0] < 1 or spikes.shape[1] < 1:
        raise DatasetError(f"training data must be (variants>=1, places>=1, inputs), got {spikes.shape}")
    if not np.all(np.isfinite(spikes)):
        raise DatasetError("training data contains missing (non-finite) images")
    n_var, n_places, n_in = spikes.shape
    feature_size = feature_size or 2 * n_in
    assignment = partition_places(n_places, places_per_module)
    spikes = spikes.astype(hyper.np_dtype, copy=False)

    modules, schedules, images = [], [], []
    for k in range(assignment.module_count):
        block = assignment.module_range(k)
        mseed = module_seed(seed, k)
        rng = np.random.default_rng([mseed, 1]) if shuffle else None
        schedule = presentation_schedule(len(block), n_var, hyper.epochs, rng)
        net = snn.init_module(n_in, feature_size, len(block), hyper, mseed, total_iterations=len(schedule))
        modules.append(net)
        schedules.append(schedule)
        images.append(spikes[:, block.start:block.stop])

    workers = max(1, min(int(workers), len(modules)))
    groups = [list(g) for g in np.array_split(np.arange(len(modules)), workers)]

    def run(group: list[int]) -> None:
        def relay(k, place, variant):
            if on_present is not None:
                on_present(group[k], assignment.global_index(group[k], place), variant)

        train_modules_lockstep(
            [modules[i] for i in group], [schedules[i] for i in group], [images[i] for i in group],
            relay if on_present is not None else None,
        )

    log.info("training %d module(s) on %d places x %d variants, %d worker(s)",
             len(modules), n_places, n_var, workers)
    if workers == 1:
        run(groups[0])
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, groups))
    return Ensemble(modules, assignment, seed)


def batched_forward(ens: Ensemble, inputs) -> list[np.ndarray]:
    """One input per module through all modules with a single stacked product."""
    dt = ens.hyper.np_dtype
    inputs = np.asarray(inputs, dtype=dt)
    if inputs.shape != (len(ens.modules), ens.input_size):
        raise InvalidInputError(
            f"expected inputs of shape {(len(ens.modules), ens.input_size)}, got {inputs.shape}"
        )
    out = _stacked_outputs(ens, inputs)
    return [out[k, :n] for k, n in enumerate(ens.assignment.sizes)]


def _stacked_outputs(ens: Ensemble, inputs: np.ndarray) -> np.ndarray:
    w_if, th_f, w_fo, th_o, _ = ens.query_tensors()
    c = ens.hyper.constant_input
    feat = snn._clip(snn._net_input(w_if, inputs, th_f, c))
    return snn._clip(snn._net_input(w_fo, feat, th_o, c))


def ensemble_amplitudes(ens: Ensemble, spikes) -> np.ndarray:
    """Output amplitudes of every module for one query, in global place order."""
    dt = ens.hyper.np_dtype
    x = np.asarray(spikes, dtype=dt)
    if x.shape != (ens.input_size,):
        raise InvalidInputError(f"expected amplitude vector of length {ens.input_size}, got {x.shape}")
    valid = ens.query_tensors()[4]
    out = _stacked_outputs(ens, np.broadcast_to(x, (len(ens.modules), x.size)))
    return out[valid]


def query_ensemble(ens: Ensemble, spikes) -> MatchResult:
    """Fan one query out to all modules and take the global argmax (lowest index wins ties)."""
    amps = ensemble_amplitudes(ens, spikes)
    best = int(np.argmax(amps))
    per_module = []
    for k, block in enumerate(ens.assignment.module_range(m) for m in range(len(ens.modules))):
        local = int(np.argmax(amps[block.start:block.stop]))
        per_module.append((k, local, float(amps[block.start + local])))
    return MatchResult(best, float(amps[best]), per_module, amps)
