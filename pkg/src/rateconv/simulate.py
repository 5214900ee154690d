"""Time-stepped simulation of rate-coded integrate-and-fire networks.

Every neuron accumulates input current into a membrane potential and
emits a spike whenever the potential reaches the threshold; on a spike
the threshold is subtracted (soft reset) so the overshoot is kept.
There is no leak and no refractory period.  The input layer is itself a
spiking population driven by the frame as a constant current, so the
whole stack obeys one bookkeeping identity per neuron:

    steps * v_thr * rate + potential_at_end = sum of injected current

Firing rates (spike counts over elapsed steps) therefore track the
affine map of the previous layer's rates, short of the leftover
potential divided by time.  That leftover is the conversion error this
module measures; adding it back for the output layer (the "robust"
readout) removes the final layer's discretization entirely.

Within a step, layers cascade synchronously: layer l sees the spikes
layer l-1 produced in the same step.  Potentials are float64 even
though weights are stored float32, which keeps the bookkeeping identity
below 1e-9 over thousands of steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .network import (LayerSpec, NetworkSpec, apply_layer_linear, layer_output_shape,
                      validate_network)

READOUTS = ("rate", "robust")


@dataclass
class SimConfig:
    timesteps: int = 500
    v_thr: float = 1.0
    readout: str = "robust"
    carry_potentials: bool = False  # keep membrane state across consecutive frames

    def __post_init__(self):
        if self.timesteps < 1:
            raise ValueError(f"timesteps must be >= 1, got {self.timesteps}")
        if not self.v_thr > 0.0:
            raise ValueError(f"v_thr must be positive, got {self.v_thr}")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}, got {self.readout!r}")


@dataclass
class _Stage:
    """One spiking population fed by a parameterized layer."""

    layer_index: int
    layer: LayerSpec
    weights64: np.ndarray
    bias64: np.ndarray
    flatten_input: bool
    shape: tuple[int, ...]


def _build_stages(net: NetworkSpec) -> list[_Stage]:
    stages: list[_Stage] = []
    shape = net.input_shape
    pending_flatten = False
    for i, layer in enumerate(net.layers):
        shape = layer_output_shape(layer, shape)
        if layer.kind == "flatten":
            pending_flatten = True
            continue
        stages.append(_Stage(
            layer_index=i,
            layer=layer,
            weights64=layer.weights.astype(np.float64),
            bias64=layer.bias.astype(np.float64),
            flatten_input=pending_flatten,
            shape=shape,
        ))
        pending_flatten = False
    return stages


@dataclass
class SimState:
    """Mutable per-run state; owned by exactly one simulation at a time.

    Population 0 is the input layer; populations 1..n correspond to the
    network's parameterized layers in order.
    """

    net: NetworkSpec
    config: SimConfig
    batch: int
    t: int
    potentials: list[np.ndarray]     # float64 [batch, *shape]
    spikes: list[np.ndarray]         # last step's 0/1 indicators
    counts: list[np.ndarray]         # int64 cumulative spike counts
    current_sums: list[np.ndarray]   # float64 cumulative injected current
    stages: list[_Stage] = field(repr=False, default_factory=list)

    def population_shapes(self) -> list[tuple[int, ...]]:
        return [self.net.input_shape] + [s.shape for s in self.stages]

    def reset(self, keep_potentials: bool = False) -> None:
        self.t = 0
        for j in range(len(self.potentials)):
            if not keep_potentials:
                self.potentials[j][...] = 0.0
            self.spikes[j][...] = 0.0
            self.counts[j][...] = 0
            self.current_sums[j][...] = 0.0


def init_sim(net: NetworkSpec, config: SimConfig, batch: int = 1) -> SimState:
    """Fresh all-zero state sized to the network's layer shapes."""
    result = validate_network(net)
    if not result.ok:
        raise ValueError("cannot simulate invalid network: " + "; ".join(result.violations))
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    stages = _build_stages(net)
    shapes = [net.input_shape] + [s.shape for s in stages]
    return SimState(
        net=net,
        config=config,
        batch=batch,
        t=0,
        potentials=[np.zeros((batch, *s)) for s in shapes],
        spikes=[np.zeros((batch, *s)) for s in shapes],
        counts=[np.zeros((batch, *s), dtype=np.int64) for s in shapes],
        current_sums=[np.zeros((batch, *s)) for s in shapes],
        stages=stages,
    )


def if_step(potentials: np.ndarray, currents: np.ndarray, v_thr: float) -> np.ndarray:
    """One integrate-and-fire update with soft reset, in place.

    Adds the current, spikes where the potential reaches v_thr
    (inclusive), subtracts v_thr from spiking neurons, and returns the
    0/1 spike indicators.  Potentials may go arbitrarily negative.
    """
    potentials += currents
    fired = potentials >= v_thr
    spikes = fired.astype(np.float64)
    potentials -= v_thr * spikes
    return spikes


def step(state: SimState, net: NetworkSpec, frame: np.ndarray) -> list[np.ndarray]:
    """Advance the whole stack by one step under a constant input frame.

    The frame drives population 0 as a direct current; each later
    population receives its layer's affine map of the spikes the
    previous population emitted in this same step.
    """
    if net is not state.net:
        raise ValueError("state was initialized for a different network")
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape == state.net.input_shape:
        frame = np.broadcast_to(frame, (state.batch, *frame.shape))
    elif frame.shape != (state.batch, *state.net.input_shape):
        raise ValueError(f"frame shape {frame.shape} does not match network input "
                         f"{state.net.input_shape} (batch {state.batch})")

    v_thr = state.config.v_thr
    spk = if_step(state.potentials[0], frame, v_thr)
    state.spikes[0] = spk
    state.counts[0] += spk.astype(np.int64)
    state.current_sums[0] += frame

    for j, stage in enumerate(state.stages, start=1):
        x = state.spikes[j - 1]
        if stage.flatten_input:
            x = x.reshape(state.batch, -1)
        z = apply_layer_linear(stage.layer, x, stage.weights64, stage.bias64)
        spk = if_step(state.potentials[j], z, v_thr)
        state.spikes[j] = spk
        state.counts[j] += spk.astype(np.int64)
        state.current_sums[j] += z

    state.t += 1
    return state.spikes


@dataclass
class SimResult:
    """Read-only summary of one finished run.

    Per population: firing rates (counts / T), residual potentials
    (end potential / T), and average drive (injected current per step
    over v_thr).  rate_last / f_last flatten the output population.
    settle_step is the last step at which the output argmax changed
    under the configured readout, a latency diagnostic.
    """

    timesteps: int
    v_thr: float
    readout: str
    rates: list[np.ndarray]
    residuals: list[np.ndarray]
    avg_currents: list[np.ndarray]
    rate_last: np.ndarray
    f_last: np.ndarray
    settle_step: np.ndarray


def run_batch(net: NetworkSpec, frames: np.ndarray, config: SimConfig,
              state: Optional[SimState] = None) -> SimResult:
    """Simulate a batch of frames for config.timesteps steps.

    frames: [batch, *input_shape], each held constant for the whole run.
    Pass the state back in across calls to reuse buffers; potentials are
    zeroed between runs unless config.carry_potentials is set.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != len(net.input_shape) + 1 or frames.shape[1:] != net.input_shape:
        raise ValueError(f"frames of shape {frames.shape} do not stack over "
                         f"network input {net.input_shape}")
    batch = frames.shape[0]
    if state is None:
        state = init_sim(net, config, batch)
    else:
        if state.net is not net or state.batch != batch:
            raise ValueError("reused state does not match this network and batch size")
        state.config = config
        state.reset(keep_potentials=config.carry_potentials)

    T = config.timesteps
    v_thr = config.v_thr
    settle = np.ones(batch, dtype=np.int64)
    prev_choice = None
    for t in range(1, T + 1):
        step(state, net, frames)
        if config.readout == "robust":
            score = state.counts[-1].reshape(batch, -1) * v_thr \
                + state.potentials[-1].reshape(batch, -1)
        else:
            score = state.counts[-1].reshape(batch, -1)
        choice = np.argmax(score, axis=1)
        if prev_choice is not None:
            settle[choice != prev_choice] = t
        prev_choice = choice

    rates = [c / T for c in state.counts]
    residuals = [v / T for v in state.potentials]
    avg_currents = [z / (T * v_thr) for z in state.current_sums]
    rate_last = rates[-1].reshape(batch, -1)
    f_last = rate_last + state.potentials[-1].reshape(batch, -1) / (T * v_thr)
    return SimResult(timesteps=T, v_thr=v_thr, readout=config.readout,
                     rates=rates, residuals=residuals, avg_currents=avg_currents,
                     rate_last=rate_last, f_last=f_last, settle_step=settle)


def run(net: NetworkSpec, frame: np.ndarray, config: SimConfig,
        state: Optional[SimState] = None) -> SimResult:
    """Simulate a single frame; like run_batch but without the batch axis."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != net.input_shape:
        raise ValueError(f"frame shape {frame.shape} does not match network input "
                         f"{net.input_shape}")
    res = run_batch(net, frame[None], config, state=state)
    return SimResult(
        timesteps=res.timesteps, v_thr=res.v_thr, readout=res.readout,
        rates=[r[0] for r in res.rates],
        residuals=[r[0] for r in res.residuals],
        avg_currents=[z[0] for z in res.avg_currents],
        rate_last=res.rate_last[0], f_last=res.f_last[0],
        settle_step=res.settle_step[0],
    )


def rate_readout(result: SimResult) -> np.ndarray:
    """Output-layer firing rates; every value lies in [0, 1]."""
    return result.rate_last


def robust_readout(result: SimResult) -> np.ndarray:
    """Output rates plus leftover potential over (T * v_thr).

    Equals the affine map of the previous layer's rates exactly, so it
    is independent of output-layer spike timing and breaks rate ties.
    """
    return result.f_last


def readout(result: SimResult, kind: Optional[str] = None) -> np.ndarray:
    kind = result.readout if kind is None else kind
    if kind not in READOUTS:
        raise ValueError(f"readout must be one of {READOUTS}, got {kind!r}")
    return result.rate_last if kind == "rate" else result.f_last


def simulate_current_sequence(currents: np.ndarray, v_thr: float = 1.0
                              ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Drive bare neurons with an arbitrary current sequence.

    currents: [timesteps, *neurons].  Returns (spike counts, final
    potentials, summed currents), each shaped like one time slice.
    """
    currents = np.asarray(currents, dtype=np.float64)
    if currents.ndim < 1 or currents.shape[0] < 1:
        raise ValueError("need at least one timestep of currents")
    shape = currents.shape[1:]
    potentials = np.zeros(shape)
    counts = np.zeros(shape, dtype=np.int64)
    total = np.zeros(shape)
    for t in range(currents.shape[0]):
        z = currents[t]
        spikes = if_step(potentials, z, v_thr)
        counts += spikes.astype(np.int64)
        total += z
    return counts, potentials, total


def layer_identity_residual(result: SimResult, net: NetworkSpec,
                            frame: Optional[np.ndarray] = None) -> list[float]:
    """Max deviation, per population, from the rate bookkeeping identity.

    Population l >= 1: rate_l vs (affine_l(rate_{l-1}) - residual_l) / v_thr.
    Population 0: rate_0 vs (input - residual_0) / v_thr, where the input
    is the given frame or, if omitted, the measured average current.
    With float64 accumulation these sit at rounding level (<= 1e-9);
    anything larger means the simulation and the network disagree.
    """
    stages = _build_stages(net)
    if len(stages) + 1 != len(result.rates):
        raise ValueError("result does not belong to this network")
    v_thr = result.v_thr
    batched = result.rates[0].ndim == len(net.input_shape) + 1

    if frame is not None:
        drive0 = np.asarray(frame, dtype=np.float64)
    else:
        drive0 = result.avg_currents[0] * v_thr
    residuals = [float(np.max(np.abs(result.rates[0] - (drive0 - result.residuals[0]) / v_thr)))]

    for j, stage in enumerate(stages, start=1):
        r_prev = result.rates[j - 1]
        if stage.flatten_input:
            r_prev = r_prev.reshape(r_prev.shape[0], -1) if batched else r_prev.reshape(-1)
        if not batched:
            r_prev = r_prev[None]
        z = apply_layer_linear(stage.layer, r_prev, stage.weights64, stage.bias64)
        if not batched:
            z = z[0]
        pred = (z - result.residuals[j]) / v_thr
        residuals.append(float(np.max(np.abs(result.rates[j] - pred))))
    return residuals


CASE_KEYS = ("pos_drive_nonneg_leftover", "pos_drive_neg_leftover",
             "nonpos_drive_neg_leftover", "nonpos_drive_nonneg_leftover",
             "impossible")


def classify_case_counts(avg_current: np.ndarray, residual: np.ndarray) -> dict[str, int]:
    """Bucket neurons by the sign of their average drive and leftover potential.

    A neuron whose total input is non-positive cannot end with a strictly
    positive potential; such neurons are tallied under "impossible" (and
    also under the nonneg-leftover bucket they nominally fall in).
    """
    R = np.asarray(avg_current)
    dV = np.asarray(residual)
    pos = R > 0
    neg_left = dV < 0
    return {
        "pos_drive_nonneg_leftover": int(np.count_nonzero(pos & ~neg_left)),
        "pos_drive_neg_leftover": int(np.count_nonzero(pos & neg_left)),
        "nonpos_drive_neg_leftover": int(np.count_nonzero(~pos & neg_left)),
        "nonpos_drive_nonneg_leftover": int(np.count_nonzero(~pos & ~neg_left)),
        "impossible": int(np.count_nonzero(~pos & (dV > 0))),
    }


def classify_residual_cases(result: SimResult) -> dict[str, int]:
    """Case counts summed over every neuron of every population."""
    totals = dict.fromkeys(CASE_KEYS, 0)
    for R, dV in zip(result.avg_currents, result.residuals):
        counts = classify_case_counts(R, dV)
        for key in CASE_KEYS:
            totals[key] += counts[key]
    return totals


def diagnostics(result: SimResult, net: NetworkSpec,
                frame: Optional[np.ndarray] = None) -> dict:
    """JSON-ready per-run diagnostic summary."""
    return {
        "timesteps": result.timesteps,
        "v_thr": result.v_thr,
        "readout": result.readout,
        "readout_vector": [float(x) for x in np.atleast_2d(readout(result))[0]],
        "mean_rate_per_layer": [float(np.mean(r)) for r in result.rates],
        "identity_residuals": layer_identity_residual(result, net, frame=frame),
        "case_counts": classify_residual_cases(result),
        "settle_step": int(np.max(result.settle_step)),
    }
