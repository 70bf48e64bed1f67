"""Current-mode leaky integrate-and-fire neuron with a DPI input stage.

The membrane state is a current, not a voltage: the differential-pair
integrator (DPI) front end and the exponential device law make the node
voltage a logarithmic readout of the underlying current, so the dynamics
are simplest in the current variable. Two dynamics modes are provided:

- ``nonlinear``: the full DPI form. The input term saturates as the
  membrane current rises past the gain current ``i_g``, and an optional
  positive-feedback term models the regenerative assist.
- ``linear``: the first-order approximation valid when the membrane current
  sits well above ``i_g``: a plain RC-style relaxation toward ``gain*i_in``.

Spiking is abstracted to a threshold test on the membrane current plus an
instantaneous reset and a fixed refractory period; the regenerative spike
waveform itself is not modeled. Threshold crossing inside an integration
step is located by the simulation engine, not here.

The saturated DPI gain is ``i_g/i_r`` as the derivation gives it. Some
treatments print the reciprocal; ``gain_convention="printed"`` selects that
reading instead of silently correcting either way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .device_model import DeviceParams, drain_current

__all__ = [
    "NeuronConfig",
    "NeuronState",
    "tau_m",
    "membrane_derivative",
    "spike_check",
    "reset",
    "analytic_rate",
    "v_mem_of_i_mem",
    "neuron_biases_from_voltages",
]

_MODES = ("nonlinear", "linear")
_GAIN_CONVENTIONS = ("derived", "printed")


@dataclass(frozen=True)
class NeuronConfig:
    """Bias currents, capacitance and timing of the LIF neuron.

    Attributes
    ----------
    c_m:
        Effective membrane capacitance in farads (includes measurement
        parasitics when mirroring bench conditions).
    i_g:
        DPI gain current in amperes; sets where the input term saturates
        and, together with i_r, the saturated gain.
    i_r:
        Leak (time-constant) current in amperes. Must exceed i_g: the
        useful membrane window lies between the two.
    i_th:
        Membrane-current spike threshold in amperes; abstracts the
        regenerative onset and the adjustable comparator.
    i_reset:
        Post-spike membrane floor in amperes. Strictly positive: zero is a
        trap state of the multiplicative nonlinear dynamics, and the
        logarithmic voltage readout needs a positive argument.
    t_rf:
        Refractory period in seconds; bounds the firing rate by 1/t_rf.
    n, u_t:
        Device slope factor and thermal voltage shared with the rest of
        the encoder.
    mode:
        "nonlinear" (full DPI dynamics) or "linear" (first-order
        approximation).
    i_pf_gain:
        Dimensionless positive-feedback strength in nonlinear mode. The
        default 0 reflects that the feedback is negligible during
        integration and only matters in the (unmodeled) spike itself.
    gain_convention:
        "derived" for gain = i_g/i_r, "printed" for the reciprocal.
    """

    c_m: float = 0.6e-12
    i_g: float = 10e-12
    i_r: float = 0.5e-9
    i_th: float = 72e-12
    i_reset: float = 1e-12
    t_rf: float = 20e-6
    n: float = 1.2
    u_t: float = 0.025
    mode: str = "nonlinear"
    i_pf_gain: float = 0.0
    gain_convention: str = "derived"

    def __post_init__(self) -> None:
        for name in ("c_m", "i_g", "i_r", "i_th", "i_reset"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"NeuronConfig.{name} must be positive and finite, got {value!r}")
        if not (math.isfinite(self.t_rf) and self.t_rf >= 0.0):
            raise ValueError(f"t_rf must be nonnegative, got {self.t_rf!r}")
        if not (math.isfinite(self.n) and self.n > 1.0):
            raise ValueError(f"n must exceed 1, got {self.n!r}")
        if not (math.isfinite(self.u_t) and self.u_t > 0.0):
            raise ValueError(f"u_t must be positive, got {self.u_t!r}")
        if self.i_reset >= self.i_th:
            raise ValueError(
                f"i_reset must lie below i_th, got {self.i_reset!r} >= {self.i_th!r}"
            )
        if self.i_g >= self.i_r:
            raise ValueError(
                f"i_g must lie below i_r (membrane window), got {self.i_g!r} >= {self.i_r!r}"
            )
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {self.mode!r}")
        if self.gain_convention not in _GAIN_CONVENTIONS:
            raise ValueError(
                f"gain_convention must be one of {_GAIN_CONVENTIONS}, got {self.gain_convention!r}"
            )
        if not (math.isfinite(self.i_pf_gain) and self.i_pf_gain >= 0.0):
            raise ValueError(f"i_pf_gain must be nonnegative, got {self.i_pf_gain!r}")

    @property
    def gain(self) -> float:
        """Saturated DPI current gain applied to the input."""
        if self.gain_convention == "derived":
            return self.i_g / self.i_r
        return self.i_r / self.i_g


@dataclass(frozen=True)
class NeuronState:
    """Membrane current and remaining refractory time."""

    i_mem: float
    refractory_remaining: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.i_mem) and self.i_mem >= 0.0):
            raise ValueError(f"i_mem must be nonnegative and finite, got {self.i_mem!r}")
        if not (math.isfinite(self.refractory_remaining) and self.refractory_remaining >= 0.0):
            raise ValueError(
                f"refractory_remaining must be nonnegative, got {self.refractory_remaining!r}"
            )


def tau_m(cfg: NeuronConfig) -> float:
    """Membrane time constant n*u_t*c_m/i_r, seconds."""
    return cfg.n * cfg.u_t * cfg.c_m / cfg.i_r


def membrane_derivative(cfg: NeuronConfig, state: NeuronState, i_in: float) -> float:
    """Time derivative of the membrane current, A/s.

    Nonlinear mode implements the DPI form: the input is scaled by
    (I_mem/i_r)/(1 + I_mem/i_g), which rises from zero, crosses gain/2 at
    I_mem = i_g and saturates at the gain i_g/i_r; the loss term is the
    plain leak minus the optional positive feedback. Linear mode is the
    saturated-regime approximation.
    """
    if not math.isfinite(i_in) or i_in < 0.0:
        raise ValueError(f"i_in must be nonnegative and finite, got {i_in!r}")
    tau = tau_m(cfg)
    i_mem = state.i_mem
    if cfg.mode == "linear":
        return (cfg.gain * i_in - i_mem) / tau
    drive = i_in * (i_mem / cfg.i_r) / (1.0 + i_mem / cfg.i_g)
    i_pf = cfg.i_pf_gain * i_mem
    loss = i_mem * (1.0 - i_pf / cfg.i_r)
    return (drive - loss) / tau


def spike_check(cfg: NeuronConfig, state: NeuronState) -> bool:
    """True when the membrane reached threshold and is not refractory."""
    return state.i_mem >= cfg.i_th and state.refractory_remaining == 0.0


def reset(cfg: NeuronConfig, state: NeuronState) -> NeuronState:
    """Post-spike state: membrane at the floor, full refractory pending."""
    return replace(state, i_mem=cfg.i_reset, refractory_remaining=cfg.t_rf)


def analytic_rate(cfg: NeuronConfig, i_in: float) -> float:
    """Closed-form firing rate of the linear-mode neuron, Hz.

    Valid only in linear mode, where the membrane relaxes exponentially
    toward gain*i_in; the integration time from the reset floor to the
    threshold then has a logarithmic closed form. Subthreshold drive
    (gain*i_in <= i_th) returns 0 by contract.
    """
    if cfg.mode != "linear":
        raise ValueError("analytic_rate applies to linear mode only")
    if not math.isfinite(i_in) or i_in < 0.0:
        raise ValueError(f"i_in must be nonnegative and finite, got {i_in!r}")
    target = cfg.gain * i_in
    if target <= cfg.i_th:
        return 0.0
    t_int = tau_m(cfg) * math.log((target - cfg.i_reset) / (target - cfg.i_th))
    return 1.0 / (cfg.t_rf + t_int)


def v_mem_of_i_mem(cfg: NeuronConfig, i_mem: float, i_0: float) -> float:
    """Logarithmic voltage readout of a membrane current, volts.

    ``i_0`` is the reference current mapping to 0 V.
    """
    if not (math.isfinite(i_mem) and i_mem > 0.0):
        raise ValueError(f"i_mem must be positive, got {i_mem!r}")
    if not (math.isfinite(i_0) and i_0 > 0.0):
        raise ValueError(f"i_0 must be positive, got {i_0!r}")
    return cfg.n * cfg.u_t * math.log(i_mem / i_0)


# Aspect ratios of the bias-generating devices, one per neuron role. The
# published bias settings are voltages; these ratios size each bias device
# so that the quoted voltages produce currents for which the full encoder
# reproduces the published transient behavior (baseline activity near zero
# input, brisk firing at +0.3 V, silence at -0.3 V).
_W_OVER_L_GAIN = 2.2425e-3
_W_OVER_L_LEAK = 8.3205
_W_OVER_L_THRESHOLD = 2.9153e-3


def neuron_biases_from_voltages(
    dev: DeviceParams,
    v_tu: float,
    v_lk: float,
    v_th: float,
    w_over_l_gain: float = _W_OVER_L_GAIN,
    w_over_l_leak: float = _W_OVER_L_LEAK,
    w_over_l_threshold: float = _W_OVER_L_THRESHOLD,
) -> tuple[float, float, float]:
    """Map gate bias voltages to (i_g, i_r, i_th) via the device law.

    Each bias transistor converts its gate voltage to a current through the
    shared exponential model; only the aspect ratios differ per role. The
    returned tuple is (gain current, leak current, threshold current).
    """
    i_g = drain_current(replace(dev, w_over_l=w_over_l_gain), v_tu, 0.0)
    i_r = drain_current(replace(dev, w_over_l=w_over_l_leak), v_lk, 0.0)
    i_th = drain_current(replace(dev, w_over_l=w_over_l_threshold), v_th, 0.0)
    return i_g, i_r, i_th
