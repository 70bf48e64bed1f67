"""Command-line front end: INI-configured experiments, fixed-format CSV out.

One experiment per invocation. The config file carries the full encoder
description plus one section per experiment; ``--set section.key=value``
patches any declared key. Physical quantities carry their SI unit as a
key suffix (``i_ref_a``, ``c_m_f``, ``t_rf_s``) so a config can never be
misread by three decades.

Exit codes: 0 success, 2 usage or config-parse trouble, 3 invalid
configuration values, 4 solver or simulation failure. CSV cells are
written as 9-significant-digit scientific notation with LF endings, so
repeated runs are byte-identical.
"""

from __future__ import annotations

import argparse
import configparser
import io
import os
import sys
from pathlib import Path

import numpy as np

from .analysis import power_estimate, small_signal, thd, vf_curve
from .bias_tuner import TuneSpec, tune
from .device_model import DeviceParams
from .neuron import NeuronConfig, neuron_biases_from_voltages
from .sim_engine import EncoderConfig, SolverConfig, Waveform, transient
from .transconductor import (
    TransconductorConfig,
    dc_sweep,
    effective_gm,
    output_current,
    raw_pair_output_current,
)

__all__ = [
    "main",
    "load_config",
    "apply_overrides",
    "serialize_config",
    "build_encoder",
]

_COMMANDS = ("dc-sweep", "transient", "vf-curve", "thd", "freq", "power", "tune")

_DEVICE_SCHEMA = {
    "i_spec_a": float,
    "w_over_l": float,
    "n": float,
    "u_t_v": float,
    "v_t0_v": float,
}
_DEVICE_FIELDS = {
    "i_spec_a": "i_spec",
    "w_over_l": "w_over_l",
    "n": "n",
    "u_t_v": "u_t",
    "v_t0_v": "v_t0",
}
_TC_SCHEMA = {
    "i_ref_a": float,
    "mirror_to_branch": float,
    "mirror_to_output": float,
    "epsilon": float,
    "drive_ratio": float,
    "node_shunt_ratio": float,
}
_TC_FIELDS = {
    "i_ref_a": "i_ref",
    "mirror_to_branch": "mirror_to_branch",
    "mirror_to_output": "mirror_to_output",
    "epsilon": "epsilon",
    "drive_ratio": "drive_ratio",
    "node_shunt_ratio": "node_shunt_ratio",
}
_NEURON_SCHEMA = {
    "c_m_f": float,
    "i_g_a": float,
    "i_r_a": float,
    "i_th_a": float,
    "i_reset_a": float,
    "t_rf_s": float,
    "n": float,
    "u_t_v": float,
    "mode": str,
    "i_pf_gain": float,
    "gain_convention": str,
    "v_tu_v": float,
    "v_lk_v": float,
    "v_th_v": float,
}
_NEURON_FIELDS = {
    "c_m_f": "c_m",
    "i_g_a": "i_g",
    "i_r_a": "i_r",
    "i_th_a": "i_th",
    "i_reset_a": "i_reset",
    "t_rf_s": "t_rf",
    "n": "n",
    "u_t_v": "u_t",
    "mode": "mode",
    "i_pf_gain": "i_pf_gain",
    "gain_convention": "gain_convention",
}
_VOLTAGE_BIAS_KEYS = ("v_tu_v", "v_lk_v", "v_th_v")
_CURRENT_BIAS_KEYS = ("i_g_a", "i_r_a", "i_th_a")


class UsageError(Exception):
    """Malformed invocation: bad flags, missing file, unparseable config."""


def load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path!r}: {exc}") from exc
    except configparser.Error as exc:
        raise UsageError(f"config parse error in {path!r}: {exc}") from exc
    return cp


def apply_overrides(cp: configparser.ConfigParser, overrides) -> None:
    """Patch declared keys in place; undeclared targets are rejected."""
    for item in overrides:
        target, sep, value = item.partition("=")
        section, dot, key = target.partition(".")
        if not sep or not dot or not section or not key:
            raise UsageError(f"override {item!r} is not of the form section.key=value")
        if not cp.has_section(section):
            raise ValueError(f"override targets unknown section {section!r}")
        if not cp.has_option(section, key):
            raise ValueError(f"override targets undeclared key {section}.{key}")
        cp.set(section, key, value)


def serialize_config(cp: configparser.ConfigParser) -> str:
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _parse_bool(raw: str, key: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"key {key}: cannot parse {raw!r} as a boolean")


def _read_section(cp, name: str, schema: dict[str, type], required=()) -> dict:
    """Typed view of one section; unknown keys and bad literals error out."""
    raw = dict(cp[name]) if cp.has_section(name) else {}
    unknown = set(raw) - set(schema)
    if unknown:
        raise ValueError(f"section [{name}] has unknown keys {sorted(unknown)!r}")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ValueError(f"section [{name}] is missing required keys {missing!r}")
    out = {}
    for key, raw_value in raw.items():
        kind = schema[key]
        try:
            if kind is bool:
                out[key] = _parse_bool(raw_value, f"{name}.{key}")
            elif kind is str:
                out[key] = raw_value.strip()
            else:
                out[key] = kind(raw_value)
        except ValueError as exc:
            raise ValueError(
                f"key {name}.{key}: cannot parse {raw_value!r} as {kind.__name__}"
            ) from exc
    return out


def build_encoder(cp: configparser.ConfigParser) -> EncoderConfig:
    dev_kw = {
        _DEVICE_FIELDS[k]: v
        for k, v in _read_section(cp, "device", _DEVICE_SCHEMA).items()
    }
    dev = DeviceParams(**dev_kw)

    tc_kw = {
        _TC_FIELDS[k]: v
        for k, v in _read_section(cp, "transconductor", _TC_SCHEMA).items()
    }
    tc = TransconductorConfig(dev=dev, **tc_kw)

    neuron_raw = _read_section(cp, "neuron", _NEURON_SCHEMA)
    voltage_keys = [k for k in _VOLTAGE_BIAS_KEYS if k in neuron_raw]
    if voltage_keys:
        if len(voltage_keys) != len(_VOLTAGE_BIAS_KEYS):
            raise ValueError(
                f"voltage-domain neuron bias needs all of {_VOLTAGE_BIAS_KEYS}, "
                f"got only {voltage_keys!r}"
            )
        conflicts = [k for k in _CURRENT_BIAS_KEYS if k in neuron_raw]
        if conflicts:
            raise ValueError(
                f"neuron bias given both as voltages and as currents: {conflicts!r}"
            )
        i_g, i_r, i_th = neuron_biases_from_voltages(
            dev,
            neuron_raw.pop("v_tu_v"),
            neuron_raw.pop("v_lk_v"),
            neuron_raw.pop("v_th_v"),
        )
        neuron_raw.update({"i_g_a": i_g, "i_r_a": i_r, "i_th_a": i_th})
    neuron = NeuronConfig(**{_NEURON_FIELDS[k]: v for k, v in neuron_raw.items()})

    enc_raw = _read_section(cp, "encoder", {"input_pole_capacitance_f": float})
    return EncoderConfig(
        transconductor=tc,
        neuron=neuron,
        input_pole_capacitance=enc_raw.get("input_pole_capacitance_f"),
    )


def _build_solver(cp) -> SolverConfig | None:
    raw = _read_section(cp, "solver", {"dt_s": float, "event_tol_s": float})
    if not raw:
        return None
    if "dt_s" not in raw:
        raise ValueError("section [solver] needs dt_s when present")
    dt = raw["dt_s"]
    return SolverConfig(dt=dt, event_tol=raw.get("event_tol_s", min(1e-9, 0.1 * dt)))


def _fmt(x: float) -> str:
    return format(float(x), ".8e")


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(c if isinstance(c, str) else _fmt(c) for c in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii", newline="")


def _out_path(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(args.command.replace("-", "_") + ".csv")


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _grid(lo: float, hi: float, n: int) -> list[float]:
    if n < 2:
        raise ValueError(f"n_points must be >= 2, got {n}")
    if not hi > lo:
        raise ValueError(f"grid needs v_stop > v_start, got {lo!r}, {hi!r}")
    return [float(v) for v in np.linspace(lo, hi, n)]


def _cmd_dc_sweep(cp, args) -> int:
    enc = build_encoder(cp)
    sec = _read_section(
        cp,
        "dc-sweep",
        {"v_start_v": float, "v_stop_v": float, "n_points": int},
        required=("v_start_v", "v_stop_v", "n_points"),
    )
    grid = _grid(sec["v_start_v"], sec["v_stop_v"], sec["n_points"])
    points = dc_sweep(enc.transconductor, grid)
    out = _out_path(args)
    _write_csv(out, ("v_id_v", "i_out_a"), points)
    gm = effective_gm(enc.transconductor)
    _say(args, f"dc-sweep: {len(points)} points, effective gm {gm:.4e} A/V -> {out}")
    return 0


def _waveform_from_section(sec: dict) -> Waveform:
    kind = sec.get("kind", "dc")
    if kind == "pwl":
        raw = sec.get("pwl_points", "")
        breakpoints = []
        for chunk in filter(None, (p.strip() for p in raw.split(";"))):
            t_raw, colon, v_raw = chunk.partition(":")
            if not colon:
                raise ValueError(f"pwl point {chunk!r} is not of the form t:v")
            breakpoints.append((float(t_raw), float(v_raw)))
        return Waveform(kind="pwl", breakpoints=tuple(breakpoints))
    return Waveform(
        kind=kind,
        amplitude=sec.get("amplitude_v", 0.0),
        offset=sec.get("offset_v", 0.0),
        frequency=sec.get("frequency_hz", 0.0),
    )


def _cmd_transient(cp, args) -> int:
    enc = build_encoder(cp)
    sec = _read_section(
        cp,
        "transient",
        {
            "kind": str,
            "amplitude_v": float,
            "offset_v": float,
            "frequency_hz": float,
            "t_end_s": float,
            "trace_every": int,
            "pwl_points": str,
        },
        required=("t_end_s",),
    )
    wave = _waveform_from_section(sec)
    res = transient(
        enc,
        wave,
        sec["t_end_s"],
        solver=_build_solver(cp),
        trace_every=sec.get("trace_every", 10),
    )
    out = _out_path(args)
    _write_csv(out, ("t_s", "v_id_v", "i_in_a", "i_mem_a"), res.trace)
    spikes_path = out.with_suffix(".spikes")
    spikes_path.write_text(
        "".join(_fmt(t) + "\n" for t in res.spikes.times), encoding="ascii", newline=""
    )
    n = len(res.spikes)
    mean_rate = n / sec["t_end_s"]
    _say(
        args,
        f"transient: {n} spikes over {sec['t_end_s']:.4e} s "
        f"(mean rate {mean_rate:.4e} Hz) -> {out}, {spikes_path}",
    )
    return 0


def _cmd_vf_curve(cp, args) -> int:
    enc = build_encoder(cp)
    sec = _read_section(
        cp,
        "vf-curve",
        {
            "v_start_v": float,
            "v_stop_v": float,
            "n_points": int,
            "settle_time_s": float,
            "measure_time_s": float,
            "window_lo_v": float,
            "window_hi_v": float,
        },
        required=(
            "v_start_v",
            "v_stop_v",
            "n_points",
            "settle_time_s",
            "measure_time_s",
            "window_lo_v",
            "window_hi_v",
        ),
    )
    window = (sec["window_lo_v"], sec["window_hi_v"])
    curve = vf_curve(
        enc,
        _grid(sec["v_start_v"], sec["v_stop_v"], sec["n_points"]),
        sec["settle_time_s"],
        sec["measure_time_s"],
        window,
        solver=_build_solver(cp),
        jobs=_resolve_jobs(args),
    )
    flagged = set(curve.flagged)
    rows = [
        (v, r, "1" if window[0] <= v <= window[1] else "0", "1" if v in flagged else "0")
        for v, r in curve.points
    ]
    out = _out_path(args)
    _write_csv(out, ("v_in_v", "rate_hz", "in_window", "flagged"), rows)
    in_rates = [r for v, r in curve.points if window[0] <= v <= window[1]]
    _say(
        args,
        f"vf-curve: max deviation {100.0 * curve.max_deviation_fraction:.3f} % over "
        f"({window[0]:g}, {window[1]:g}) V, fit {curve.fit_slope:.4e} Hz/V, "
        f"window rates {min(in_rates):.4e}..{max(in_rates):.4e} Hz, "
        f"{len(curve.flagged)} flagged -> {out}",
    )
    return 0


def _cmd_thd(cp, args) -> int:
    enc = build_encoder(cp)
    sec = _read_section(
        cp,
        "thd",
        {
            "amplitude_v": float,
            "offset_v": float,
            "points_per_period": int,
            "n_periods": int,
            "n_harmonics": int,
        },
        required=("amplitude_v", "points_per_period"),
    )
    amp = sec["amplitude_v"]
    offset = sec.get("offset_v", 0.0)
    ppp = sec["points_per_period"]
    periods = sec.get("n_periods", 1)
    n_harmonics = sec.get("n_harmonics", 9)
    if ppp < 2 or periods < 1:
        raise ValueError("points_per_period must be >= 2 and n_periods >= 1")

    # The transfer is memoryless, so the drive frequency is immaterial;
    # normalize to f0 = 1 Hz and fs = points_per_period.
    phase = np.arange(ppp * periods) / ppp
    v_in = offset + amp * np.sin(2.0 * np.pi * phase)
    linearized = [output_current(enc.transconductor, float(v)) for v in v_in]
    raw = [raw_pair_output_current(enc.transconductor, float(v)) for v in v_in]
    report = thd(linearized, 1.0, float(ppp), n_harmonics=n_harmonics)
    report_raw = thd(raw, 1.0, float(ppp), n_harmonics=n_harmonics)

    rows = [("1", report.fundamental_amplitude)]
    rows += [
        (str(k + 2), h) for k, h in enumerate(report.harmonic_amplitudes)
    ]
    out = _out_path(args)
    _write_csv(out, ("harmonic_index", "amplitude_a"), rows)
    _say(
        args,
        f"thd: {100.0 * report.thd_fraction:.4f} % linearized, "
        f"{100.0 * report_raw.thd_fraction:.4f} % raw pair at "
        f"{amp:g} V amplitude -> {out}",
    )
    return 0


def _cmd_freq(cp, args) -> int:
    enc = build_encoder(cp)
    sec = _read_section(
        cp,
        "freq",
        {"r_out_ohm": float, "c_load_f": float},
        required=("r_out_ohm", "c_load_f"),
    )
    gain_db, f_unity = small_signal(enc.transconductor, sec["r_out_ohm"], sec["c_load_f"])
    out = _out_path(args)
    _write_csv(
        out,
        ("quantity", "value"),
        [
            ("dc_gain_db", gain_db),
            ("f_unity_hz", f_unity),
            ("effective_gm_a_per_v", effective_gm(enc.transconductor)),
        ],
    )
    _say(args, f"freq: {gain_db:.2f} dB dc gain, unity gain at {f_unity:.4e} Hz -> {out}")
    return 0


def _cmd_power(cp, args) -> int:
    enc = build_encoder(cp)
    sec = _read_section(
        cp,
        "power",
        {"f_spikes_hz": str, "k_static": int, "c_dyn_f": float},
        required=("f_spikes_hz",),
    )
    try:
        f_spikes = [float(x) for x in sec["f_spikes_hz"].split(",") if x.strip()]
    except ValueError as exc:
        raise ValueError(f"power.f_spikes_hz: {exc}") from exc
    if not f_spikes:
        raise ValueError("power.f_spikes_hz lists no frequencies")
    kw = {}
    if "k_static" in sec:
        kw["k_static"] = sec["k_static"]
    if "c_dyn_f" in sec:
        kw["c_dyn"] = sec["c_dyn_f"]
    rows = [(f, power_estimate(enc, f, **kw)) for f in f_spikes]
    out = _out_path(args)
    _write_csv(out, ("f_spike_hz", "power_w"), rows)
    powers = [p for _, p in rows]
    _say(
        args,
        f"power: {min(powers) * 1e9:.3f}..{max(powers) * 1e9:.3f} nW over "
        f"{len(rows)} spike rates -> {out}",
    )
    return 0


def _cmd_tune(cp, args) -> int:
    enc = build_encoder(cp)
    if not cp.has_section("tune"):
        raise ValueError("section [tune] is required for the tune command")
    raw = dict(cp["tune"])
    names = [v.strip() for v in raw.get("variables", "").split(",") if v.strip()]
    if not names:
        raise ValueError("tune.variables must list at least one parameter")
    # bounds keys for every tunable are declarable; only the selected
    # variables' bounds are required
    schema = {"variables": str, "objective": str, "budget": int, "seed": int}
    for name in ("i_ref", "i_g", "i_r", "i_th", "t_rf"):
        suffix = "s" if name == "t_rf" else "a"
        schema[f"{name}_lo_{suffix}"] = float
        schema[f"{name}_hi_{suffix}"] = float
    sec = _read_section(cp, "tune", schema, required=("variables", "budget"))
    variables = {}
    for name in names:
        suffix = "s" if name == "t_rf" else "a"
        lo_key, hi_key = f"{name}_lo_{suffix}", f"{name}_hi_{suffix}"
        if lo_key not in sec or hi_key not in sec:
            raise ValueError(f"tune needs {lo_key} and {hi_key} for variable {name!r}")
        variables[name] = (sec[lo_key], sec[hi_key])
    spec = TuneSpec(
        variables=variables,
        objective=sec.get("objective", "linearity_error"),
        budget=sec["budget"],
        seed=sec.get("seed", 0),
    )
    result = tune(enc, spec)
    order = sorted(variables)
    rows = [
        (str(k), *(point[name] for name in order), value)
        for k, (point, value) in enumerate(result.trace)
    ]
    out = _out_path(args)
    _write_csv(out, ("evaluation", *order, "objective"), rows)
    best = ", ".join(f"{name}={result.best_point[name]:.4e}" for name in order)
    _say(
        args,
        f"tune: best objective {result.best_objective:.6f} after "
        f"{result.evaluations} evaluations at {best} -> {out}",
    )
    return 0


_COMMAND_FNS = {
    "dc-sweep": _cmd_dc_sweep,
    "transient": _cmd_transient,
    "vf-curve": _cmd_vf_curve,
    "thd": _cmd_thd,
    "freq": _cmd_freq,
    "power": _cmd_power,
    "tune": _cmd_tune,
}


def _resolve_jobs(args) -> int:
    if args.jobs is not None:
        jobs = args.jobs
    else:
        env = os.environ.get("ENCODER_SIM_JOBS", "").strip()
        if env:
            try:
                jobs = int(env)
            except ValueError as exc:
                raise UsageError(f"ENCODER_SIM_JOBS={env!r} is not an integer") from exc
        else:
            jobs = os.cpu_count() or 1
    if jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {jobs}")
    return jobs


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="encoder-sim",
        description="Spike-encoder experiments: DC transfer, distortion, "
        "transient encoding, rate curves, small-signal figures, power, "
        "and bias tuning.",
    )
    parser.add_argument("command", choices=_COMMANDS, help="experiment to run")
    parser.add_argument("--config", required=True, help="INI experiment description")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a declared config key (repeatable)",
    )
    parser.add_argument("--out", help="output CSV path (default: <command>.csv)")
    parser.add_argument(
        "--jobs",
        type=int,
        default=None,
        help="worker processes for per-point sweeps "
        "(default: ENCODER_SIM_JOBS or the logical core count)",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress the summary line")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cp = load_config(args.config)
        apply_overrides(cp, args.set)
        return _COMMAND_FNS[args.command](cp, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
