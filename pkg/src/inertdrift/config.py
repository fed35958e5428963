"""Experiment configuration: an INI file with one section per concern.

``[model]``, ``[step]`` and ``[run]`` are shared; each command reads its own
section of the same name.  Keys outside the schema are rejected, every value
is typed, and ``ExperimentConfig.to_text`` writes back a file that parses to
an equal config.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field

from .integrator import StepConfig
from .model import ModelParams

COMMANDS = ("simulate", "cycles", "stationary", "tails", "fluctuations", "lln",
            "ergodicity", "bounds", "oracle", "convergence")


class ConfigError(ValueError):
    """Invalid configuration (exit status 2)."""


# value kinds: float, int, bool, str, "floats" (comma list), "pairs" (a,b; c,d), "opt_float"
SCHEMA = {
    "model": {"gamma": (float, 1.0), "g": (float, 1.0), "gamma_zero_mode": (bool, False)},
    "step": {"dt": (float, 1e-3), "max_steps": (int, 10**10), "record_stride": (int, 1)},
    "run": {"command": (str, ""), "seed": (int, 0), "workers": (int, 1),
            "output_dir": (str, "out")},
    "simulate": {"h0": (float, 0.0), "v0": ("opt_float", None), "horizon": (float, 10.0)},
    "cycles": {"n_cycles": (int, 10_000), "n_lanes": (int, 1), "t_cap": (float, 1e4)},
    "stationary": {"n_cycles": (int, 10_000), "n_lanes": (int, 1), "nh": (int, 200),
                   "nv": (int, 200), "pilot_cycles": (int, 500), "burn_in": (float, 100.0)},
    "tails": {"n_cycles": (int, 100_000), "n_lanes": (int, 1), "q_hi": (float, 0.1),
              "q_lo": (float, 1e-5), "min_effective": (int, 200), "escalate": (bool, True)},
    "fluctuations": {"n_steps": (int, 10**7), "per_decade": (int, 8), "h0": (float, 0.0),
                     "v0": ("opt_float", None), "upper_slack": (float, 1.1),
                     "lower_slack": (float, 0.5)},
    "lln": {"n_seeds": (int, 20), "horizon": (float, 1e5), "checkpoints": ("floats", (1e3, 1e4)),
            "h0": (float, 0.0), "v0": ("opt_float", None)},
    "ergodicity": {"inits": ("pairs", ((5.0, 2.0), (3.0, -0.5))), "t_max": (float, 25.0),
                   "t_step": (float, 0.5), "n_chains": (int, 10_000),
                   "pi_cycles": (int, 50_000), "nh": (int, 30), "nv": (int, 30)},
    "bounds": {"trial_factor": (float, 1.0), "specs": ("strs", ())},
    "oracle": {"n_samples": (int, 10_000), "spacing": (float, 5.0), "burn_in": (float, 50.0),
               "bridge": (bool, True), "control_gamma": (float, 1.0)},
    "convergence": {"h0": (float, 0.5), "v0": (float, -0.5), "horizon": (float, 1.0),
                    "dts": ("floats", (4e-3, 2e-3, 1e-3)), "n_paths": (int, 50),
                    "ref_factor": (int, 16),
                    "perturbations": ("floats", (1e-6, 1e-5, 1e-4, 1e-3)),
                    "n_seeds": (int, 10)},
}


def _parse(kind, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            try:
                return int(raw)
            except ValueError:
                f = float(raw)          # accept 1e5 style counts
                if not f.is_integer():
                    raise
                return int(f)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind == "opt_float":
            return None if raw.lower() in ("", "none") else float(raw)
        if kind == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if kind == "strs":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        if kind == "pairs":
            out = []
            for item in raw.split(";"):
                if item.strip():
                    a, b = item.split(",")
                    out.append((float(a), float(b)))
            return tuple(out)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None
    raise ConfigError(f"{where}: unknown kind {kind}")


def _format(kind, value) -> str:
    if kind is bool:
        return "true" if value else "false"
    if kind is float:
        return repr(float(value))
    if kind == "opt_float":
        return "none" if value is None else repr(float(value))
    if kind == "floats":
        return ", ".join(repr(float(x)) for x in value)
    if kind == "strs":
        return ", ".join(value)
    if kind == "pairs":
        return "; ".join(f"{a!r}, {b!r}" for a, b in value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    params: ModelParams = field(default_factory=ModelParams)
    step: StepConfig = field(default_factory=lambda: StepConfig(dt=1e-3))
    seed: int = 0
    workers: int = 1
    output_dir: str = "out"
    args: tuple = ()          # sorted (key, value) pairs of the command section

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {COMMANDS}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if not 0 <= self.seed < 2**63:
            raise ConfigError("seed must lie in [0, 2**63)")

    @property
    def arg(self) -> dict:
        return dict(self.args)

    @classmethod
    def from_text(cls, text: str, command: str | None = None) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"malformed config: {e}") from None
        values: dict = {}
        for sec in cp.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            for key, raw in cp[sec].items():
                if key not in SCHEMA[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                values[(sec, key)] = _parse(SCHEMA[sec][key][0], raw, f"[{sec}] {key}")

        def get(sec, key):
            return values.get((sec, key), SCHEMA[sec][key][1])

        cmd = get("run", "command")
        if command is not None:
            if cmd and cmd != command:
                raise ConfigError(f"config is for {cmd!r}, not {command!r}")
            cmd = command
        if not cmd:
            raise ConfigError("no command given")
        if cmd not in COMMANDS:
            raise ConfigError(f"unknown command {cmd!r}")
        for sec, _ in values:
            if sec in COMMANDS and sec != cmd:
                raise ConfigError(f"section [{sec}] does not apply to command {cmd!r}")
        try:
            params = ModelParams(get("model", "gamma"), get("model", "g"),
                                 get("model", "gamma_zero_mode"))
            step = StepConfig(get("step", "dt"), get("step", "max_steps"),
                              get("step", "record_stride"))
        except ValueError as e:
            raise ConfigError(str(e)) from None
        args = tuple(sorted((k, get(cmd, k)) for k in SCHEMA[cmd]))
        cfg = cls(cmd, params, step, get("run", "seed"), get("run", "workers"),
                  get("run", "output_dir"), args)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, command: str | None = None) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from None
        return cls.from_text(text, command)

    def to_text(self) -> str:
        p, s = self.params, self.step
        secs = {
            "run": {"command": self.command, "seed": self.seed, "workers": self.workers,
                    "output_dir": self.output_dir},
            "model": {"gamma": p.gamma, "g": p.g, "gamma_zero_mode": p.gamma_zero_mode},
            "step": {"dt": s.dt, "max_steps": s.max_steps, "record_stride": s.record_stride},
            self.command: self.arg,
        }
        lines = []
        for sec, kv in secs.items():
            lines.append(f"[{sec}]")
            for k, v in kv.items():
                lines.append(f"{k} = {_format(SCHEMA[sec][k][0], v)}")
            lines.append("")
        return "\n".join(lines)

    def replace(self, **kw) -> "ExperimentConfig":
        d = {"command": self.command, "params": self.params, "step": self.step,
             "seed": self.seed, "workers": self.workers, "output_dir": self.output_dir,
             "args": self.args}
        d.update(kw)
        return ExperimentConfig(**d)

    def validate(self) -> None:
        """Cross-field checks that the per-key parser cannot make."""
        a = self.arg
        p = self.params
        if p.gamma_zero_mode and self.command not in ("simulate", "oracle", "convergence"):
            raise ConfigError(f"command {self.command!r} needs gamma > 0: the renewal "
                              "levels are undefined without viscosity")
        if self.command == "oracle" and not p.gamma_zero_mode:
            raise ConfigError("oracle compares against the gamma = 0 product law; "
                              "set gamma = 0 and gamma_zero_mode = true")
        for key in ("n_cycles", "n_lanes", "n_seeds", "n_chains", "n_paths", "n_samples",
                    "pi_cycles", "nh", "nv", "n_steps"):
            if key in a and a[key] < 1:
                raise ConfigError(f"{key} must be positive")
        for key in ("horizon", "t_max", "t_step", "spacing", "trial_factor"):
            if key in a and not (math.isfinite(a[key]) and a[key] > 0):
                raise ConfigError(f"{key} must be positive")
        if self.command == "tails" and not 0 < a["q_lo"] < a["q_hi"] < 1:
            raise ConfigError("need 0 < q_lo < q_hi < 1")
        if self.command == "ergodicity" and not a["inits"]:
            raise ConfigError("ergodicity needs at least one initial state")
        if self.command == "convergence" and len(a["dts"]) < 2:
            raise ConfigError("convergence needs at least two time steps")
