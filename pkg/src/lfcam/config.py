"""Plain key=value run configuration.

One option per line, ``#`` starts a comment, keys are dotted paths
(``train.lr=0.003``).  The schema below is closed: unknown keys are
rejected instead of silently ignored, and every run echoes its fully
resolved configuration into the output directory so artifacts are
self-describing and diffable.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .core import Dims
from .nets import AcqNetConfig, RecNetConfig
from .train import TrainConfig


class ConfigError(ValueError):
    code = "bad-config"


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_floats(s: str) -> tuple[float, ...]:
    if not s.strip():
        return ()
    return tuple(float(x) for x in s.split(","))


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "dims.n_u": (int, 3),
    "dims.n_v": (int, 3),
    "dims.n_x": (int, 32),
    "dims.n_y": (int, 32),
    "dims.n_t": (int, 2),
    "variant": (str, "A+P"),
    "seed": (int, 0),
    "train.steps": (int, 500),
    "train.lr": (float, 3e-3),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-8),
    "train.batch_size": (int, 8),
    "train.noise_sigma": (float, 0.005),
    "train.tau_start": (float, 1.0),
    "train.tau_end": (float, 10.0),
    "train.checkpoint_every": (int, 0),
    "train.audit_every": (int, 0),
    "train.region_timing": (_parse_bool, False),
    "net.kernel": (int, 3),
    "net.refine_layers": (int, 19),
    "net.channel_mult": (float, 1.0),
    "net.depth_mult": (float, 0.25),
    "data.n_textures": (int, 2),
    "data.disparities": (_parse_floats, (0.5,)),
    "data.scales": (_parse_floats, (1.0,)),
    "data.patch": (int, 32),
    "data.stride": (int, 6),
    "data.margin": (int, 3),
    "data.source_size": (int, 44),
    "eval.crop": (int, 8),
    "eval.n_scenes": (int, 7),
    "eval.alpha_axis": (_parse_floats, (-2.0, -1.0, 0.0, 1.0, 2.0)),
    "eval.d_axis": (_parse_floats, (0.0, 0.5, 1.0, 1.5, 2.0)),
    "psf.alphas": (_parse_floats, (0.0, 2.0)),
    "psf.ds": (_parse_floats, (0.0, 2.0)),
    "paths.checkpoint": (str, ""),
}


@dataclass
class RunConfig:
    """Immutable view of one run's resolved options."""

    values: dict

    def __getitem__(self, key: str):
        return self.values[key]

    # -- typed accessors ------------------------------------------------------

    def dims(self) -> Dims:
        v = self.values
        return Dims(n_u=v["dims.n_u"], n_v=v["dims.n_v"], n_x=v["dims.n_x"],
                    n_y=v["dims.n_y"], n_t=v["dims.n_t"])

    def acqnet_config(self) -> AcqNetConfig:
        return AcqNetConfig(dims=self.dims(), variant=self.values["variant"],
                            noise_sigma=self.values["train.noise_sigma"],
                            region_timing=self.values["train.region_timing"])

    def recnet_config(self) -> RecNetConfig:
        v = self.values
        return RecNetConfig(dims=self.dims(), kernel=v["net.kernel"],
                            refine_layers=v["net.refine_layers"],
                            channel_mult=v["net.channel_mult"],
                            depth_mult=v["net.depth_mult"])

    def train_config(self) -> TrainConfig:
        v = self.values
        return TrainConfig(steps=v["train.steps"], lr=v["train.lr"],
                           beta1=v["train.beta1"], beta2=v["train.beta2"],
                           eps=v["train.eps"], batch_size=v["train.batch_size"],
                           noise_sigma=v["train.noise_sigma"],
                           tau_start=v["train.tau_start"],
                           tau_end=v["train.tau_end"], seed=v["seed"],
                           checkpoint_every=v["train.checkpoint_every"],
                           audit_every=v["train.audit_every"])

    # -- serialization ---------------------------------------------------------

    def echo_lines(self) -> list[str]:
        out = []
        for key in sorted(self.values):
            val = self.values[key]
            if isinstance(val, tuple):
                val = ",".join(f"{x:g}" for x in val)
            elif isinstance(val, bool):
                val = "true" if val else "false"
            out.append(f"{key}={val}")
        return out

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.echo_lines()) + "\n", encoding="ascii")


def parse_assignment(line: str) -> tuple[str, str]:
    if "=" not in line:
        raise ConfigError(f"expected key=value, got {line!r}")
    key, _, raw = line.partition("=")
    return key.strip(), raw.strip()


def load_config(path=None, overrides=()) -> RunConfig:
    """Resolve defaults <- config file <- override assignments, in order."""
    values = {key: default for key, (_, default) in SCHEMA.items()}

    def apply(key: str, raw: str, where: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r} ({where})")
        parser = SCHEMA[key][0]
        try:
            values[key] = parser(raw)
        except ConfigError:
            raise
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r} ({where}): {e}") from e

    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, raw = parse_assignment(line)
            apply(key, raw, f"{path}:{lineno}")
    for ov in overrides:
        key, raw = parse_assignment(ov)
        apply(key, raw, "command line")
    return RunConfig(values)
