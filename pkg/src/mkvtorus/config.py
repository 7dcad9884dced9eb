"""Experiment configuration files and run manifests.

Configs are flat key-value text with section headers (INI); dictionaries may
carry inline coefficient tables for feedback entries.  A resolved config
round-trips through the text format losslessly, and every run directory gets
a manifest echoing it.
"""

from __future__ import annotations

import configparser
import io
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .calculus import ControlDictionary, FeedbackControl
from .dynamics import SimulationConfig
from .fourier import HarmonicFunction


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    family_name: str
    family_params: tuple[tuple[str, float], ...]
    constants: tuple[float, ...]
    fourier_entries: tuple[str, ...]  # inline coefficient tables, one per entry
    c0: float
    simulation: SimulationConfig
    lam: float
    cutoff: int
    out_dir: str

    def to_text(self) -> str:
        cp = configparser.ConfigParser()
        cp["experiment"] = {"id": self.experiment_id, "seed": str(self.simulation.seed), "out": self.out_dir}
        fam = {"name": self.family_name}
        fam.update({k: repr(v) for k, v in self.family_params})
        cp["family"] = fam
        cp["dictionary"] = {
            "constants": " ".join(repr(c) for c in self.constants),
            "c0": repr(self.c0),
        }
        for i, spec in enumerate(self.fourier_entries):
            cp["dictionary"][f"fourier_{i}"] = spec
        cp["simulation"] = {
            "particles": str(self.simulation.particles),
            "dt": repr(self.simulation.dt),
            "t0": repr(self.simulation.t0),
            "t1": repr(self.simulation.t1),
            "dim": str(self.simulation.dim),
            "noise_dim": str(self.simulation.noise_dim),
        }
        cp["metric"] = {"lam": repr(self.lam), "cutoff": str(self.cutoff)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @staticmethod
    def from_text(text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        try:
            exp = cp["experiment"]
            fam = cp["family"]
            dic = cp["dictionary"]
            sim = cp["simulation"]
            met = cp["metric"]
            params = tuple(
                sorted((k, float(v)) for k, v in fam.items() if k != "name")
            )
            constants = tuple(float(tok) for tok in dic.get("constants", "").split())
            fourier = tuple(v for k, v in sorted(dic.items()) if k.startswith("fourier_"))
            simulation = SimulationConfig(
                particles=int(sim["particles"]),
                dt=float(sim["dt"]),
                t0=float(sim["t0"]),
                t1=float(sim["t1"]),
                seed=int(exp["seed"]),
                dim=int(sim.get("dim", "1")),
                noise_dim=int(sim.get("noise_dim", "1")),
            )
            return ExperimentConfig(
                experiment_id=exp["id"],
                family_name=fam["name"],
                family_params=params,
                constants=constants,
                fourier_entries=fourier,
                c0=float(dic.get("c0", "0") or "0"),
                simulation=simulation,
                lam=float(met["lam"]),
                cutoff=int(met["cutoff"]),
                out_dir=exp.get("out", "."),
            )
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"incomplete or malformed config: {exc}") from exc

    def build_dictionary(self) -> ControlDictionary:
        extra = [parse_fourier_entry(spec) for spec in self.fourier_entries]
        c0 = self.c0 if self.c0 > 0 else None
        return ControlDictionary.of_constants(self.constants, c0=c0, dim=self.simulation.dim, extra=extra)

    def build_family(self):
        from .families import family_from_spec

        return family_from_spec(self.family_name, **dict(self.family_params))


def parse_fourier_entry(spec: str, dim: int = 1) -> FeedbackControl:
    """Inline feedback table: "k:re,im; k:re,im; ..." for one control component."""
    pairs = [chunk.strip() for chunk in spec.split(";") if chunk.strip()]
    if not pairs:
        raise ConfigError(f"empty coefficient table {spec!r}")
    entries = []
    try:
        for chunk in pairs:
            kpart, cpart = chunk.split(":")
            k = int(kpart.strip())
            re_s, im_s = cpart.split(",")
            entries.append((k, complex(float(re_s), float(im_s))))
    except ValueError as exc:
        raise ConfigError(f"malformed coefficient table {spec!r}") from exc
    cutoff = max(1, max(abs(k) for k, _ in entries))
    coeffs = np.zeros((2 * cutoff + 1,) * dim, dtype=complex)
    for k, c in entries:
        coeffs[k + cutoff] = c
    table = HarmonicFunction(dim, cutoff, coeffs)
    return FeedbackControl.of_tables((table,), label=f"fourier:{spec}")


# ---------------------------------------------------------------------------
# Run manifests and directory locks
# ---------------------------------------------------------------------------


def worker_cap() -> int:
    """Worker-count cap from the MKV_THREADS environment variable."""
    raw = os.environ.get("MKV_THREADS", "")
    try:
        n = int(raw) if raw else os.cpu_count() or 1
    except ValueError:
        raise ConfigError(f"MKV_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError("MKV_THREADS must be >= 1")
    return n


class RunLock:
    """Exclusive ownership of a run directory via a lock file."""

    def __init__(self, run_dir):
        self.path = os.path.join(run_dir, ".lock")

    def __enter__(self):
        os.makedirs(os.path.dirname(self.path) or ".", exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"run directory is locked by another process: {self.path}")
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        return self

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except FileNotFoundError:
            pass
        return False


def write_manifest(run_dir, config_echo: str, checks: list[tuple[str, bool]], artifacts: list[str], wall_clock: float) -> str:
    """manifest.txt: tool version, config echo, wall clock, check results, artifact list."""
    lines = [
        f"tool mkvtorus {__version__}",
        f"wall_clock_seconds {wall_clock:.3f}",
        f"threads_cap {worker_cap()}",
        "",
        "[config]",
    ]
    lines.extend(config_echo.rstrip("\n").splitlines())
    lines.append("")
    lines.append("[checks]")
    for name, ok in checks:
        lines.append(f"{name} {'PASS' if ok else 'FAIL'}")
    lines.append("")
    lines.append("[artifacts]")
    lines.extend(artifacts)
    path = os.path.join(run_dir, "manifest.txt")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
