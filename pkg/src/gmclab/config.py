"""Experiment configuration: flat INI files with one section per module.

Example::

    [experiment]
    name = demo
    seed = 12345
    samples = 1000

    [kernel]
    seed = bump
    dimension = 1
    delta = 0.5

    [grid]
    n = 32
    radius = 0.5

    [schedule]
    t_max = 6
    step = 0.6931471805599453

    [beta]
    values = 0.3, 0.7, 0.5+0.2j

Every key is validated; errors carry the file and line number.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .grid import GridSpec
from .kernels import SEEDS, KernelSpec

MODULE_SECTIONS = ("kernel-table", "split", "couple", "sample", "gmc", "analytic-scan", "onsager", "selftest")

ALLOWED = {
    "experiment": {"name", "seed", "output", "threads", "samples"},
    "kernel": {"seed", "dimension", "delta", "decay_exponent", "support_radius", "dilation", "lam0"},
    "grid": {"n", "radius"},
    "schedule": {"t_max", "step", "levels"},
    "beta": {"values", "p"},
    "tolerances": {"quad_tol", "clip_tol", "sigma"},
    "kernel-table": {"kind", "t_max", "points", "r_min", "r_max"},
    "split": {"n", "rank", "s"},
    "couple": {"n", "export"},
    "sample": {"sampler", "kind", "format", "export"},
    "gmc": {"mode", "level", "nodes"},
    "analytic-scan": {"levels", "per_scale", "contour_radius"},
    "onsager": {"trials", "n_max", "g", "radius"},
    "selftest": {"quick"},
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_index(text: str) -> dict:
    """``(section, key) -> line number`` and ``(section, None) -> header line``."""
    out = {}
    section = None
    for i, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            section = m.group(1).strip().lower()
            out.setdefault((section, None), i)
            continue
        m = _KEY_RE.match(line)
        if m and section is not None and not line.startswith((" ", "\t")):
            out.setdefault((section, m.group(1).strip().lower()), i)
    return out


@dataclass
class Section:
    """Typed, line-anchored access to one config section."""

    name: str
    values: dict
    lines: dict
    path: str | None = None

    def _err(self, key: str, msg: str) -> ConfigError:
        line = self.lines.get((self.name, key), self.lines.get((self.name, None)))
        return ConfigError(f"[{self.name}] {key}: {msg}", line, self.path)

    def raw(self, key: str, default=None):
        return self.values.get(key, default)

    def get_str(self, key: str, default: str | None = None, choices=None) -> str | None:
        v = self.values.get(key, default)
        if v is not None and choices is not None and v not in choices:
            raise self._err(key, f"expected one of {sorted(choices)}, got {v!r}")
        return v

    def get_float(self, key: str, default: float | None = None, lo: float | None = None, hi: float | None = None, open_lo: bool = False) -> float | None:
        v = self.values.get(key)
        if v is None:
            return default
        try:
            x = float(v)
        except ValueError:
            raise self._err(key, f"not a number: {v!r}") from None
        if math.isnan(x):
            raise self._err(key, "NaN is not allowed")
        if lo is not None and (x < lo or (open_lo and x == lo)):
            raise self._err(key, f"must be {'>' if open_lo else '>='} {lo}, got {x}")
        if hi is not None and x > hi:
            raise self._err(key, f"must be <= {hi}, got {x}")
        return x

    def get_int(self, key: str, default: int | None = None, lo: int | None = None, hi: int | None = None) -> int | None:
        v = self.values.get(key)
        if v is None:
            return default
        try:
            x = int(v)
        except ValueError:
            raise self._err(key, f"not an integer: {v!r}") from None
        if lo is not None and x < lo:
            raise self._err(key, f"must be >= {lo}, got {x}")
        if hi is not None and x > hi:
            raise self._err(key, f"must be <= {hi}, got {x}")
        return x

    def get_list(self, key: str, conv=float, default=None) -> list | None:
        v = self.values.get(key)
        if v is None:
            return default
        try:
            return [conv(item.strip().replace(" ", "")) for item in v.split(",") if item.strip()]
        except ValueError:
            raise self._err(key, f"cannot parse list {v!r}") from None

    def get_bool(self, key: str, default: bool = False) -> bool:
        v = self.values.get(key)
        if v is None:
            return default
        low = v.strip().lower()
        if low in ("1", "yes", "true", "on"):
            return True
        if low in ("0", "no", "false", "off"):
            return False
        raise self._err(key, f"not a boolean: {v!r}")


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    output: Path = Path("gmc-lab-out")
    threads: int | None = None
    samples: int = 1000
    kernel: KernelSpec = field(default_factory=KernelSpec)
    lam0: str = "auto"
    grid_n: int = 32
    radius: float = 0.5
    levels: list = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0])
    betas: list = field(default_factory=lambda: [0.5])
    p: float | None = None
    tolerances: dict = field(default_factory=lambda: {"quad_tol": 1e-10, "clip_tol": 1e-8, "sigma": 3.0})
    sections: dict = field(default_factory=dict)
    path: str | None = None
    lines: dict = field(default_factory=dict, repr=False)

    @property
    def d(self) -> int:
        return self.kernel.dimension

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.d, self.grid_n, self.radius)

    def section(self, name: str) -> Section:
        return Section(name, self.sections.get(name, {}), self.lines, self.path)

    def to_dict(self) -> dict:
        """Canonical content used for the config hash (paths and threads excluded)."""
        return {
            "name": self.name,
            "seed": self.seed,
            "samples": self.samples,
            "kernel": self.kernel.to_dict(),
            "lam0": self.lam0,
            "grid": {"n": self.grid_n, "radius": self.radius},
            "levels": list(self.levels),
            "betas": [complex(b) for b in self.betas],
            "p": self.p,
            "tolerances": dict(self.tolerances),
            "sections": {k: dict(v) for k, v in sorted(self.sections.items()) if k in MODULE_SECTIONS},
        }


def _schedule(sec: Section) -> list[float]:
    levels = sec.get_list("levels")
    if levels is not None:
        if not levels or any(b <= a for a, b in zip(levels, levels[1:])) or levels[0] <= 0:
            raise sec._err("levels", "levels must be positive and strictly increasing")
        return levels
    t_max = sec.get_float("t_max", 4.0, lo=0.0, open_lo=True)
    step = sec.get_float("step", math.log(2.0), lo=0.0, open_lo=True)
    n = max(1, int(math.ceil(t_max / step - 1e-12)))
    return [min(t_max, step * (i + 1)) for i in range(n)]


def parse_config(text: str, path: str | None = None, base: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str.lower
    try:
        cp.read_string(text, source=path or "<config>")
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, path) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, path) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError("key outside of any [section]", exc.lineno, path) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError("malformed line", lineno, path) from None
    lines = _line_index(text)
    sections = {}
    for name in cp.sections():
        low = name.lower()
        if low not in ALLOWED:
            raise ConfigError(f"unknown section [{name}]", lines.get((low, None)), path)
        vals = dict(cp[name])
        for key in vals:
            if key not in ALLOWED[low]:
                raise ConfigError(f"unknown key {key!r} in [{name}]", lines.get((low, key)), path)
        sections[low] = vals

    def sec(name):
        return Section(name, sections.get(name, {}), lines, path)

    exp, ker, grd, sch, bet, tol = (sec(n) for n in ("experiment", "kernel", "grid", "schedule", "beta", "tolerances"))
    cfg = ExperimentConfig(sections=sections, path=path, lines=lines)
    cfg.name = exp.get_str("name", "experiment")
    cfg.seed = exp.get_int("seed", 0, lo=0)
    out = Path(exp.get_str("output", f"gmc-lab-out/{cfg.name}"))
    cfg.output = out if out.is_absolute() or base is None else base / out
    cfg.threads = exp.get_int("threads", None, lo=1)
    cfg.samples = exp.get_int("samples", 1000, lo=1)

    seed_name = ker.get_str("seed", "bump")
    if seed_name not in SEEDS and not Path(seed_name).exists() and not (base is not None and (base / seed_name).exists()):
        raise ker._err("seed", f"unknown seed {seed_name!r} (expected {sorted(SEEDS)} or a file)")
    if seed_name not in SEEDS and base is not None and (base / seed_name).exists():
        seed_name = str(base / seed_name)
    cfg.kernel = KernelSpec(
        seed=seed_name,
        delta=ker.get_float("delta", 0.5, lo=0.0, hi=1.0, open_lo=True),
        dimension=ker.get_int("dimension", 1, lo=1, hi=3),
        decay_exponent=ker.get_float("decay_exponent", None, lo=0.0, open_lo=True),
        support_radius=ker.get_float("support_radius", None, lo=0.0, open_lo=True),
        dilation=ker.get_float("dilation", 1.0, lo=1.0),
    )
    if cfg.kernel.delta >= 1.0:
        raise ker._err("delta", "must lie in (0, 1)")
    if seed_name not in SEEDS and cfg.kernel.decay_exponent is None:
        raise ker._err("seed", "a file seed needs decay_exponent")
    lam0 = ker.get_str("lam0", "auto")
    if lam0 != "auto":
        ker.get_float("lam0", lo=1.0)
    cfg.lam0 = lam0
    cfg.grid_n = grd.get_int("n", 32, lo=2, hi=4096)
    cfg.radius = grd.get_float("radius", 0.5, lo=0.0, open_lo=True)
    cfg.levels = _schedule(sch)
    try:
        cfg.betas = [complex(b) for b in bet.get_list("values", str, ["0.5"])]
    except ValueError:
        raise bet._err("values", "betas must be real or complex literals such as 0.5+0.2j") from None
    cfg.p = bet.get_float("p", None, lo=1.0, open_lo=True)
    cfg.tolerances = {
        "quad_tol": tol.get_float("quad_tol", 1e-10, lo=0.0, open_lo=True),
        "clip_tol": tol.get_float("clip_tol", 1e-8, lo=0.0, open_lo=True),
        "sigma": tol.get_float("sigma", 3.0, lo=0.0, open_lo=True),
    }
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(p)) from None
    return parse_config(text, str(p), p.parent)


def default_config(output=None, seed: int = 0) -> ExperimentConfig:
    cfg = parse_config(f"[experiment]\nname = selftest\nseed = {int(seed)}\n")
    if output is not None:
        cfg.output = Path(output)
    return cfg
