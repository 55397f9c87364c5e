"""Command-line runner for BER sweeps and rate curves.

Experiments are described by INI files::

    [experiment]
    kind = ber_sweep            ; or rate_curves
    seed = 1
    name = fig1_ber_2x2         ; optional, names the CSV

    [system]
    m_t = 2
    m_r = 2
    n_pilots = 2, 4, 8          ; one curve per training length
    sigma_h_sq = 1
    p_bar = 1

    [ber]                       ; ber_sweep only
    metrics = mismatched, improved
    ebn0_db = 0:20:2            ; start:stop:step (inclusive) or a comma list
    n_frames = 10000
    n_iters = 4

    [rates]                     ; rate_curves only
    metrics = mismatched, improved
    snr_db = 0:25:2.5
    gamma = 0.01
    n_mc = 10000
    n_est = 200

Every random draw derives from ``seed``; grid point i uses stream child i
whatever the metric or training length, so curves share channels and noise.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bicm.receiver import N_SYMBOLS, simulate_ber_point
from .channel import SystemConfig
from .errors import ConfigurationError, UnsupportedConfiguration
from .metrics import DecodingMetricKind
from .numerics import RngStream
from .rates import rate_curve_point

log = logging.getLogger("mimocee")

BER_SCHEMA = "ber/1"
RATES_SCHEMA = "rates/1"
BER_COLUMNS = ["ebn0_db", "n_bits", "n_errors", "ber", "ci_low", "ci_high", "metric", "n_pilots", "seed", "n_frames"]
RATES_COLUMNS = ["snr_db", "metric", "gamma", "n_pilots", "outage_rate_bits", "eio_bits", "ergodic_bits", "n_mc",
                 "seed", "outage_rate_se", "eio_se", "ergodic_se", "n_est"]
KINDS = ("ber_sweep", "rate_curves")


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    seed: int
    m_t: int
    m_r: int
    n_pilots: tuple[int, ...]
    metrics: tuple[str, ...]
    grid_db: tuple[float, ...]
    name: str = "experiment"
    sigma_h_sq: float = 1.0
    p_bar: float = 1.0
    n_frames: int = 1000
    n_iters: int = 4
    min_errors: int | None = None
    n_symbols: int = N_SYMBOLS
    gamma: float = 0.01
    n_mc: int = 10000
    n_est: int = 200
    description: str = field(default="", compare=False)

    @property
    def section(self) -> str:
        return "ber" if self.kind == "ber_sweep" else "rates"

    @property
    def grid_key(self) -> str:
        return "ebn0_db" if self.kind == "ber_sweep" else "snr_db"

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["experiment"] = {"kind": self.kind, "seed": str(self.seed), "name": self.name}
        if self.description:
            cp["experiment"]["description"] = self.description
        cp["system"] = {"m_t": str(self.m_t), "m_r": str(self.m_r), "n_pilots": _join(self.n_pilots),
                        "sigma_h_sq": repr(self.sigma_h_sq), "p_bar": repr(self.p_bar)}
        sec = {"metrics": ", ".join(self.metrics), self.grid_key: _join(self.grid_db)}
        if self.kind == "ber_sweep":
            sec.update(n_frames=str(self.n_frames), n_iters=str(self.n_iters), n_symbols=str(self.n_symbols))
            if self.min_errors is not None:
                sec["min_errors"] = str(self.min_errors)
        else:
            sec.update(gamma=repr(self.gamma), n_mc=str(self.n_mc), n_est=str(self.n_est))
        cp[self.section] = sec
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()[:16]

    def summary(self) -> str:
        n = ",".join(map(str, self.n_pilots))
        g = self.grid_db
        span = f"{g[0]:g}..{g[-1]:g} dB ({len(g)} points)"
        if self.kind == "ber_sweep":
            work = f"{self.n_frames} frames, {self.n_iters} iterations, Eb/N0 {span}"
        else:
            work = f"gamma={self.gamma:g}, n_mc={self.n_mc}, n_est={self.n_est}, SNR {span}"
        return f"{self.kind} {self.m_r}x{self.m_t} N={n} metrics={'/'.join(self.metrics)}: {work}"


def _join(xs) -> str:
    return ", ".join(repr(float(x)) if isinstance(x, float) else str(x) for x in xs)


class _Fields:
    """Reads typed fields, collecting one diagnostic per bad field."""

    def __init__(self, cp: configparser.ConfigParser):
        self.cp = cp
        self.errors: list[str] = []

    def raw(self, section, key, default=None, required=False):
        if self.cp.has_option(section, key):
            return self.cp.get(section, key).strip()
        if required:
            self.errors.append(f"{section}.{key}: missing")
        return default

    def number(self, section, key, cast, default=None, required=False, minimum=None):
        text = self.raw(section, key, None, required)
        if text is None:
            return default
        try:
            val = cast(text)
        except ValueError:
            self.errors.append(f"{section}.{key}: cannot parse {text!r} as {cast.__name__}")
            return default
        if cast is float and not math.isfinite(val):
            self.errors.append(f"{section}.{key}: must be finite")
        if minimum is not None and val < minimum:
            self.errors.append(f"{section}.{key}: must be >= {minimum}, got {val}")
        return val

    def int_list(self, section, key, required=True):
        text = self.raw(section, key, None, required)
        if text is None:
            return ()
        try:
            vals = tuple(int(t) for t in text.split(","))
        except ValueError:
            self.errors.append(f"{section}.{key}: expected comma-separated integers, got {text!r}")
            return ()
        return vals

    def grid(self, section, key):
        text = self.raw(section, key, None, True)
        if text is None:
            return ()
        try:
            vals = parse_grid(text)
        except ValueError as e:
            self.errors.append(f"{section}.{key}: {e}")
            return ()
        if not vals:
            self.errors.append(f"{section}.{key}: grid is empty")
        elif any(b <= a for a, b in zip(vals, vals[1:])):
            self.errors.append(f"{section}.{key}: grid must be strictly increasing")
        return vals


def parse_grid(text: str) -> tuple[float, ...]:
    """'a:b:step' (inclusive of b when it lies on the lattice) or 'x1, x2, ...'."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range must be start:stop:step, got {text!r}")
        a, b, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError("range step must be positive")
        n = int(math.floor((b - a) / step + 1e-9)) + 1
        if n < 1:
            raise ValueError(f"empty range {text!r}")
        return tuple(round(a + i * step, 12) for i in range(n))
    return tuple(float(t) for t in text.split(",") if t.strip())


def parse_config(text: str, name: str = "experiment") -> ExperimentConfig:
    """Parse and validate INI text; raises ConfigurationError listing every bad field."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigurationError(f"malformed config: {e}") from None
    f = _Fields(cp)
    kind = f.raw("experiment", "kind", required=True)
    if kind is not None and kind not in KINDS:
        f.errors.append(f"experiment.kind: must be one of {', '.join(KINDS)}, got {kind!r}")
    seed = f.number("experiment", "seed", int, required=True, minimum=0)
    m_t = f.number("system", "m_t", int, required=True, minimum=1)
    m_r = f.number("system", "m_r", int, required=True, minimum=1)
    n_pilots = f.int_list("system", "n_pilots")
    if n_pilots and isinstance(m_t, int) and min(n_pilots) < m_t:
        f.errors.append(f"system.n_pilots: every training length must be >= m_t={m_t}")
    kw = dict(sigma_h_sq=f.number("system", "sigma_h_sq", float, 1.0),
              p_bar=f.number("system", "p_bar", float, 1.0))
    for k in ("sigma_h_sq", "p_bar"):
        if isinstance(kw[k], float) and kw[k] <= 0:
            f.errors.append(f"system.{k}: must be positive")
    section = "rates" if kind == "rate_curves" else "ber"
    grid_key = "ebn0_db" if section == "ber" else "snr_db"
    if kind in KINDS and not cp.has_section(section):
        f.errors.append(f"{section}: section required for kind={kind}")
    metrics = ()
    mtext = f.raw(section, "metrics", "mismatched, improved")
    try:
        metrics = tuple(DecodingMetricKind.parse(m).value for m in mtext.split(","))
    except ValueError as e:
        f.errors.append(f"{section}.metrics: {e}")
    grid = f.grid(section, grid_key) if cp.has_section(section) else ()
    if section == "ber":
        kw.update(n_frames=f.number("ber", "n_frames", int, 1000, minimum=1),
                  n_iters=f.number("ber", "n_iters", int, 4, minimum=1),
                  min_errors=f.number("ber", "min_errors", int, None, minimum=1),
                  n_symbols=f.number("ber", "n_symbols", int, N_SYMBOLS, minimum=1))
    else:
        gamma = f.number("rates", "gamma", float, 0.01)
        if isinstance(gamma, float) and not 0 < gamma < 1:
            f.errors.append("rates.gamma: must lie in (0, 1)")
        kw.update(gamma=gamma, n_mc=f.number("rates", "n_mc", int, 10000, minimum=1000),
                  n_est=f.number("rates", "n_est", int, 200, minimum=1))
    if f.errors:
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(f.errors))
    return ExperimentConfig(kind=kind, seed=seed, m_t=m_t, m_r=m_r, n_pilots=n_pilots, metrics=metrics,
                            grid_db=grid, name=f.raw("experiment", "name", name),
                            description=f.raw("experiment", "description", ""), **kw)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config {p}: {e}") from None
    return parse_config(text, name=p.stem)


RECIPES = {
    "fig1_ber_2x2": ExperimentConfig(
        kind="ber_sweep", seed=1, m_t=2, m_r=2, n_pilots=(2, 4, 8), metrics=("mismatched", "improved"),
        grid_db=tuple(float(x) for x in range(0, 21, 2)), name="fig1_ber_2x2", n_frames=10000, n_iters=4,
        description="BER of 2x2 16-QAM BICM, (5,7) code, 100 symbols per frame"),
    "fig2_rates_2x2": ExperimentConfig(
        kind="rate_curves", seed=2, m_t=2, m_r=2, n_pilots=(2,), metrics=("mismatched", "improved"),
        grid_db=parse_grid("0:25:2.5"), name="fig2_rates_2x2", gamma=0.01, n_mc=10000, n_est=200,
        description="mean outage rates of a 2x2 system, N=2"),
    "fig3_rates_4x4": ExperimentConfig(
        kind="rate_curves", seed=3, m_t=4, m_r=4, n_pilots=(4,), metrics=("mismatched", "improved"),
        grid_db=parse_grid("0:25:2.5"), name="fig3_rates_4x4", gamma=0.01, n_mc=10000, n_est=200,
        description="mean outage rates of a 4x4 system, N=4"),
}


def list_recipes() -> dict[str, ExperimentConfig]:
    return dict(RECIPES)


# ---- execution -------------------------------------------------------------

def _system(cfg: ExperimentConfig, n_pilots: int) -> SystemConfig:
    return SystemConfig(cfg.m_t, cfg.m_r, cfg.sigma_h_sq, 1.0, cfg.p_bar, n_pilots)


def _ber_task(args):
    cfg, n_pilots, metric, i = args
    ebn0 = cfg.grid_db[i]
    pcfg = SystemConfig.for_ebn0(cfg.m_t, cfg.m_r, ebn0, n_pilots, cfg.p_bar, cfg.sigma_h_sq)
    p = simulate_ber_point(pcfg, metric, RngStream(cfg.seed).child(i), cfg.n_frames, cfg.n_iters, cfg.min_errors,
                           cfg.n_symbols, ebn0_db=ebn0)
    return [p.ebn0_db, p.n_bits, p.n_errors, p.ber, p.ci_low, p.ci_high, p.metric, p.n_pilots, cfg.seed,
            p.n_frames]


def _rates_task(args):
    cfg, n_pilots, i = args
    snr = cfg.grid_db[i]
    pcfg = SystemConfig.for_snr(cfg.m_t, cfg.m_r, snr, n_pilots, cfg.p_bar, cfg.sigma_h_sq)
    pt = rate_curve_point(pcfg, cfg.gamma, cfg.n_mc, cfg.n_est, RngStream(cfg.seed).child(i), cfg.metrics)
    return [[snr, m, cfg.gamma, n_pilots, pt.mean(m), pt.mean("eio"), pt.ergodic, cfg.n_mc, cfg.seed,
             pt.se(m), pt.se("eio"), pt.ergodic_se, cfg.n_est] for m in cfg.metrics]


def _fan_out(fn, tasks, threads: int):
    if threads <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, tasks))  # results come back in task order


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def compute_rows(cfg: ExperimentConfig, threads: int = 1) -> tuple[list[str], list[list]]:
    """Run the experiment; returns (columns, rows) in a fixed order."""
    if cfg.kind == "ber_sweep":
        tasks = [(cfg, n, m, i) for n in cfg.n_pilots for m in cfg.metrics for i in range(len(cfg.grid_db))]
        return BER_COLUMNS, _fan_out(_ber_task, tasks, threads)
    if cfg.m_t != cfg.m_r:
        raise UnsupportedConfiguration(
            f"rate curves need a square system (m_t == m_r); got {cfg.m_r}x{cfg.m_t}")
    tasks = [(cfg, n, i) for n in cfg.n_pilots for i in range(len(cfg.grid_db))]
    rows = [r for block in _fan_out(_rates_task, tasks, threads) for r in block]
    return RATES_COLUMNS, rows


def render_csv(cfg: ExperimentConfig, columns, rows) -> str:
    schema = BER_SCHEMA if cfg.kind == "ber_sweep" else RATES_SCHEMA
    buf = io.StringIO()
    buf.write(f"# mimocee {__version__} schema={schema} config_sha256={cfg.digest()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def run_experiment(cfg_or_path, out_dir=".", seed: int | None = None, threads: int = 1) -> Path:
    """Run a config (object or INI path) and write ``<out_dir>/<name>.csv``."""
    cfg = cfg_or_path if isinstance(cfg_or_path, ExperimentConfig) else load_config(cfg_or_path)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    log.info("running %s: %s (seed %d, config %s)", cfg.name, cfg.summary(), cfg.seed, cfg.digest())
    columns, rows = compute_rows(cfg, threads)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{cfg.name}.csv"
    path.write_text(render_csv(cfg, columns, rows), encoding="utf-8")
    log.info("wrote %d rows to %s", len(rows), path)
    return path


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mimocee", description="BER sweeps and outage-rate curves for MIMO "
                                 "receivers using a channel estimate.")
    ap.add_argument("config", nargs="?", help="experiment INI file")
    ap.add_argument("--recipe", help="run a built-in recipe instead of a config file")
    ap.add_argument("--list-recipes", action="store_true", help="print built-in recipes and exit")
    ap.add_argument("--dump-recipe", metavar="NAME", help="print a recipe as INI and exit")
    ap.add_argument("--seed", type=int, help="override the master seed")
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    ap.add_argument("--threads", type=int, default=1, help="worker processes (output does not depend on it)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.list_recipes:
        for name, cfg in RECIPES.items():
            print(f"{name}: {cfg.summary()}")
        return 0
    if args.dump_recipe:
        if args.dump_recipe not in RECIPES:
            print(f"error: unknown recipe {args.dump_recipe!r}; see --list-recipes", file=sys.stderr)
            return 2
        sys.stdout.write(RECIPES[args.dump_recipe].to_ini())
        return 0
    if (args.config is None) == (args.recipe is None):
        ap.print_usage(sys.stderr)
        print("error: give exactly one of a config path or --recipe", file=sys.stderr)
        return 2
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        if args.recipe is not None:
            if args.recipe not in RECIPES:
                raise ConfigurationError(f"unknown recipe {args.recipe!r}; available: {', '.join(RECIPES)}")
            target = RECIPES[args.recipe]
        else:
            target = args.config
        path = run_experiment(target, args.out, args.seed, args.threads)
    except UnsupportedConfiguration as e:
        print(f"error: unsupported configuration: {e}", file=sys.stderr)
        return 3
    except ConfigurationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
