"""Command-line frontend.

Every run resolves its options into one flat key=value configuration,
writes it to ``run.cfg`` in the output directory and can be replayed
with ``pathfgp <subcommand> --config run.cfg``.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import genlib
from .backtest import BacktestConfig, emit_svg, run_backtest
from .errors import ConfigError, PathfgpError
from .funcalc import verify_ito
from .marketpath import (RefiningPartitionFamily, covariation, load_capitalizations, to_market_weights,
                         write_capitalizations, write_covariation_csv)
from .strategy import additive_strategy, detect_arbitrage_T41, detect_arbitrage_T42, detect_arbitrage_T43
from .svg import line_chart
from .synth import MeanRevertingWeights, MultiplicativeWalk, SynthSpec, generate

FUNCTIONAL_KEYS = ("p", "q", "r", "c", "delta", "zeta", "beta")

# option name -> (type, default); shared by flags and config files
OPTIONS = {
    "input": (str, None),
    "out": (str, None),
    "config": (str, None),
    "functional": (str, "shifted_entropy"),
    "p": (str, None),
    "q": (str, None),
    "r": (str, None),
    "c": (str, None),
    "delta": (str, None),
    "zeta": (str, None),
    "beta": (str, None),
    "levels": (int, None),
    "partition": (str, None),
    "pre_history_days": (int, None),
    "seed": (int, 0),
    "theorem": (str, "41"),
    "epsilon": (float, 0.01),
    "mode": (str, "additive"),
    "rebalance_every": (int, 1),
    "on_undefined_weights": (str, "halt"),
    "on_violation": (str, "raise"),
    "p_sweep": (str, None),
    "workers": (int, None),
    "d": (int, 5),
    "N": (int, 4096),
    "model": (str, "walk"),
    "vol": (float, 0.2),
    "drift": (float, 0.0),
    "rate": (float, 5.0),
    "dt": (float, 1.0 / 252),
    "init_spread": (float, 0.0),
}

SUBCOMMANDS = {
    "covariation": ("input", "out", "levels", "partition", "pre_history_days"),
    "backtest": ("input", "out", "functional", *FUNCTIONAL_KEYS, "pre_history_days", "mode", "rebalance_every",
                 "on_undefined_weights", "on_violation", "p_sweep", "workers"),
    "verify-ito": ("input", "out", "functional", *FUNCTIONAL_KEYS, "levels", "pre_history_days", "seed", "d", "N",
                   "model", "vol", "drift", "rate", "dt", "init_spread"),
    "arbitrage": ("input", "out", "functional", *FUNCTIONAL_KEYS, "pre_history_days", "theorem", "epsilon"),
    "synth": ("out", "seed", "d", "N", "model", "vol", "drift", "rate", "dt", "init_spread"),
    "report": ("input", "out"),
}


def read_config(path) -> dict:
    """Parse a key=value file; blank lines and lines starting with # are skipped."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


def write_config(cfg: dict, out: Path) -> None:
    lines = [f"subcommand={cfg['subcommand']}"]
    for key in sorted(cfg):
        if key in ("subcommand", "config") or cfg[key] is None:
            continue
        lines.append(f"{key}={cfg[key]}")
    (out / "run.cfg").write_text("\n".join(lines) + "\n")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pathfgp", description="Pathwise functionally generated portfolios.")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name, keys in SUBCOMMANDS.items():
        sp = sub.add_parser(name)
        if "input" in keys:
            sp.add_argument("input", nargs="?")
        for key in keys:
            if key == "input":
                continue
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None)
        sp.add_argument("--config", dest="config", default=None)
    return ap


def resolve(argv) -> dict:
    """Flags over defaults, then config file over flags; values are typed."""
    ns = vars(_build_parser().parse_args(argv))
    sub = ns["subcommand"]
    keys = SUBCOMMANDS[sub]
    raw = {k: ns.get(k) for k in keys}
    if ns.get("config"):
        for key, val in read_config(ns["config"]).items():
            if key == "subcommand":
                if val != sub:
                    raise ConfigError(f"config is for '{val}', not '{sub}'")
                continue
            if key not in keys:
                raise ConfigError(f"unknown option '{key}' for {sub}")
            raw[key] = val
    cfg = {"subcommand": sub}
    for key in keys:
        typ, default = OPTIONS[key]
        val = raw.get(key)
        if val is None:
            cfg[key] = default
            continue
        try:
            cfg[key] = typ(val)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {val!r}") from None
    if cfg.get("out") is None:
        raise ConfigError("--out is required")
    needs_input = sub in ("covariation", "backtest", "arbitrage", "report")
    if needs_input and not cfg.get("input"):
        raise ConfigError("an input file is required")
    return cfg


def _functional(cfg: dict, **override):
    params = {k: cfg[k] for k in FUNCTIONAL_KEYS if cfg.get(k) is not None}
    params.update(override)
    return genlib.make_functional(cfg["functional"], **params)


def _outdir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pre_history(cfg: dict, F=None) -> int:
    if cfg.get("pre_history_days") is not None:
        return cfg["pre_history_days"]
    return F.lag if F is not None else 0


def _synth_spec(cfg: dict) -> SynthSpec:
    if cfg["model"] == "walk":
        model = MultiplicativeWalk(vol=cfg["vol"], drift=cfg["drift"])
    elif cfg["model"] == "meanrev":
        model = MeanRevertingWeights(rate=cfg["rate"], vol=cfg["vol"])
    else:
        raise ConfigError("model must be 'walk' or 'meanrev'")
    try:
        return SynthSpec(cfg["d"], cfg["N"], cfg["seed"], model, cfg["dt"], cfg["init_spread"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- subcommands ---------------------------------------------------------------

def cmd_synth(cfg: dict) -> None:
    out = _outdir(cfg)
    caps = generate(_synth_spec(cfg))
    with open(out / "caps.csv", "w") as fh:
        write_capitalizations(caps, fh)


def cmd_covariation(cfg: dict) -> None:
    caps = load_capitalizations(cfg["input"])
    mu = to_market_weights(caps, _pre_history(cfg))
    if cfg.get("partition"):
        times = [float(s) for s in cfg["partition"].replace(";", ",").split(",") if s.strip()]
        parts = RefiningPartitionFamily.from_times(mu.grid, [times])
    else:
        parts = RefiningPartitionFamily.dyadic(mu.grid, cfg.get("levels"))
    covs = covariation(mu, parts)
    out = _outdir(cfg)
    finest = covs[-1].cumulative()[-1]
    rows = ["level,mesh,points,trace,max_abs_diff_to_finest"]
    for lev, cov in enumerate(covs):
        with open(out / f"level_{lev}.csv", "w") as fh:
            write_covariation_csv(cov, fh)
        final = cov.cumulative()[-1]
        rows.append(f"{lev},{parts.mesh(lev):.10g},{cov.n},{np.trace(final):.17g},"
                    f"{np.max(np.abs(final - finest)):.17g}")
    (out / "convergence.csv").write_text("\n".join(rows) + "\n")


def _backtest_one(caps, cfg: dict, F, out: Path):
    bcfg = BacktestConfig(rebalance_every=cfg["rebalance_every"], on_undefined_weights=cfg["on_undefined_weights"],
                          mode=cfg["mode"], pre_history_days=cfg.get("pre_history_days"),
                          on_violation=cfg["on_violation"])
    rep = run_backtest(caps, F, bcfg)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.csv", "w") as fh:
        rep.to_csv(fh)
    (out / "wealth.svg").write_text(emit_svg(rep, "wealth"))
    (out / "decomposition.svg").write_text(emit_svg(rep, "decomposition"))
    return rep


def _sweep_job(args):
    caps, cfg, p, sub = args
    _backtest_one(caps, cfg, _functional(cfg, p=p), sub)
    return p


def cmd_backtest(cfg: dict) -> None:
    caps = load_capitalizations(cfg["input"])
    out = _outdir(cfg)
    if not cfg.get("p_sweep"):
        _backtest_one(caps, cfg, _functional(cfg), out)
        return
    ps = [s.strip() for s in cfg["p_sweep"].split(",") if s.strip()]
    if not ps:
        raise ConfigError("empty p sweep")
    for p in ps:
        _functional(cfg, p=p)  # validate every member before starting work
    jobs = [(caps, cfg, p, out / f"p_{p}") for p in ps]
    workers = cfg.get("workers") or os.cpu_count() or 1
    workers = max(1, min(int(workers), len(jobs)))
    if workers == 1:
        for job in jobs:
            _sweep_job(job)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_sweep_job, jobs))
    series = {}
    for p in ps:
        t, v = _read_report(out / f"p_{p}" / "report.csv")[:2]
        series[f"p = {p}"] = (t - t[0], v)
    (out / "comparison.svg").write_text(line_chart(series, title="Relative value comparison"))


def cmd_verify_ito(cfg: dict) -> None:
    if cfg.get("input"):
        caps = load_capitalizations(cfg["input"])
    else:
        caps = generate(_synth_spec(cfg))
    F = _functional(cfg)
    mu = to_market_weights(caps, _pre_history(cfg, F))
    res = verify_ito(F, mu, partition_levels=cfg.get("levels"))
    rows = ["level,mesh,residual,relative_residual"]
    rows += [f"{r.level},{r.mesh:.10g},{r.residual:.17g},{r.relative:.17g}" for r in res]
    (_outdir(cfg) / "ito_residuals.csv").write_text("\n".join(rows) + "\n")


def cmd_arbitrage(cfg: dict) -> None:
    caps = load_capitalizations(cfg["input"])
    F = _functional(cfg)
    mu = to_market_weights(caps, _pre_history(cfg, F))
    th = str(cfg["theorem"])
    if th == "41":
        cert = detect_arbitrage_T41(additive_strategy(F, mu))
    elif th == "42":
        cert = detect_arbitrage_T42(additive_strategy(F, mu))
    elif th == "43":
        c = 1.0 if cfg.get("c") is None else float(cfg["c"])
        cert = detect_arbitrage_T43(F, mu, epsilon=cfg["epsilon"], c=c).certificate
    else:
        raise ConfigError("theorem must be 41, 42 or 43")
    with open(_outdir(cfg) / "certificate.json", "w") as fh:
        cert.write(fh)


def _read_report(path):
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read report {path}: {exc}") from None
    if data.shape[1] != 7:
        raise ConfigError(f"{path}: expected columns t,W,Sigma,V,R,G_norm,Gamma_shifted")
    t, W, Sigma, V, R, Gn, Gs = data.T
    return t, V, Gn, Gs


def cmd_report(cfg: dict) -> None:
    t, V, Gn, Gs = _read_report(cfg["input"])
    t = t - t[0]
    out = _outdir(cfg)
    (out / "wealth.svg").write_text(line_chart({"V = W / Sigma": (t, V), "market": (t, np.ones_like(t))},
                                               title="Relative value"))
    (out / "decomposition.svg").write_text(line_chart(
        {"G / G(0)": (t, Gn), "1 + Gamma / G(0)": (t, Gs), "V / V(0)": (t, V / V[0])}, title="Decomposition"))


COMMANDS = {
    "covariation": cmd_covariation,
    "backtest": cmd_backtest,
    "verify-ito": cmd_verify_ito,
    "arbitrage": cmd_arbitrage,
    "synth": cmd_synth,
    "report": cmd_report,
}


def main(argv=None) -> int:
    """Entry point; returns the process exit code."""
    try:
        cfg = resolve(sys.argv[1:] if argv is None else argv)
        COMMANDS[cfg["subcommand"]](cfg)
        write_config(cfg, Path(cfg["out"]))
    except SystemExit as exc:
        return int(exc.code or 0)
    except PathfgpError as exc:
        print(f"pathfgp: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"pathfgp: invalid configuration: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
