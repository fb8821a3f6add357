"""Command-line front end.

Every subcommand reads an optional JSON config (flat keys, see the README),
lets explicit flags override it, prints a JSON report (or the main CSV with
``--format csv``) and, with ``--out``, writes all artifacts to a directory.
Each report carries the sha256 of the effective config and the seed.

Exit codes: 0 Recurrent / success, 1 Transient (or violations found by
``validate-field``), 2 Marginal / Inconclusive, 3 bad input, 4 run failure.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any

import click
import numpy as np

from reflwalk import bd, ctmc, estimate, kappa, stationary, walk
from reflwalk._io import config_hash, dumps, render_csv
from reflwalk.alpha import AlphaConstraintError, diagonal_limits, field_from_spec, parse_field, validate_field

EXIT_BAD_INPUT = 3
EXIT_FAILURE = 4


class ConfigError(click.ClickException):
    exit_code = EXIT_BAD_INPUT


class RunFailure(click.ClickException):
    exit_code = EXIT_FAILURE


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def _settings(command: str, defaults: dict, config_path: str | None, flags: dict) -> dict:
    cfg = dict(defaults)
    loaded = _load_config(config_path)
    unknown = set(loaded) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {sorted(unknown)}")
    cfg.update(loaded)
    cfg.update({k: v for k, v in flags.items() if v is not None})
    if not isinstance(cfg.get("seed"), int) or not 0 <= cfg["seed"] < 2**64:
        raise ConfigError("seed must be an integer in [0, 2**64)")
    cfg["command"] = command
    return cfg


def _field(cfg: dict):
    spec = cfg.get("alpha")
    try:
        if isinstance(spec, dict):
            return field_from_spec(spec)
        return parse_field(str(spec), float(cfg.get("bound_C", 1.0)))
    except (ValueError, KeyError, SyntaxError) as exc:
        raise ConfigError(f"bad field {spec!r}: {exc}") from exc


def _provenance(cfg: dict) -> dict:
    return {"config_hash": config_hash(cfg), "seed": cfg["seed"], "command": cfg["command"]}


class _Report:
    """Collects artifacts and writes them only once the run has succeeded."""

    def __init__(self, cfg: dict, out: str | None, fmt: str):
        self.cfg = cfg
        self.out = Path(out) if out else None
        self.fmt = fmt
        self.files: dict[str, str] = {}
        self.primary_csv: str | None = None

    def csv(self, name: str, header, rows, primary: bool = False) -> None:
        text = render_csv(header, rows, _provenance(self.cfg))
        self.files[name] = text
        if primary:
            self.primary_csv = text

    def json(self, name: str, payload: dict) -> str:
        body = {"provenance": _provenance(self.cfg), "config": self.cfg}
        body.update(payload)
        text = dumps(body) + "\n"
        self.files[name] = text
        return text

    def emit(self, report_text: str) -> None:
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)
            for name, text in self.files.items():
                (self.out / name).write_text(text)
        if self.fmt == "csv" and self.primary_csv is not None:
            click.echo(self.primary_csv, nl=False)
        else:
            click.echo(report_text, nl=False)


def _common(func):
    func = click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", show_default=True)(func)
    func = click.option("--out", type=click.Path(file_okay=False), default=None, help="Directory for artifacts.")(func)
    func = click.option("--seed", type=int, default=None, help="Base seed (default 0).")(func)
    func = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None)(func)
    return func


def _ints(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc


@click.group()
def main_group() -> None:
    """Reflected two-dimensional walks with state-dependent drift."""


# ---------------------------------------------------------------- classify
@main_group.command("classify")
@_common
@click.option("--alpha", default=None, help="constant:A | table:A1,A2,... | expr:EXPR")
@click.option("--k-schedule", default=None, help="Comma-separated increasing k values.")
@click.option("--mode", type=click.Choice(["auto", "product", "cesaro", "closed"]), default=None)
def cmd_classify(config_path, seed, out, fmt, alpha, k_schedule, mode) -> int:
    defaults = {"alpha": "constant:0", "bound_C": 1.0, "k_schedule": list(kappa.DEFAULT_SCHEDULE), "mode": "auto", "seed": 0}
    cfg = _settings("classify", defaults, config_path, {"alpha": alpha, "k_schedule": _ints(k_schedule), "mode": mode, "seed": seed})
    field = _field(cfg)
    try:
        report = kappa.classify(field, cfg["k_schedule"], cfg["mode"])
    except (ValueError, ArithmeticError) as exc:
        raise ConfigError(str(exc)) from exc
    rep = _Report(cfg, out, fmt)
    d = report.to_dict()
    rep.csv("kappa.csv", ["k", "product", "cesaro"], zip(d["diagnostics"]["k_schedule"], d["diagnostics"]["product"], d["diagnostics"]["cesaro"]), primary=True)
    rep.emit(rep.json("classify.json", d))
    return {"Recurrent": 0, "Transient": 1, "Marginal": 2}[d["verdict"]]


# -------------------------------------------------------------- stationary
@main_group.command("stationary")
@_common
@click.option("--alpha", default=None)
@click.option("--rank-max", type=int, default=None)
@click.option("--tol", type=float, default=None)
@click.option("--max-iters", type=int, default=None)
@click.option("--closure", type=click.Choice(list(stationary.CLOSURES)), default=None)
@click.option("--method", type=click.Choice(list(stationary.METHODS)), default=None)
@click.option("--check-k", default=None, help="Comma-separated k values for the neighbouring-rank checks.")
def cmd_stationary(config_path, seed, out, fmt, alpha, rank_max, tol, max_iters, closure, method, check_k) -> int:
    defaults = {
        "alpha": "constant:0", "bound_C": 1.0, "rank_max": 40, "tol": 1e-10, "max_iters": 1_000_000,
        "closure": "reflect", "method": "direct", "check_k": None, "seed": 0,
    }
    cfg = _settings("stationary", defaults, config_path, {
        "alpha": alpha, "rank_max": rank_max, "tol": tol, "max_iters": max_iters, "closure": closure,
        "method": method, "check_k": _ints(check_k), "seed": seed,
    })
    field = _field(cfg)
    R = cfg["rank_max"]
    ks = cfg["check_k"] if cfg["check_k"] is not None else [k for k in (R // 4, (R - 2) // 2) if k >= 2]
    if any(2 * k + 2 > R for k in ks):
        raise ConfigError(f"check k values {ks} need rank_max >= 2k + 2")
    try:
        table = stationary.solve_ratios(field, R, cfg["tol"], cfg["max_iters"], cfg["closure"], cfg["method"])
    except stationary.SolverError as exc:
        raise RunFailure(f"solver failed: {exc}; {exc.diagnostics}") from exc
    except (ValueError, AlphaConstraintError) as exc:
        raise ConfigError(str(exc)) from exc
    sums = stationary.rank_sums(table)
    limits = diagonal_limits(field)
    checks = [stationary.verify_lemma1(table, limits, k).to_dict() for k in ks]
    rep = _Report(cfg, out, fmt)
    rep.csv("ratios.csv", ["i", "j", "rank", "p", "q", "residual_at_state"], table.rows(), primary=True)
    rep.csv("rank_sums.csv", ["rank", "q_sum"], sums.items())
    rep.files["expansions.json"] = dumps({"provenance": _provenance(cfg), "checks": checks}) + "\n"
    text = rep.json("stationary.json", {
        "residual": table.residual,
        "converged": table.residual <= cfg["tol"],
        "p_origin": table.p_at(0, 0),
        "p_first_axis": table.p_at(0, 1),
        "positive": bool(np.all(table.p > 0)),
        "diagnostics": table.diagnostics,
        "expansions": checks,
    })
    rep.emit(text)
    return 0 if table.residual <= cfg["tol"] else EXIT_FAILURE


# ---------------------------------------------------------------- simulate
@main_group.command("simulate")
@_common
@click.option("--alpha", default=None)
@click.option("--model", type=click.Choice(["walk", "ctmc"]), default=None)
@click.option("--steps", type=int, default=None, help="Steps per replica (walk).")
@click.option("--replicas", type=int, default=None)
@click.option("--horizon", type=float, default=None, help="Simulated time (ctmc).")
@click.option("--reflect-rank", type=int, default=None, help="Reject moves above this rank (ctmc).")
@click.option("--batches", type=int, default=None)
@click.option("--min-visits", type=int, default=None)
@click.option("--trajectory/--no-trajectory", default=None, help="Also write the path of a single walk.")
@click.option("--stride", type=int, default=None)
def cmd_simulate(config_path, seed, out, fmt, alpha, model, steps, replicas, horizon, reflect_rank, batches, min_visits, trajectory, stride) -> int:
    defaults = {
        "alpha": "constant:0", "bound_C": 1.0, "model": "walk", "steps": 10**6, "replicas": 1, "horizon": 1e5,
        "reflect_rank": 0, "batches": 20, "min_visits": estimate.MIN_VISITS, "trajectory": False, "stride": 1,
        "start": None, "seed": 0,
    }
    cfg = _settings("simulate", defaults, config_path, {
        "alpha": alpha, "model": model, "steps": steps, "replicas": replicas, "horizon": horizon,
        "reflect_rank": reflect_rank, "batches": batches, "min_visits": min_visits, "trajectory": trajectory,
        "stride": stride, "seed": seed,
    })
    field = _field(cfg)
    if cfg["model"] == "walk" and cfg["steps"] < 1:
        raise ConfigError("steps must be positive")
    if cfg["model"] == "ctmc" and cfg["horizon"] <= 0:
        raise ConfigError("horizon must be positive")
    if cfg["replicas"] < 1 or cfg["stride"] < 1:
        raise ConfigError("replicas and stride must be positive")
    kap = kappa.classify(field, (10**3, 10**4, 10**5)).kappa.value
    rep = _Report(cfg, out, fmt)
    payload: dict[str, Any] = {}
    try:
        if cfg["model"] == "walk":
            start = tuple(cfg["start"]) if cfg["start"] else (0, 1)
            if cfg["trajectory"]:
                if cfg["replicas"] != 1:
                    raise ConfigError("--trajectory needs a single replica")
                traj = walk.simulate(field, start, cfg["steps"], cfg["seed"])
                counts = walk.trajectory_counts(traj)
                rows = ((t, int(traj.I[t]), int(traj.J[t]), int(traj.I[t] + traj.J[t])) for t in range(0, traj.step_count + 1, cfg["stride"]))
                rep.csv("trajectory.csv", ["t", "I", "J", "N"], rows)
            else:
                counts = walk.run_replicas(field, cfg["steps"], cfg["replicas"], cfg["seed"], start)
            payload["steps_total"] = counts.steps
        else:
            children = np.random.SeedSequence(cfg["seed"]).spawn(cfg["replicas"])
            hists = [
                ctmc.simulate_ctmc(field, cfg["horizon"], int(c.generate_state(1, np.uint64)[0]), batches=cfg["batches"], reflect_rank=cfg["reflect_rank"])
                for c in children
            ]
            counts = hists[0].norm_counts()
            for h in hists[1:]:
                counts = counts.merge(h.norm_counts())
            batch = np.concatenate([h.batch_times for h in hists])
            merged = ctmc.OccupancyHistogram(
                hists[0].rank_cap, batch, np.concatenate([h.batch_overflow for h in hists]), cfg["horizon"],
                hists[0].warmup, cfg["seed"], sum(h.state_changes for h in hists), sum(h.null_events for h in hists),
                counts.up, counts.down, counts.boundary, hists[-1].final_state, cfg["reflect_rank"],
            )
            ratio, se = merged.ratio_to_origin()
            st = ctmc.plane_states(merged.rank_cap)
            times = merged.times
            keep = times > 0
            rep.csv("occupancy.csv", ["i", "j", "time", "ratio_to_origin", "stderr"],
                    zip(st[keep, 0].tolist(), st[keep, 1].tolist(), times[keep], ratio[keep], se[keep]), primary=True)
            payload.update({"state_changes": merged.state_changes, "null_events": merged.null_events,
                            "overflow_time": merged.overflow_time, "origin_time": float(times[0])})
        idx = estimate.estimate_transition_ratios([counts], cfg["min_visits"], kap)
        bnd = estimate.estimate_boundary_probability([counts], cfg["min_visits"])
    except (ctmc.StarvationError, estimate.InsufficientCountsError) as exc:
        raise RunFailure(str(exc)) from exc
    rows = [(n, e.P, e.Q, e.ratio_pow_n, bnd[n].p_n if n in bnd else float("nan"), e.stderr) for n, e in idx.per_n.items()]
    rep.csv("estimate.csv", ["n", "P_n", "Q_n", "ratio_pow_n", "p_n", "stderr"], rows, primary=cfg["model"] == "walk")
    payload["index"] = idx.to_dict()
    payload["kappa"] = kap
    rep.emit(rep.json("simulate.json", payload))
    return 0


# ------------------------------------------------------------------ bdtest
@main_group.command("bdtest")
@_common
@click.option("--ratio", default=None, help="lambda_n/mu_n as an expression in n.")
@click.option("--bd22", is_flag=True, default=None, help="Use the 8n+4 / 8n-4 reference chain.")
@click.option("--alpha-seq", default=None, help="alpha_n for the one-dimensional threshold form.")
@click.option("--k-max", type=int, default=None)
@click.option("--window", default=None, help="n_lo,n_hi")
def cmd_bdtest(config_path, seed, out, fmt, ratio, bd22, alpha_seq, k_max, window) -> int:
    defaults = {"ratio": None, "bd22": False, "alpha_seq": None, "k_max": bd.DEFAULT_K_MAX, "window": list(bd.DEFAULT_WINDOW), "seed": 0}
    cfg = _settings("bdtest", defaults, config_path, {"ratio": ratio, "bd22": bd22, "alpha_seq": alpha_seq, "k_max": k_max, "window": _ints(window), "seed": seed})
    chosen = [bool(cfg["ratio"]), bool(cfg["bd22"]), bool(cfg["alpha_seq"])]
    if sum(chosen) != 1:
        raise ConfigError("give exactly one of --ratio, --bd22, --alpha-seq")
    if len(cfg["window"]) != 2:
        raise ConfigError("window needs two integers")
    extra: dict[str, Any] = {}
    try:
        if cfg["alpha_seq"]:
            from reflwalk._expr import Expression

            expr = Expression(cfg["alpha_seq"], ["n"])
            verdict = bd.proposition1_classify(lambda n: expr(n=n), cfg["k_max"], cfg["window"])
        else:
            rates = bd.bd22_rates() if cfg["bd22"] else bd.rates_from_ratio(cfg["ratio"])
            verdict = bd.bertrand_test(rates, cfg["k_max"], cfg["window"])
            diag = bd.diagnose_series(rates, cfg["window"][1])
            extra["series"] = {"tail_exponent": diag.tail_exponent, "verdict": diag.verdict.value, "evidence": diag.evidence}
            if cfg["bd22"]:
                slope, loglog = bd.log_growth_slope(rates, cfg["window"][0], cfg["window"][1])
                extra["partial_sum_slope_vs_ln_n"] = slope
                extra["log_partial_sum_slope_vs_ln_ln_n"] = loglog
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(str(exc)) from exc
    d = verdict.to_dict()
    d.update(extra)
    rep = _Report(cfg, out, fmt)
    rep.emit(rep.json("bdtest.json", d))
    return {"Recurrent": 0, "Transient": 1, "Inconclusive": 2}[d["verdict"]]


# ---------------------------------------------------------- validate-field
@main_group.command("validate-field")
@_common
@click.option("--alpha", default=None)
@click.option("--rank-max", type=int, default=None)
@click.option("--n0", type=int, default=None)
@click.option("--gamma", type=float, default=None)
def cmd_validate_field(config_path, seed, out, fmt, alpha, rank_max, n0, gamma) -> int:
    defaults = {"alpha": "constant:0", "bound_C": 1.0, "rank_max": 50, "n0": 4, "gamma": None, "seed": 0}
    cfg = _settings("validate-field", defaults, config_path, {"alpha": alpha, "rank_max": rank_max, "n0": n0, "gamma": gamma, "seed": seed})
    field = _field(cfg)
    try:
        found = validate_field(field, cfg["rank_max"], cfg["n0"], cfg["gamma"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rep = _Report(cfg, out, fmt)
    rep.csv("violations.csv", ["kind", "i", "j", "value", "limit"], ((v.kind, v.pair[0], v.pair[1], v.value, v.limit) for v in found), primary=True)
    rep.emit(rep.json("validate.json", {"admissible": not found, "violations": [v.as_dict() for v in found]}))
    return 0 if not found else 1


def main(argv: list[str] | None = None) -> int:
    try:
        rc = main_group.main(args=argv, prog_name="reflwalk", standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code if exc.exit_code > 2 else EXIT_BAD_INPUT
    except click.exceptions.Abort:
        return EXIT_BAD_INPUT
    return rc if isinstance(rc, int) else 0


def run() -> None:
    sys.exit(main())
