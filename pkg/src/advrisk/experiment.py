"""Experiment orchestration: sweeps, Monte-Carlo trials, CSV emission.

One INI-style configuration file drives every command.  Outputs are a CSV
with a fixed column order (floats at 10 significant digits) plus a JSON
manifest sidecar recording everything needed to regenerate the numbers.
Trials are distributed over a worker pool but always merged by trial index,
so results are byte-identical across worker counts.
"""

from __future__ import annotations

import configparser
import json
import multiprocessing
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import gmm, kernels, separability, theory, training
from .errors import AdvriskError, ConfigError, PhaseBoundaryError

CSV_COLUMNS = [
    "sweep_var_name",
    "sweep_value",
    "regime",
    "delta_star",
    "sa_theory",
    "ra_theory",
    "sa_emp_mean",
    "sa_emp_stderr",
    "ra_emp_mean",
    "ra_emp_stderr",
    "sep_fraction",
    "n_trials",
]

THRESHOLD_COLUMNS = ["p", "eps0", "delta_star", "argmin_alpha", "argmin_theta", "method"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".10g")


def _parse_p(text: str) -> float:
    text = text.strip().lower()
    if text in ("inf", "infinity", "oo"):
        return np.inf
    value = float(text)
    if value < 1:
        raise ConfigError(f"p must be >= 1, got {value}")
    return value


@dataclass
class ExperimentConfig:
    """Parsed configuration; one instance drives all commands."""

    p_list: list[float]
    delta: float
    eps0: float
    loss: str
    mean_scale: float
    cov_kind: str
    a2: float
    eigen_sample: np.ndarray
    sweep_variable: str
    sweep_values: list[float]
    gh_order: int
    grad_tol: float
    fd_step: float
    max_outer_iters: int
    d: int
    trials: int
    budget: int
    gamma: float
    pi_plus: float
    trainer: str
    prefix: str
    sa_tol: float
    ra_tol: float
    theory_csv: str | None
    empirical_csv: str | None
    raw: dict

    @property
    def p(self) -> float:
        if len(self.p_list) != 1:
            raise ConfigError("this command needs a single p in [problem]")
        return self.p_list[0]

    def covariance(self) -> separability.CovarianceSpec:
        if self.cov_kind == "isotropic":
            return separability.CovarianceSpec.isotropic()
        return separability.CovarianceSpec.spiked(self.a2, self.eigen_sample)

    def mean_distribution(self, p: float) -> kernels.MeanDistribution:
        return kernels.gaussian_mean(p, scale=self.mean_scale, order=self.gh_order)

    def saddle_config(self) -> theory.SaddleConfig:
        return theory.SaddleConfig(
            max_outer_iters=self.max_outer_iters,
            grad_tol=self.grad_tol,
            fd_step=self.fd_step,
            gh_order=self.gh_order,
        )

    def row_problem(self, p: float, sweep_value: float) -> theory.ProblemSpec:
        eps0, delta = self.eps0, self.delta
        if self.sweep_variable == "eps0":
            eps0 = sweep_value
        elif self.sweep_variable == "inv_delta":
            if sweep_value <= 0:
                raise ConfigError("inv_delta sweep values must be positive")
            delta = 1.0 / sweep_value
        return theory.ProblemSpec(
            p=p,
            eps0=eps0,
            delta=delta,
            loss=kernels.make_loss(self.loss),
            mean=self.mean_distribution(p),
            cov=self.covariance(),
        )


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"bad config syntax: {exc}") from exc
    try:
        prob = cp["problem"]
        p_list = [_parse_p(tok) for tok in prob.get("p", "2").split(",")]
        sweep = cp["sweep"] if cp.has_section("sweep") else {}
        variable = sweep.get("variable", "eps0")
        if variable not in ("eps0", "inv_delta"):
            raise ConfigError(f"unknown sweep variable {variable!r}")
        values_text = sweep.get("values", "")
        if values_text:
            values = [float(tok) for tok in values_text.split(",")]
        else:
            values = [prob.getfloat("eps0", 0.0) if variable == "eps0" else 1.0]
        solver = cp["solver"] if cp.has_section("solver") else {}
        sim = cp["simulation"] if cp.has_section("simulation") else {}
        out = cp["output"] if cp.has_section("output") else {}
        comp = cp["compare"] if cp.has_section("compare") else {}
        eig_text = prob.get("eigen_sample", "1.0")
        cfg = ExperimentConfig(
            p_list=p_list,
            delta=prob.getfloat("delta", 1.0),
            eps0=prob.getfloat("eps0", 0.0),
            loss=prob.get("loss", "logistic"),
            mean_scale=prob.getfloat("mean_scale", 1.0),
            cov_kind=prob.get("cov", "isotropic"),
            a2=prob.getfloat("a2", 1.0),
            eigen_sample=np.array([float(t) for t in eig_text.split(",")]),
            sweep_variable=variable,
            sweep_values=values,
            gh_order=int(solver.get("gh_order", kernels.default_gh_order())),
            grad_tol=float(solver.get("grad_tol", 1e-6)),
            fd_step=float(solver.get("fd_step", 1e-6)),
            max_outer_iters=int(solver.get("max_outer_iters", 400)),
            d=int(sim.get("d", 200)),
            trials=int(sim.get("trials", 40)),
            budget=int(sim.get("budget", 20000)),
            gamma=float(sim.get("gamma", 1.0)),
            pi_plus=float(sim.get("pi_plus", 0.5)),
            trainer=sim.get("trainer", "auto"),
            prefix=out.get("prefix", "run"),
            sa_tol=float(comp.get("sa_tol", 0.02)),
            ra_tol=float(comp.get("ra_tol", 0.03)),
            theory_csv=comp.get("theory_csv", None) or None,
            empirical_csv=comp.get("empirical_csv", None) or None,
            raw={s: dict(cp[s]) for s in cp.sections()},
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if cfg.delta <= 0 or cfg.trials < 1 or cfg.d < 2:
        raise ConfigError("delta must be > 0, trials >= 1, d >= 2")
    if cfg.loss not in ("logistic", "exponential", "hinge"):
        raise ConfigError(f"unknown loss {cfg.loss!r}")
    if cfg.cov_kind not in ("isotropic", "spiked"):
        raise ConfigError(f"unknown covariance kind {cfg.cov_kind!r}")
    if cfg.trainer not in ("auto", "gd", "max_margin", "convex"):
        raise ConfigError(f"unknown trainer {cfg.trainer!r}")
    return cfg


@dataclass
class SweepTable:
    """Rows of theory/empirical results plus the reproducibility manifest."""

    rows: list[dict]
    manifest: dict

    def to_csv(self) -> str:
        lines = [",".join(CSV_COLUMNS)]
        for row in self.rows:
            lines.append(",".join(_fmt(row.get(c)) for c in CSV_COLUMNS))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path, name: str) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"{name}.csv"
        csv_path.write_text(self.to_csv())
        manifest_path = out_dir / f"{name}.manifest.json"
        manifest_path.write_text(json.dumps(self.manifest, indent=2, sort_keys=True))
        return csv_path


def _manifest(cfg: ExperimentConfig, command: str, seed: int, extra: dict | None = None) -> dict:
    man = {
        "artifact_version": __version__,
        "command": command,
        "seed": seed,
        "config": cfg.raw,
        "defaults": {
            "d": cfg.d,
            "trials": cfg.trials,
            "budget": cfg.budget,
            "gamma": cfg.gamma,
            "pi_plus": cfg.pi_plus,
            "trainer": cfg.trainer,
            "gh_order": cfg.gh_order,
            "loss": cfg.loss,
            "mean_scale": cfg.mean_scale,
        },
        "columns": CSV_COLUMNS,
    }
    if extra:
        man.update(extra)
    return man


# ---------------------------------------------------------------------------
# Theory sweep
# ---------------------------------------------------------------------------

def run_predict(cfg: ExperimentConfig, seed: int = 0, workers: int = 1) -> SweepTable:
    """Theory columns over the sweep grid; deterministic and warm-started."""
    p = cfg.p
    scfg = cfg.saddle_config()
    rows = []
    thr_x0 = None
    warm = {"separable": None, "non_separable": None}
    for value in cfg.sweep_values:
        spec = cfg.row_problem(p, value)
        thr = separability.delta_star(
            spec.eps0, spec.p, spec.mean, spec.cov, scfg.rule(), x0=thr_x0
        )
        thr_x0 = (thr.argmin_alpha, thr.argmin_theta)
        row = {
            "sweep_var_name": cfg.sweep_variable,
            "sweep_value": value,
            "delta_star": thr.delta_star,
            "n_trials": 0,
        }
        try:
            pred = theory.predict(
                spec,
                scfg,
                threshold=thr,
                warm_start=warm["separable" if spec.delta < thr.delta_star else "non_separable"],
            )
        except PhaseBoundaryError:
            row["regime"] = "boundary"
            rows.append(row)
            continue
        row["regime"] = pred.regime
        row["sa_theory"] = pred.sa
        row["ra_theory"] = pred.ra
        warm[pred.regime] = {
            "alpha": pred.alpha_star,
            "theta": pred.theta_star,
            "gamma0": pred.gamma0_star,
        }
        rows.append(row)
    return SweepTable(rows=rows, manifest=_manifest(cfg, "predict", seed))


# ---------------------------------------------------------------------------
# Monte-Carlo simulation
# ---------------------------------------------------------------------------

def _trial_seed(master_seed: int, row_index: int, trial: int) -> int:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(row_index, trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _select_trainer(cfg_trainer: str, q: float, verdict: str) -> str:
    if cfg_trainer != "auto":
        return cfg_trainer
    if q == np.inf:
        # descent on the dual sup-norm converges impractically slowly, so
        # use the margin program / exact convex solve instead
        return "max_margin" if verdict == "separable" else "convex"
    return "gd"


def run_trial(job: dict) -> dict:
    """One Monte-Carlo trial: sample, classify separability, train, evaluate."""
    try:
        p = job["p"]
        q = theory.dual_exponent(p)
        mean = job["mean"]
        cov = job["cov"]
        seed = job["trial_seed"]
        mu = gmm.sample_mean(job["d"], mean, seed)
        eps = training.realized_budget(job["eps0"], p, mu)
        n = max(int(round(job["delta"] * job["d"])), 1)
        data = gmm.sample_dataset(n, mu, cov, job["pi_plus"], seed=seed, stream=1)
        verdict = training.is_robustly_separable(data, eps, q)
        trainer = _select_trainer(job["trainer"], q, verdict)
        loss = kernels.make_loss(job["loss"])
        if trainer == "max_margin":
            outcome = training.max_margin(data, eps, q)
            if outcome.estimate is None:
                est = training.train_convex(data, eps, q, loss)
            else:
                est = outcome.estimate
        elif trainer == "convex":
            est = training.train_convex(data, eps, q, loss)
        else:
            mode = "polyak" if verdict == "separable" else "approx_polyak"
            est = training.train_gd(
                data, eps, q, mode=mode, budget=job["budget"], gamma=job["gamma"],
                loss=loss,
            )
        sa, ra = training.eval_population(est.theta, mu, cov, eps, q)
        return {"ok": True, "sa": sa, "ra": ra, "verdict": verdict}
    except AdvriskError as exc:
        return {"ok": False, "error": str(exc)}


def _run_trials(jobs: list[dict], workers: int) -> list[dict]:
    if workers <= 1 or len(jobs) <= 1:
        return [run_trial(j) for j in jobs]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=workers) as pool:
        return list(pool.map(run_trial, jobs, chunksize=1))


def run_simulate(cfg: ExperimentConfig, seed: int = 0, workers: int = 1) -> SweepTable:
    """Empirical columns over the sweep grid, averaged over seeded trials."""
    p = cfg.p
    cov = cfg.covariance()
    mean = cfg.mean_distribution(p)
    scfg = cfg.saddle_config()
    rows = []
    thr_x0 = None
    for row_index, value in enumerate(cfg.sweep_values):
        spec = cfg.row_problem(p, value)
        thr = separability.delta_star(
            spec.eps0, spec.p, spec.mean, spec.cov, scfg.rule(), x0=thr_x0
        )
        thr_x0 = (thr.argmin_alpha, thr.argmin_theta)
        jobs = [
            {
                "p": p,
                "eps0": spec.eps0,
                "delta": spec.delta,
                "d": cfg.d,
                "pi_plus": cfg.pi_plus,
                "budget": cfg.budget,
                "gamma": cfg.gamma,
                "trainer": cfg.trainer,
                "loss": cfg.loss,
                "mean": mean,
                "cov": cov,
                "trial_seed": _trial_seed(seed, row_index, t),
            }
            for t in range(cfg.trials)
        ]
        results = _run_trials(jobs, workers)
        ok = [r for r in results if r["ok"]]
        n_ok = len(ok)
        row = {
            "sweep_var_name": cfg.sweep_variable,
            "sweep_value": value,
            "delta_star": thr.delta_star,
            "regime": "separable" if spec.delta < thr.delta_star else "non_separable",
            "n_trials": n_ok,
        }
        if n_ok:
            sa = np.array([r["sa"] for r in ok])
            ra = np.array([r["ra"] for r in ok])
            row["sa_emp_mean"] = float(sa.mean())
            row["sa_emp_stderr"] = float(sa.std() / np.sqrt(n_ok))
            row["ra_emp_mean"] = float(ra.mean())
            row["ra_emp_stderr"] = float(ra.std() / np.sqrt(n_ok))
            row["sep_fraction"] = float(
                np.mean([r["verdict"] == "separable" for r in ok])
            )
        if len(results) - n_ok > 0.1 * len(results):
            row["regime"] = "failed"
        rows.append(row)
    return SweepTable(
        rows=rows,
        manifest=_manifest(cfg, "simulate", seed, {"workers_hint": workers}),
    )


# ---------------------------------------------------------------------------
# Threshold table
# ---------------------------------------------------------------------------

def run_threshold(cfg: ExperimentConfig, seed: int = 0, workers: int = 1) -> SweepTable:
    """(p, eps0) -> threshold table; sweep variable must be eps0."""
    if cfg.sweep_variable != "eps0":
        raise ConfigError("threshold command sweeps eps0 only")
    rows = []
    cov = cfg.covariance()
    rule = kernels.QuadratureRule(gh_order=cfg.gh_order)
    for p in cfg.p_list:
        mean = cfg.mean_distribution(p)
        x0 = None
        for value in cfg.sweep_values:
            thr = separability.delta_star(value, p, mean, cov, rule, x0=x0)
            x0 = (thr.argmin_alpha, thr.argmin_theta)
            rows.append(
                {
                    "p": "inf" if not np.isfinite(p) else p,
                    "eps0": value,
                    "delta_star": thr.delta_star,
                    "argmin_alpha": thr.argmin_alpha,
                    "argmin_theta": thr.argmin_theta,
                    "method": thr.method,
                }
            )
    table = SweepTable(rows=rows, manifest=_manifest(cfg, "threshold", seed))

    def to_csv():
        lines = [",".join(THRESHOLD_COLUMNS)]
        for row in rows:
            lines.append(",".join(_fmt(row.get(c)) for c in THRESHOLD_COLUMNS))
        return "\n".join(lines) + "\n"

    table.to_csv = to_csv
    table.manifest["columns"] = THRESHOLD_COLUMNS
    return table


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------

def _read_csv(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        cells = line.split(",")
        rows.append({k: (v if v != "" else None) for k, v in zip(header, cells)})
    return rows


def run_compare(
    cfg: ExperimentConfig, seed: int = 0, workers: int = 1
) -> tuple[SweepTable, dict, bool]:
    """Join theory and empirical tables and check per-row deviations."""
    if cfg.theory_csv:
        theory_rows = _read_csv(cfg.theory_csv)
    else:
        theory_rows = run_predict(cfg, seed=seed, workers=workers).rows
    if cfg.empirical_csv:
        emp_rows = _read_csv(cfg.empirical_csv)
    else:
        emp_rows = run_simulate(cfg, seed=seed, workers=workers).rows

    def key(row):
        return format(float(row["sweep_value"]), ".12g")

    theory_map = {key(r): r for r in theory_rows}
    emp_map = {key(r): r for r in emp_rows}
    if set(theory_map) != set(emp_map):
        raise ConfigError(
            "theory and empirical sweep grids do not match: "
            f"{sorted(theory_map)} vs {sorted(emp_map)}"
        )
    merged = []
    deviations = []
    ok = True
    for k in (key(r) for r in theory_rows):
        t, e = theory_map[k], emp_map[k]
        row = dict(t)
        for col in (
            "sa_emp_mean",
            "sa_emp_stderr",
            "ra_emp_mean",
            "ra_emp_stderr",
            "sep_fraction",
            "n_trials",
        ):
            row[col] = e.get(col)
        merged.append(row)
        if t.get("regime") == "boundary" or t.get("sa_theory") in (None, ""):
            continue
        if row.get("sa_emp_mean") in (None, ""):
            continue
        dev_sa = abs(float(row["sa_emp_mean"]) - float(row["sa_theory"]))
        dev_ra = abs(float(row["ra_emp_mean"]) - float(row["ra_theory"]))
        deviations.append(
            {"sweep_value": row["sweep_value"], "dev_sa": dev_sa, "dev_ra": dev_ra}
        )
        if dev_sa > cfg.sa_tol or dev_ra > cfg.ra_tol:
            ok = False
    summary = {
        "sa_tol": cfg.sa_tol,
        "ra_tol": cfg.ra_tol,
        "deviations": deviations,
        "max_dev_sa": max((d["dev_sa"] for d in deviations), default=0.0),
        "max_dev_ra": max((d["dev_ra"] for d in deviations), default=0.0),
        "within_tolerance": ok,
    }
    table = SweepTable(
        rows=merged,
        manifest=_manifest(cfg, "compare", seed, {"summary": summary}),
    )
    return table, summary, ok
