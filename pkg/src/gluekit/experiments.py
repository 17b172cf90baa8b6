"""Experiment orchestration: config -> ReportBundle -> files on disk.

Every runner is a pure function of (config, seed): Monte-Carlo work is keyed
by substream indices and reduced by position, so a rerun of the same config
is byte-identical and the worker count only affects wall time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, config_hash
from .glue import capacity_from_geometry, estimate_geometry
from .model import ManifoldEnsemble, RngStream
from .npyio import load_activations
from .parallel import resolve_workers
from .simcap import simulated_capacity
from .synth import (
    CorrelationSpec,
    SphericalSpec,
    assign_labels,
    gen_correlated_spherical,
    gen_isotropic_gaussian,
    gen_isotropic_spherical,
)
from .theory import (
    accuracy_theory,
    capacity_theory,
    constant_label,
    cover_prob,
    gauss_equiv_params,
    logistic_label,
    run_one_step,
)
from .twolayer import TrainConfig, init_net, make_labeled_data, train

__all__ = ["ReportBundle", "run_experiment", "emit_reports"]


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)
    column_meta: dict = field(default_factory=dict)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"row width {len(values)} != {len(self.columns)}")
        self.rows.append(list(values))


@dataclass
class ReportBundle:
    metadata: dict
    tables: dict = field(default_factory=dict)
    figures: dict = field(default_factory=dict)

    def table(self, name: str, columns, column_meta=None) -> Table:
        t = Table(list(columns), column_meta=dict(column_meta or {}))
        self.tables[name] = t
        return t

    def declare_figure(self, name: str, table: str, x: str, y, yerr=None):
        self.figures[name] = {"table": table, "x": x, "y": list(np.atleast_1d(y)), "yerr": yerr}


def _label_fn(block: dict):
    if block["name"] == "logistic":
        return logistic_label(float(block.get("gain", 4.0)))
    return constant_label(float(block.get("p", 0.5)))


def _source_ensemble(block: dict, seed: int) -> ManifoldEnsemble:
    if "activations" in block:
        return load_activations(block["activations"], block["format"], block["labels"])
    synth = block["synth"]
    spec = SphericalSpec(
        P=synth["P"], M=synth["M"], D=synth["D"], R=float(synth["R"]),
        d=synth["d"], noise_eps=float(synth.get("noise_eps", 1e-2)),
    )
    rng = RngStream(seed)
    if "correlations" in block:
        corr = CorrelationSpec(
            rho_center=float(block["correlations"].get("rho_center", 0.0)),
            rho_axis=float(block["correlations"].get("rho_axis", 0.0)),
            psi_center_axis=float(block["correlations"].get("psi_center_axis", 0.0)),
        )
        train_ens, test_ens = gen_correlated_spherical(spec, corr, rng)
    else:
        train_ens, test_ens = gen_isotropic_spherical(spec, rng)
    return train_ens if block.get("split", "train") == "train" else test_ens


def _random_points_ensemble(P: int, N: int, rng: RngStream) -> ManifoldEnsemble:
    from .model import PointCloudManifold

    g = rng.generator()
    pts = g.standard_normal((P, N))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    manifolds = tuple(PointCloudManifold(i, pts[i : i + 1]) for i in range(P))
    return ManifoldEnsemble(manifolds, N)


# ---------------------------------------------------------------------------
# runners
# ---------------------------------------------------------------------------

def _run_cover_check(cfg: ExperimentConfig, workers: int, bundle: ReportBundle):
    p = cfg.params
    N, m = p["N"], p["m"]
    t = bundle.table(
        "cover_curve",
        ["P", "p_empirical", "p_cover", "abs_err", "trials"],
        {
            "P": "number of random-labeled points",
            "p_empirical": "Monte-Carlo separability probability after projection to N dims",
            "p_cover": "closed-form separability probability for points in general position",
            "abs_err": "|p_empirical - p_cover|",
            "trials": "Monte-Carlo trials per point",
        },
    )
    for i, P in enumerate(p["P_grid"]):
        P = int(P)
        ens = _random_points_ensemble(P, N, RngStream(cfg.seed, 2 * i))
        from .simcap import est_prob

        p_emp = est_prob(ens, N, m, RngStream(cfg.seed, 2 * i + 1), workers)
        p_th = cover_prob(N, P)
        t.add(P, p_emp, p_th, abs(p_emp - p_th), m)
    bundle.declare_figure("cover_curve", "cover_curve", x="P", y=["p_empirical", "p_cover"])

    sim_points = p.get("sim_points")
    if sim_points:
        ens = _random_points_ensemble(int(sim_points), N, RngStream(cfg.seed, 1001))
        rep = simulated_capacity(ens, m, RngStream(cfg.seed, 1002), "binary_search", workers)
        ts = bundle.table(
            "simulated_capacity",
            ["P", "alpha_sim", "critical_dim"],
            {"alpha_sim": "P / critical projection dimension", "critical_dim": "smallest n with p_hat >= 0.5"},
        )
        ts.add(int(sim_points), rep.alpha_sim, rep.critical_dim)


def _run_glue(cfg: ExperimentConfig, workers: int, bundle: ReportBundle):
    p = cfg.params
    ens = _source_ensemble(p["source"], cfg.seed)
    rep = estimate_geometry(
        ens, p["n_draws"], RngStream(cfg.seed, 50_000), workers,
        absolute_alignments=bool(p.get("absolute_alignments", False)),
    )
    t = bundle.table(
        "glue_report",
        ["statistic", "value", "std_err"],
        {"statistic": "effective geometric measure", "value": "Monte-Carlo estimate", "std_err": "standard error"},
    )
    for name, val in [
        ("capacity", rep.capacity),
        ("dimension", rep.dimension),
        ("radius", rep.radius),
        ("center_align", rep.center_align),
        ("axis_align", rep.axis_align),
        ("center_axis_align", rep.center_axis_align),
    ]:
        t.add(name, val, rep.std_err[name])


def _run_simcap(cfg: ExperimentConfig, workers: int, bundle: ReportBundle):
    p = cfg.params
    ens = _source_ensemble(p["source"], cfg.seed)
    rep = simulated_capacity(
        ens, p.get("m", 1000), RngStream(cfg.seed, 60_000), p.get("method", "binary_search"), workers
    )
    t = bundle.table("capacity", ["alpha_sim", "critical_dim", "method"], {})
    t.add(rep.alpha_sim, rep.critical_dim, rep.method)
    tc = bundle.table("prob_curve", ["n", "p_hat", "trials"], {"n": "projection dimension"})
    for n, ph, m in rep.curve.entries:
        tc.add(n, ph, m)
    bundle.declare_figure("prob_curve", "prob_curve", x="n", y=["p_hat"])


_SWEEP_COLS = ["value", "capacity", "capacity_se", "dimension", "radius",
               "center_align", "axis_align", "center_axis_align", "geom_approx"]


def _run_synth_sweep(cfg: ExperimentConfig, workers: int, bundle: ReportBundle):
    p = cfg.params
    base = p["base"]
    n_draws, seeds = p["n_draws"], p["seeds"]
    absolute = bool(p.get("absolute_alignments", True))
    for sweep in p["sweeps"]:
        param, values = sweep["param"], sweep["values"]
        t = bundle.table(
            f"sweep_{param}",
            _SWEEP_COLS,
            {"value": f"ground-truth {param}", "capacity": "alpha_M (seed mean)",
             "capacity_se": "std err over seeds", "geom_approx": "(1 + R_M^-2)/D_M"},
        )
        for vi, value in enumerate(values):
            spec_kw = dict(P=base["P"], M=base["M"], D=base["D"], R=float(base["R"]),
                           d=base["d"], noise_eps=float(base.get("noise_eps", 1e-2)))
            corr_kw = dict(rho_center=0.0, rho_axis=0.0, psi_center_axis=0.0)
            if param in ("D", "R"):
                spec_kw[param] = int(value) if param == "D" else float(value)
            else:
                corr_kw[param] = float(value)
            spec = SphericalSpec(**spec_kw)
            corr = CorrelationSpec(**corr_kw)
            stats = []
            for s in range(seeds):
                gen_rng = RngStream(cfg.seed, 1 + s)
                est_rng = RngStream(cfg.seed, 500 + 100 * vi + s)
                train_ens, _ = gen_correlated_spherical(spec, corr, gen_rng)
                rep = estimate_geometry(train_ens, n_draws, est_rng, workers, absolute_alignments=absolute)
                stats.append([rep.capacity, rep.dimension, rep.radius,
                              rep.center_align, rep.axis_align, rep.center_axis_align])
            arr = np.asarray(stats)
            mean = arr.mean(axis=0)
            cap_se = arr[:, 0].std(ddof=1) / np.sqrt(seeds) if seeds > 1 else float("nan")
            approx = capacity_from_geometry(mean[1], mean[2]) if mean[1] > 0 and mean[2] > 0 else float("nan")
            t.add(float(value), mean[0], cap_se, mean[1], mean[2], mean[3], mean[4], mean[5], approx)
        bundle.declare_figure(f"sweep_{param}", f"sweep_{param}", x="value",
                              y=["capacity", "dimension", "radius", "center_align", "axis_align"],
                              yerr="capacity_se")


def _run_theory_curve(cfg: ExperimentConfig, workers: int, bundle: ReportBundle):
    p = cfg.params
    F = _label_fn(p["label"])
    order = int(p.get("quadrature_order", 256))
    act = p["activation"]
    psi1, psi2 = float(p["psi1"]), float(p["psi2"])
    t = bundle.table(
        "theory_curve",
        ["eta", "capacity", "accuracy", "tau", "tau0_sq", "tau_delta_sq",
         "theta1", "theta2", "theta3", "theta4"],
        {"eta": "one-step learning rate", "capacity": "closed-form storage capacity",
         "accuracy": "closed-form prediction accuracy", "tau": "effective label noise"},
    )
    for eta in p["eta_grid"]:
        eta = float(eta)
        params = gauss_equiv_params(psi1, psi2, eta, F, act, order)
        alpha = capacity_theory(psi1, psi2, eta, F, act, order)
        acc = accuracy_theory(psi1, psi2, eta, F, act, order)
        t.add(eta, alpha, acc, params.tau, params.tau0_sq, params.tau_delta_sq,
              params.theta1, params.theta2, params.theta3, params.theta4)
    bundle.declare_figure("theory_capacity", "theory_curve", x="eta", y=["capacity"])
    bundle.declare_figure("theory_accuracy", "theory_curve", x="eta", y=["accuracy"])


def _run_one_step(cfg: ExperimentConfig, workers: int, bundle: ReportBundle):
    p = cfg.params
    F = _label_fn(p["label"])
    act = p["activation"]
    d = int(p["d"])
    psi1, psi2 = float(p.get("psi1", 1.0)), float(p.get("psi2", 1.0))
    reps = int(p["replicates"])
    n_test = int(p.get("n_test", 2000))
    t = bundle.table(
        "one_step",
        ["eta", "acc_empirical", "acc_se", "acc_theory", "capacity_theory", "replicates"],
        {"acc_empirical": "mean test accuracy over replicates",
         "acc_se": "standard error over replicates",
         "acc_theory": "closed-form prediction accuracy",
         "capacity_theory": "closed-form storage capacity"},
    )
    from .parallel import indexed_map

    for gi, eta in enumerate(p["eta_grid"]):
        eta = float(eta)
        worker = _OneStepWorker(d, psi1, psi2, eta, F, act, cfg.seed, gi, n_test)
        accs = np.asarray(indexed_map(worker, range(reps), workers))
        se = accs.std(ddof=1) / np.sqrt(reps) if reps > 1 else float("nan")
        t.add(eta, float(accs.mean()), float(se),
              accuracy_theory(psi1, psi2, eta, F, act),
              capacity_theory(psi1, psi2, eta, F, act), reps)
    bundle.declare_figure("one_step_accuracy", "one_step", x="eta",
                          y=["acc_empirical", "acc_theory"], yerr="acc_se")


class _OneStepWorker:
    def __init__(self, d, psi1, psi2, eta, F, act, seed, grid_index, n_test):
        self.args = (d, psi1, psi2, eta, F, act, n_test)
        self.seed = seed
        self.grid_index = grid_index

    def __call__(self, rep: int):
        d, psi1, psi2, eta, F, act, n_test = self.args
        rng = RngStream(self.seed, 70_000 + 1000 * self.grid_index + rep)
        return run_one_step(d, psi1, psi2, eta, F, act, rng, n_test).accuracy


class _Train2lWorker:
    def __init__(self, p: dict, seed: int):
        self.p = p
        self.seed = seed

    def __call__(self, job):
        ebar_index, ebar, rep = job
        p = self.p
        run_seed = self.seed + 1000 * rep
        rng = RngStream(run_seed)
        P, M, d = p["P"], p["M"], p["d"]
        if p.get("data", "gaussian") == "gaussian":
            train_ens, test_ens = gen_isotropic_gaussian(P, M, float(p.get("R", 0.5)), d, rng.substream(0))
        else:
            spec = SphericalSpec(P=P, M=M, D=int(p.get("intrinsic_dim", 8)),
                                 R=float(p.get("R", 1.0)), d=d)
            train_ens, test_ens = gen_isotropic_spherical(spec, rng.substream(0))
        labels = assign_labels(P, rng.substream(1))
        net = init_net(d, p["N"], p["K"], float(p["eta"]) / float(ebar),
                       p.get("activation", "relu"), rng.substream(2))
        epochs = p["epochs"]
        checkpoints = (0, epochs) if p.get("checkpoints", "endpoints") == "endpoints" else None
        tc = TrainConfig(
            eta=float(p["eta"]),
            readout_lr_factor=float(p.get("readout_lr_factor", 0.0)),
            loss=p.get("loss", "mse"),
            epochs=epochs,
            checkpoint_epochs=checkpoints,
            seed=run_seed,
            glue_draws=int(p.get("glue_draws", 100)),
            glue_draws_final=int(p.get("glue_draws_final", 200)),
        )
        trace = train(net, make_labeled_data(train_ens, labels), make_labeled_data(test_ens, labels), tc)
        return (ebar_index, ebar, rep, trace)


def _run_train2l(cfg: ExperimentConfig, workers: int, bundle: ReportBundle):
    p = cfg.params
    jobs = [
        (i, float(ebar), rep)
        for i, ebar in enumerate(p["eta_bar_grid"])
        for rep in range(p["seeds"])
    ]
    from .parallel import indexed_map

    results = indexed_map(_Train2lWorker(p, cfg.seed), jobs, workers)

    runs = bundle.table(
        "runs",
        ["eta_bar", "seed_rep", "final_train_acc", "final_test_acc", "weight_change",
         "capacity_init", "capacity_final", "capacity_gain", "diverged"],
        {"eta_bar": "effective learning rate eta/alpha",
         "capacity_gain": "alpha_M(final) - alpha_M(init)"},
    )
    trace_tab = bundle.table(
        "trace",
        ["eta_bar", "seed_rep", "epoch", "train_acc", "test_acc", "loss", "weight_change",
         "activation_stability", "rep_similarity", "ntk_change", "kernel_alignment",
         "cka_rep_label", "cka_ntk_label", "capacity", "dimension", "radius",
         "center_align", "axis_align", "center_axis_align"],
        {"capacity": "alpha_M on test representations"},
    )
    summary = {}
    for ebar_index, ebar, rep, trace in results:
        first, last = trace.checkpoints[0], trace.checkpoints[-1]
        gain = last.glue.capacity - first.glue.capacity if (last.glue and first.glue) else float("nan")
        runs.add(ebar, rep, last.train_accuracy, last.test_accuracy, last.weight_change,
                 first.glue.capacity if first.glue else float("nan"),
                 last.glue.capacity if last.glue else float("nan"),
                 gain, trace.diverged)
        summary.setdefault(ebar, []).append((gain, last.weight_change, last.train_accuracy))
        for c in trace.checkpoints:
            g = c.glue
            trace_tab.add(ebar, rep, c.epoch, c.train_accuracy, c.test_accuracy, c.loss,
                          c.weight_change, c.activation_stability, c.rep_similarity,
                          c.ntk_change, c.kernel_alignment, c.cka_rep_label, c.cka_ntk_label,
                          g.capacity if g else float("nan"), g.dimension if g else float("nan"),
                          g.radius if g else float("nan"), g.center_align if g else float("nan"),
                          g.axis_align if g else float("nan"), g.center_axis_align if g else float("nan"))

    agg = bundle.table(
        "summary",
        ["eta_bar", "capacity_gain_mean", "capacity_gain_se", "weight_change_mean", "train_acc_mean"],
        {"capacity_gain_mean": "seed mean of alpha_M(final) - alpha_M(init)"},
    )
    for ebar in sorted(summary):
        arr = np.asarray(summary[ebar])
        se = arr[:, 0].std(ddof=1) / np.sqrt(len(arr)) if len(arr) > 1 else float("nan")
        agg.add(ebar, float(arr[:, 0].mean()), float(se), float(arr[:, 1].mean()), float(arr[:, 2].mean()))
    bundle.declare_figure("capacity_gain", "summary", x="eta_bar", y=["capacity_gain_mean"],
                          yerr="capacity_gain_se")


_RUNNERS = {
    "cover-check": _run_cover_check,
    "glue": _run_glue,
    "simcap": _run_simcap,
    "synth-sweep": _run_synth_sweep,
    "theory-curve": _run_theory_curve,
    "one-step": _run_one_step,
    "train2l": _run_train2l,
}


def run_experiment(config: ExperimentConfig) -> ReportBundle:
    """Dispatch a validated config to its runner; deterministic per (config, seed)."""
    workers = resolve_workers(cap=config.parallelism)
    bundle = ReportBundle(
        metadata={
            "kind": config.kind,
            "seed": config.seed,
            "config_hash": config_hash(config),
            "code_version": __version__,
            "workers": workers,
            "config": config.to_dict(),
        }
    )
    try:
        _RUNNERS[config.kind](config, workers, bundle)
    except Exception as exc:
        raise type(exc)(f"[{config.kind}, seed={config.seed}] {exc}").with_traceback(exc.__traceback__) from None
    return bundle


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_reports(bundle: ReportBundle, out_dir) -> list:
    """Write tables, metadata sidecar, a human summary, and per-figure plot data.

    Overwrites idempotently; emitting the same bundle twice yields identical
    bytes.  Returns the list of written paths.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for name, tab in sorted(bundle.tables.items()):
            path = out / f"{name}.csv"
            lines = ["\t".join(tab.columns)]
            for row in tab.rows:
                lines.append("\t".join(_fmt(v) for v in row))
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            written.append(path)

        meta = {
            "metadata": bundle.metadata,
            "tables": {
                name: {"columns": tab.columns, "column_meta": tab.column_meta, "rows": len(tab.rows)}
                for name, tab in sorted(bundle.tables.items())
            },
            "figures": bundle.figures,
        }
        meta_path = out / "meta.json"
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(meta_path)

        for fig_name, fig in sorted(bundle.figures.items()):
            tab = bundle.tables[fig["table"]]
            cols = [fig["x"], *fig["y"]] + ([fig["yerr"]] if fig.get("yerr") else [])
            idx = [tab.columns.index(c) for c in cols]
            path = out / f"plotdata_{fig_name}.csv"
            lines = ["\t".join(cols)]
            for row in tab.rows:
                lines.append("\t".join(_fmt(row[i]) for i in idx))
            path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            written.append(path)

        summary_path = out / "summary.txt"
        lines = [
            f"experiment: {bundle.metadata.get('kind')}",
            f"seed: {bundle.metadata.get('seed')}",
            f"config_hash: {bundle.metadata.get('config_hash')}",
            f"code_version: {bundle.metadata.get('code_version')}",
            "",
        ]
        for name, tab in sorted(bundle.tables.items()):
            lines.append(f"[{name}] ({len(tab.rows)} rows)")
            lines.append("  " + " | ".join(tab.columns))
            for row in tab.rows[:20]:
                lines.append("  " + " | ".join(_fmt(v) for v in row))
            if len(tab.rows) > 20:
                lines.append(f"  ... {len(tab.rows) - 20} more rows")
            lines.append("")
        summary_path.write_text("\n".join(lines), encoding="utf-8")
        written.append(summary_path)
        return [str(p) for p in written]
    except OSError as exc:
        raise OSError(f"failed writing reports under {out}: {exc}") from exc
