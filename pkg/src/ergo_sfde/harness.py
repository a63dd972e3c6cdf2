"""Run configured experiments and persist their results deterministically."""
from __future__ import annotations

import json
import logging
import math
import os
import platform
import time
import warnings
from dataclasses import asdict, is_dataclass

import numpy as np

from . import __version__
from .config import ExperimentConfig, load, parse_segment
from .errors import ConfigError, DivergenceError, ErgoError, InvalidModelError, InvalidParameterError

log = logging.getLogger(__name__)

EXIT_OK, EXIT_ERROR, EXIT_SCHEMA, EXIT_DIVERGENCE = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# deterministic serialization

def fmt_float(x):
    x = float(x)
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return format(x, ".17g")


def _plain(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def dumps(obj, indent=0):
    """JSON with 17-significant-digit floats and stable layout."""
    obj = _plain(obj)
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, float):
        return fmt_float(obj)
    if isinstance(obj, int):
        return str(obj)
    return json.dumps(str(obj))


def write_csv(path, header, rows):
    cell = lambda v: fmt_float(v) if isinstance(v, (float, np.floating)) else str(v)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(cell(v) for v in r) + "\n")


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# experiments

def build_model(cfg: ExperimentConfig):
    from .model import make_builtin

    p = dict(cfg.model)
    kind, unchecked = p.pop("kind"), p.pop("unchecked")
    return make_builtin(kind, p, unchecked=unchecked)


def _sim_config(cfg, horizon=None):
    from .sim import SimConfig

    s = cfg.sim
    return SimConfig(s["dt"], s["horizon"] if horizon is None else horizon, s["master_seed"])


def _times(cfg, default):
    t = cfg.experiment["times"]
    return list(default) if t is None else list(t)


def _probes(cfg, model):
    """Constant probe segments from ``[experiment] probes`` (None: the built-in probe set)."""
    from .segment import Segment

    v = cfg.experiment["probes"]
    return None if v is None else [Segment.constant(model.tau, x) for x in v]


def _run_simulate(cfg, model, out):
    from .sim import simulate

    xi = parse_segment(cfg.experiment["xi"], model.tau)
    sc = _sim_config(cfg)
    files, summary = [], []
    for i in range(cfg.sim["n_paths"]):
        tr = simulate(model, xi, sc.replace(path_index=i))
        summary.append(dict(path_index=i, final=tr.states[-1].tolist(), n_events=int(tr.event_times.size)))
        if "csv" in out["formats"]:
            name = f"trajectory_{i}.csv"
            with open(os.path.join(out["directory"], name), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(tr.to_csv())
            files.append(name)
    return dict(kind="simulate", paths=summary), files


def _decay_rows(fit):
    return ["t", "mean_sq_gap", "stderr", "bound_4exp"], fit.csv_rows()


def _run_decay(cfg, model, out):
    from .coupling import coupled_batch, estimate_decay, kl_and_tv, select_lambda

    e, c = cfg.experiment, cfg.coupling
    xi, eta = parse_segment(e["xi"], model.tau), parse_segment(e["eta"], model.tau)
    times = _times(cfg, [model.tau * k for k in range(1, 11)])
    sc = _sim_config(cfg, max(times))
    n = cfg.sim["n_paths"]
    lam = c["lambda"]
    if lam is None:
        lam = select_lambda(model, xi, eta, c["alpha"], sc, c["lambda_max"], times, n)
    fit = estimate_decay(model, xi, eta, lam, c["alpha"], times, n, sc)
    try:
        kl = kl_and_tv(coupled_batch(model, xi, eta, lam, sc, n), alpha=c["alpha"]).to_dict()
    except InvalidModelError as err:
        kl = dict(kl=None, tv_bound=None, closed_bound=None, error=str(err))
    res = dict(kind="decay", lambda0=lam, fitted_slope=fit.fitted_slope, kl=kl["kl"], tv_bound=kl["tv_bound"],
               closed_bound=kl["closed_bound"], pass_slope=fit.pass_slope, pass_prefactor=fit.pass_prefactor,
               decay=fit.to_dict(), kl_report=kl)
    files = []
    if "csv" in out["formats"]:
        write_csv(os.path.join(out["directory"], "decay.csv"), *_decay_rows(fit))
        files.append("decay.csv")
    return res, files


def _run_c1(cfg, model, out):
    from .coupling import condition_c1_report

    e, c = cfg.experiment, cfg.coupling
    xi, eta = parse_segment(e["xi"], model.tau), parse_segment(e["eta"], model.tau)
    times = _times(cfg, [model.tau * k for k in range(1, 11)])
    rep = condition_c1_report(model, [(xi, eta)], c["alpha"], times, _sim_config(cfg, max(times)),
                              cfg.sim["n_paths"], c["lambda"], c["lambda_max"])
    files = []
    if "csv" in out["formats"]:
        write_csv(os.path.join(out["directory"], "decay.csv"), *_decay_rows(rep.pairs[0].decay))
        files.append("decay.csv")
    return dict(kind="c1", c1=rep.to_dict(), passed=rep.passed), files


def _run_c2(cfg, model, out):
    from .ergodicity import condition_c2_report

    e = cfg.experiment
    rep = condition_c2_report(model, e["M"], e["epsilon"], e["t0"], cfg.sim["n_paths"], _sim_config(cfg),
                              e["case"], _probes(cfg, model))
    res = dict(kind="c2", c2=rep.to_dict(), verdict="inconclusive" if rep.inconclusive else "pass")
    return res, []


def _run_support(cfg, model, out):
    from .ergodicity import support_check

    e = cfg.experiment
    t = e["t"] if e["t"] is not None else 10 * model.tau
    rep = support_check(model, e["R"], e["delta"], t, cfg.sim["n_paths"], _sim_config(cfg),
                        _probes(cfg, model))
    files = []
    if "csv" in out["formats"]:
        write_csv(os.path.join(out["directory"], "support.csv"),
                  ["probe", "p_full", "se_full", "p_aux", "se_aux", "no_jump_fraction", "no_jump_expected"],
                  rep.csv_rows())
        files.append("support.csv")
    verdict = "inconclusive" if rep.inconclusive else ("pass" if rep.passed else "fail")
    return dict(kind="support", support=rep.to_dict(), verdict=verdict), files


def _run_wasserstein(cfg, model, out):
    from .transport import ReferenceEnsemble, wasserstein_time_marginals

    e = cfg.experiment
    xi = parse_segment(e["xi"], model.tau)
    times = _times(cfg, [model.tau * k for k in range(1, 7)])
    other = parse_segment(e["eta"], model.tau)
    if e["reference"] == "reference":
        other = ReferenceEnsemble(other, e["reference_horizon"] or max(times) + 20 * model.tau)
    curve = wasserstein_time_marginals(model, xi, other, times, e["n_samples"], _sim_config(cfg),
                                      metric=e["metric"], n_boot=e["n_boot"])
    files = []
    if "csv" in out["formats"]:
        write_csv(os.path.join(out["directory"], "wasserstein.csv"),
                  ["t", "w_upper", "stderr_boot", "n_samples", "solver"], curve.csv_rows())
        files.append("wasserstein.csv")
    return dict(kind="wasserstein", wasserstein=curve.to_dict()), files


def _run_report(cfg, model, out):
    from .ergodicity import ReportSettings, ergodicity_report

    e, c = cfg.experiment, cfg.coupling
    s = ReportSettings(alpha=c["alpha"], lam=c["lambda"], lambda_max=c["lambda_max"],
                       c2_case=e["case"], c2_M=e["M"], c2_epsilon=e["epsilon"], c2_t0=e["t0"],
                       w_samples=e["n_samples"], w_boot=e["n_boot"],
                       w_reference_horizon=e["reference_horizon"])
    if e["times"] is not None:
        s.w_times = tuple(e["times"])
    xi, eta = parse_segment(e["xi"], model.tau), parse_segment(e["eta"], model.tau)
    rep = ergodicity_report(model, _sim_config(cfg), s, xi, eta, config_digest=cfg.digest)
    return dict(kind="report", **rep.to_dict()), []


RUNNERS = dict(simulate=_run_simulate, decay=_run_decay, c1=_run_c1, c2=_run_c2, support=_run_support,
               wasserstein=_run_wasserstein, report=_run_report)


def _versions():
    import scipy

    try:
        import numba
        nb = numba.__version__
    except ImportError:
        nb = None
    return dict(ergo_sfde=__version__, numpy=np.__version__, scipy=scipy.__version__, numba=nb,
                python=platform.python_version())


def run_experiment(config_path, out_dir=None):
    """Run one configured experiment; returns the process exit status.

    The manifest is written whenever the output directory is known, also on
    failure.
    """
    t_start = time.perf_counter()
    status, error, cfg, files = EXIT_OK, None, None, []
    directory = out_dir
    try:
        cfg = load(config_path)
        directory = out_dir or cfg.output["directory"]
        cfg.output["directory"] = directory
        os.makedirs(directory, exist_ok=True)
        model = build_model(cfg)
        kind = cfg.experiment["kind"]
        log.info("running %s experiment (digest %s)", kind, cfg.digest[:12])
        result, files = RUNNERS[kind](cfg, model, cfg.output)
        result = dict(config_digest=cfg.digest, master_seed=cfg.sim["master_seed"], **result)
        if "json" in cfg.output["formats"]:
            write_json(os.path.join(directory, "result.json"), result)
            files.append("result.json")
    except (ConfigError, InvalidModelError) as e:
        status, error = EXIT_SCHEMA, str(e)
    except DivergenceError as e:
        status, error = EXIT_DIVERGENCE, f"{e} (t={e.time})"
    except (ErgoError, InvalidParameterError) as e:
        status, error = EXIT_ERROR, f"{type(e).__name__}: {e}"
    if error:
        log.error("%s", error)
    if directory:
        os.makedirs(directory, exist_ok=True)
        manifest = dict(config_path=str(config_path), config_digest=cfg.digest if cfg else None,
                        master_seed=cfg.sim["master_seed"] if cfg else None,
                        workers=int(os.environ.get("ERGO_SFDE_WORKERS", "1") or 1),
                        numba=os.environ.get("ERGO_SFDE_NO_NUMBA", "") == "",
                        versions=_versions(), wall_time_s=time.perf_counter() - t_start,
                        exit_status=status, error=error, files=files)
        write_json(os.path.join(directory, "manifest.json"), manifest)
    return status


# ---------------------------------------------------------------------------
# plot data

def _find_decay(rep):
    if "decay" in rep and isinstance(rep["decay"], dict) and "times" in rep["decay"]:
        return rep["decay"]
    c1 = rep.get("c1")
    if isinstance(c1, dict) and c1.get("pairs"):
        return c1["pairs"][0].get("decay")
    return None


def _find_wasserstein(rep):
    w = rep.get("wasserstein")
    if isinstance(w, dict):
        return w if "times" in w else w.get("pair")
    return None


def emit_plotdata(report_path, out_dir=None):
    """Flatten a result JSON into plot-ready CSVs; returns (written files, missing sections)."""
    try:
        with open(report_path, encoding="utf-8") as fh:
            rep = json.load(fh)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read report {report_path}: {e}") from None
    if not isinstance(rep, dict):
        raise ConfigError("report must be a JSON object")
    out_dir = out_dir or os.path.dirname(os.path.abspath(report_path))
    os.makedirs(out_dir, exist_ok=True)
    written, missing = [], []

    d = _find_decay(rep)
    if d:
        rows = zip(d["times"], d["mean_sq"], d["stderr"], d["bound"])
        path = os.path.join(out_dir, "plot_decay.csv")
        write_csv(path, ["t", "mean_sq", "stderr", "closed_bound"], [tuple(map(float, r)) for r in rows])
        written.append(path)
    else:
        missing.append("decay")

    w = _find_wasserstein(rep)
    if w:
        s, i = w.get("fitted_slope"), w.get("fitted_intercept")
        fit_ok = isinstance(s, float) and isinstance(i, float) and math.isfinite(s) and math.isfinite(i)
        rows = [(float(t), float(v), float(se), math.exp(i + s * t) if fit_ok else float("nan"))
                for t, v, se in zip(w["times"], w["w_upper"], w["stderr"])]
        path = os.path.join(out_dir, "plot_wasserstein.csv")
        write_csv(path, ["t", "w_upper", "stderr", "fitted"], rows)
        written.append(path)
    else:
        missing.append("wasserstein")

    sup = rep.get("support")
    if isinstance(sup, dict) and sup.get("rows"):
        rows = [(r["probe"], float(r["p_full"]), float(r["se_full"]), float(r["p_aux"]), float(r["se_aux"]),
                 float(r["no_jump_fraction"]), float(r["no_jump_expected"])) for r in sup["rows"]]
        path = os.path.join(out_dir, "plot_support.csv")
        write_csv(path, ["probe", "p_full", "se_full", "p_aux", "se_aux", "no_jump_fraction",
                         "no_jump_expected"], rows)
        written.append(path)
    else:
        missing.append("support")
    if missing:
        warnings.warn(f"report has no section(s): {', '.join(missing)}", stacklevel=2)
    return written, missing
