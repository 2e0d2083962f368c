"""Experiment driver CLI.

Subcommands: simulate, train, predict, evaluate, reproduce. Configs are
YAML documents; all outputs are deterministic per (config, seed) and carry
the config hash for provenance.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import baseline, io, simulate
from .equation import parse_equation, serialize
from .errors import CollogpError, SchemaError
from .infer import TrainConfig, TrainData, VariationalState, train
from .kernel import ArdParams
from .model import ModelParams, build_layout, init_params
from .predict import PosteriorGP, mnll, rmse
from .experiments import EXPERIMENTS, experiment_config

COLLOC_SEED_OFFSET = 104729  # decorrelates collocation draws from data draws


def load_config(path):
    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if not isinstance(cfg, dict):
        raise SchemaError(str(path), "config must be a mapping")
    return cfg


def _default_seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("COLLOGP_SEED")
    return int(env) if env else None


def _sampling_config(config, seed=None):
    sim = config.get("simulate", {})
    samp = dict(sim.get("sampling", {}))
    if seed is not None:
        samp["seed"] = seed
    try:
        return simulate.SamplingConfig(
            train_range=samp["train_range"], test_range=samp["test_range"],
            n_train=int(samp["n_train"]), n_test=int(samp["n_test"]),
            m_colloc=int(samp.get("m_colloc", 0)),
            colloc_range=samp.get("colloc_range"),
            noise_var=float(samp.get("noise_var", 0.0)), seed=int(samp.get("seed", 0)))
    except KeyError as exc:
        raise SchemaError(f"simulate.sampling.{exc.args[0]}", "missing required field") from None


def _accessor(config):
    sim = config.get("simulate", {})
    system = sim.get("system")
    if sim.get("solution_file"):
        return io.read_solution_grid(sim["solution_file"])
    if system == "pendulum":
        pcfg = simulate.PendulumConfig(**sim.get("pendulum", {}))
        return lambda X: simulate.solve_pendulum(pcfg, np.atleast_2d(X)[:, 0])
    if system == "allen_cahn":
        acfg = simulate.AllenCahnConfig(**sim.get("allen_cahn", {}))
        return simulate.solve_allen_cahn(acfg)
    raise SchemaError("simulate.system", f"unknown system {system!r}")


def run_simulate(config, out_dir, seed=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scfg = _sampling_config(config, seed)
    accessor = _accessor(config)
    (Xtr, ytr), (Xte, yte) = simulate.sample_dataset(accessor, scfg)
    colloc_range = scfg.colloc_range or scfg.test_range
    colloc = simulate.sample_collocation(colloc_range, scfg.m_colloc,
                                         scfg.seed + COLLOC_SEED_OFFSET)
    h = io.config_hash(config)
    io.write_dataset(out / "train.csv", Xtr, ytr, cfg_hash=h)
    io.write_dataset(out / "test.csv", Xte, yte, cfg_hash=h)
    io.write_dataset(out / "colloc.csv", colloc, cfg_hash=h)
    return out


def _build_spec(config):
    if config.get("method", "autoip") != "autoip":
        return None
    if "equation" not in config:
        raise SchemaError("equation", "missing for method autoip")
    return parse_equation(config["equation"], dim=len(config.get("dims", ["t"])))


def _train_config(config, args=None):
    tr = dict(config.get("train", {}))
    if args is not None:
        if getattr(args, "epochs_override", None):
            tr["epochs"] = args.epochs_override
        if getattr(args, "mc_samples", None):
            tr["mc_samples"] = args.mc_samples
        if getattr(args, "mnll_noise_free", False):
            tr["mnll_noise_free"] = True
        seed = _default_seed(args)
        if seed is not None:
            tr["seed"] = seed
    known = {f for f in TrainConfig.__dataclass_fields__}
    bad = set(tr) - known
    if bad:
        raise SchemaError(f"train.{sorted(bad)[0]}", "unknown field")
    return TrainConfig(**tr)


def run_train(config, data_dir, out_dir, args=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = Path(data_dir)
    Xtr, ytr, _ = io.read_dataset(data_dir / "train.csv")
    Xte, yte, _ = io.read_dataset(data_dir / "test.csv")
    colloc_path = data_dir / "colloc.csv"
    colloc = io.read_dataset(colloc_path, with_y=False)[0] if colloc_path.exists() \
        else np.zeros((0, Xtr.shape[1]))
    method = config.get("method", "autoip")
    if method not in ("autoip", "gpr"):
        raise SchemaError("method", f"unknown method {method!r}")
    spec = _build_spec(config)
    mcfg = config.get("model", {})
    cfg = _train_config(config, args)
    dim = Xtr.shape[1]
    h = io.config_hash(config)

    if method == "gpr":
        params0 = init_params(None, dim, **{k: mcfg[k] for k in
                                            ("s_init", "amp_init", "beta_init") if k in mcfg})
        gpr = baseline.GprModel(params0.kernel_u, params0.log_beta, Xtr, ytr)
        trace = baseline.gpr_train(gpr, cfg, eval_set=(Xte, yte))
        best = trace.best
        learned = _gpr_learned(best["params"])
        payload = {"method": "gpr", "config_hash": h,
                   "kernel": _kernel_doc(best["params"].kernel),
                   "log_beta": best["params"].log_beta,
                   "X": best["params"].X, "y": best["params"].y}
    else:
        params0 = init_params(spec, dim, **{k: mcfg[k] for k in
                                            ("s_init", "amp_init", "beta_init", "v_init") if k in mcfg})
        data = TrainData(Xtr, ytr, colloc)
        trace = train(data, spec, params0, cfg, eval_set=(Xte, yte))
        best = trace.best
        learned = _autoip_learned(best["params"], spec)
        payload = {"method": "autoip", "config_hash": h,
                   "equation": serialize(spec),
                   "X": Xtr, "y": ytr, "colloc": colloc,
                   "params": _params_doc(best["params"]),
                   "mu": best["state"].mu, "raw_tril": best["state"].raw_tril}

    metrics = {
        "rmse": best["rmse"], "mnll": best["mnll"], "best_epoch": best["epoch"],
        "final_rmse": trace.final["rmse"], "final_mnll": trace.final["mnll"],
    }
    result = {"metrics": metrics, "learned": learned,
              "provenance": {"seed": cfg.seed, "config_hash": h,
                             "version": io.PACKAGE_VERSION}}
    io.write_json(out / "metrics.json", result)
    _write_trace(out / "trace.csv", trace, h)
    io.save_model(out / "model.bin", payload)
    return result


def _kernel_doc(k):
    return {"log_s": k.log_s, "log_amp": k.log_amp}


def _params_doc(p):
    return {"kernel_u": _kernel_doc(p.kernel_u),
            "kernel_g": [None if k is None else _kernel_doc(k) for k in p.kernel_g],
            "log_beta": p.log_beta, "log_v": p.log_v, "coeffs": dict(p.coeffs)}


def _params_from_doc(doc):
    return ModelParams(
        kernel_u=ArdParams(**doc["kernel_u"]),
        kernel_g=[None if k is None else ArdParams(**k) for k in doc["kernel_g"]],
        log_beta=doc["log_beta"], log_v=doc["log_v"], coeffs=dict(doc["coeffs"]))


def _gpr_learned(m):
    return {"s": list(np.exp(m.kernel.log_s)), "amp": m.kernel.amp, "beta": m.beta}


def _autoip_learned(p, spec):
    return {"s": list(np.exp(p.kernel_u.log_s)), "amp": p.kernel_u.amp,
            "beta": p.beta, "v": p.v, "coeffs": p.coeff_values(spec)}


def _write_trace(path, trace, cfg_hash):
    with open(path, "w") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        fh.write("epoch,objective,rmse,mnll\n")
        for rec in trace.evals:
            obj = trace.elbo[rec["epoch"]]
            fh.write(f"{rec['epoch']},{obj!r},{rec['rmse']!r},{rec['mnll']!r}\n")


def _posterior_from_payload(payload):
    spec = parse_equation(payload["equation"])
    layout = build_layout(len(payload["y"]), len(payload["colloc"]), spec)
    params = _params_from_doc(payload["params"])
    state = VariationalState(payload["mu"], payload["raw_tril"])
    return PosteriorGP.build(layout, payload["X"], payload["colloc"], params,
                             state, spec=spec), spec


def run_predict(model_path, inputs_path, out_path, deriv=None, source=None):
    payload = io.load_model(model_path)
    cols, data, _ = io.read_csv(inputs_path)
    X = data[:, :-1] if cols and cols[-1] == "y" else data  # targets, if present, are ignored
    if payload["method"] == "gpr":
        if deriv or source:
            raise SchemaError("predict", "derivative/source prediction needs an autoip model")
        m = baseline.GprModel(ArdParams(**payload["kernel"]), payload["log_beta"],
                              payload["X"], payload["y"])
        pred = baseline.gpr_predict(m, X)
    else:
        post, spec = _posterior_from_payload(payload)
        if source is not None:
            names = [s.name for s in spec.sources]
            if source not in names:
                raise SchemaError("--source", f"unknown source {source!r} (have {names})")
            pred = post.predict_source(X, names.index(source))
        else:
            op = None
            if deriv and deriv != "val":
                table = {n: f for n, f in zip(spec.feature_names, spec.features)}
                table.setdefault("dt", None)
                if deriv in table and table[deriv] is not None:
                    op = table[deriv]
                else:
                    dim = X.shape[1]
                    shorthand = {1: {"dt": (1,), "dt2": (2,), "dx": (1,), "dx2": (2,)},
                                 2: {"dx": (1, 0), "dx2": (2, 0), "dt": (0, 1), "dt2": (0, 2)}}
                    if dim not in shorthand or deriv not in shorthand[dim]:
                        raise SchemaError("--deriv", f"unknown derivative {deriv!r}")
                    op = shorthand[dim][deriv]
            pred = post.predict_u(X, op)
    cols = [f"x{i}" for i in range(X.shape[1])] + ["mean", "var"]
    arrays = [X[:, i] for i in range(X.shape[1])] + [pred.mean, pred.variance]
    io.write_csv(out_path, cols, arrays, cfg_hash=payload.get("config_hash"))


def run_evaluate(pred_path, truth_path, out_path, force=False):
    pcols, pdata, phash = io.read_csv(pred_path)
    tcols, tdata, thash = io.read_csv(truth_path)
    if not force and phash and thash and phash != thash:
        raise SchemaError("provenance", f"config hash mismatch ({phash} vs {thash}); "
                          "pass --force to evaluate anyway")
    from .errors import DimensionMismatch
    if pdata.shape[0] != tdata.shape[0]:
        raise DimensionMismatch(f"row counts differ: {pdata.shape[0]} vs {tdata.shape[0]}")
    mean = pdata[:, pcols.index("mean")]
    var = pdata[:, pcols.index("var")]
    truth = tdata[:, tcols.index("y")]
    from .predict import GaussianPrediction
    metrics = {"rmse": rmse(mean, truth),
               "mnll": mnll(GaussianPrediction(mean, var), 0.0, truth)}
    if out_path:
        io.write_json(out_path, metrics)
    return metrics


def run_reproduce(experiment_id, seeds, out_dir, args=None):
    config = experiment_config(experiment_id)
    if seeds is None:
        seeds = config.get("seeds", [0, 1, 2, 3, 4])
    out = Path(out_dir) / experiment_id
    per_seed = []
    for seed in seeds:
        cfg = experiment_config(experiment_id)
        cfg["simulate"]["sampling"]["seed"] = seed
        cfg["train"]["seed"] = seed
        run_dir = out / f"seed{seed}"
        run_simulate(cfg, run_dir)
        result = run_train(cfg, run_dir, run_dir, args)
        rec = {"seed": seed, **result["metrics"]}
        coeffs = result["learned"].get("coeffs") or {}
        rec.update({f"coeff_{k}": v for k, v in coeffs.items()})
        per_seed.append(rec)
    summary = {"experiment": experiment_id, "seeds": list(seeds), "runs": per_seed}
    for key in ("rmse", "mnll"):
        vals = np.array([r[key] for r in per_seed])
        summary[f"{key}_mean"] = float(vals.mean())
        summary[f"{key}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    for key in sorted({k for r in per_seed for k in r if k.startswith("coeff_")}):
        vals = np.array([r[key] for r in per_seed])
        summary[f"{key}_mean"] = float(vals.mean())
        summary[f"{key}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "summary.json", summary)
    return summary


def _parse_seeds(text):
    if text is None:
        return None
    return [int(s) for s in str(text).split(",") if s.strip()]


def main(argv=None):
    ap = argparse.ArgumentParser(prog="collogp",
                                 description="GP regression with differential-equation constraints")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate train/test/collocation CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=".")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a model on a simulated/ingested dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--data-dir", default=".")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs-override", type=int)
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--mnll-noise-free", action="store_true")

    p = sub.add_parser("predict", help="predict at file-supplied inputs")
    p.add_argument("--model", required=True)
    p.add_argument("--inputs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deriv", help="derivative operator, e.g. dt, dt2, dx2, val")
    p.add_argument("--source", help="latent source name")

    p = sub.add_parser("evaluate", help="metrics from predictions + truth CSVs")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("reproduce", help="run a built-in experiment over seeds")
    p.add_argument("--experiment", required=True, choices=sorted(EXPERIMENTS))
    p.add_argument("--seeds", help="comma-separated; defaults to the experiment's seed list")
    p.add_argument("--out-dir", default="reproduce-out")
    p.add_argument("--epochs-override", type=int)
    p.add_argument("--mc-samples", type=int)
    p.add_argument("--mnll-noise-free", action="store_true")

    args = ap.parse_args(argv)
    try:
        if args.command == "simulate":
            run_simulate(load_config(args.config), args.out_dir, _default_seed(args))
        elif args.command == "train":
            result = run_train(load_config(args.config), args.data_dir, args.out_dir, args)
            print(f"rmse={result['metrics']['rmse']:.6g} mnll={result['metrics']['mnll']:.6g} "
                  f"best_epoch={result['metrics']['best_epoch']}")
        elif args.command == "predict":
            run_predict(args.model, args.inputs, args.out, args.deriv, args.source)
        elif args.command == "evaluate":
            metrics = run_evaluate(args.predictions, args.truth, args.out, args.force)
            print(f"rmse={metrics['rmse']:.6g} mnll={metrics['mnll']:.6g}")
        elif args.command == "reproduce":
            summary = run_reproduce(args.experiment, _parse_seeds(args.seeds),
                                    args.out_dir, args)
            print(f"{args.experiment}: rmse {summary['rmse_mean']:.4g} "
                  f"+/- {summary['rmse_std']:.4g}")
    except CollogpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
