"""Command-line entry point: ``annealvi <subcommand> [--config FILE] [flags]``.

Config files are flat ``key = value`` text grouped into sections (``[model]``,
``[data]``, ``[train]``, ...). Values are JSON literals where possible
(numbers, ``true``/``false``, quoted strings, lists), otherwise bare strings,
so simple TOML files parse as-is. Command-line flags override file values.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures
(including failed verification checks).
"""

from __future__ import annotations

import argparse
import configparser
import datetime
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from .evaluation import bdmc_gap, evaluate_nll, tune_eval_step_sizes, write_bdmc_csv, write_nll_csv
from .gradcheck import check_gradients, check_reductions
from .hmc import HmcConfig
from .models import (
    BernoulliMlpModel,
    LinearGaussianEncoder,
    LinearGaussianModel,
    MlpGaussianEncoder,
    lg_log_marginal,
    lg_optimal_encoder,
)
from .proposal import fig1_experiment, summarize_fig1, write_fig1_csv
from .trainer import TrainConfig, load_checkpoint, train

log = logging.getLogger("annealvi")

SEED_ENV = "ANNEALVI_SEED"

# section -> key -> default; the default's type is the key's type
SCHEMA: dict[str, dict[str, object]] = {
    "run": {"seed": 0},
    "model": {
        "family": "linear_gaussian",
        "dim_x": 6,
        "dim_z": 2,
        "hidden": 64,
        "sigma_x": 0.5,
    },
    "data": {
        "source": "synthetic",
        "n_train": 1000,
        "n_test": 500,
        "data_seed": 1,
        "train_path": "",
        "test_path": "",
        "binarize": "fixed",
    },
    "train": {
        "estimator": "ais",
        "K": 5,
        "T": 5,
        "L": 5,
        "step_size": 0.2,
        "lr": 1e-3,
        "batch_size": 50,
        "epochs": 1,
        "final_transition": False,
        "adapt_fraction": 0.0,
        "checkpoint_every": 0,
        "max_iterations": 0,
        "max_seconds": 0.0,
        "record_timing": False,
    },
    "eval": {
        "checkpoint": "",
        "K": 16,
        "T": 100,
        "L": 5,
        "step_size": 0.2,
        "n_examples": 0,
        "batch_size": 100,
        "tune_rounds": 0,
    },
    "fig1": {
        "rho": 0.95,
        "budgets": [60, 300, 3000],
        "L": 5,
        "T": 6,
        "step_size": 0.25,
        "n_draws": 2000,
        "replicates": 20,
    },
    "bdmc": {
        "checkpoint": "",
        "encoder": "optimal",
        "n_sim": 100,
        "K": 16,
        "T": 100,
        "L": 5,
        "step_size": 0.3,
    },
    "gradcheck": {"points": 20, "tolerance": 1e-6},
    "reduce-check": {"instances": 50, "K": 5},
}

COMMANDS = {
    "train": ("model", "data", "train"),
    "eval": ("model", "data", "eval"),
    "fig1": ("fig1",),
    "bdmc": ("model", "data", "bdmc"),
    "gradcheck": ("gradcheck",),
    "reduce-check": ("reduce-check",),
}


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage().rstrip()}\n{self.prog}: error: {message}")


def _coerce(value, default, where: str):
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        if not isinstance(value, list):
            value = [value]
        try:
            return [int(v) for v in value]
        except (TypeError, ValueError):
            raise UsageError(f"{where}: expected a list of integers, got {value!r}") from None
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in ("true", "1", "yes"):
            return True
        if text in ("false", "0", "no"):
            return False
        raise UsageError(f"{where}: expected true or false, got {value!r}")
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise UsageError(f"{where}: expected {type(default).__name__}, got {value!r}") from None
    return str(value)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip().strip("'")


def read_config(path) -> dict[str, dict]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    out: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, text in parser.items(section):
            if key not in SCHEMA[section]:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            out.setdefault(section, {})[key] = _coerce(
                _parse_value(text), SCHEMA[section][key], f"[{section}] {key}"
            )
    return out


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> _Parser:
    parser = _Parser(prog="annealvi", description="AIS-based training and evaluation of latent-variable models.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, sections in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key-value config file with sections")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, help=f"master seed (fallback: ${SEED_ENV}, then 0)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="worker processes for per-example work (default: CPU count)")
        seen = {"seed"}
        for section in sections:
            for key in SCHEMA[section]:
                if key in seen:
                    continue
                seen.add(key)
                p.add_argument(_flag(key), dest=f"{section}.{key}", default=None, metavar="VALUE")
    return parser


@dataclass
class Invocation:
    command: str
    config: dict[str, dict]
    seed: int
    seed_source: str
    workers: int
    out: Path
    base_dir: Path


def resolve(argv) -> Invocation:
    args = build_parser().parse_args(argv)
    if args.command is None:
        raise UsageError(build_parser().format_usage().rstrip() + "\nannealvi: error: a subcommand is required")
    sections = COMMANDS[args.command]
    config = {s: dict(SCHEMA[s]) for s in sections}
    file_cfg = read_config(args.config) if args.config else {}
    for section in sections:
        config[section].update(file_cfg.get(section, {}))
    for dest, value in vars(args).items():
        if "." in dest and value is not None:
            section, key = dest.split(".", 1)
            config[section][key] = _coerce(value, SCHEMA[section][key], _flag(key))
    if args.seed is not None:
        seed, source = args.seed, "flag"
    elif "seed" in file_cfg.get("run", {}):
        seed, source = file_cfg["run"]["seed"], "config"
    elif os.environ.get(SEED_ENV):
        seed, source = _coerce(os.environ[SEED_ENV], 0, SEED_ENV), "env"
    else:
        seed, source = 0, "default"
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    base = Path(args.config).resolve().parent if args.config else Path.cwd()
    return Invocation(args.command, config, int(seed), source, args.workers, Path(args.out), base)


def write_manifest(inv: Invocation, argv, outputs) -> None:
    manifest = {
        "command": inv.command,
        "argv": list(argv),
        "seed": inv.seed,
        "seed_source": inv.seed_source,
        "workers": inv.workers,
        "config": inv.config,
        "outputs": sorted(outputs),
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(inv.out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- datasets


@dataclass
class Data:
    train: np.ndarray
    test: np.ndarray
    truth: LinearGaussianModel | None = None
    synthetic: data_mod.SyntheticDataset | None = None


def true_linear_gaussian(model_cfg: dict, data_seed: int) -> LinearGaussianModel:
    rng = np.random.default_rng([data_seed, 0])
    dx, dz = model_cfg["dim_x"], model_cfg["dim_z"]
    W = rng.standard_normal((dx, dz))
    b = rng.standard_normal(dx)
    return LinearGaussianModel.from_arrays(W, b, float(np.log(model_cfg["sigma_x"])))


def load_data(inv: Invocation) -> Data:
    m, d = inv.config["model"], inv.config["data"]
    if d["source"] == "synthetic":
        if m["family"] != "linear_gaussian":
            raise UsageError("synthetic data requires model family linear_gaussian")
        truth = true_linear_gaussian(m, d["data_seed"])
        syn = data_mod.synthesize_linear_gaussian(truth, d["n_train"] + d["n_test"], d["data_seed"])
        return Data(syn.x[: d["n_train"]], syn.x[d["n_train"]:], truth, syn)
    if d["source"] == "idx":
        if not d["train_path"] or not d["test_path"]:
            raise UsageError("idx data needs train_path and test_path")
        sets = []
        for key, n in (("train_path", d["n_train"]), ("test_path", d["n_test"])):
            ds = data_mod.load_idx_images(inv.base_dir / d[key])
            if d["binarize"] != "none":
                ds = data_mod.binarize(ds, d["binarize"], seed=d["data_seed"])
            sets.append(ds.pixels[:n] if n else ds.pixels)
        return Data(sets[0], sets[1])
    raise UsageError(f"unknown data source {d['source']!r}")


def init_models(model_cfg: dict, dim_x: int, seed: int):
    rng = np.random.default_rng([seed, 0x1D])
    if model_cfg["family"] == "linear_gaussian":
        dz = model_cfg["dim_z"]
        return LinearGaussianModel.init(dim_x, dz, rng), LinearGaussianEncoder.init(dim_x, dz, rng)
    if model_cfg["family"] == "bernoulli_mlp":
        dz, h = model_cfg["dim_z"], model_cfg["hidden"]
        return (BernoulliMlpModel.init(dim_x, rng, dz, h), MlpGaussianEncoder.init(dim_x, rng, dz, h))
    raise UsageError(f"unknown model family {model_cfg['family']!r}")


def _models_for_eval(inv: Invocation, section: str, data: Data):
    path = inv.config[section]["checkpoint"]
    if path:
        return load_checkpoint(inv.base_dir / path if not Path(path).is_absolute() else path).models()
    if data.truth is None:
        raise UsageError(f"[{section}] checkpoint is required for non-synthetic data")
    return data.truth, lg_optimal_encoder(data.truth)


# ---------------------------------------------------------------- commands


def cmd_train(inv: Invocation) -> list[str]:
    t = inv.config["train"]
    data = load_data(inv)
    gen, inf = init_models(inv.config["model"], data.train.shape[1], inv.seed)
    config = TrainConfig(
        estimator=t["estimator"], K=t["K"], T=t["T"], L=t["L"], step_size=t["step_size"],
        lr=t["lr"], batch_size=t["batch_size"], epochs=t["epochs"], seed=inv.seed,
        final_transition=t["final_transition"], adapt_fraction=t["adapt_fraction"],
        checkpoint_every=t["checkpoint_every"],
    )
    outputs = ["checkpoint.bin", "metrics.csv", "summary.json"]
    timing = None
    if t["record_timing"]:
        timing = inv.out / "timing.csv"
        outputs.append("timing.csv")
    result = train(
        config, data.train, gen, inf,
        checkpoint_path=inv.out / "checkpoint.bin",
        metrics_path=inv.out / "metrics.csv",
        timing_path=timing,
        max_iterations=t["max_iterations"] or None,
        max_seconds=t["max_seconds"] or None,
    )
    summary = {"iterations": result.checkpoint.iteration, "epochs_completed": result.checkpoint.epoch}
    if result.metrics:
        summary["final_elbo"] = result.metrics[-1]["elbo"]
    if data.synthetic is not None:
        data_mod.save_dataset(data.synthetic, inv.out / "dataset.bin")
        outputs.append("dataset.bin")
        summary["test_log_marginal_learned"] = float(np.mean(lg_log_marginal(gen, data.test)))
        summary["test_log_marginal_true"] = float(np.mean(lg_log_marginal(data.truth, data.test)))
    _write_json(inv.out / "summary.json", summary)
    return outputs


def cmd_eval(inv: Invocation) -> list[str]:
    e = inv.config["eval"]
    data = load_data(inv)
    gen, inf = _models_for_eval(inv, "eval", data)
    X = data.test[: e["n_examples"]] if e["n_examples"] else data.test
    hmc = HmcConfig.constant(e["step_size"], e["T"], e["L"])
    if e["tune_rounds"]:
        hmc = tune_eval_step_sizes(gen, inf, X, e["K"], e["T"], hmc, np.random.default_rng([inv.seed, 0x7E]),
                                   rounds=e["tune_rounds"])
    report = evaluate_nll(gen, inf, X, K=e["K"], T=e["T"], hmc=hmc, batch_size=e["batch_size"],
                          seed=inv.seed, workers=inv.workers)
    write_nll_csv(report, inv.out / "nll.csv")
    summary = {"n": report.count, "log_marginal_mean": report.mean, "stderr": report.stderr,
               "nll_mean": -report.mean, "step_sizes": hmc.step_sizes.tolist()}
    if isinstance(gen, LinearGaussianModel):
        summary["analytic_log_marginal_mean"] = float(np.mean(lg_log_marginal(gen, X)))
    _write_json(inv.out / "summary.json", summary)
    return ["nll.csv", "summary.json"]


def cmd_fig1(inv: Invocation) -> list[str]:
    f = inv.config["fig1"]
    try:
        rows = fig1_experiment(rho=f["rho"], budgets=f["budgets"], L=f["L"], T=f["T"],
                               step_size=f["step_size"], n_draws=f["n_draws"],
                               replicates=f["replicates"], seed=inv.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_fig1_csv(rows, inv.out / "fig1.csv")
    summary = summarize_fig1(rows)
    _write_json(inv.out / "summary.json", [
        {"mode": mode, "budget": budget, "kl_mean": mean,
         "kl_stderr": se if np.isfinite(se) else None}
        for (mode, budget), (mean, se) in sorted(summary.items())
    ])
    return ["fig1.csv", "summary.json"]


def cmd_bdmc(inv: Invocation) -> list[str]:
    b = inv.config["bdmc"]
    data = load_data(inv)
    gen, inf = _models_for_eval(inv, "bdmc", data)
    if b["encoder"] == "prior":
        inf = LinearGaussianEncoder.constant(gen.dim_x, np.zeros(gen.dim_z), np.ones(gen.dim_z))
    elif b["encoder"] != "optimal":
        raise UsageError("[bdmc] encoder must be optimal or prior")
    hmc = HmcConfig.constant(b["step_size"], b["T"], b["L"])
    report = bdmc_gap(gen, inf, b["n_sim"], b["K"], b["T"], hmc, np.random.default_rng(inv.seed))
    write_bdmc_csv(report, inv.out / "bdmc.csv")
    _write_json(inv.out / "summary.json", {
        "n_sim": report.n_sim, "T": report.T, "K": report.K, "lower": report.lower_mean,
        "upper": report.upper_mean, "gap": report.gap, "gap_stderr": report.gap_stderr,
    })
    return ["bdmc.csv", "summary.json"]


def _gradcheck_instances(rng):
    lg = LinearGaussianModel.init(5, 3, rng)
    lg.theta = lg.theta + 0.3 * rng.standard_normal(lg.theta.size)
    lg_enc = LinearGaussianEncoder.init(5, 3, rng)
    lg_enc.phi = lg_enc.phi + 0.1 * rng.standard_normal(lg_enc.phi.size)
    x_lg = rng.standard_normal(5)
    mlp = BernoulliMlpModel.init(12, rng, 3, 6)
    mlp.theta = mlp.theta + 0.3 * rng.standard_normal(mlp.theta.size)
    mlp_enc = MlpGaussianEncoder.init(12, rng, 3, 6)
    mlp_enc.phi = mlp_enc.phi + 0.1 * rng.standard_normal(mlp_enc.phi.size)
    x_mlp = (rng.random(12) < 0.5).astype(float)
    return [("linear_gaussian", lg, lg_enc, x_lg), ("bernoulli_mlp", mlp, mlp_enc, x_mlp)]


def cmd_gradcheck(inv: Invocation) -> list[str]:
    g = inv.config["gradcheck"]
    rows, worst = [], 0.0
    for point in range(g["points"]):
        rng = np.random.default_rng([inv.seed, point])
        for family, gen, inf, x in _gradcheck_instances(rng):
            z = rng.standard_normal(gen.dim_z)
            eps = rng.standard_normal(gen.dim_z)
            errs = check_gradients(gen, inf, x, z, eps)
            worst = max(worst, *errs.values())
            rows.append([family, point] + [repr(errs[k]) for k in ("theta", "z", "q_z", "phi")])
    with open(inv.out / "gradcheck.csv", "w") as fh:
        fh.write("family,point,theta,z,q_z,phi\n")
        for r in rows:
            fh.write(",".join(str(v) for v in r) + "\n")
    if worst > g["tolerance"]:
        raise CheckFailed(f"max relative gradient error {worst:.3e} exceeds {g['tolerance']:.1e}")
    return ["gradcheck.csv"]


def cmd_reduce_check(inv: Invocation) -> list[str]:
    r = inv.config["reduce-check"]
    rows, failures = [], 0
    for i in range(r["instances"]):
        rng = np.random.default_rng([inv.seed, i])
        for family, gen, inf, x in _gradcheck_instances(rng):
            xb = np.stack([x, x[::-1]])
            res = check_reductions(gen, inf, xb, r["K"], [inv.seed, i, 1])
            failures += not all(res.values())
            rows.append((family, i, res["ais_vs_iwae"], res["iwae_vs_vae"]))
    with open(inv.out / "reduce_check.csv", "w") as fh:
        fh.write("family,instance,ais_t1_equals_iwae,iwae_k1_equals_vae\n")
        for family, i, a, b in rows:
            fh.write(f"{family},{i},{str(a).lower()},{str(b).lower()}\n")
    if failures:
        raise CheckFailed(f"{failures} instance(s) broke a bit-exact reduction")
    return ["reduce_check.csv"]


HANDLERS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "fig1": cmd_fig1,
    "bdmc": cmd_bdmc,
    "gradcheck": cmd_gradcheck,
    "reduce-check": cmd_reduce_check,
}


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        inv = resolve(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        inv.out.mkdir(parents=True, exist_ok=True)
        outputs = HANDLERS[inv.command](inv)
        write_manifest(inv, argv, outputs + ["manifest.json"])
    except UsageError as exc:
        print(f"annealvi {inv.command}: error: {exc}", file=sys.stderr)
        return 1
    except CheckFailed as exc:
        print(f"annealvi {inv.command}: check failed: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"annealvi {inv.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    logging.basicConfig(level=os.environ.get("ANNEALVI_LOG", "WARNING"))
    sys.exit(run())
