"""``rankforge`` command-line interface.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines
(keys are the long option names, dashes or underscores). Flags given on
the command line override file values. The resolved configuration is
printed to stderr before the command runs.

Exit codes: 0 success, 1 failed check or runtime error, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import __version__
from .analysis import SUITES, format_report, replay, run_suite
from .dataset import filter_no_relevant, load_letor, save_letor, synth_dataset
from .exceptions import ConfigError, RankforgeError
from .gbrt import PRESETS, TrainConfig, load_model, save_model, train
from .metrics import mean_ndcg
from .simulate import (
    PROTOCOLS,
    ClickModel,
    PerturbSpec,
    augment_negatives,
    cascade_clicks,
    perturb_labels,
    run_experiment,
)

logger = logging.getLogger("rankforge")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _floats(text):
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable = str
    default: object = None
    help: str = ""
    choices: Optional[tuple] = None
    required: bool = False
    flag: bool = False  # store_true switch

    @property
    def key(self):
        return self.name.replace("-", "_")


# Training hyperparameters exposed on train and experiment. Unset values
# fall through to the chosen preset.
TRAIN_OPTIONS = [
    Option("objective", str, None, "training objective", ("xe_ndcg", "listnet", "lambdamart")),
    Option("preset", str, "web30k", "hyperparameter preset", tuple(PRESETS)),
    Option("learning-rate", float, None, "shrinkage"),
    Option("num-leaves", int, None, "maximum leaves per tree"),
    Option("min-data-in-leaf", int, None, "minimum documents per leaf"),
    Option("max-bin", int, None, "histogram bins per feature"),
    Option("max-trees", int, None, "boosting iterations"),
    Option("early-stopping-rounds", int, None, "patience on validation NDCG"),
    Option("lambda-l2", float, None, "L2 penalty on leaf values"),
    Option("epsilon", float, None, "softmax regularizer"),
    Option("newton-mode", str, None, "second-order mode", ("diagonal", "full")),
    Option("sigma", float, None, "LambdaMART sigmoid scale"),
]

_TRAIN_KEYS = {o.key for o in TRAIN_OPTIONS} - {"preset"}

COMMANDS = {
    "train": [
        Option("train", str, None, "training LETOR file", required=True),
        Option("valid", str, None, "validation LETOR file (enables early stopping)"),
        Option("out", str, "model.txt", "output model path"),
        Option("log", str, None, "per-iteration TSV log (default: <out>.log.tsv)"),
        Option("seed", int, 0, "random seed"),
        *TRAIN_OPTIONS,
    ],
    "eval": [
        Option("model", str, None, "model file", required=True),
        Option("test", str, None, "test LETOR file", required=True),
        Option("cutoffs", _ints, (5, 10), "comma-separated NDCG cutoffs"),
        Option("seed", int, 0, "tie-breaking seed"),
    ],
    "verify": [
        Option("suite", str, "all", "certification suite", tuple(SUITES) + ("all",)),
        Option("trials", int, 1000, "random instances per suite"),
        Option("seed", int, 0, "random seed"),
        Option("inject-failure", _bool, False, "force a known failure (hessian suite)", flag=True),
        Option("replay", str, None, "re-run a witness JSON file"),
        Option("witness-out", str, None, "write the first failing witness here"),
    ],
    "experiment": [
        Option("protocol", str, None, "noise protocol", PROTOCOLS, required=True),
        Option("sweep", _floats, None, "comma-separated noise levels "
               "(augment: percent, perturb: fraction, clicks: grade-0 click probability)",
               required=True),
        Option("trials", int, 20, "random splits"),
        Option("data", str, None, "LETOR file (default: synthetic data)"),
        Option("synth-n", int, 200, "synthetic queries"),
        Option("synth-m", int, 20, "synthetic documents per query"),
        Option("synth-d", int, 10, "synthetic features"),
        Option("click-prob", _floats, (0.05, 0.3, 0.5, 0.7, 0.95), "click probability per grade"),
        Option("impressions", int, 10, "impressions per query (clicks)"),
        Option("out-dir", str, ".", "directory for result tables"),
        Option("seed", int, 0, "random seed"),
        *[o for o in TRAIN_OPTIONS if o.name != "objective"],
    ],
    "clicksim": [
        Option("input", str, None, "input LETOR file", required=True),
        Option("output", str, None, "output LETOR file", required=True),
        Option("click-prob", _floats, (0.05, 0.3, 0.5, 0.7, 0.95), "click probability per grade"),
        Option("impressions", int, 10, "impressions per query"),
        Option("seed", int, 0, "random seed"),
    ],
    "perturb": [
        Option("input", str, None, "input LETOR file", required=True),
        Option("output", str, None, "output LETOR file", required=True),
        Option("fraction", float, None, "probability of redrawing each label", required=True),
        Option("grade-dist", _floats, (0.5, 0.2, 0.15, 0.1, 0.05), "redraw distribution"),
        Option("seed", int, 0, "random seed"),
    ],
    "augment": [
        Option("input", str, None, "input LETOR file", required=True),
        Option("output", str, None, "output LETOR file", required=True),
        Option("percent", float, None, "extra negatives as a percentage of query size",
               required=True),
        Option("seed", int, 0, "random seed"),
    ],
    "synth": [
        Option("output", str, None, "output LETOR file", required=True),
        Option("n", int, 200, "queries"),
        Option("m", int, 20, "documents per query"),
        Option("d", int, 10, "features"),
        Option("noise", float, 0.5, "utility noise scale"),
        Option("seed", int, 0, "random seed"),
    ],
}

HELP = {
    "train": "train a boosted ranker on a LETOR file",
    "eval": "report NDCG percentages of a model on a test file",
    "verify": "run numeric certification suites",
    "experiment": "compare LambdaMART and XE_NDCG under label noise",
    "clicksim": "turn a graded dataset into cascade click impressions",
    "perturb": "redraw a random subset of labels",
    "augment": "append non-relevant documents from other queries",
    "synth": "write a synthetic graded dataset",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rankforge", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"rankforge {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, options in COMMANDS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", help="key = value settings file")
        for o in options:
            kw = {"dest": o.key, "default": argparse.SUPPRESS, "help": o.help}
            if o.flag:
                p.add_argument(f"--{o.name}", action="store_true", **kw)
            else:
                p.add_argument(f"--{o.name}", type=o.type, choices=o.choices, **kw)
    return parser


def read_config_file(path, options):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    known = {o.key: o for o in options}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            opt = known[key]
            conv = _bool if opt.flag else opt.type
            try:
                v = conv(value)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
            if opt.choices and v not in opt.choices:
                raise ConfigError(f"{path}:{lineno}: {key} must be one of {opt.choices}")
            values[key] = v
    return values


def resolve(command, namespace):
    """Defaults, then config file, then explicit flags."""
    options = COMMANDS[command]
    cfg = {o.key: o.default for o in options}
    explicit = {k: v for k, v in vars(namespace).items()
                if k not in ("command", "config", "verbose")}
    if getattr(namespace, "config", None):
        cfg.update(read_config_file(namespace.config, options))
    cfg.update(explicit)
    missing = [f"--{o.name}" for o in options if o.required and cfg[o.key] is None]
    if missing:
        raise _UsageError(f"the following arguments are required: {', '.join(missing)}")
    return cfg


class _UsageError(Exception):
    pass


def _print_config(command, cfg):
    print(f"# rankforge {__version__} {command}", file=sys.stderr)
    for k in sorted(cfg):
        v = cfg[k]
        if isinstance(v, tuple):
            v = ",".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
        print(f"# {k} = {v}", file=sys.stderr)


def _train_config(cfg, **extra):
    overrides = {k: cfg[k] for k in _TRAIN_KEYS if k in cfg and cfg[k] is not None}
    overrides.update(extra)
    return TrainConfig.from_preset(cfg["preset"], **overrides)


# --------------------------------------------------------------------------
# commands


def cmd_train(cfg):
    config = _train_config(cfg, seed=cfg["seed"])
    print("# resolved training config: " + json.dumps(config.as_dict(), sort_keys=True),
          file=sys.stderr)
    train_set = load_letor(cfg["train"])
    valid_set = None
    if cfg["valid"]:
        valid_set = filter_no_relevant(load_letor(cfg["valid"], num_features=train_set.d))
        if valid_set.removed:
            logger.warning("dropped %d validation queries without relevant documents",
                           valid_set.removed)
    ensemble, log = train(train_set, valid_set, config)
    save_model(ensemble, cfg["out"])
    log_path = cfg["log"] or f"{cfg['out']}.log.tsv"
    with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(log.to_tsv(config.eval_at))
    print(f"trees\t{len(ensemble)}")
    print(f"best_iteration\t{log.best_iteration}")
    if valid_set is not None:
        best = log.records[log.best_iteration].valid_ndcg
        print(f"valid_ndcg@{config.eval_at}\t{best:.6f}")
    print(f"model\t{cfg['out']}")
    print(f"log\t{log_path}")
    return EXIT_OK


def cmd_eval(cfg):
    model = load_model(cfg["model"])
    test = filter_no_relevant(load_letor(cfg["test"], num_features=model.num_features))
    if test.n == 0:
        raise RankforgeError("no test query has a relevant document; nothing to evaluate")
    if test.d != model.num_features:
        raise RankforgeError(
            f"test file has {test.d} features but the model expects {model.num_features}")
    if any(k < 1 for k in cfg["cutoffs"]) or not cfg["cutoffs"]:
        raise ConfigError("cutoffs must be positive integers")
    scores = model.predict(test.features)
    print("metric\tpercent")
    for k in cfg["cutoffs"]:
        v = mean_ndcg(test, scores, k, tie_seed=cfg["seed"])
        print(f"ndcg@{k}\t{100.0 * v:.2f}")
    return EXIT_OK


def cmd_verify(cfg):
    if cfg["replay"]:
        with open(cfg["replay"], encoding="utf-8") as fh:
            witness = json.load(fh)
        results = [replay(witness)]
    else:
        if cfg["trials"] < 1:
            raise ConfigError("--trials must be >= 1")
        names = list(SUITES) if cfg["suite"] == "all" else [cfg["suite"]]
        inject = cfg["inject_failure"]
        if inject and "hessian" not in names:
            raise ConfigError("--inject-failure applies to the hessian suite")
        results = [run_suite(n, cfg["trials"], cfg["seed"], inject and n == "hessian")
                   for n in names]
    sys.stdout.write(format_report(results))
    failed = [r for r in results if not r.passed]
    if not failed:
        return EXIT_OK
    witness = json.dumps(failed[0].witness, sort_keys=True)
    print(f"witness\t{witness}")
    if cfg["witness_out"]:
        with open(cfg["witness_out"], "w", encoding="utf-8") as fh:
            fh.write(witness + "\n")
    return EXIT_FAIL


def cmd_experiment(cfg):
    if cfg["data"]:
        data = load_letor(cfg["data"])
    else:
        data = synth_dataset(cfg["synth_n"], cfg["synth_m"], cfg["synth_d"], seed=cfg["seed"])
    sweep = cfg["sweep"]
    if cfg["protocol"] == "augment":
        sweep = tuple(v / 100.0 for v in sweep)
    config = _train_config(cfg)
    clicks = ClickModel(cfg["click_prob"], cfg["impressions"])
    result = run_experiment(data, cfg["protocol"], sweep, cfg["trials"], config,
                            seed=cfg["seed"], click_model=clicks)
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    stem = os.path.join(out, cfg["protocol"])
    result.write_tsv(f"{stem}_results.tsv")
    result.write_summary_tsv(f"{stem}_summary.tsv")
    result.write_plot_data(f"{stem}_plot.tsv")
    with open(f"{stem}_summary.tsv", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return EXIT_OK


def cmd_clicksim(cfg):
    data = load_letor(cfg["input"])
    model = ClickModel(cfg["click_prob"], cfg["impressions"])
    stats = {}
    out = cascade_clicks(data, model, np.random.default_rng(cfg["seed"]), stats_out=stats)
    save_letor(out, cfg["output"])
    print(f"impressions\t{stats['impressions']}\ndropped\t{stats['dropped']}\nqueries\t{out.n}")
    return EXIT_OK


def cmd_perturb(cfg):
    data = load_letor(cfg["input"])
    spec = PerturbSpec(cfg["fraction"], cfg["grade_dist"])
    save_letor(perturb_labels(data, spec, np.random.default_rng(cfg["seed"])), cfg["output"])
    return EXIT_OK


def cmd_augment(cfg):
    data = load_letor(cfg["input"])
    out = augment_negatives(data, cfg["percent"] / 100.0, np.random.default_rng(cfg["seed"]))
    save_letor(out, cfg["output"])
    return EXIT_OK


def cmd_synth(cfg):
    data = synth_dataset(cfg["n"], cfg["m"], cfg["d"], seed=cfg["seed"], noise=cfg["noise"])
    save_letor(data, cfg["output"])
    return EXIT_OK


HANDLERS = {
    "train": cmd_train, "eval": cmd_eval, "verify": cmd_verify, "experiment": cmd_experiment,
    "clicksim": cmd_clicksim, "perturb": cmd_perturb, "augment": cmd_augment, "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)  # exits 2 on usage errors
    logging.basicConfig(
        level=logging.WARNING - 10 * min(ns.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr,
    )
    sub = parser._subparsers._group_actions[0].choices[ns.command]
    try:
        cfg = resolve(ns.command, ns)
    except _UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"rankforge {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, OSError) as exc:
        print(f"rankforge {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _print_config(ns.command, cfg)
    try:
        return HANDLERS[ns.command](cfg)
    except ConfigError as exc:
        print(f"rankforge {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RankforgeError, OSError) as exc:
        print(f"rankforge {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
