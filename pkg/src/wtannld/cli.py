"""Command-line entry point: ``wtannld {gen,tune,train,eval,sweep,mismatch}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import rng as rngmod
from .config import ExperimentConfig, dump_config, load_config, parse_override
from .errors import CalibrationError, FormatError, IntegrityError, ParameterError, WtaError
from .harness import (
    Network,
    false_positive_probe,
    make_templates,
    prepare_network,
    run_trial,
    run_trials,
    sweep,
    trial_seed,
)
from .mismatch import degradation_experiment, write_degradation_csv
from .results import (
    AuditLog,
    epoch_rows,
    load_snapshot,
    save_snapshot,
    write_epoch_csv,
    write_sweep_csv,
    write_trial_csv,
)
from .spikes import JitterSpec, apply_jitter, load_patterns, save_patterns

log = logging.getLogger("wtannld")

EXIT_CODES = {ParameterError: 2, FormatError: 2, IntegrityError: 3, CalibrationError: 4}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides the file)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="parallel trial workers")
    common.add_argument("--dt", type=float, help="integration step in seconds")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="override any config key, e.g. --set stimulus.C=4 --set training.n_R=10",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="wtannld", description="WTA network of nonlinear-dendrite neurons")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate and save pattern templates")
    t = sub.add_parser("tune", parents=[common], help="derive every network parameter and print it as JSON")
    t.add_argument("--patterns", type=Path, help="use these templates instead of generating them")
    tr = sub.add_parser("train", parents=[common], help="run training trials")
    tr.add_argument("--patterns", type=Path, help="train on these templates (single trial seed per run)")
    tr.add_argument("--audit", action="store_true", help="write every rewiring decision to audit.jsonl")
    ev = sub.add_parser("eval", parents=[common], help="test and probe a saved wiring snapshot")
    ev.add_argument("snapshot", type=Path)
    ev.add_argument("--patterns", type=Path, help="templates to test on (default: regenerate from the snapshot seed)")
    sw = sub.add_parser("sweep", parents=[common], help="success rate along one axis")
    sw.add_argument("--axis", choices=["N_over_C", "sigma_jitter", "n_sub"])
    sw.add_argument("--grid", type=float, nargs="+")
    sw.add_argument("--trials", type=int, help="trials per grid point")
    mm = sub.add_parser("mismatch", parents=[common], help="success with device mismatch against ideal runs")
    mm.add_argument("--trials", type=int)
    return p


def resolve(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    for key in ("seed", "out", "jobs", "dt"):
        value = getattr(args, key)
        if value is not None:
            cfg.set(key, value)
    for text in args.overrides:
        cfg.set(*parse_override(text))
    if getattr(args, "axis", None):
        cfg.sweep.axis = args.axis
    if getattr(args, "grid", None):
        cfg.sweep.grid = [int(g) if g.is_integer() and args.axis != "sigma_jitter" else g for g in args.grid]
    if getattr(args, "trials", None):
        if args.command == "sweep":
            cfg.sweep.trials_per_point = args.trials
        else:
            cfg.mismatch.trials = args.trials
    if getattr(args, "audit", False):
        cfg.training.audit = True
    cfg.validate()
    return cfg


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _templates(cfg: ExperimentConfig, tcfg, path=None):
    if path is not None:
        templates = load_patterns(path)
        if templates[0].d != tcfg.d:
            raise IntegrityError(f"{path}: d = {templates[0].d}, configuration says d = {tcfg.d}")
        return templates
    return make_templates(tcfg, rngmod.stream(tcfg.seed, "templates"))


def cmd_gen(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    tcfg = cfg.trial_config()
    templates = _templates(cfg, tcfg)
    path = out / "patterns.csv"
    save_patterns(path, templates, {"seed": cfg.seed, "rate": tcfg.rate, "active_fraction": tcfg.active_fraction})
    log.info("wrote %d templates to %s", len(templates), path)
    return 0


def cmd_tune(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    tcfg = cfg.trial_config()
    templates = _templates(cfg, tcfg, args.patterns) if args.patterns else None
    net, _, sigma = prepare_network(tcfg, templates)
    doc = net.tune.to_dict() | {"N": net.wiring.N, "n_R": tcfg.replacement_size, "sigma_jitter": sigma}
    text = json.dumps(doc, indent=2)
    (out / "tune.json").write_text(text + "\n")
    print(text)
    return 0


def _train_seeds(cfg: ExperimentConfig) -> list[int]:
    n = int(cfg.training.trials)
    if n < 1:
        raise ParameterError("training.trials must be >= 1")
    return [trial_seed(cfg.seed, "train", i) for i in range(n)]


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    seeds = _train_seeds(cfg)
    cfgs = [cfg.trial_config(s) for s in seeds]
    if args.patterns is not None or cfg.training.audit:
        # both need the trial to run in this process
        results = []
        for i, c in enumerate(cfgs):
            templates = _templates(cfg, c, args.patterns) if args.patterns else None
            if cfg.training.audit:
                with AuditLog(out / "audit.jsonl", i) as audit:
                    results.append(run_trial(c, audit=audit, templates=templates))
            else:
                results.append(run_trial(c, templates=templates))
    else:
        results = run_trials(cfgs, cfg.jobs)
    rows = []
    for i, (s, r) in enumerate(zip(seeds, results)):
        rows += epoch_rows(i, r)
        save_snapshot(
            out / f"wiring_{i}.json", r.wiring, r.tune, trial_id=i, trial_seed=s,
            learned={str(k): v for k, v in r.learned.items()}, sigma_jitter=r.sigma_jitter,
        )
        log.info("trial %d: %s ep_sat=%d fp=%.2f", i, "success" if r.success else r.failure_mode, r.ep_sat, r.fp_rate)
    write_epoch_csv(out / "epochs.csv", rows)
    write_trial_csv(out / "trials.csv", results)
    return 0


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    tcfg = cfg.trial_config()
    if not args.snapshot.is_file():
        raise ParameterError(f"snapshot {args.snapshot} does not exist")
    wiring, tune, doc = load_snapshot(args.snapshot)
    if tune is None:
        raise IntegrityError(f"{args.snapshot}: snapshot has no tuned parameters")
    if tune.d != tcfg.d:
        raise IntegrityError(f"{args.snapshot}: snapshot d = {tune.d}, configuration says d = {tcfg.d}")
    seed = int(doc.get("trial_seed", tcfg.seed))
    tcfg = tcfg.replace(seed=seed)
    templates = _templates(cfg, tcfg, args.patterns)
    net = Network(wiring, tune, None, tcfg.dt)
    sigma = float(doc.get("sigma_jitter", tcfg.sigma_jitter))
    test_rng = rngmod.stream(seed, "eval")
    if "learned" in doc:
        learned = {int(k): (tuple(v) if v is not None else None) for k, v in doc["learned"].items()}
    else:
        learned = {t.class_label: net.representation(t) for t in templates}
    lines = ["class_label,representation,test_representation,match"]
    for t in templates:
        rep = net.representation(apply_jitter(t, JitterSpec(sigma), test_rng))
        want = learned.get(t.class_label)
        lines.append(f"{t.class_label},{_rep(want)},{_rep(rep)},{int(rep == want)}")
    fp = false_positive_probe(net, learned, tcfg, tcfg.n_probes, rngmod.stream(seed, "eval-probe"))
    (out / "eval.csv").write_text("\n".join(lines) + "\n")
    (out / "eval_summary.csv").write_text(f"n_probes,fp_rate\n{tcfg.n_probes},{fp:.6f}\n")
    log.info("false-positive rate %.4f over %d probes", fp, tcfg.n_probes)
    return 0


def _rep(r) -> str:
    return "" if r is None else " ".join(str(n) for n in r)


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    sw = cfg.sweep
    points = sweep(sw.axis, sw.grid, int(sw.trials_per_point), cfg.trial_config(), cfg.jobs)
    write_sweep_csv(out / "sweep.csv", points)
    rows, results, ids = [], [], []
    for pi, p in enumerate(points):
        for ti, r in enumerate(p.results):
            tid = pi * int(sw.trials_per_point) + ti
            rows += epoch_rows(tid, r)
            results.append(r)
            ids.append(tid)
        log.info("%s=%s: success %.2f%% ep_sat %.1f", sw.axis, p.point, p.success_pct, p.ep_sat_avg)
    write_trial_csv(out / "trials.csv", results, ids)
    write_epoch_csv(out / "epochs.csv", rows)
    return 0


def cmd_mismatch(cfg: ExperimentConfig, args) -> int:
    out = _outdir(cfg)
    rows = degradation_experiment(cfg.trial_config(), cfg.mismatch.spec(), int(cfg.mismatch.trials), cfg.jobs)
    write_degradation_csv(out / "mismatch.csv", rows)
    for r in rows:
        log.info("%s: %.2f%% (ideal %.2f%%)", r.config_label, r.success_pct, r.ideal_pct)
    return 0


COMMANDS = {
    "gen": cmd_gen, "tune": cmd_tune, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "mismatch": cmd_mismatch,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    handler = None
    try:
        cfg = resolve(args)
        out = _outdir(cfg)
        handler = logging.FileHandler(out / "run.log")
        handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
        logging.getLogger().addHandler(handler)
        dump_config(cfg, out / "config.yaml")
        log.info("%s: seed=%d out=%s", args.command, cfg.seed, out)
        return COMMANDS[args.command](cfg, args)
    except WtaError as exc:
        log.error("%s", exc)
        if isinstance(exc, CalibrationError):
            log.error("hint: raise network.I0_inh or network.inh_ratio so the inhibitory amplitude exceeds I_e_av")
        return next((code for cls, code in EXIT_CODES.items() if isinstance(exc, cls)), 1)
    except OSError as exc:
        log.error("%s", exc)
        return 1
    finally:
        if handler is not None:
            logging.getLogger().removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
