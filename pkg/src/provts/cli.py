"""Command-line pipeline: synth, ingest, transform, train, eval, importance, interpret.

Every command writes its artifacts plus one ``manifest.json`` under
``--out``.  Settings come from ``--config <json>`` with command-line flags
taking precedence.  Exit status: 0 success, 1 validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from provts import __version__, errors
from provts.parallel import resolve_jobs
from provts.types import Environment, FeatureGroup

log = logging.getLogger("provts")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def tool_version() -> str:
    try:
        return version("provts")
    except PackageNotFoundError:
        return __version__


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2, which is reserved here for I/O failures
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- settings -----------------------------------------------------------------

# per-command defaults; a key set on the command line or in --config wins
DEFAULTS: dict[str, dict[str, Any]] = {
    "synth": {"preset": "spaces3", "n": 30, "env": "immersive", "format": "csv", "noise_feature": None, "confine": None},
    "ingest": {"env": "immersive", "format": None, "rules": None, "exclusions": None, "min_duration": 2.0,
               "keep_interaction": False, "strict": False},
    "transform": {"env": "immersive", "l": 100},
    "train": {"model": "rocket", "scale": "space", "params": {}},
    "eval": {"model": "rocket", "scale": "space", "k": 5, "params": {}, "model_dir": None, "png": True},
    "importance": {"model": "rocket", "scale": "space", "k": 5, "params": {}, "groups": None, "features": None,
                   "repeats": 100, "mode": "retrain", "model_dir": None},
    "interpret": {"env": "immersive", "model_dir": None, "start_len": 100, "step": None, "threshold": 0.5,
                  "indicator": "objPosition.y"},
}


def _settings(command: str, args: argparse.Namespace) -> dict[str, Any]:
    cfg = dict(DEFAULTS[command])
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise errors.InvalidConfig("--config must hold a JSON object")
        # a config may be shared across commands under per-command keys
        doc = {**{k: v for k, v in doc.items() if k not in DEFAULTS}, **doc.get(command, {})}
        unknown = set(doc) - set(cfg) - {"seed", "jobs", "in", "archetypes"}
        if unknown:
            raise errors.InvalidConfig(f"unknown {command} settings: {sorted(unknown)}")
        cfg.update(doc)
    for key in list(cfg) + ["seed", "jobs", "in", "archetypes"]:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    cfg.setdefault("seed", 0)
    if cfg["seed"] is None:
        cfg["seed"] = 0
    return cfg


def _write_manifest(out: Path, command: str, argv: Sequence[str], cfg: dict, inputs: list[str],
                    outputs: list[Path], wall: float) -> Path:
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": {k: v for k, v in sorted(cfg.items()) if k != "jobs"},
        "inputs": inputs,
        "outputs": sorted(str(p.relative_to(out)) if p.is_relative_to(out) else str(p) for p in outputs),
        "seed": cfg.get("seed", 0),
        "tool_version": tool_version(),
        "wall_time_s": round(wall, 3),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True, default=str) + "\n")
    return path


def _model_config(kind: str, params: dict | str | None):
    from provts.models import config_from_dict

    if isinstance(params, str):
        params = json.loads(Path(params).read_text()) if Path(params).exists() else json.loads(params)
    return config_from_dict(kind, params or {})


def _load_traces(path: str, env: str, fmt: str | None = None, strict: bool = True, issues=None):
    from provts.ingest import parse_log

    return parse_log(path, env, fmt=fmt, on_error="raise" if strict else "skip", issues=issues)


# -- commands -----------------------------------------------------------------


def cmd_synth(cfg: dict, out: Path) -> tuple[list[str], list[Path]]:
    from provts.ingest import write_log
    from provts.synth import confine_signal, generate, generate_openmix, inject_noise_feature, load_archetypes, preset

    env = Environment(cfg["env"])
    configs = load_archetypes(cfg["archetypes"]) if cfg.get("archetypes") else preset(cfg["preset"])
    inputs = [cfg["archetypes"]] if cfg.get("archetypes") else []
    fmt = cfg["format"]
    log_path = out / f"logs.{fmt}"
    outputs = [log_path]
    if cfg["preset"] == "openmix" and not cfg.get("archetypes"):
        mixed = generate_openmix(configs, cfg["n"], cfg["seed"], env)
        traces = [t for t, _ in mixed]
        truth = {
            t.participant_id: [
                {"t_start_s": s.t_start_s, "t_end_s": s.t_end_s, "category_code": s.category_code} for s in segs
            ]
            for t, segs in mixed
        }
        (out / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
        outputs.append(out / "truth.json")
    else:
        traces = generate(configs, cfg["n"], cfg["seed"], env)
    if cfg.get("confine"):
        traces = confine_signal(traces, FeatureGroup(cfg["confine"]), cfg["seed"])
    if cfg.get("noise_feature"):
        traces = inject_noise_feature(traces, cfg["noise_feature"], cfg["seed"])
        (out / "schema.json").write_text(traces[0].schema.to_json())
        outputs.append(out / "schema.json")
    write_log(traces, log_path, fmt)
    print(f"wrote {len(traces)} traces to {log_path}")
    return inputs, outputs


def _schema_for_log(path: Path, env: str):
    """Schema sidecar written by ``synth --noise-feature``, if present."""
    from provts.types import FeatureSchema, schema_for

    side = path.parent / "schema.json"
    if side.exists():
        return FeatureSchema.from_dict(json.loads(side.read_text())), [str(side)]
    return schema_for(env), []


def cmd_ingest(cfg: dict, out: Path) -> tuple[list[str], list[Path]]:
    from provts.ingest import clean, load_golden_rules, parse_log, read_exclusions, write_log

    src = Path(cfg["in"])
    schema, extra = _schema_for_log(src, cfg["env"])
    issues: list = []
    traces = parse_log(src, cfg["env"], schema, fmt=cfg["format"],
                       on_error="raise" if cfg["strict"] else "skip", issues=issues)
    rules = load_golden_rules(cfg["rules"]) if cfg["rules"] else []
    excl = read_exclusions(cfg["exclusions"]) if cfg["exclusions"] else []
    kept, report = clean(traces, rules, threshold_s=float(cfg["min_duration"]), exclusions=excl,
                         drop_interaction=not cfg["keep_interaction"])
    report.malformed_rows = [str(e) for e in issues]
    dest = out / "clean.csv"
    write_log(kept, dest, "csv")
    (out / "clean_report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    outputs = [dest, out / "clean_report.json"]
    if extra:
        (out / "schema.json").write_text(schema.to_json())
        outputs.append(out / "schema.json")
    print(f"kept {report.kept} of {report.total_in} traces "
          f"(short {report.dropped_short}, golden {report.dropped_golden}, interaction {report.dropped_interaction})")
    inputs = [str(src)] + extra + [p for p in (cfg["rules"], cfg["exclusions"]) if p]
    return inputs, outputs


def cmd_transform(cfg: dict, out: Path) -> tuple[list[str], list[Path]]:
    from provts.ingest import parse_log
    from provts.transform import TransformConfig, build_dataset, save_tensor

    src = Path(cfg["in"])
    schema, extra = _schema_for_log(src, cfg["env"])
    traces = parse_log(src, cfg["env"], schema)
    tensor = build_dataset(traces, TransformConfig(l=int(cfg["l"])), schema)
    paths = save_tensor(tensor, out / "tensor.bin")
    print(f"tensor {tensor.shape} schema {tensor.schema_hash}")
    return [str(src)] + extra, list(paths)


def _load_tensor_arg(path: str):
    from provts.transform import load_tensor

    return load_tensor(path)


def cmd_train(cfg: dict, out: Path) -> tuple[list[str], list[Path]]:
    from provts.models import save_model, train_model

    tensor = _load_tensor_arg(cfg["in"])
    config = _model_config(cfg["model"], cfg["params"])
    model = train_model(tensor, config, cfg["scale"], cfg["seed"], cfg.get("jobs"))
    d = save_model(model, out / "model", tensor_path=cfg["in"])
    print(f"trained {config.kind} ({cfg['scale']} scale) on {tensor.shape[0]} samples -> {d}")
    return [cfg["in"]], sorted(p for p in d.iterdir())


def cmd_eval(cfg: dict, out: Path) -> tuple[list[str], list[Path]]:
    from provts.evaluate import EvalReport, accuracy_from_cm, confusion_matrix, cross_validate, macro_f1_from_cm
    from provts.models import load_model

    tensor = _load_tensor_arg(cfg["in"])
    inputs = [cfg["in"]]
    if cfg["model_dir"]:
        model = load_model(cfg["model_dir"], cfg.get("jobs"))
        inputs.append(cfg["model_dir"])
        truth = tensor.labels(model.scale)
        pred = model.predict(tensor)  # checks the schema hash
        classes = np.union1d(model.classes, truth[truth >= 0])
        mask = truth >= 0
        cm = confusion_matrix(truth[mask], pred[mask], classes)
        report = EvalReport(model.scale, model.kind, tensor.raw_schema.environment.value, classes, cm,
                            [accuracy_from_cm(cm)], [macro_f1_from_cm(cm)], model.seed, 1)
    else:
        config = _model_config(cfg["model"], cfg["params"])
        report = cross_validate(tensor, config, cfg["scale"], int(cfg["k"]), cfg["seed"], cfg.get("jobs"))
    paths = report.save(out, "eval", png=bool(cfg["png"]))
    print(f"{report.model_id} {report.scale}: accuracy {report.accuracy:.4f} macro-F1 {report.macro_f1:.4f}")
    return inputs, paths


def cmd_importance(cfg: dict, out: Path) -> tuple[list[str], list[Path]]:
    from provts.evaluate import ImportanceReport, cross_validate, leave_group_out, rank_features
    from provts.models import load_model

    tensor = _load_tensor_arg(cfg["in"])
    inputs = [cfg["in"]]
    config = _model_config(cfg["model"], cfg["params"])
    report = ImportanceReport(mode=cfg["mode"], repeats=int(cfg["repeats"]))
    groups = cfg["groups"]
    if groups is None:
        groups = [g.value for g in tensor.raw_schema.groups()]
    elif isinstance(groups, str):
        groups = [g for g in groups.split(",") if g]
    if groups:
        base = cross_validate(tensor, config, cfg["scale"], int(cfg["k"]), cfg["seed"], cfg.get("jobs"))
        for g in groups:
            report.groups.append(
                leave_group_out(tensor, config, g, cfg["scale"], int(cfg["k"]), cfg["seed"], cfg.get("jobs"), base)
            )
    features = cfg["features"]
    if isinstance(features, str):
        features = [f for f in features.split(",") if f]
    if features is None or features:
        if cfg["mode"] == "inference":
            if not cfg["model_dir"]:
                raise errors.InvalidConfig("--mode inference needs --model-dir")
            model = load_model(cfg["model_dir"], cfg.get("jobs"))
            inputs.append(cfg["model_dir"])
        else:
            model = config
        ranked = rank_features(tensor, model, features, int(cfg["repeats"]), cfg["seed"], cfg["mode"],
                               cfg["scale"], int(cfg["k"]), cfg.get("jobs"))
        report.features, report.scores = ranked.features, ranked.scores
    paths = [out / "importance.json", out / "groups.csv", out / "permfit.csv"]
    paths[0].write_text(report.to_json())
    paths[1].write_text(report.groups_csv())
    paths[2].write_text(report.ranking_csv())
    for g in report.groups:
        print(f"leave out {g.group}: dAcc {g.delta_accuracy:+.4f} dF1 {g.delta_macro_f1:+.4f}")
    if report.features:
        print(report.table())
    return inputs, paths


def cmd_interpret(cfg: dict, out: Path) -> tuple[list[str], list[Path]]:
    from provts.interpret import AnnotateConfig, annotate
    from provts.models import load_model

    if not cfg["model_dir"]:
        raise errors.InvalidConfig("interpret needs --model-dir")
    model = load_model(cfg["model_dir"], cfg.get("jobs"))
    src = Path(cfg["in"])
    schema, extra = _schema_for_log(src, cfg["env"])
    from provts.ingest import parse_log

    traces = parse_log(src, cfg["env"], schema)
    acfg = AnnotateConfig(int(cfg["start_len"]), None if cfg["step"] is None else int(cfg["step"]),
                          float(cfg["threshold"]), cfg["indicator"])
    paths = []
    summary = []
    for tr in traces:
        ann = annotate(tr, model, acfg)
        stem = f"timeline_{tr.participant_id}_{tr.trial_index}"
        paths += ann.save(out, stem)
        summary.append({"trace": f"{tr.participant_id}/{tr.trial_index}", "segments": len(ann.segments)})
        print(f"{tr.participant_id}/{tr.trial_index}: " + " ".join(
            f"[{s.t_start_s:.1f}-{s.t_end_s:.1f}s {s.code}]" for s in ann.segments))
    (out / "timelines.json").write_text(json.dumps(summary, indent=1) + "\n")
    paths.append(out / "timelines.json")
    return [str(src), cfg["model_dir"]] + extra, paths


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "transform": cmd_transform,
    "train": cmd_train,
    "eval": cmd_eval,
    "importance": cmd_importance,
    "interpret": cmd_interpret,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="random seed (default 0)")
    common.add_argument("--config", help="JSON settings file; flags override it")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--jobs", type=int, help="worker threads (default $PROVTS_JOBS or all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="provts", description="Task classification from behavior logs.")
    p.add_argument("--version", action="version", version=f"provts {tool_version()}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic behavior logs")
    s.add_argument("--preset", choices=["spaces3", "tasks30", "openmix"])
    s.add_argument("--archetypes", help="JSON archetype list instead of a preset")
    s.add_argument("--n", type=int, help="traces per archetype (openmix: total traces)")
    s.add_argument("--env", choices=[e.value for e in Environment])
    s.add_argument("--format", choices=["csv", "jsonl"])
    s.add_argument("--noise-feature", dest="noise_feature", help="append an i.i.d. uniform feature")
    s.add_argument("--confine", choices=[g.value for g in FeatureGroup],
                   help="keep class signal only in this feature group")

    s = sub.add_parser("ingest", parents=[common], help="parse and clean a log")
    s.add_argument("--in", dest="in", required=True)
    s.add_argument("--env", choices=[e.value for e in Environment])
    s.add_argument("--format", choices=["csv", "jsonl"])
    s.add_argument("--rules", help="golden rules JSON")
    s.add_argument("--exclusions", help="exclusion intervals CSV")
    s.add_argument("--min-duration", dest="min_duration", type=float)
    s.add_argument("--keep-interaction", dest="keep_interaction", action="store_const", const=True)
    s.add_argument("--strict", action="store_const", const=True, help="fail on the first malformed row")

    s = sub.add_parser("transform", parents=[common], help="build a fixed-length tensor")
    s.add_argument("--in", dest="in", required=True)
    s.add_argument("--env", choices=[e.value for e in Environment])
    s.add_argument("--l", type=int, help="segments per trace (default 100)")

    for name, helptext in (("train", "train a classifier"), ("eval", "cross-validate or test a model")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--in", dest="in", required=True, help="tensor (.bin with .json header)")
        s.add_argument("--model", choices=["knn", "cnn", "rocket"])
        s.add_argument("--scale", choices=["space", "task"])
        s.add_argument("--params", help="model parameters as JSON text or file")
        if name == "eval":
            s.add_argument("--k", type=int)
            s.add_argument("--model-dir", dest="model_dir", help="evaluate a trained model instead of CV")
            s.add_argument("--no-png", dest="png", action="store_const", const=False)

    s = sub.add_parser("importance", parents=[common], help="feature importance")
    s.add_argument("--in", dest="in", required=True)
    s.add_argument("--model", choices=["knn", "cnn", "rocket"])
    s.add_argument("--scale", choices=["space", "task"])
    s.add_argument("--params")
    s.add_argument("--k", type=int)
    s.add_argument("--groups", help="comma-separated groups for leave-group-out ('' to skip)")
    s.add_argument("--features", help="comma-separated features for PermFIT ('' to skip)")
    s.add_argument("--repeats", type=int)
    s.add_argument("--mode", choices=["retrain", "inference"])
    s.add_argument("--model-dir", dest="model_dir")

    s = sub.add_parser("interpret", parents=[common], help="annotate open sessions")
    s.add_argument("--in", dest="in", required=True)
    s.add_argument("--env", choices=[e.value for e in Environment])
    s.add_argument("--model-dir", dest="model_dir")
    s.add_argument("--start-len", dest="start_len", type=int)
    s.add_argument("--step", type=int)
    s.add_argument("--threshold", type=float)
    s.add_argument("--indicator")
    return p


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    start = time.perf_counter()
    try:
        cfg = _settings(args.command, args)
        cfg["jobs"] = resolve_jobs(cfg.get("jobs"))
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        inputs, outputs = COMMANDS[args.command](cfg, out)
        _write_manifest(out, args.command, argv, cfg, inputs, outputs, time.perf_counter() - start)
    except errors.ProvtsError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


def main() -> None:
    sys.exit(run())
