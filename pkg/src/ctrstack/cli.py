"""Command-line entry point: gen-data, train, evaluate, predict and replay.

Every command takes ``--config`` (a JSON file), ``--seed``, ``--threads`` and
``--out``, and writes ``<out>.manifest.json`` next to its main output.  The
manifest holds the resolved config, seeds, argv, input and output digests and
timings; ``ctrstack replay <manifest>`` re-runs it and compares digests.

Config sections (all optional): ``synthetic`` (generator fields),
``window`` (anchor_date, negative_sample_rate, sample_seed, offsets),
``partition`` (k), ``variant`` (a variant spec) and ``evaluate``
(baseline, ne_base_rate, ne_denominator).  Flags override the file, the file
overrides defaults.

Exit codes: 0 success, 2 config error, 3 data error, 4 internal error,
5 replay digest mismatch.
"""

from __future__ import annotations

import argparse
import copy
import datetime as dt
import hashlib
import json
import os
import platform
import sys
import tempfile
import time

import numpy as np

from . import _accel
from .ensemble import PartitionConfig
from .errors import ConfigError, DataError
from .logs import ClickLog, sidecar_path
from .pipeline import (WindowConfig, calibrate, default_anchor, prepare_training,
                       score_and_report)
from .synthetic import SyntheticSpec, generate_synthetic_logs
from .variants import ModelBundle, VariantSpec, train_variant

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL, EXIT_MISMATCH = 0, 2, 3, 4, 5
MANIFEST_FORMAT = "ctrstack-manifest"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _digests(paths) -> dict:
    out = {}
    for p in paths:
        out[os.fspath(p)] = sha256_file(p)
        side = sidecar_path(p)
        if os.path.exists(side):
            out[side] = sha256_file(side)
    return out


def load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(cfg) - {"synthetic", "window", "partition", "variant", "evaluate"}
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")
    return cfg


def _section(cfg, name) -> dict:
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return dict(sec)


def _window(cfg: dict, log: ClickLog) -> WindowConfig:
    w = _section(cfg, "window")
    w.setdefault("anchor_date", default_anchor(log).isoformat())
    try:
        return WindowConfig(**w)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid window config: {exc}") from None


def _partition(cfg: dict) -> PartitionConfig:
    try:
        return PartitionConfig(**_section(cfg, "partition"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid partition config: {exc}") from None


def _read_log(path) -> ClickLog:
    try:
        return ClickLog.read(path)
    except OSError as exc:
        raise DataError(f"cannot read log {path}: {exc}") from None


def _publish(tmp, out):
    """Rename ``tmp`` over ``out`` with the mode a plain ``open`` would have used."""
    umask = os.umask(0)
    os.umask(umask)
    os.chmod(tmp, 0o666 & ~umask)
    os.replace(tmp, out)


def _write_log_atomic(log: ClickLog, out) -> None:
    """Write the log and its sidecar under temporary names, then rename both."""
    out = os.fspath(out)
    d = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(prefix=".gen-", suffix=".jsonl", dir=d)
    os.close(fd)
    try:
        log.write(tmp)
        if os.path.exists(sidecar_path(tmp)):
            _publish(sidecar_path(tmp), sidecar_path(out))
        elif os.path.exists(sidecar_path(out)):
            os.remove(sidecar_path(out))
        _publish(tmp, out)
    finally:
        for p in (tmp, sidecar_path(tmp)):
            if os.path.exists(p):
                os.remove(p)


def _write_text_atomic(text: str, out) -> None:
    out = os.fspath(out)
    d = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(prefix=".out-", dir=d)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        _publish(tmp, out)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


# --- commands ----------------------------------------------------------------

def cmd_gen_data(args, cfg):
    spec_d = _section(cfg, "synthetic")
    if args.seed is not None:
        spec_d["seed"] = args.seed
    try:
        spec = SyntheticSpec.from_dict(spec_d)
    except TypeError as exc:
        raise ConfigError(f"invalid synthetic spec: {exc}") from None
    log = generate_synthetic_logs(spec)
    _write_log_atomic(log, args.out)
    cfg["synthetic"] = spec.to_dict()
    return {"seeds": {"synthetic": spec.seed}, "inputs": [], "outputs": [args.out],
            "summary": {"rows": len(log), "listings": log.n_listings}}


def _variant(cfg, args) -> VariantSpec:
    v = _section(cfg, "variant")
    if args.variant is not None:
        v["kind"] = args.variant
        v.setdefault("name", args.variant)
    if "kind" not in v:
        raise ConfigError("no variant kind: pass --variant or set variant.kind in the config")
    v.setdefault("name", v["kind"])
    if args.seed is not None:
        v["fold_seed"] = args.seed
    return VariantSpec.from_dict(v)


def cmd_train(args, cfg):
    log = _read_log(args.logs)
    if args.seed is not None:
        cfg.setdefault("window", {})["sample_seed"] = args.seed
    window = _window(cfg, log)
    partition = _partition(cfg)
    spec = _variant(cfg, args)
    ts, _ = prepare_training(log, window)
    bundle = train_variant(spec, ts, partition, args.threads)
    _write_text_atomic(bundle.dumps(), args.out)
    cfg["window"] = window.to_dict()
    cfg["partition"] = {"k": partition.k}
    cfg["variant"] = spec.to_dict()
    return {"seeds": {"sample_seed": window.sample_seed, "fold_seed": spec.fold_seed,
                      "shuffle_seeds": {r: h.shuffle_seed for r, h in spec.hyper.items()}},
            "inputs": [args.logs], "outputs": [args.out],
            "summary": {"training_rows": len(ts.rows), "model_digest": bundle.digest(),
                        "training_base_rate": bundle.training_base_rate}}


def _load_bundle(path) -> ModelBundle:
    try:
        return ModelBundle.load(path)
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from None


def cmd_evaluate(args, cfg):
    log = _read_log(args.logs)
    if args.seed is not None:
        cfg.setdefault("window", {})["sample_seed"] = args.seed
    window = _window(cfg, log)
    partition = _partition(cfg)
    ev = _section(cfg, "evaluate")
    unknown = set(ev) - {"baseline", "ne_base_rate", "ne_denominator"}
    if unknown:
        raise ConfigError(f"unknown evaluate options {sorted(unknown)}")
    if args.baseline is not None:
        ev["baseline"] = args.baseline
    ev.setdefault("baseline", "baseline")
    ev.setdefault("ne_base_rate", "window")
    ev.setdefault("ne_denominator", "entropy")
    if ev["ne_base_rate"] not in ("window", "variant"):
        raise ConfigError(f"unknown ne_base_rate {ev['ne_base_rate']!r}")
    if ev["ne_denominator"] not in ("entropy", "rate"):
        raise ConfigError(f"unknown ne_denominator {ev['ne_denominator']!r}")
    bundles = {}
    for path in args.models:
        b = _load_bundle(path)
        if b.name in bundles:
            raise DataError(f"two models named {b.name!r}")
        bundles[b.name] = b
    ts, valid = prepare_training(log, window)
    rate = ts.base_rate if ev["ne_base_rate"] == "window" else None
    res = score_and_report(bundles, valid, partition, ev["baseline"], rate,
                           ev["ne_denominator"], args.threads)
    record = res.to_dict()
    record["table"] = res.table()
    _write_text_atomic(json.dumps(record, indent=2, sort_keys=True) + "\n", args.out)
    print(res.table())
    for name, rep in res.reports.items():
        for sl, r in rep.items():
            if r.auc is None:
                print(f"warning: AUC undefined for {name}/{sl} (single class)", file=sys.stderr)
    cfg["window"] = window.to_dict()
    cfg["partition"] = {"k": partition.k}
    cfg["evaluate"] = ev
    return {"seeds": {"sample_seed": window.sample_seed}, "inputs": [args.logs, *args.models],
            "outputs": [args.out], "summary": {"validation_rows": int(res.labels.size)}}


def cmd_predict(args, cfg):
    bundle = _load_bundle(args.model)
    log = _read_log(args.logs)
    if (args.calibrate_mean is None) != (args.calibrate_std is None):
        raise ConfigError("--calibrate-mean and --calibrate-std go together")
    scores = bundle.score(log)
    calib = None
    if args.calibrate_mean is not None and len(log):
        scores, params = calibrate(scores, args.calibrate_mean, args.calibrate_std)
        calib = params.to_dict()
    lines = []
    for r in range(len(log)):
        lines.append(json.dumps({"listing_id": log.listing_ids[int(log.row_listing[r])],
                                 "date": dt.date.fromordinal(int(log.dates[r])).isoformat(),
                                 "score": float(scores[r])}, separators=(",", ":")))
    _write_text_atomic("".join(line + "\n" for line in lines), args.out)
    if args.calibrate_mean is not None:
        cfg["calibration"] = {"mean": args.calibrate_mean, "std": args.calibrate_std}
    return {"seeds": {}, "inputs": [args.model, args.logs], "outputs": [args.out],
            "summary": {"rows": len(log), "calibration": calib}}


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "evaluate": cmd_evaluate,
            "predict": cmd_predict}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctrstack", description="CTR models for promoted listings.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="override the command's seed")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
        sp.add_argument("--out", required=True, help=out_help)

    sp = sub.add_parser("gen-data", help="generate a synthetic click log")
    common(sp, "log file to write")

    sp = sub.add_parser("train", help="train one variant on the training window")
    common(sp, "model bundle to write")
    sp.add_argument("--logs", required=True)
    sp.add_argument("--variant", choices=("baseline", "historical", "content", "ensemble"))

    sp = sub.add_parser("evaluate", help="score the validation day and report deltas")
    common(sp, "JSON report to write")
    sp.add_argument("--logs", required=True)
    sp.add_argument("--models", nargs="+", required=True)
    sp.add_argument("--baseline", help="variant name anchoring calibration and deltas")

    sp = sub.add_parser("predict", help="score every row of a log")
    common(sp, "JSONL scores to write")
    sp.add_argument("--model", required=True)
    sp.add_argument("--logs", required=True)
    sp.add_argument("--calibrate-mean", type=float)
    sp.add_argument("--calibrate-std", type=float)

    sp = sub.add_parser("replay", help="re-run a manifest and compare output digests")
    sp.add_argument("manifest")
    sp.add_argument("--out-dir", help="directory for replayed outputs (default: a temp dir)")
    return p


def manifest_path(out) -> str:
    return f"{os.fspath(out)}.manifest.json"


def _run(argv, write_manifest=True) -> dict:
    args = build_parser().parse_args(argv)
    if args.command == "replay":
        return replay(args.manifest, args.out_dir)
    if args.threads < 1:
        raise ConfigError("--threads must be at least 1")
    cfg = load_config(args.config)
    resolved = copy.deepcopy(cfg)
    t0 = time.perf_counter()
    info = COMMANDS[args.command](args, resolved)
    elapsed = time.perf_counter() - t0
    manifest = {
        "format": MANIFEST_FORMAT, "version": 1, "command": args.command, "argv": list(argv),
        "config": resolved, "seeds": info["seeds"], "threads": args.threads,
        "inputs": _digests(info["inputs"]), "outputs": _digests(info["outputs"]),
        "summary": info["summary"], "timings": {"wall_seconds": elapsed},
        "environment": {"python": platform.python_version(), "numpy": np.__version__,
                        "backend": _accel.backend()},
    }
    if write_manifest:
        _write_text_atomic(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n",
                           manifest_path(args.out))
    return manifest


def _rewrite_paths(argv, mapping):
    return [mapping.get(a, a) for a in argv]


def replay(path, out_dir=None) -> dict:
    """Re-run a manifest's command with its resolved config and compare digests."""
    try:
        with open(path, encoding="utf-8") as fh:
            m = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    if m.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: not a run manifest")
    for p, digest in m["inputs"].items():
        if not os.path.exists(p) or sha256_file(p) != digest:
            raise DataError(f"input {p} is missing or changed since the run")
    with tempfile.TemporaryDirectory() as tmp:
        where = out_dir or tmp
        os.makedirs(where, exist_ok=True)
        cfg_path = os.path.join(where, "replay-config.json")
        with open(cfg_path, "w", encoding="utf-8") as fh:
            json.dump({k: v for k, v in m["config"].items() if k != "calibration"}, fh)
        argv = list(m["argv"])
        out_map = {p: os.path.join(where, os.path.basename(p)) for p in m["outputs"]}
        argv = _rewrite_paths(argv, out_map)
        if "--config" in argv:
            argv[argv.index("--config") + 1] = cfg_path
        else:
            argv += ["--config", cfg_path]
        new = _run(argv, write_manifest=False)
        mismatched = []
        for p, digest in m["outputs"].items():
            if new["outputs"].get(out_map.get(p, p)) != digest:
                mismatched.append(p)
    result = {"command": "replay", "manifest": os.fspath(path), "mismatched": mismatched,
              "outputs": m["outputs"]}
    if mismatched:
        result["exit"] = EXIT_MISMATCH
    return result


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        result = _run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if result.get("command") == "replay":
        if result["mismatched"]:
            print(f"replay mismatch: {', '.join(result['mismatched'])}", file=sys.stderr)
            return EXIT_MISMATCH
        print(f"replay ok: {len(result['outputs'])} output digests match")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
