"""Command-line entry point: ingest, featurize, experiment, report.

Exit codes: 0 success, 1 user error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, dump_config, load_config, parse_targets
from .dataset import load_featurized
from .evaluate import CONFIGURATION_FOR_METHOD, CONFIGURATIONS, METRICS, PROTOCOLS, ExperimentSpec, load_result, run_experiment
from .ingest import SCHEMES, IngestError, build_dataset, get_scheme, load_clip, load_diagnoses, read_manifest, write_manifest
from .melspec import (
    MelConfig,
    MelSpectrogram,
    SpecFormatError,
    mean_columns,
    mel_filterbank,
    mel_spectrogram,
    minmax_normalize,
    resize_columns,
    write_spec,
)

EXIT_OK, EXIT_USER, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
METHODS = tuple(CONFIGURATION_FOR_METHOD)
REPORT_HEADERS = ("Sensitivity", "Specificity", "Score", "Precision", "Recall", "F-Score")


class UserError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


class _Help(argparse.ArgumentDefaultsHelpFormatter):
    # flags left as None fall back to the config file; their help names the default
    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UserError(f"{what} not found: {p}")
    return p


def _require_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UserError(f"{what} not found: {p}")
    return p


def _config(args, overrides: dict) -> RunConfig:
    try:
        return load_config(getattr(args, "config", None), overrides)
    except ConfigError as exc:
        raise UserError(str(exc)) from None


def _counts_table(counts: dict, dropped: int | None = None) -> str:
    width = max([len(c) for c in counts] + [5])
    lines = [f"{'class'.ljust(width)}  count"]
    lines += [f"{c.ljust(width)}  {n:5d}" for c, n in counts.items()]
    lines.append(f"{'total'.ljust(width)}  {sum(counts.values()):5d}")
    if dropped is not None:
        lines.append(f"{'dropped'.ljust(width)}  {dropped:5d}")
    return "\n".join(lines)


# ---------------------------------------------------------------- ingest


def cmd_ingest(args) -> int:
    cfg = _config(args, {"paths": {"audio_dir": args.audio_dir, "diagnoses": args.diagnoses}, "ingest": {"scheme": args.scheme}})
    if not cfg.paths.audio_dir or not cfg.paths.diagnoses:
        raise UserError("--audio-dir and --diagnoses are required (flag or [paths] in --config)")
    audio_dir = _require_dir(cfg.paths.audio_dir, "audio directory")
    diag_path = _require_file(cfg.paths.diagnoses, "diagnosis file")
    try:
        scheme = get_scheme(cfg.ingest.scheme)
    except (KeyError, ValueError) as exc:
        raise UserError(str(exc)) from None
    try:
        diagnoses = load_diagnoses(diag_path.read_text())
    except IngestError as exc:
        raise DataError(f"{diag_path}: {exc}") from None
    try:
        audio_set = build_dataset(audio_dir, diagnoses, scheme)
    except IngestError as exc:
        raise DataError(f"{audio_dir}: {exc}") from None
    out = Path(args.out or cfg.paths.work_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.csv", audio_set)
    sidecar = {"audio_dir": str(audio_dir.resolve()), "scheme": scheme.name, "counts": audio_set.counts(), "dropped": audio_set.dropped}
    (out / "ingest.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    if len(audio_set) == 0:
        print(f"warning: no labelled recordings found in {audio_dir}", file=sys.stderr)
    print(_counts_table(audio_set.counts(), audio_set.dropped))
    return EXIT_OK


# ---------------------------------------------------------------- featurize


def _raw_spectrogram(task):
    path, config, filterbank = task
    try:
        return mel_spectrogram(load_clip(path), config, filterbank).values.astype(np.float32), None
    except (IngestError, OSError, ValueError) as exc:
        return None, f"{path}: {exc}"


def _mel_overrides(args) -> dict:
    return {
        "target_sample_rate": args.sample_rate,
        "window_size": args.window_size,
        "hop": args.hop,
        "n_mels": args.n_mels,
        "fmin": args.fmin,
        "fmax": args.fmax,
        "resize_mode": args.resize_mode,
    }


def cmd_featurize(args) -> int:
    cfg = _config(args, {"melspec": _mel_overrides(args)})
    manifest = _require_file(args.manifest, "manifest")
    try:
        rows = read_manifest(manifest)
    except IngestError as exc:
        raise DataError(str(exc)) from None
    audio_dir = args.audio_dir or cfg.paths.audio_dir
    sidecar = manifest.parent / "ingest.json"
    if not audio_dir and sidecar.is_file():
        audio_dir = json.loads(sidecar.read_text())["audio_dir"]
    if not audio_dir:
        raise UserError("audio directory unknown: pass --audio-dir (no ingest.json next to the manifest)")
    audio_dir = _require_dir(audio_dir, "audio directory")
    if not rows:
        raise DataError(f"{manifest}: manifest lists no recordings")
    mel = cfg.melspec
    try:
        fb = mel_filterbank(mel)
    except ValueError as exc:
        raise UserError(f"Mel settings: {exc}") from None
    jobs = max(1, args.jobs if args.jobs is not None else cfg.evaluate.jobs)
    # workers rebuild the filterbank rather than receive a copy per task
    tasks = [(audio_dir / f"{r['source_id']}.wav", mel, fb if jobs == 1 else None) for r in rows]
    # pass 1: raw spectrograms and their widths
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            raw = list(pool.map(_raw_spectrogram, tasks, chunksize=8))
    else:
        raw = [_raw_spectrogram(t) for t in tasks]
    failed = [err for _, err in raw if err is not None]
    kept = [(r, v) for r, (v, err) in zip(rows, raw) if err is None]
    for err in failed:
        print(f"error: {err}", file=sys.stderr)
    if not kept:
        raise DataError("no recording could be featurized")
    target = mean_columns([v.shape[1] for _, v in kept])
    print(f"target width: {target} columns")
    # pass 2: resize, normalize, write
    out = Path(args.out or Path(cfg.paths.work_dir) / "features")
    (out / "specs").mkdir(parents=True, exist_ok=True)
    for row, values in kept:
        spec = minmax_normalize(resize_columns(MelSpectrogram(values), target, mel.resize_mode))
        write_spec(spec, out / "specs" / f"{row['source_id']}.mspc")
    lines = ["source_id,patient_id,label,scheme"]
    lines += [f"{r['source_id']},{r['patient_id']},{r['label']},{r['scheme']}" for r, _ in kept]
    (out / "manifest.csv").write_text("\n".join(lines) + "\n")
    report = {
        "target_columns": target,
        "rows": mel.n_mels,
        "written": len(kept),
        "failed": failed,
        "source_widths": {r["source_id"]: int(v.shape[1]) for r, v in kept},
        "melspec": mel.__dict__,
    }
    (out / "featurize.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"wrote {len(kept)} spectrograms to {out / 'specs'} ({len(failed)} failed)")
    return EXIT_DATA if failed else EXIT_OK


# ---------------------------------------------------------------- experiment


def build_spec(cfg: RunConfig, configuration: str) -> ExperimentSpec:
    try:
        return ExperimentSpec(
            configuration=configuration,
            k=cfg.evaluate.folds,
            protocol=cfg.evaluate.protocol,
            seed=cfg.evaluate.seed,
            stratified=cfg.evaluate.stratified,
            patient_disjoint=cfg.evaluate.patient_disjoint,
            val_fraction=cfg.evaluate.val_fraction,
            holdout=cfg.evaluate.holdout,
            oversample_k=cfg.balance.k,
            targets=parse_targets(cfg.balance.targets),
            train=cfg.cnn_classifier,
            vae=cfg.vae_augment,
        )
    except (ConfigError, ValueError) as exc:
        raise UserError(str(exc)) from None


def cmd_experiment(args) -> int:
    overrides = {
        "balance": {"method": args.method},
        "evaluate": {"protocol": args.protocol, "seed": args.seed, "folds": args.folds, "holdout": args.holdout, "jobs": args.jobs},
        "ingest": {"scheme": args.scheme},
    }
    cfg = _config(args, overrides)
    if cfg.balance.method not in METHODS:
        raise UserError(f"unknown method {cfg.balance.method!r}; choose from {', '.join(METHODS)}")
    configuration = CONFIGURATION_FOR_METHOD[cfg.balance.method]
    spec = build_spec(cfg, configuration)
    data_dir = _require_dir(args.data or Path(cfg.paths.work_dir) / "features", "featurized data directory")
    try:
        dataset = load_featurized(data_dir)
    except (IngestError, SpecFormatError, OSError, ValueError) as exc:
        raise DataError(f"{data_dir}: {exc}") from None
    if args.scheme is not None and dataset.scheme != args.scheme:
        raise UserError(f"--scheme {args.scheme} does not match the data in {data_dir} (scheme {dataset.scheme})")
    try:
        result = run_experiment(dataset, spec, jobs=max(1, cfg.evaluate.jobs))
    except ValueError as exc:
        raise DataError(str(exc)) from None
    out = Path(args.out or Path(cfg.paths.work_dir) / "results" / f"{dataset.scheme}-{configuration}")
    result.write(out)
    (out / "config.ini").write_text(dump_config(cfg))
    print(f"{configuration} / {dataset.scheme} / {spec.split} / protocol {spec.protocol} / seed {spec.seed}")
    print(result.table())
    return EXIT_OK


# ---------------------------------------------------------------- report


def _scheme_order(scheme: str) -> tuple:
    order = list(SCHEMES)
    return (order.index(scheme) if scheme in order else len(order), scheme)


def report_rows(results: list[dict]) -> list[tuple[str, list[dict]]]:
    """Group results by scheme (ternary, six, then others) in configuration order."""
    config_order = list(CONFIGURATIONS)
    groups: dict[str, list[dict]] = {}
    for r in results:
        groups.setdefault(r["scheme"], []).append(r)
    out = []
    for scheme in sorted(groups, key=_scheme_order):
        rows = sorted(
            groups[scheme],
            key=lambda r: (config_order.index(r["configuration"]) if r["configuration"] in config_order else 99, r["configuration"], r["seed"]),
        )
        out.append((scheme, rows))
    return out


def render_report(results: list[dict]) -> str:
    text, csv_lines = [], ["scheme,configuration,protocol,seed," + ",".join(REPORT_HEADERS)]
    for scheme, rows in report_rows(results):
        table = [["Configuration", *REPORT_HEADERS]]
        for r in rows:
            table.append([r["configuration"], *(f"{r['mean'][m]:.4f}" for m in METRICS)])
            csv_lines.append(",".join([scheme, r["configuration"], r["protocol"], str(r["seed"])] + [repr(float(r["mean"][m])) for m in METRICS]))
        widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
        text.append(f"[{scheme}]")
        text += ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(row, widths))) for row in table]
        text.append("")
    return "\n".join(text + csv_lines) + "\n"


def cmd_report(args) -> int:
    root = _require_dir(args.results_dir, "results directory")
    paths = sorted(root.rglob("result.json"))
    if not paths:
        raise UserError(f"no result.json found under {root}")
    try:
        results = [load_result(p) for p in paths]
    except (OSError, ValueError) as exc:
        raise DataError(str(exc)) from None
    sys.stdout.write(render_report(results))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lungsound", description=__doc__.splitlines()[0], formatter_class=_Help)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    from_cfg = "from --config, else built-in"

    p = sub.add_parser("ingest", help="label recordings and write a manifest", formatter_class=_Help)
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--audio-dir", help=f"directory of ICBHI-named .wav files ({from_cfg})")
    p.add_argument("--diagnoses", help=f"patient diagnosis table, tab or comma separated ({from_cfg})")
    p.add_argument("--scheme", choices=sorted(SCHEMES), help=f"label scheme ({from_cfg}: ternary)")
    p.add_argument("--out", help="output directory for manifest.csv and ingest.json ([paths] work_dir)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="Mel spectrograms resized to the mean width", formatter_class=_Help)
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--manifest", required=True, help="manifest.csv written by ingest")
    p.add_argument("--audio-dir", help="audio directory (default: recorded in ingest.json next to the manifest)")
    p.add_argument("--out", help="output directory ([paths] work_dir/features)")
    p.add_argument("--jobs", type=int, help="worker processes ([evaluate] jobs, built-in 1)")
    d = MelConfig()
    p.add_argument("--sample-rate", type=int, help=f"resampling rate in Hz (built-in {d.target_sample_rate})")
    p.add_argument("--window-size", type=int, help=f"STFT window length (built-in {d.window_size})")
    p.add_argument("--hop", type=int, help=f"STFT hop (built-in {d.hop})")
    p.add_argument("--n-mels", type=int, help=f"Mel bands (built-in {d.n_mels})")
    p.add_argument("--fmin", type=float, help=f"lowest band edge in Hz (built-in {d.fmin})")
    p.add_argument("--fmax", type=float, help=f"highest band edge in Hz (built-in {d.fmax})")
    p.add_argument("--resize-mode", choices=("interpolate", "crop_pad"), help=f"width resizing (built-in {d.resize_mode})")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("experiment", help="k-fold evaluation of one balancing method", formatter_class=_Help)
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--data", help="featurized directory ([paths] work_dir/features)")
    p.add_argument("--method", choices=METHODS, help=f"balancing method ({from_cfg}: vae)")
    p.add_argument("--scheme", choices=sorted(SCHEMES), help="expected label scheme of the data (checked)")
    p.add_argument("--protocol", choices=PROTOCOLS, help=f"default balances inside each fold, paper balances the whole set before splitting ({from_cfg}: default)")
    p.add_argument("--seed", type=int, help=f"global seed ({from_cfg}: 0)")
    p.add_argument("--folds", type=int, help=f"number of folds ({from_cfg}: 10)")
    p.add_argument("--holdout", type=float, help=f"test share of one stratified split instead of k folds ({from_cfg}: 0, off)")
    p.add_argument("--jobs", type=int, help=f"parallel folds ({from_cfg}: 1)")
    p.add_argument("--out", help="result directory ([paths] work_dir/results/<scheme>-<configuration>)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="compare result files", formatter_class=_Help)
    p.add_argument("--results-dir", required=True, help="directory searched recursively for result.json")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
