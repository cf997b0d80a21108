"""Command-line pipeline driver.

Subcommands cover the whole experiment path: make-corpus, split, vad,
mix-noise, extract, train, eval, report. Settings resolve in order
defaults < JSON config file < ADVDET_* environment variables < flags,
and every command writes a run manifest for provenance.

Exit codes: 0 success, 1 user/config error, 2 data error, 3 internal.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
import traceback
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .audio_io import AudioSignal, Condition, chop_blocks, read_wav, write_wav
from .dataset import (
    ConditionFilter,
    LabeledFeatureSet,
    UtteranceEntry,
    hash_split,
    read_labels_manifest,
    split_of,
    with_condition,
    write_cache,
    write_labels_manifest,
)
from .errors import PipelineError
from .evaluate import (
    DEFAULT_SEEDS,
    EvalReport,
    ExperimentCell,
    ExperimentDescriptor,
    assemble_cell_sets,
    narrow_noise_descriptor,
    noise_generalisation_descriptor,
    reports_to_csv_rows,
    rocauc,
    speech_nonspeech_descriptor,
    whitebox_blackbox_descriptor,
)
from .filterbanks import FEATURE_NAMES, extract_features
from .model import TrainConfig, load_checkpoint, predict_scores, save_checkpoint, train
from .noise import (
    SNR_LEVELS_DB,
    compute_alpha,
    derive_seed,
    mix_at_snr,
    noise_segment,
    split_noise,
)
from .report import write_report
from .synth import write_smoke_corpus
from .vad import detect_speech, save_mask, split_speech_nonspeech

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

ENV_PREFIX = "ADVDET_"

EXTRACTION_PARAMS_TAG = "blocks8192/frames512x256/hamming/fft512/ceps20/v1"


class UsageError(Exception):
    """Bad flags, config values or descriptor names."""


@dataclass
class RunConfig:
    data_root: str = "data/clean"
    noise_root: str = "data/noise"
    mixed_root: str = "data/mixed"
    parts_root: str = "data/parts"
    cache_dir: str = "cache"
    results_dir: str = "results"
    features: list = field(default_factory=lambda: list(FEATURE_NAMES))
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    descriptor: str = "whitebox_blackbox"
    jobs: int = 1
    deterministic: bool = True
    mix_seed: int = 20406
    snr_levels: list = field(default_factory=lambda: list(SNR_LEVELS_DB))
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=seed,
        )


def _parse_env_value(name: str, raw: str, kind):
    try:
        if kind is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is list:
            items = [s.strip() for s in raw.split(",") if s.strip()]
            return [int(s) if s.lstrip("-").isdigit() else s for s in items]
        return raw
    except ValueError as exc:
        raise UsageError(f"cannot parse {name}={raw!r}: {exc}") from exc


def load_config(path: str | None, env=None, overrides: dict | None = None) -> RunConfig:
    """Resolve the run configuration: defaults < file < env < flags."""
    values: dict = {}
    if path:
        try:
            values.update(json.loads(Path(path).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    env = os.environ if env is None else env
    known = {f.name: f.type for f in fields(RunConfig)}
    for f in fields(RunConfig):
        env_name = ENV_PREFIX + f.name.upper()
        if env_name in env:
            kind = type(getattr(RunConfig(), f.name))
            values[f.name] = _parse_env_value(env_name, env[env_name], kind)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    unknown = set(values) - set(known)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(**values)
    bad = [f for f in cfg.features if f not in FEATURE_NAMES]
    if bad:
        raise UsageError(f"unknown features {bad}; valid: {list(FEATURE_NAMES)}")
    if not cfg.seeds:
        raise UsageError("seed list must be nonempty")
    return cfg


def smoke_descriptor(seeds=(0,), features=("IMFCC", "MFCC")) -> ExperimentDescriptor:
    """Tiny matrix exercising clean, noisy and speech-part cells."""
    clean = ConditionFilter(attacks=("synthetic",), noises=("none",), parts=("full",))
    noisy = ConditionFilter(attacks=("synthetic",), noises=("ssn",), snrs=(10,))
    speech = ConditionFilter(attacks=("synthetic",), parts=("speech",))
    cells = [
        ExperimentCell("clean/clean", clean, clean),
        ExperimentCell("ssn10/ssn10", noisy, noisy),
        ExperimentCell("speech/speech", speech, speech),
    ]
    return ExperimentDescriptor("smoke", cells, tuple(features), tuple(seeds))


BUILTIN_DESCRIPTORS = {
    "whitebox_blackbox": whitebox_blackbox_descriptor,
    "narrow_noise": narrow_noise_descriptor,
    "speech_nonspeech": speech_nonspeech_descriptor,
    "noise_generalisation_bbl": noise_generalisation_descriptor,
    "smoke": smoke_descriptor,
}


def load_descriptor(cfg: RunConfig, cell_filter: str | None = None) -> ExperimentDescriptor:
    name = cfg.descriptor
    if Path(name).is_file():
        desc = ExperimentDescriptor.from_json(name)
    elif name in BUILTIN_DESCRIPTORS:
        desc = BUILTIN_DESCRIPTORS[name]()
    else:
        raise UsageError(
            f"descriptor {name!r} is neither a file nor one of {sorted(BUILTIN_DESCRIPTORS)}"
        )
    features = tuple(f for f in desc.features if f in cfg.features)
    if not features:
        raise UsageError("no descriptor feature survives the --feature filter")
    desc.features = features
    desc.seeds = tuple(cfg.seeds)
    if cell_filter:
        cells = [c for c in desc.cells if c.cell_id == cell_filter]
        if not cells:
            raise UsageError(f"no cell named {cell_filter!r} in descriptor {desc.name}")
        desc.cells = cells
    return desc


def write_run_manifest(cfg: RunConfig, command: str, extra: dict | None = None) -> Path:
    from importlib.metadata import version as pkg_version

    out_dir = Path(cfg.results_dir) / "manifests"
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        version = pkg_version("advdetect")
    except Exception:
        version = "unreleased"
    payload = {
        "command": command,
        "version": version,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": asdict(cfg),
    }
    payload.update(extra or {})
    path = out_dir / f"{command}_{time.time_ns()}.json"
    path.write_text(json.dumps(payload, indent=1, default=str))
    return path


def _write_failures(cfg: RunConfig, command: str, failures: list[tuple[str, str]]) -> Path:
    path = Path(cfg.results_dir) / f"{command}_failures.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "error"])
        writer.writerows(failures)
    return path


# --- subcommands ---

def cmd_make_corpus(cfg: RunConfig, args) -> int:
    root = Path(args.root) if args.root else Path(cfg.data_root).parent
    manifest = write_smoke_corpus(root, n_utterances=args.utterances, seed=args.corpus_seed)
    write_run_manifest(cfg, "make-corpus", {"manifest": str(manifest)})
    print(f"wrote smoke corpus under {root} (labels: {manifest})")
    return EXIT_OK


def cmd_split(cfg: RunConfig, args) -> int:
    manifest = Path(cfg.data_root) / "labels.csv"
    entries = read_labels_manifest(manifest)
    partition = hash_split([e.source_id for e in entries])
    out = Path(cfg.data_root) / "splits.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "split"])
        for e in sorted(entries, key=lambda e: e.source_id):
            writer.writerow([e.source_id, split_of(e.source_id)])
    counts = {k: len(v) for k, v in partition.as_dict().items()}
    write_run_manifest(cfg, "split", {"counts": counts, "output": str(out)})
    print(f"split {len(entries)} utterances: {counts} -> {out}")
    return EXIT_OK


def cmd_vad(cfg: RunConfig, args) -> int:
    entries = read_labels_manifest(Path(cfg.data_root) / "labels.csv")
    parts_root = Path(cfg.parts_root)
    (parts_root / "masks").mkdir(parents=True, exist_ok=True)
    out_entries = []
    failures = []
    for entry in entries:
        try:
            signal = read_wav(Path(cfg.data_root) / entry.path)
            mask = detect_speech(signal)
            save_mask(mask, parts_root / "masks" / f"{entry.source_id}.csv")
            speech, nonspeech = split_speech_nonspeech(signal, mask)
            for part, sig in (("speech", speech), ("nonspeech", nonspeech)):
                if not len(sig):
                    continue
                rel = f"{part}/{entry.source_id}.wav"
                (parts_root / part).mkdir(parents=True, exist_ok=True)
                write_wav(sig, parts_root / rel)
                out_entries.append(
                    UtteranceEntry(entry.source_id, rel, entry.label,
                                   with_condition(entry, part=part).condition)
                )
        except PipelineError as exc:
            failures.append((entry.source_id, str(exc)))
    out_entries.sort(key=lambda e: (e.source_id, e.condition.part))
    write_labels_manifest(out_entries, parts_root / "labels.csv")
    extra = {"utterances": len(entries), "outputs": len(out_entries), "failures": len(failures)}
    write_run_manifest(cfg, "vad", extra)
    if failures:
        path = _write_failures(cfg, "vad", failures)
        print(f"vad: {len(failures)} failures listed in {path}", file=sys.stderr)
        return EXIT_DATA
    print(f"vad: wrote {len(out_entries)} part signals under {parts_root}")
    return EXIT_OK


def cmd_mix_noise(cfg: RunConfig, args) -> int:
    entries = read_labels_manifest(Path(cfg.data_root) / "labels.csv")
    noise_paths = sorted(Path(cfg.noise_root).glob("*.wav"))
    if not noise_paths:
        raise UsageError(f"no noise WAVs under {cfg.noise_root}")
    sources = []
    for path in noise_paths:
        sources.append(split_noise(read_wav(path), path.stem))
    mixed_root = Path(cfg.mixed_root)
    mixed_root.mkdir(parents=True, exist_ok=True)
    out_entries = []
    manifest_rows = []
    failures = []
    for entry in entries:
        try:
            signal = read_wav(Path(cfg.data_root) / entry.path)
            mask = detect_speech(signal)
            split = split_of(entry.source_id)
            for src in sources:
                for snr in cfg.snr_levels:
                    rng = np.random.default_rng(
                        derive_seed(cfg.mix_seed, f"{entry.source_id}|{src.name}|{snr}")
                    )
                    start, end = src.segment_bounds(split)
                    offset = int(rng.integers(0, end - start))
                    slice_ = noise_segment(src, split, offset, len(signal))
                    alpha = compute_alpha(signal, mask, slice_, snr)
                    mixed = mix_at_snr(signal, mask, slice_, snr)
                    peak = float(np.abs(mixed.samples).max())
                    rescale = 1.0 / peak if peak > 1.0 else 1.0
                    out = AudioSignal(mixed.samples * rescale, mixed.sample_rate)
                    rel = f"{src.name}/{snr}db/{entry.source_id}.wav"
                    (mixed_root / src.name / f"{snr}db").mkdir(parents=True, exist_ok=True)
                    write_wav(out, mixed_root / rel)
                    out_entries.append(
                        UtteranceEntry(entry.source_id, rel, entry.label,
                                       with_condition(entry, noise=src.name, snr_db=snr).condition)
                    )
                    manifest_rows.append(
                        [entry.source_id, src.name, split, offset, snr, repr(alpha), repr(rescale)]
                    )
        except PipelineError as exc:
            failures.append((entry.source_id, str(exc)))
    out_entries.sort(key=lambda e: (e.source_id, e.condition.noise, e.condition.snr_db))
    write_labels_manifest(out_entries, mixed_root / "labels.csv")
    manifest_rows.sort(key=lambda r: (r[0], r[1], r[4]))
    with open(mixed_root / "mixing.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "noise_name", "split", "offset", "snr_db", "alpha", "rescale"])
        writer.writerows(manifest_rows)
    write_run_manifest(cfg, "mix-noise", {"outputs": len(out_entries), "failures": len(failures)})
    if failures:
        path = _write_failures(cfg, "mix-noise", failures)
        print(f"mix-noise: {len(failures)} failures listed in {path}", file=sys.stderr)
        return EXIT_DATA
    print(f"mix-noise: wrote {len(out_entries)} noisy signals under {mixed_root}")
    return EXIT_OK


def _group_hash(feature_name: str, items: list[tuple[str, bytes]]) -> str:
    h = hashlib.sha256()
    h.update(EXTRACTION_PARAMS_TAG.encode())
    h.update(feature_name.encode())
    for sid, digest in items:
        h.update(sid.encode())
        h.update(digest)
    return h.hexdigest()


def cmd_extract(cfg: RunConfig, args) -> int:
    trees = [Path(t) for t in (args.tree or [cfg.data_root])]
    cache_dir = Path(cfg.cache_dir)
    failures: list[tuple[str, str]] = []
    groups: dict[tuple[str, str], list] = {}
    for tree in trees:
        manifest = tree / "labels.csv"
        if not manifest.exists():
            if args.tree:
                raise UsageError(f"{manifest} does not exist")
            continue  # default tree absent: empty input, empty caches
        for entry in read_labels_manifest(manifest):
            split = split_of(entry.source_id)
            groups.setdefault((split, entry.condition.key()), []).append((tree, entry))

    written = skipped = 0
    for (split, cond_key), members in sorted(groups.items()):
        members.sort(key=lambda te: te[1].source_id)
        blocks = []
        digests = []
        for tree, entry in members:
            try:
                raw = (tree / entry.path).read_bytes()
            except OSError as exc:
                failures.append((entry.source_id, f"unreadable: {exc}"))
                continue
            try:
                signal = read_wav(tree / entry.path)
            except PipelineError as exc:
                failures.append((entry.source_id, str(exc)))
                continue
            digests.append((entry.source_id, hashlib.sha256(raw).digest()))
            blocks.extend(
                chop_blocks(signal, entry.label, entry.source_id, entry.condition)
            )
        for feature in cfg.features:
            cache_path = cache_dir / split / f"{cond_key}__{feature}.fbc"
            meta_path = Path(str(cache_path) + ".meta.json")
            input_hash = _group_hash(feature, digests)
            if meta_path.exists() and cache_path.exists():
                if json.loads(meta_path.read_text()).get("input_hash") == input_hash:
                    skipped += 1
                    continue
            matrices = [extract_features(b, feature) for b in blocks]
            write_cache(cache_path, feature, LabeledFeatureSet.from_matrices(matrices))
            meta_path.write_text(
                json.dumps(
                    {
                        "input_hash": input_hash,
                        "blocks": len(blocks),
                        "extraction": EXTRACTION_PARAMS_TAG,
                    }
                )
            )
            written += 1
    write_run_manifest(
        cfg, "extract",
        {"caches_written": written, "caches_skipped": skipped, "failures": len(failures)},
    )
    if failures:
        path = _write_failures(cfg, "extract", failures)
        print(f"extract: {len(failures)} failures listed in {path}", file=sys.stderr)
        return EXIT_DATA
    print(f"extract: {written} caches written, {skipped} up to date under {cache_dir}")
    return EXIT_OK


def _checkpoint_path(cfg: RunConfig, desc_name: str, cell_id: str, feature: str, seed: int) -> Path:
    safe = cell_id.replace("/", "_").replace(" ", "_")
    return Path(cfg.results_dir) / "checkpoints" / f"{desc_name}__{safe}__{feature}__seed{seed}.ckpt"


def cmd_train(cfg: RunConfig, args) -> int:
    desc = load_descriptor(cfg, args.cell)
    jobs = 1 if cfg.deterministic else max(1, cfg.jobs)
    tasks = [
        (cell, feature, seed)
        for cell in desc.cells
        for feature in desc.features
        for seed in desc.seeds
    ]

    def run_one(task):
        cell, feature, seed = task
        path = _checkpoint_path(cfg, desc.name, cell.cell_id, feature, seed)
        if path.exists():
            return "skipped"
        train_set, val_set, _ = assemble_cell_sets(cfg.cache_dir, cell, feature, desc.name)
        detector = train(train_set, val_set, cfg.train_config(seed))
        detector.feature_name = feature
        save_checkpoint(detector, path)
        return "trained"

    outcomes = []
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(run_one, tasks))
    else:
        outcomes = [run_one(t) for t in tasks]
    trained = outcomes.count("trained")
    write_run_manifest(
        cfg, "train",
        {"descriptor": desc.name, "trained": trained, "skipped": len(outcomes) - trained},
    )
    print(f"train: {trained} checkpoints trained, {len(outcomes) - trained} already present")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    desc = load_descriptor(cfg, args.cell)
    reports = []
    for cell in desc.cells:
        for feature in desc.features:
            _, _, test_set = assemble_cell_sets(cfg.cache_dir, cell, feature, desc.name)
            values = []
            for seed in desc.seeds:
                path = _checkpoint_path(cfg, desc.name, cell.cell_id, feature, seed)
                if not path.exists():
                    raise PipelineError(f"missing checkpoint {path}; run `train` first")
                detector = load_checkpoint(path)
                pairs = predict_scores(detector, test_set)
                values.append(rocauc([p for p, _ in pairs], [l for _, l in pairs]))
            reports.append(
                EvalReport.from_values(cell.cell_id, feature, desc.seeds, values, cell.group)
            )
    out = Path(cfg.results_dir) / "results.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        csv.writer(fh).writerows(reports_to_csv_rows(reports))
    write_run_manifest(cfg, "eval", {"descriptor": desc.name, "reports": len(reports)})
    print(f"eval: wrote {len(reports)} report rows to {out}")
    return EXIT_OK


def read_results_csv(path, group_of: dict | None = None) -> list[EvalReport]:
    reports = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            values = tuple(float(v) for v in row["values"].split(";") if v)
            reports.append(
                EvalReport(
                    cell_id=row["cell_id"],
                    feature_name=row["feature"],
                    seeds=tuple(range(int(row["n_seeds"]))),
                    values=values,
                    mean=float(row["mean"]),
                    std=float(row["std"]),
                    group=(group_of or {}).get(row["cell_id"], ""),
                )
            )
    return reports


def cmd_report(cfg: RunConfig, args) -> int:
    desc = load_descriptor(cfg, None)
    results_csv = Path(cfg.results_dir) / "results.csv"
    if not results_csv.exists():
        raise PipelineError(f"{results_csv} does not exist; run `eval` first")
    group_of = {cell.cell_id: cell.group for cell in desc.cells}
    reports = read_results_csv(results_csv, group_of)
    written = write_report(desc.name, reports, Path(cfg.results_dir) / "report",
                           features=desc.features)
    write_run_manifest(cfg, "report", {"files": {k: str(v) for k, v in written.items()}})
    for kind, path in written.items():
        print(f"report: {kind} -> {path}")
    return EXIT_OK


# --- argument parsing and dispatch ---

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", help="comma-separated seed list override")
    common.add_argument("--jobs", type=int, help="parallel jobs for cell-level work")
    common.add_argument("--deterministic", dest="deterministic", action="store_true",
                        default=None, help="serialize work for bit-reproducible outputs")
    common.add_argument("--no-deterministic", dest="deterministic", action="store_false",
                        help="allow nondeterministic parallelism")
    common.add_argument("--feature", action="append",
                        help="restrict to a feature (repeatable or comma-separated)")
    common.add_argument("--cell", help="restrict train/eval to one experiment cell id")
    common.add_argument("--descriptor", help="experiment descriptor (JSON path or builtin name)")

    parser = argparse.ArgumentParser(
        prog="advdetect",
        description="Adversarial speech detection experiments with filter-bank cepstra",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-corpus", parents=[common],
                       help="generate the bundled synthetic smoke corpus")
    p.add_argument("--root", help="corpus root directory (default: parent of data_root)")
    p.add_argument("--utterances", type=int, default=20)
    p.add_argument("--corpus-seed", type=int, default=0)
    p.set_defaults(func=cmd_make_corpus)

    sub.add_parser("split", parents=[common],
                   help="hash-split utterances into train/validation/test").set_defaults(func=cmd_split)
    sub.add_parser("vad", parents=[common],
                   help="split utterances into speech / non-speech parts").set_defaults(func=cmd_vad)
    sub.add_parser("mix-noise", parents=[common],
                   help="mix noise at the configured SNR grid").set_defaults(func=cmd_mix_noise)

    p = sub.add_parser("extract", parents=[common], help="extract feature caches")
    p.add_argument("--tree", action="append",
                   help="labeled WAV tree (repeatable; default: data_root)")
    p.set_defaults(func=cmd_extract)

    sub.add_parser("train", parents=[common],
                   help="train detectors for the experiment matrix").set_defaults(func=cmd_train)
    sub.add_parser("eval", parents=[common],
                   help="score checkpoints and write results.csv").set_defaults(func=cmd_eval)
    sub.add_parser("report", parents=[common],
                   help="render result tables and figures").set_defaults(func=cmd_report)
    return parser


def _overrides_from_args(args) -> dict:
    overrides: dict = {}
    if args.seed is not None:
        try:
            overrides["seeds"] = [int(s) for s in str(args.seed).split(",") if s.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --seed value {args.seed!r}") from exc
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.deterministic is not None:
        overrides["deterministic"] = args.deterministic
    if args.feature:
        feats = []
        for item in args.feature:
            feats.extend(s.strip() for s in item.split(",") if s.strip())
        overrides["features"] = feats
    if getattr(args, "descriptor", None):
        overrides["descriptor"] = args.descriptor
    return overrides


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        cfg = load_config(args.config, overrides=_overrides_from_args(args))
        return args.func(cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PipelineError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
