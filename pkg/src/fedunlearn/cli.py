"""Command-line entry point: config parsing, run orchestration, artifacts.

A run lives in one output directory:

    run.log                     stage log (timestamps; not part of the
                                deterministic surface)
    scenario.ini                copy of the parsed config
    manifest.json               dataset/architecture/schedule summary
    retention/                  stored per-client updates
    models/*.fesp               initial, original, and reconstructed models
    states/<method>/*.fesp      per-step states for angle trajectories
    attack.json                 membership-attack metrics per model
    report.json, metrics.csv    final measurements (deterministic given seed)
    timings.csv                 wall-clock numbers (machine-dependent)

Every subcommand exits 0 on success; on failure it writes one JSON error
record to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import shutil
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (
    ClientShard,
    Dataset,
    FedConfig,
    load_dataset,
    partition_iid,
    subsample,
    train_test_split,
)
from .evaluation import (
    MethodMetrics,
    angle_deviation,
    attack_metrics,
    build_membership_features,
    evaluate,
    last_dense_weight,
    last_layer_angles,
    prediction_difference,
    train_attack,
    write_metrics_csv,
    write_report_json,
)
from .federation import run_fedavg
from .nn import (
    ArchSpec,
    ParamSet,
    adult_arch,
    build_model,
    cifar10_arch,
    dense_arch,
    load_params,
    mnist_arch,
    purchase_arch,
    save_params,
)
from .retention import RetentionStore, StoreFingerprint
from .seeds import derive_seed
from .unlearning import (
    UnlearnResult,
    expected_speedup,
    fed_accum,
    fed_eraser,
    fed_retrain,
)

logger = logging.getLogger(__name__)

METHODS = ("eraser", "accum", "retrain")


class ConfigError(ValueError):
    """The scenario file is malformed; the message lists every problem."""


@dataclass(frozen=True)
class Scenario:
    """A fully validated run description (one INI file)."""

    # [data]
    dataset: str = "synthetic"
    path: str = ""
    test_fraction: float = 0.2
    max_samples: int | None = None
    synthetic_samples: int = 1000
    synthetic_features: int = 20
    synthetic_classes: int = 2
    synthetic_separation: float = 2.0
    purchase_items: int = 600
    purchase_classes: int = 2
    # [federation]
    num_clients: int = 20
    global_rounds: int = 20
    local_epochs: int = 4
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    aggregation: str = "standard"
    hidden_units: int = 32
    # [unlearning]
    target_client: int = 1
    retain_interval: int = 2
    calibration_ratio: float = 0.5
    norm_mode: str = "layer"
    # [evaluation]
    attack_epochs: int = 30
    attack_hidden: int = 16
    attack_learning_rate: float = 0.1
    eval_batch_size: int = 256
    per_neuron_angles: bool = False
    # [output]
    out_dir: str = "runs/latest"

    def fed_config(self) -> FedConfig:
        return FedConfig(
            dataset=self.dataset,
            num_clients=self.num_clients,
            global_rounds=self.global_rounds,
            local_epochs=self.local_epochs,
            retain_interval=self.retain_interval,
            calibration_ratio=self.calibration_ratio,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            seed=self.seed,
            target_client=self.target_client,
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# (section, key) -> (field name, parser)
_SCHEMA: dict[tuple[str, str], tuple[str, type]] = {
    ("data", "dataset"): ("dataset", str),
    ("data", "path"): ("path", str),
    ("data", "test_fraction"): ("test_fraction", float),
    ("data", "max_samples"): ("max_samples", int),
    ("data", "synthetic_samples"): ("synthetic_samples", int),
    ("data", "synthetic_features"): ("synthetic_features", int),
    ("data", "synthetic_classes"): ("synthetic_classes", int),
    ("data", "synthetic_separation"): ("synthetic_separation", float),
    ("data", "purchase_items"): ("purchase_items", int),
    ("data", "purchase_classes"): ("purchase_classes", int),
    ("federation", "num_clients"): ("num_clients", int),
    ("federation", "global_rounds"): ("global_rounds", int),
    ("federation", "local_epochs"): ("local_epochs", int),
    ("federation", "learning_rate"): ("learning_rate", float),
    ("federation", "batch_size"): ("batch_size", int),
    ("federation", "seed"): ("seed", int),
    ("federation", "aggregation"): ("aggregation", str),
    ("federation", "hidden_units"): ("hidden_units", int),
    ("unlearning", "target_client"): ("target_client", int),
    ("unlearning", "retain_interval"): ("retain_interval", int),
    ("unlearning", "calibration_ratio"): ("calibration_ratio", float),
    ("unlearning", "norm_mode"): ("norm_mode", str),
    ("evaluation", "attack_epochs"): ("attack_epochs", int),
    ("evaluation", "attack_hidden"): ("attack_hidden", int),
    ("evaluation", "attack_learning_rate"): ("attack_learning_rate", float),
    ("evaluation", "eval_batch_size"): ("eval_batch_size", int),
    ("evaluation", "per_neuron_angles"): ("per_neuron_angles", bool),
    ("output", "dir"): ("out_dir", str),
}

_BOOL_WORDS = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def parse_scenario(path: str | Path, overrides: dict[str, object] | None = None) -> Scenario:
    """Read and validate an INI scenario. Every unknown section, unknown key,
    and unparsable value is reported together in one error."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no such config file: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None

    known_sections = {section for section, _ in _SCHEMA}
    problems: list[str] = []
    values: dict[str, object] = {}
    for section in parser.sections():
        if section not in known_sections:
            problems.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            spec = _SCHEMA.get((section, key))
            if spec is None:
                problems.append(f"unknown key {key!r} in [{section}]")
                continue
            field_name, kind = spec
            raw = raw.strip()
            if raw == "":
                continue  # blank means "use the default"
            try:
                if kind is bool:
                    if raw.lower() not in _BOOL_WORDS:
                        raise ValueError(f"not a boolean: {raw!r}")
                    values[field_name] = _BOOL_WORDS[raw.lower()]
                else:
                    values[field_name] = kind(raw)
            except ValueError:
                problems.append(f"[{section}] {key} = {raw!r} is not a valid {kind.__name__}")
    if problems:
        raise ConfigError(f"{path}: " + "; ".join(problems))

    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    scenario = Scenario(**values)
    try:
        scenario.fed_config()  # surfaces range errors with one combined message
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if scenario.aggregation not in ("standard", "literal"):
        raise ConfigError(f"{path}: unknown aggregation {scenario.aggregation!r}")
    if scenario.norm_mode not in ("layer", "global"):
        raise ConfigError(f"{path}: unknown norm_mode {scenario.norm_mode!r}")
    if not 0.0 < scenario.test_fraction < 1.0:
        raise ConfigError(f"{path}: test_fraction must be in (0, 1)")
    return scenario


# ---------------------------------------------------------------------------
# Shared setup

def setup_logging(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    root = logging.getLogger()
    root.setLevel(logging.INFO)
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    have = {getattr(h, "_fedunlearn_tag", None) for h in root.handlers}
    if "file" not in have:
        fh = logging.FileHandler(out_dir / "run.log")
        fh.setFormatter(fmt)
        fh._fedunlearn_tag = "file"
        root.addHandler(fh)
    if "stream" not in have:
        sh = logging.StreamHandler(sys.stderr)
        sh.setFormatter(fmt)
        sh._fedunlearn_tag = "stream"
        root.addHandler(sh)


def build_arch(scenario: Scenario, train: Dataset) -> ArchSpec:
    features = int(np.prod(train.feature_shape))
    if scenario.dataset == "adult":
        return adult_arch(features, hidden=scenario.hidden_units)
    if scenario.dataset == "purchase":
        return purchase_arch(features, num_classes=train.num_classes)
    if scenario.dataset == "mnist":
        return mnist_arch()
    if scenario.dataset == "cifar10":
        return cifar10_arch()
    return dense_arch(features, train.num_classes, hidden=scenario.hidden_units)


def prepare_data(scenario: Scenario) -> tuple[Dataset, Dataset, list[ClientShard]]:
    ds = load_dataset(
        scenario.dataset,
        path=scenario.path or None,
        seed=scenario.seed,
        max_samples=scenario.max_samples,
        synthetic_samples=scenario.synthetic_samples,
        synthetic_features=scenario.synthetic_features,
        synthetic_classes=scenario.synthetic_classes,
        synthetic_separation=scenario.synthetic_separation,
        purchase_items=scenario.purchase_items,
        purchase_classes=scenario.purchase_classes,
    )
    train, test = train_test_split(ds, scenario.test_fraction, scenario.seed)
    shards = partition_iid(train, scenario.num_clients, scenario.seed)
    return train, test, shards


def _fingerprint(scenario: Scenario, arch: ArchSpec) -> StoreFingerprint:
    return StoreFingerprint(
        arch_hash=arch.arch_hash(),
        num_clients=scenario.num_clients,
        global_rounds=scenario.global_rounds,
        retain_interval=scenario.retain_interval,
        seed=scenario.seed,
    )


def _record_timing(out_dir: Path, name: str, seconds: float) -> None:
    path = out_dir / "timings.csv"
    rows: dict[str, str] = {}
    if path.exists():
        with open(path, newline="") as fh:
            rows = {r["name"]: r["seconds"] for r in csv.DictReader(fh)}
    rows[name] = format(seconds, ".6f")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=("name", "seconds"))
        writer.writeheader()
        for key in sorted(rows):
            writer.writerow({"name": key, "seconds": rows[key]})


def _model_path(out_dir: Path, name: str) -> Path:
    return out_dir / "models" / f"{name}.fesp"


def _save_states(out_dir: Path, method: str, states) -> None:
    state_dir = out_dir / "states" / method
    state_dir.mkdir(parents=True, exist_ok=True)
    for j, state in enumerate(states, start=1):
        save_params(state, state_dir / f"state{j:04d}.fesp")


def _load_states(out_dir: Path, method: str) -> list:
    state_dir = out_dir / "states" / method
    return [load_params(p) for p in sorted(state_dir.glob("state*.fesp"))]


# ---------------------------------------------------------------------------
# Stages

def run_train(scenario: Scenario, out_dir: Path, resume: bool = False) -> None:
    """Federated training with retention; writes the initial and final model."""
    train, test, shards = prepare_data(scenario)
    arch = build_arch(scenario, train)
    config = scenario.fed_config()
    store_dir = out_dir / "retention"
    done = (
        _model_path(out_dir, "original").exists()
        and _model_path(out_dir, "initial").exists()
        and (store_dir / "manifest.json").exists()
    )
    if resume and done and RetentionStore.open(store_dir).is_complete():
        logger.info("training artifacts already present; skipping")
        return
    if store_dir.exists():
        shutil.rmtree(store_dir)
    store = RetentionStore.create(store_dir, _fingerprint(scenario, arch))

    initial = build_model(arch, config.seed)
    start = time.perf_counter()
    model, history = run_fedavg(
        arch,
        shards,
        config,
        initial_model=initial,
        retention_sink=store,
        aggregation_mode=scenario.aggregation,
    )
    train_seconds = time.perf_counter() - start

    (out_dir / "models").mkdir(parents=True, exist_ok=True)
    save_params(initial, _model_path(out_dir, "initial"))
    save_params(model, _model_path(out_dir, "original"))
    test_acc, test_loss = evaluate(arch, model, test, scenario.eval_batch_size)
    manifest = {
        "scenario": scenario.as_dict(),
        "architecture": arch.describe(),
        "arch_hash": arch.arch_hash(),
        "num_parameters": arch.num_params(),
        "retained_rounds": store.retained_rounds,
        "retention_bytes": store.total_blob_bytes(),
        "train_samples": train.num_samples,
        "test_samples": test.num_samples,
        "client_sample_counts": {s.client_id: s.sample_count for s in shards},
        "final_train_loss": history.records[-1].mean_client_loss,
        "original_test_accuracy": test_acc,
        "original_test_loss": test_loss,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    _record_timing(out_dir, "train", train_seconds)
    logger.info("trained %d rounds; test accuracy %.4f", config.global_rounds, test_acc)


def run_unlearn(
    scenario: Scenario, out_dir: Path, resume: bool = False,
    methods: tuple[str, ...] = METHODS,
) -> None:
    """All requested reconstruction routes from the stored artifacts."""
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"unknown methods {unknown}; choose from {METHODS}")
    if resume and all(_model_path(out_dir, m).exists() for m in methods):
        logger.info("unlearning artifacts already present; skipping")
        return
    if not _model_path(out_dir, "initial").exists():
        raise FileNotFoundError(f"no training artifacts under {out_dir}; run `train` first")
    train, _, shards = prepare_data(scenario)
    arch = build_arch(scenario, train)
    config = scenario.fed_config()
    initial = load_params(_model_path(out_dir, "initial"))
    store = RetentionStore.open(out_dir / "retention")

    results: dict[str, UnlearnResult] = {}
    if "eraser" in methods:
        results["eraser"] = fed_eraser(
            arch, initial, store, shards, config,
            norm_mode=scenario.norm_mode,
            aggregation_mode=scenario.aggregation,
            keep_states=True,
        )
    if "accum" in methods:
        results["accum"] = fed_accum(
            arch, initial, store, config,
            aggregation_mode=scenario.aggregation,
            keep_states=True,
        )
    if "retrain" in methods:
        results["retrain"] = fed_retrain(
            arch, shards, config,
            aggregation_mode=scenario.aggregation,
            keep_snapshots=True,
        )
    summary = {}
    for name, result in results.items():
        save_params(result.model, _model_path(out_dir, name))
        if result.states:
            _save_states(out_dir, name, result.states)
        _record_timing(out_dir, name, result.total_seconds)
        summary[name] = {
            "total_seconds": result.total_seconds,
            "round_timings": list(result.round_timings),
            "calibration_rounds": result.calibration_rounds,
        }
        logger.info("%s finished in %.2fs", name, result.total_seconds)
    (out_dir / "unlearn.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")


def run_attack(scenario: Scenario, out_dir: Path, resume: bool = False) -> None:
    """Membership inference against every model present in the run."""
    attack_path = out_dir / "attack.json"
    if resume and attack_path.exists():
        logger.info("attack artifacts already present; skipping")
        return
    if not _model_path(out_dir, "original").exists():
        raise FileNotFoundError(f"no trained model under {out_dir}; run `train` first")
    train, test, shards = prepare_data(scenario)
    arch = build_arch(scenario, train)
    original = load_params(_model_path(out_dir, "original"))

    target_shard = next(s for s in shards if s.client_id == scenario.target_client)
    member_train = Dataset(
        "members",
        np.concatenate([s.dataset.inputs for s in shards
                        if s.client_id != scenario.target_client]),
        np.concatenate([s.dataset.labels for s in shards
                        if s.client_id != scenario.target_client]),
        train.num_classes,
    )
    rng = np.random.default_rng(derive_seed(scenario.seed, "attack-split"))
    order = rng.permutation(test.num_samples)
    half = test.num_samples // 2
    fit_holdout = test.subset(np.sort(order[:half]))
    eval_holdout = test.subset(np.sort(order[half:]))
    # the member pool dwarfs the held-out one; an attack fitted on the raw
    # pools just learns the base rate and calls everything a member
    fit_size = min(member_train.num_samples, fit_holdout.num_samples)
    member_fit = subsample(member_train, fit_size,
                           derive_seed(scenario.seed, "attack-fit"))
    nonmember_fit = subsample(fit_holdout, fit_size,
                              derive_seed(scenario.seed, "attack-fit"))

    attack = train_attack(
        build_membership_features(arch, original, member_fit),
        build_membership_features(arch, original, nonmember_fit),
        seed=scenario.seed,
        hidden=scenario.attack_hidden,
        epochs=scenario.attack_epochs,
        learning_rate=scenario.attack_learning_rate,
    )

    results = {}
    for name in ("original",) + METHODS:
        path = _model_path(out_dir, name)
        if not path.exists():
            continue
        model = load_params(path)
        results[name] = attack_metrics(
            attack, arch, model, target_shard.dataset, eval_holdout,
            seed=scenario.seed,
        )
        logger.info(
            "attack on %s: precision %.3f recall %.3f f1 %.3f",
            name, results[name]["precision"], results[name]["recall"], results[name]["f1"],
        )
    attack_path.write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")


def _final_angle(arch: ArchSpec, model: ParamSet, reference: ParamSet) -> float:
    return angle_deviation(last_dense_weight(arch, model),
                           last_dense_weight(arch, reference))


def run_report(scenario: Scenario, out_dir: Path, resume: bool = False) -> None:
    """Final measurements: utility, divergence, angles, attack, timings."""
    report_path = out_dir / "report.json"
    if resume and report_path.exists() and (out_dir / "metrics.csv").exists():
        logger.info("report already present; skipping")
        return
    train, test, shards = prepare_data(scenario)
    arch = build_arch(scenario, train)
    config = scenario.fed_config()
    target_shard = next(s for s in shards if s.client_id == scenario.target_client)

    models = {}
    for name in ("original",) + METHODS:
        path = _model_path(out_dir, name)
        if path.exists():
            models[name] = load_params(path)
    if "original" not in models:
        raise FileNotFoundError(f"no trained model under {out_dir}; run `train` first")
    retrain = models.get("retrain")

    attack_results = {}
    attack_path = out_dir / "attack.json"
    if attack_path.exists():
        attack_results = json.loads(attack_path.read_text())

    metrics: list[MethodMetrics] = []
    for name, model in models.items():
        test_acc, test_loss = evaluate(arch, model, test, scenario.eval_batch_size)
        tgt_acc, tgt_loss = evaluate(arch, model, target_shard.dataset,
                                     scenario.eval_batch_size)
        pdiff = angle = None
        if retrain is not None and name != "retrain":
            pdiff = prediction_difference(arch, model, retrain,
                                          target_shard.dataset,
                                          scenario.eval_batch_size)
            angle = _final_angle(arch, model, retrain)
        att = attack_results.get(name, {})
        metrics.append(MethodMetrics(
            method=name,
            test_accuracy=test_acc,
            test_loss=test_loss,
            target_accuracy=tgt_acc,
            target_loss=tgt_loss,
            prediction_difference=pdiff,
            angle_to_retrain_deg=angle,
            attack_precision=att.get("precision"),
            attack_recall=att.get("recall"),
            attack_f1=att.get("f1"),
        ))

    angles = {}
    storage = {}
    retention_dir = out_dir / "retention"
    if (retention_dir / "manifest.json").exists():
        store = RetentionStore.open(retention_dir)
        storage["retention_bytes"] = store.total_blob_bytes()
        retrain_snapshots = _load_states(out_dir, "retrain")
        if retrain_snapshots:
            for name in ("eraser", "accum"):
                states = _load_states(out_dir, name)
                if len(states) == len(store.retained_rounds):
                    series = last_layer_angles(
                        arch, states, retrain_snapshots, store.retained_rounds,
                        per_neuron=scenario.per_neuron_angles,
                    )
                    angles[name] = series
                    angles[f"{name}_mean"] = float(np.mean(series))

    timings: dict[str, float] = {}
    timings_path = out_dir / "timings.csv"
    if timings_path.exists():
        with open(timings_path, newline="") as fh:
            timings = {r["name"]: float(r["seconds"]) for r in csv.DictReader(fh)}
    speedups = {"expected_speedup": expected_speedup(config.calibration_ratio,
                                                     config.retain_interval)}
    if "retrain" in timings and timings.get("eraser", 0.0) > 0.0:
        speedups["measured_speedup"] = timings["retrain"] / timings["eraser"]

    report = {
        "scenario": scenario.as_dict(),
        "methods": {m.method: {k: v for k, v in dataclasses.asdict(m).items()
                               if v is not None and k != "method"}
                    for m in metrics},
        "angles": angles,
        "attack": attack_results,
        "storage": storage,
        "timings": {**timings, **speedups},
    }
    write_report_json(report_path, report)
    write_metrics_csv(out_dir / "metrics.csv", metrics)
    logger.info("report written to %s", report_path)


def run_scenario(scenario: Scenario, out_dir: Path, resume: bool = False) -> None:
    run_train(scenario, out_dir, resume)
    run_unlearn(scenario, out_dir, resume)
    run_attack(scenario, out_dir, resume)
    run_report(scenario, out_dir, resume)


# ---------------------------------------------------------------------------
# Sweeps

SWEEP_PARAMS = ("ratio", "interval", "clients")
SWEEP_COLUMNS = (
    "param", "value",
    "eraser_test_accuracy", "eraser_target_accuracy",
    "retrain_test_accuracy", "retrain_target_accuracy",
    "eraser_seconds", "retrain_seconds",
    "measured_speedup", "expected_speedup",
    "degenerate", "error",
)


def _apply_sweep_value(scenario: Scenario, param: str, value: float) -> Scenario:
    if param == "ratio":
        return dataclasses.replace(scenario, calibration_ratio=float(value))
    if param == "interval":
        return dataclasses.replace(scenario, retain_interval=int(value))
    if param == "clients":
        return dataclasses.replace(scenario, num_clients=int(value))
    raise ConfigError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")


def run_sweep(
    scenario: Scenario, out_dir: Path, param: str, sweep_values: list[float],
) -> None:
    """Utility-and-cost sweep over one knob, comparing calibrated
    reconstruction against retraining. A failing value is recorded in its
    row's error column and the sweep moves on."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")
    if not sweep_values:
        raise ConfigError("sweep needs at least one value")
    rows = []
    for value in sweep_values:
        row = dict.fromkeys(SWEEP_COLUMNS, "")
        row["param"] = param
        row["value"] = format(value, "g")
        try:
            point = _apply_sweep_value(scenario, param, value)
            point_dir = out_dir / f"{param}_{format(value, 'g')}"
            run_train(point, point_dir, resume=False)
            run_unlearn(point, point_dir, resume=False, methods=("eraser", "retrain"))

            train, test, shards = prepare_data(point)
            arch = build_arch(point, train)
            target = next(s for s in shards if s.client_id == point.target_client)
            config = point.fed_config()
            timings = {}
            with open(point_dir / "timings.csv", newline="") as fh:
                timings = {r["name"]: float(r["seconds"]) for r in csv.DictReader(fh)}
            for method in ("eraser", "retrain"):
                model = load_params(_model_path(point_dir, method))
                test_acc, _ = evaluate(arch, model, test, point.eval_batch_size)
                tgt_acc, _ = evaluate(arch, model, target.dataset, point.eval_batch_size)
                row[f"{method}_test_accuracy"] = format(test_acc, ".10g")
                row[f"{method}_target_accuracy"] = format(tgt_acc, ".10g")
                row[f"{method}_seconds"] = format(timings[method], ".6f")
            if timings["eraser"] > 0:
                row["measured_speedup"] = format(
                    timings["retrain"] / timings["eraser"], ".6f")
            row["expected_speedup"] = format(
                expected_speedup(config.calibration_ratio, config.retain_interval), ".6f")
            # at full calibration the burst costs as much as ordinary local
            # training, so only the retention interval still saves anything
            row["degenerate"] = str(config.calibration_epochs >= config.local_epochs).lower()
        except Exception as exc:  # noqa: BLE001 - a sweep records and continues
            logger.exception("sweep point %s=%s failed", param, value)
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    logger.info("sweep written to %s", out_dir / "sweep.csv")


# ---------------------------------------------------------------------------
# Entry point

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    sub.add_argument("--seed", type=int, default=None, help="override [federation] seed")
    sub.add_argument("--resume", action="store_true",
                     help="skip stages whose artifacts already exist")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedunlearn",
        description="Federated training with client unlearning by update calibration.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("train", "federated training with update retention"),
        ("unlearn", "reconstruct models without the target client"),
        ("attack", "membership inference against the stored models"),
        ("run", "train, unlearn, attack, and report in one go"),
    ):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("config", help="scenario INI file")
        _add_common(sub)
        if name == "unlearn":
            sub.add_argument("--method", action="append", choices=METHODS,
                             help="repeatable; default is all three methods")
    report = commands.add_parser("report", help="write report.json and metrics.csv")
    report.add_argument("run_dir", help="run directory produced by earlier stages")
    _add_common(report)
    sweep = commands.add_parser("sweep", help="vary one knob and compare cost/utility")
    sweep.add_argument("config", help="scenario INI file")
    _add_common(sweep)
    sweep.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    sweep.add_argument("--values", required=True,
                       help="comma-separated values, e.g. 0.1,0.5,1.0")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides: dict[str, object] = {"seed": args.seed, "out_dir": args.out}
        if args.command == "report":
            config_path = Path(args.run_dir) / "scenario.ini"
            if args.out is None:
                overrides["out_dir"] = args.run_dir
        else:
            config_path = Path(args.config)
        scenario = parse_scenario(config_path, overrides)
        out_dir = Path(scenario.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        setup_logging(out_dir)
        if config_path.resolve() != (out_dir / "scenario.ini").resolve():
            shutil.copyfile(config_path, out_dir / "scenario.ini")

        if args.command == "train":
            run_train(scenario, out_dir, args.resume)
        elif args.command == "unlearn":
            methods = tuple(args.method) if args.method else METHODS
            run_unlearn(scenario, out_dir, args.resume, methods)
        elif args.command == "attack":
            run_attack(scenario, out_dir, args.resume)
        elif args.command == "report":
            run_report(scenario, out_dir, args.resume)
        elif args.command == "run":
            run_scenario(scenario, out_dir, args.resume)
        else:
            values = [float(v) for v in args.values.split(",") if v.strip()]
            run_sweep(scenario, out_dir, args.param, values)
        return 0
    except Exception as exc:  # noqa: BLE001 - reported as a machine-readable record
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
