"""Experiment runners behind the command-line verbs.

Each runner takes a resolved :class:`~lowres_hbf.config.ExperimentConfig`
and writes its artefacts under ``cfg.output_dir``. All CSVs start with a
``# config=<digest>`` comment line followed by the header row.
"""

from __future__ import annotations

import csv
import logging
import math
import time
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .baselines import make_designer
from .beamforming import SystemConfig, assemble_beamformer, design_users, sum_rate
from .channel import Dataset, generate_dataset, load_dataset, save_dataset
from .config import ConfigError, ExperimentConfig
from .pcnet import (
    NetArchitecture,
    PcnetDesigner,
    init_model,
    load_model,
    model_input,
    save_model,
    train,
    write_history_csv,
)

__all__ = [
    "DataMismatchError",
    "DesignerSpec",
    "parse_designers",
    "run_generate",
    "run_train",
    "run_evaluate",
    "run_bench",
    "read_csv_rows",
]

log = logging.getLogger(__name__)

SPLITS = {"train": 0, "val": 1, "test": 2}
RESULT_HEADER = ["designer", "B", "snr_db", "K", "mean_sum_rate", "std_err"]
BENCH_HEADER = ["designer", "B", "mean_ms", "std_ms"]


class DataMismatchError(ValueError):
    """Input files do not match the configured dimensions."""


@dataclass(frozen=True)
class DesignerSpec:
    name: str
    bits: int

    @property
    def label(self) -> str:
        return self.name


def parse_designers(names, default_bits: int) -> list:
    """``"svd"`` or ``"svd:3"`` style entries to :class:`DesignerSpec`."""
    specs = []
    for item in names:
        name, _, bits = item.partition(":")
        try:
            specs.append(DesignerSpec(name.strip(), int(bits) if bits else default_bits))
        except ValueError:
            raise ConfigError(f"bad designer entry {item!r}") from None
    known = {"random", "svd", "ce", "exhaustive", "pcnet"}
    for s in specs:
        if s.name not in known:
            raise ConfigError(f"unknown designer {s.name!r}; choose from {', '.join(sorted(known))}")
    return specs


def _out(cfg: ExperimentConfig) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_csv(path, cfg, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# config={cfg.digest()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def read_csv_rows(path) -> list:
    """Rows of a CSV written by this module, as dicts (comment line skipped)."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def run_generate(cfg: ExperimentConfig, n_train=None, n_val=None, n_test=None) -> dict:
    """Write ``train.hbfd``, ``val.hbfd`` and ``test.hbfd`` from disjoint substreams."""
    out = _out(cfg)
    counts = {"train": n_train or cfg.n_train, "val": n_val or cfg.n_val, "test": n_test or cfg.n_test}
    paths = {}
    for split, n in counts.items():
        ds = generate_dataset(cfg.channel, n, stream=SPLITS[split])
        paths[split] = out / f"{split}.hbfd"
        save_dataset(ds, paths[split])
        log.info("wrote %s (%d samples)", paths[split], n)
    return paths


def _check_dims(ds: Dataset, cfg: ExperimentConfig, path) -> None:
    if (ds.config.n_tx, ds.config.n_rx) != (cfg.channel.n_tx, cfg.channel.n_rx):
        raise DataMismatchError(
            f"{path}: dataset is {ds.config.n_rx}x{ds.config.n_tx}, "
            f"config expects {cfg.channel.n_rx}x{cfg.channel.n_tx}"
        )


def build_architecture(cfg: ExperimentConfig, input_scale: float = 1.0) -> NetArchitecture:
    p = cfg.pcnet
    return NetArchitecture.build(
        cfg.channel.n_tx, cfg.channel.n_rx, bits=p.bits, widths=p.widths, n_layers=p.n_layers,
        dropout=p.dropout, input_scale=input_scale, loss_input=p.loss_input,
        phase_reference=p.phase_reference,
        pin_first_phase=p.pin_first_phase,
    )


def run_train(cfg: ExperimentConfig, train_path=None, val_path=None, model_path=None) -> dict:
    """Train PCNet; writes the best-validation checkpoint and ``history.csv``."""
    out = _out(cfg)
    train_path = Path(train_path or out / "train.hbfd")
    val_path = Path(val_path or out / "val.hbfd")
    model_path = Path(model_path or out / "model.pcnw")
    train_ds = load_dataset(train_path)
    val_ds = load_dataset(val_path)
    _check_dims(train_ds, cfg, train_path)
    _check_dims(val_ds, cfg, val_path)
    scale = 1.0
    if cfg.pcnet.standardize:
        scale = 1.0 / float(np.std(model_input(build_architecture(cfg), train_ds.user_rows())))
    model = init_model(build_architecture(cfg, scale), seed=cfg.train.seed)
    best, history = train(model, train_ds, cfg.train, val_ds, log=log.info)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(best, model_path)
    hist_path = model_path.parent / "history.csv"
    write_history_csv(history, hist_path)
    return {"model": model_path, "history": hist_path}


def _designer_seed(cfg: ExperimentConfig, spec: DesignerSpec, k: int) -> int:
    ss = np.random.SeedSequence(cfg.channel.seed, spawn_key=(zlib.crc32(spec.name.encode()), spec.bits, k))
    return int(ss.generate_state(1)[0])


def _make(cfg: ExperimentConfig, spec: DesignerSpec, k: int, model):
    if spec.name == "pcnet":
        if model is None:
            raise ConfigError("designer 'pcnet' needs a trained model (--model)")
        return PcnetDesigner(model, spec.bits)
    seed = _designer_seed(cfg, spec, k)
    return make_designer(spec.name, spec.bits, seed=seed, ce_config=cfg.ce_config(spec.bits, seed))


def _test_set_for(cfg: ExperimentConfig, base: Dataset, k: int) -> Dataset:
    if k == base.config.n_users:
        return base
    # channel dimensions depend on K through the RF chain count; regenerate per K
    return generate_dataset(replace(cfg.channel, n_users=k), len(base), stream=SPLITS["test"])


def evaluate_designs(cfg: ExperimentConfig, ds: Dataset, designer, snr_grid) -> np.ndarray:
    """Sum rate per (SNR point, sample); stage one runs once per sample."""
    k = ds.config.n_users
    rates = np.empty((len(snr_grid), len(ds)))
    systems = [SystemConfig.from_snr_db(s, k, cfg.power_total) for s in snr_grid]
    for i in range(len(ds)):
        h = ds.channels[i]
        design = design_users(h, designer)
        for j, sys in enumerate(systems):
            rates[j, i] = sum_rate(h, assemble_beamformer(h, design, sys, "pinv"), sys)
    return rates


def run_evaluate(cfg: ExperimentConfig, test_path=None, model_path=None, out_name="results.csv") -> Path:
    """Mean sum rate and standard error for every designer x SNR x K point."""
    out = _out(cfg)
    test_path = Path(test_path or out / "test.hbfd")
    specs = parse_designers(cfg.designers, cfg.bits)
    base = load_dataset(test_path)
    _check_dims(base, cfg, test_path)
    model = load_model(model_path) if model_path is not None else None
    rows = []
    for k in cfg.users:
        ds = _test_set_for(cfg, base, k)
        for spec in specs:
            designer = _make(cfg, spec, k, model)
            rates = evaluate_designs(cfg, ds, designer, cfg.snr_grid_db)
            for snr, r in zip(cfg.snr_grid_db, rates):
                se = float(np.std(r, ddof=1) / math.sqrt(len(r))) if len(r) > 1 else 0.0
                rows.append([spec.label, spec.bits, repr(float(snr)), k, repr(float(np.mean(r))), repr(se)])
            log.info("evaluated %s (B=%d, K=%d)", spec.name, spec.bits, k)
    path = out / out_name
    _write_csv(path, cfg, RESULT_HEADER, rows)
    return path


def time_designer(cfg: ExperimentConfig, ds: Dataset, designer, n_timed: int, snr_db: float) -> np.ndarray:
    """Wall-clock milliseconds of full two-stage construction per sample (one warm-up excluded)."""
    k = ds.config.n_users
    sys = SystemConfig.from_snr_db(snr_db, k, cfg.power_total)
    times = []
    for i in range(n_timed + 1):
        h = ds.channels[i % len(ds)]
        t0 = time.perf_counter()
        assemble_beamformer(h, design_users(h, designer), sys, "pinv")
        dt = (time.perf_counter() - t0) * 1e3
        if i > 0:
            times.append(dt)
    return np.asarray(times)


def run_bench(cfg: ExperimentConfig, test_path=None, model_path=None, n_timed=None) -> Path:
    """Mean and standard deviation of per-sample construction time for each designer."""
    out = _out(cfg)
    test_path = Path(test_path or out / "test.hbfd")
    specs = parse_designers(cfg.designers, cfg.bits)
    ds = load_dataset(test_path)
    _check_dims(ds, cfg, test_path)
    model = load_model(model_path) if model_path is not None else None
    n_timed = n_timed or cfg.n_timed
    rows = []
    for spec in specs:
        designer = _make(cfg, spec, ds.config.n_users, model)
        t = time_designer(cfg, ds, designer, n_timed, cfg.snr_grid_db[0])
        std = float(np.std(t, ddof=1)) if len(t) > 1 else 0.0
        rows.append([spec.label, spec.bits, f"{np.mean(t):.4f}", f"{std:.4f}"])
    path = out / "bench.csv"
    _write_csv(path, cfg, BENCH_HEADER, rows)
    return path
