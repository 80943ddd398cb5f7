"""Experiment configuration: INI files layered over scale presets.

Sections and keys::

    [channel]       n_tx n_rx n_users n_paths angle_spread_deg spacing
                    spread_convention per_path_means seed
    [system]        power_total
    [experiment]    designers bits snr_grid_db user_grid n_train n_val n_test n_timed
    [pcnet]         bits widths n_layers dropout loss_input standardize phase_reference
                    pin_first_phase
    [train]         learning_rate batch_size n_epochs lr_decay augment_phase
                    augment_symmetry warm_start_epochs seed
    [cross_entropy] n_iters n_candidates elite_fraction smoothing

Unknown sections or keys raise :class:`ConfigError`.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace

from .baselines import CrossEntropyConfig
from .channel import ArrayGeometry, ChannelConfig
from .pcnet import TrainConfig

__all__ = ["ConfigError", "PcnetConfig", "ExperimentConfig", "SCALE_PRESETS", "load_config"]


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


@dataclass(frozen=True)
class PcnetConfig:
    bits: int = 3
    widths: tuple = (256, 512)
    n_layers: int = 6
    dropout: float = 0.0
    loss_input: str = "softmax"
    standardize: bool = False
    phase_reference: bool = False
    pin_first_phase: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ChannelConfig
    power_total: float = 1.0
    designers: tuple = ("random", "svd", "ce", "pcnet")
    bits: int = 2
    snr_grid_db: tuple = (0.0,)
    user_grid: tuple = ()
    n_train: int = 20000
    n_val: int = 2000
    n_test: int = 1000
    n_timed: int = 20
    pcnet: PcnetConfig = field(default_factory=PcnetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cross_entropy: dict = field(default_factory=dict)
    output_dir: str = "out"

    def __post_init__(self):
        if not self.snr_grid_db:
            raise ConfigError("snr_grid_db must not be empty")
        if min(self.n_train, self.n_val, self.n_test, self.n_timed) < 1:
            raise ConfigError("sample counts must be >= 1")
        if not self.designers:
            raise ConfigError("designer list must not be empty")

    @property
    def users(self) -> tuple:
        return self.user_grid or (self.channel.n_users,)

    def ce_config(self, bits: int, seed: int = 0) -> CrossEntropyConfig:
        return CrossEntropyConfig.for_bits(bits, seed=seed, **self.cross_entropy)

    def digest(self) -> str:
        """Stable hash of every setting except the output directory."""
        d = asdict(self)
        d.pop("output_dir")
        d["channel"]["angle_spread_convention"] = self.channel.angle_spread_convention
        d["channel"]["per_path_means"] = self.channel.per_path_means
        blob = json.dumps(d, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


SCALE_PRESETS = {
    "full": {
        "channel": {"n_tx": "64", "n_rx": "16", "n_users": "8"},
        "experiment": {"n_train": "180000", "n_val": "20000", "n_test": "10000",
                       "snr_grid_db": "-10,-5,0,5,10,15,20", "user_grid": "2,4,6,8"},
        "pcnet": {"widths": "1024,2048", "dropout": "0.3"},
        "train": {"learning_rate": "3e-5", "batch_size": "256", "n_epochs": "100"},
    },
    "desk": {
        "channel": {"n_tx": "16", "n_rx": "4", "n_users": "2"},
        "experiment": {"n_train": "20000", "n_val": "2000", "n_test": "1000",
                       "snr_grid_db": "-10,-5,0,5,10,15,20"},
        "pcnet": {"bits": "2", "widths": "256,512", "dropout": "0.0", "phase_reference": "true",
                  "pin_first_phase": "true"},
        "train": {"learning_rate": "1e-3", "batch_size": "256", "n_epochs": "300",
                  "lr_decay": "0.985", "augment_symmetry": "true"},
    },
    "tiny": {
        "channel": {"n_tx": "4", "n_rx": "4", "n_users": "2"},
        "experiment": {"n_train": "100", "n_val": "20", "n_test": "20", "n_timed": "3",
                       "snr_grid_db": "0,10", "designers": "random,svd,exhaustive,pcnet"},
        "pcnet": {"bits": "2", "widths": "16", "n_layers": "2", "dropout": "0.0"},
        "train": {"learning_rate": "1e-3", "batch_size": "32", "n_epochs": "2"},
    },
}

_KEYS = {
    "channel": {"n_tx", "n_rx", "n_users", "n_paths", "angle_spread_deg", "spacing",
                "spread_convention", "per_path_means", "seed"},
    "system": {"power_total"},
    "experiment": {"designers", "bits", "snr_grid_db", "user_grid", "n_train", "n_val",
                   "n_test", "n_timed"},
    "pcnet": {"bits", "widths", "n_layers", "dropout", "loss_input", "standardize", "phase_reference",
              "pin_first_phase"},
    "train": {"learning_rate", "batch_size", "n_epochs", "lr_decay", "augment_phase",
              "augment_symmetry", "warm_start_epochs", "seed"},
    "cross_entropy": {"n_iters", "n_candidates", "elite_fraction", "smoothing"},
}


def _check_known(parser: configparser.ConfigParser) -> None:
    for section in parser.sections():
        if section not in _KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def load_config(path=None, scale: str = "desk", seed: int | None = None, output_dir: str | None = None,
                designers: str | None = None) -> ExperimentConfig:
    """Resolve preset, then config file, then command-line overrides."""
    if scale not in SCALE_PRESETS:
        raise ConfigError(f"unknown scale preset {scale!r}; choose from {', '.join(SCALE_PRESETS)}")
    parser = configparser.ConfigParser()
    parser.read_dict(SCALE_PRESETS[scale])
    if path is not None:
        file_parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                file_parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        _check_known(file_parser)
        parser.read_dict({s: dict(file_parser[s]) for s in file_parser.sections()})
    for section in _KEYS:
        if not parser.has_section(section):
            parser.add_section(section)

    try:
        ch = parser["channel"]
        spacing = ch.getfloat("spacing", 0.5)
        n_tx, n_rx = ch.getint("n_tx"), ch.getint("n_rx")
        channel = ChannelConfig(
            n_tx=n_tx,
            n_rx=n_rx,
            n_users=ch.getint("n_users"),
            n_paths=ch.getint("n_paths", 10),
            angle_spread_deg=ch.getfloat("angle_spread_deg", 10.0),
            tx_geometry=ArrayGeometry(n_tx, spacing),
            rx_geometry=ArrayGeometry(n_rx, spacing),
            seed=ch.getint("seed", 0) if seed is None else seed,
            angle_spread_convention=ch.get("spread_convention", "std"),
            per_path_means=ch.getboolean("per_path_means", False),
        )
        ex = parser["experiment"]
        pc = parser["pcnet"]
        pcnet = PcnetConfig(
            bits=pc.getint("bits", 3),
            widths=_ints(pc.get("widths", "256,512")),
            n_layers=pc.getint("n_layers", 6),
            dropout=pc.getfloat("dropout", 0.0),
            loss_input=pc.get("loss_input", "softmax"),
            standardize=pc.getboolean("standardize", False),
            phase_reference=pc.getboolean("phase_reference", False),
            pin_first_phase=pc.getboolean("pin_first_phase", False),
        )
        tr = parser["train"]
        train = TrainConfig(
            learning_rate=tr.getfloat("learning_rate", 3e-5),
            batch_size=tr.getint("batch_size", 256),
            n_epochs=tr.getint("n_epochs", 10),
            lr_decay=tr.getfloat("lr_decay", 1.0),
            augment_phase=tr.getboolean("augment_phase", False),
            augment_symmetry=tr.getboolean("augment_symmetry", False),
            warm_start_epochs=tr.getint("warm_start_epochs", 0),
            seed=tr.getint("seed", 0) if seed is None else seed,
        )
        ce = parser["cross_entropy"]
        ce_over = {}
        for key, conv in (("n_iters", int), ("n_candidates", int), ("elite_fraction", float),
                          ("smoothing", float)):
            if key in ce:
                ce_over[key] = conv(ce[key])
        CrossEntropyConfig(**{"n_iters": 20, **ce_over})  # validate early
        names = designers if designers is not None else ex.get("designers", "random,svd,ce,pcnet")
        cfg = ExperimentConfig(
            channel=channel,
            power_total=parser["system"].getfloat("power_total", 1.0),
            designers=tuple(d.strip() for d in names.split(",") if d.strip()),
            bits=ex.getint("bits", 2),
            snr_grid_db=_floats(ex.get("snr_grid_db", "0")),
            user_grid=_ints(ex.get("user_grid", "")),
            n_train=ex.getint("n_train", 20000),
            n_val=ex.getint("n_val", 2000),
            n_test=ex.getint("n_test", 1000),
            n_timed=ex.getint("n_timed", 20),
            pcnet=pcnet,
            train=train,
            cross_entropy=ce_over,
            output_dir=output_dir or "out",
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def with_overrides(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)
