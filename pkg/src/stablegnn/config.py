"""Flat ``key = value`` configuration files with dotted section keys.

Blank lines and ``#`` comments are ignored.  Every key must be one of
:data:`DEFAULTS`; values are coerced to the type of the default.  ``none``
unsets an optional value.  Lists are comma-separated; the architecture list
separates architectures with ``;`` (``64;64,32``).
"""
from __future__ import annotations

import hashlib
from pathlib import Path

from .model import GnnConfig
from .perturbation import PerturbationModel
from .trainer import ConfigError, TrainerConfig

DEFAULT_MAGNITUDES = (0.0, 0.0001, 0.001, 0.01, 0.1, 0.2, 0.5)

DEFAULTS: dict[str, object] = {
    "data.path": "data/ml-100k/u.data",
    "data.target_movie": "most_rated",
    "data.top_movies": None,
    "data.split_fraction": 0.9,
    "graph.min_common": 2,
    "graph.top_k": None,
    "graph.keep_negative": False,
    "model.hidden": "64",
    "model.taps": 5,
    "model.activation": "relu",
    "model.readout_taps": None,
    "trainer.epochs": 20,
    "trainer.batch_size": 5,
    "trainer.lr": 0.005,
    "trainer.beta1": 0.9,
    "trainer.beta2": 0.999,
    "trainer.eta_d": 0.05,
    "trainer.stability_c": 0.25,
    "trainer.epsilon": 0.2,
    "trainer.m_perturbations": 3,
    "trainer.slack_eval_fraction": 0.2,
    "trainer.seed": 0,
    "trainer.mode": "constrained",
    "trainer.lambda_max": None,
    "trainer.loss_beta": 1.0,
    "perturbation.kind": "relative",
    "perturbation.epsilon": None,
    "perturbation.mode": "scaled_uniform",
    "perturbation.draws": 20,
    "sweep.magnitudes": ",".join(repr(m) for m in DEFAULT_MAGNITUDES),
    "sweep.draws": 20,
    "sweep.splits": 10,
    "sweep.architectures": "64;64,32",
    "sweep.modes": "unconstrained,constrained",
}

_TYPES = {
    "data.top_movies": int, "graph.top_k": int, "model.readout_taps": int,
    "trainer.lambda_max": float, "perturbation.epsilon": float,
}


def _coerce(key: str, raw):
    default = DEFAULTS[key]
    if isinstance(raw, str):
        raw = raw.strip()
        if raw.lower() == "none":
            return None
    typ = _TYPES.get(key) or type(default)
    if raw is None:
        return None
    try:
        if typ is bool:
            if isinstance(raw, bool):
                return raw
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot interpret {raw!r} as {typ.__name__}") from None


class Config:
    def __init__(self, values: dict | None = None):
        self.values = dict(DEFAULTS)
        for key, val in (values or {}).items():
            self.set(key, val)

    def set(self, key: str, value) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, value)

    def __getitem__(self, key: str):
        return self.values[key]

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "Config":
        cfg = cls()
        for no, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            if not sep:
                raise ConfigError(f"{source}:{no}: expected 'key = value'")
            cfg.set(key.strip(), val.strip())
        return cfg

    @classmethod
    def load(cls, path) -> "Config":
        return cls.from_text(Path(path).read_text(), str(path))

    def apply_overrides(self, pairs) -> None:
        for item in pairs or ():
            key, sep, val = item.partition("=")
            if not sep:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            self.set(key.strip(), val.strip())

    def to_text(self) -> str:
        out = []
        for key in sorted(self.values):
            val = self.values[key]
            out.append(f"{key} = {'none' if val is None else val}")
        return "\n".join(out) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    # builders ----------------------------------------------------------------

    def hidden(self) -> tuple[int, ...]:
        return parse_hidden(self["model.hidden"])

    def model_config(self, hidden=None) -> GnnConfig:
        try:
            return GnnConfig.from_hidden(self.hidden() if hidden is None else hidden,
                                         self["model.taps"], self["model.activation"],
                                         self["model.readout_taps"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def trainer_config(self, **changes) -> TrainerConfig:
        kw = {k.split(".", 1)[1]: v for k, v in self.values.items() if k.startswith("trainer.")}
        kw.update(changes)
        return TrainerConfig(**kw)

    def perturbation_model(self) -> PerturbationModel:
        eps = self["perturbation.epsilon"]
        try:
            return PerturbationModel(self["perturbation.kind"],
                                     self["trainer.epsilon"] if eps is None else eps,
                                     self["perturbation.mode"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def magnitudes(self) -> tuple[float, ...]:
        return tuple(float(v) for v in str(self["sweep.magnitudes"]).split(",") if v.strip())

    def architectures(self) -> tuple[tuple[int, ...], ...]:
        return tuple(parse_hidden(a) for a in str(self["sweep.architectures"]).split(";")
                     if a.strip())

    def modes(self) -> tuple[str, ...]:
        return tuple(m.strip() for m in str(self["sweep.modes"]).split(",") if m.strip())

    def target_movie(self):
        t = self["data.target_movie"]
        if t in (None, "most_rated"):
            return "most_rated"
        try:
            return int(t)
        except ValueError:
            raise ConfigError(f"data.target_movie must be an id or 'most_rated', got {t!r}")


def parse_hidden(text) -> tuple[int, ...]:
    text = str(text).strip()
    if not text:
        return ()
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"bad hidden-width list {text!r}") from None
