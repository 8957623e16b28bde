"""Run configuration: INI sections with typed keys, overridable by ``--set section.key=value``.

Unknown sections and keys are rejected. ``RunConfig.echo()`` is the
reproducibility header written into every output; it omits the ``output``
section because file locations do not affect results.
"""

import configparser
from dataclasses import asdict, dataclass, field, fields

from trsvi.errors import UsageError


class ConfigError(UsageError):
    pass


@dataclass
class RunSection:
    model: str = "bernoulli"
    method: str = "tr"
    seed: int = 0
    epochs: int = 1
    eb: bool = False
    timing: bool = False
    elbo_every: int = 1
    full_elbo_every_epoch: bool = True


@dataclass
class ModelSection:
    K: int = 10
    D: int = 0
    V: int = 0
    alpha: float = 1.0
    eta: float = 0.01
    a: float = 1.0
    b: float = 1.0
    s: float = 1.0
    nu: float = 0.0
    psi_scale: float = 1.0


@dataclass
class ScheduleSection:
    kind: str = "classic"
    kappa: float = 0.5
    tau: float = 100.0
    batch_size: int = 100
    n0: float = -1.0  # negative: data count at start


@dataclass
class TrustRegionSection:
    inner_iters: int = 2
    local_iters: int = 10
    init: str = "uniform"
    tol: float = 0.0


@dataclass
class NgSection:
    local_iters: int = 0  # 0: same as trust_region.local_iters


@dataclass
class DataSection:
    path: str = ""
    format: str = "auto"
    heldout: str = ""
    observed_frac: float = 0.5
    split_seed: int = 0


@dataclass
class StreamSection:
    rate: float = 1.0
    p: float = 1.0
    delay: int = 1
    ticks: int = 1000
    sim_seed: int = 0
    token_seed: int = 0
    steps: int = 100
    ticks_per_step: int = 1
    count_unit: str = "records"
    eval_every: int = 0
    batch_cap: int = 1000
    iters_per_round: int = 20
    rounds: int = 10
    svb_batch: int = 100


@dataclass
class EvalSection:
    metric: str = "heldout_loglik"
    checkpoint: str = ""
    M: int = 20


@dataclass
class OutputSection:
    metrics: str = "metrics.jsonl"
    checkpoint: str = "checkpoint.json"
    report: str = "report.json"
    csv: str = ""
    events: str = "events.jsonl"


SECTIONS = {
    "run": RunSection,
    "model": ModelSection,
    "schedule": ScheduleSection,
    "trust_region": TrustRegionSection,
    "ng": NgSection,
    "data": DataSection,
    "stream": StreamSection,
    "eval": EvalSection,
    "output": OutputSection,
}

MODELS = ("bernoulli", "gmm", "lda")
METHODS = ("ng", "tr", "svb", "batch", "streaming-batch")
STREAM_ONLY = ("svb", "streaming-batch")


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    trust_region: TrustRegionSection = field(default_factory=TrustRegionSection)
    ng: NgSection = field(default_factory=NgSection)
    data: DataSection = field(default_factory=DataSection)
    stream: StreamSection = field(default_factory=StreamSection)
    eval: EvalSection = field(default_factory=EvalSection)
    output: OutputSection = field(default_factory=OutputSection)

    def echo(self):
        d = asdict(self)
        d.pop("output")
        return d

    def validate(self, command):
        r = self.run
        if r.model not in MODELS:
            raise ConfigError(f"run.model must be one of {MODELS}")
        if r.method not in METHODS:
            raise ConfigError(f"run.method must be one of {METHODS}")
        if r.method in STREAM_ONLY and command not in ("stream", "replay"):
            raise ConfigError(f"method {r.method} needs the stream command")
        if self.schedule.kind not in ("classic", "streaming"):
            raise ConfigError("schedule.kind must be classic or streaming")
        if self.schedule.kind == "streaming" and command == "train":
            raise ConfigError("a streaming schedule needs the stream command")
        if command in ("stream", "replay") and r.method in ("ng", "tr") and self.schedule.kind != "streaming":
            raise ConfigError("streaming SVI needs schedule.kind = streaming")
        if r.epochs < 0 or self.stream.steps < 0:
            raise ConfigError("epochs and steps must be >= 0")
        if self.model.K < 1:
            raise ConfigError("model.K must be >= 1")
        if self.stream.count_unit not in ("records", "words"):
            raise ConfigError("stream.count_unit must be records or words")
        if command in ("train", "stream", "replay") and not self.data.path:
            raise ConfigError("data.path is required")
        if command == "eval" and not self.eval.checkpoint:
            raise ConfigError("eval.checkpoint is required")
        return self


def _coerce(section, key, raw):
    types = {f.name: f.type for f in fields(SECTIONS[section])}
    if key not in types:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    t = types[key]
    try:
        if t is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return t(raw.strip()) if t is not str else raw.strip()
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def load_config(path=None, overrides=()):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if path:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except configparser.Error as e:
            raise ConfigError(f"malformed config: {e}") from None
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} is not section.key=value")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)
    cfg = RunConfig()
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        target = getattr(cfg, section)
        for key, raw in cp.items(section):
            setattr(target, key, _coerce(section, key, raw))
    return cfg
