"""Declarative run configuration: flat key/value text with [section] headers.

Grammar (documented here, no nested includes):

    # comment lines start with '#'
    [run]               # seed and directory layout
    [model]             # architecture overrides; defaults follow the
                        # reference setup (4 blocks, 10 experts, width 64,
                        # level 4, lr 0.001, batch 20, bases db1..db10)
    [train]             # foundation/transfer optimization settings
    [task NAME]         # one section per task: a dataset path or a recipe
    [ablate]            # expert-count sweep settings

Unknown sections or keys are rejected by name; values are plain scalars or
comma-separated lists. Environment overrides use the WAVEOP_ prefix
(WAVEOP_SEED, WAVEOP_OUT).
"""

import hashlib
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .grf import GrfSpec
from .solvers import PdeSpec

_RUN_KEYS = {"seed", "data_dir", "checkpoint_dir", "report_dir"}
_MODEL_KEYS = {"blocks", "experts", "width", "levels", "bases", "gate_mode",
               "max_tasks", "gate_hidden", "gate_hidden_2d", "proj_hidden",
               "gate_conv_channels", "gate_pool", "dtype"}
_TRAIN_KEYS = {"epochs", "batch", "lr", "weight_decay", "step_size", "gamma",
               "clip_norm", "transfer_epochs", "transfer_lr", "transfer_step_size"}
_TASK_KEYS = {"label", "path", "family", "rank", "grid", "domain", "bc", "nu",
              "alpha", "eps", "reaction", "dt", "record_every", "frames",
              "n_train", "n_test", "window",
              "grf_kind", "grf_sigma", "grf_variance", "grf_length", "grf_eta",
              "grf_amplitude", "grf_shift", "grf_power", "grf_endpoint"}
_ABLATE_KEYS = {"experts", "seeds", "epochs", "transfer_epochs", "n_train", "n_test"}

_INT_KEYS = {"seed", "blocks", "experts", "width", "levels", "max_tasks",
             "proj_hidden", "gate_conv_channels", "gate_pool", "epochs", "batch",
             "step_size", "transfer_epochs", "transfer_step_size", "label",
             "rank", "grid", "frames", "n_train", "n_test", "window", "seeds"}
_FLOAT_KEYS = {"lr", "weight_decay", "gamma", "clip_norm", "transfer_lr",
               "domain", "nu", "alpha", "eps", "dt", "record_every",
               "grf_sigma", "grf_variance", "grf_length", "grf_eta",
               "grf_amplitude", "grf_shift", "grf_power"}
_LIST_KEYS = {"bases", "gate_hidden", "gate_hidden_2d"}


@dataclass
class TaskEntry:
    name: str
    label: int
    path: str = ""
    recipe: dict = field(default_factory=dict)
    n_train: int = 200
    n_test: int = 20
    window: int = 10

    def dataset_path(self, data_dir):
        return self.path or os.path.join(data_dir, self.name)

    def pde_spec(self):
        r = self.recipe
        if "family" not in r:
            raise ConfigError(f"task {self.name}: recipe needs a 'family' "
                              "(or give an explicit 'path')")
        kwargs = {k: r[k] for k in ("rank", "grid", "domain", "bc", "nu", "alpha",
                                    "eps", "reaction", "dt", "record_every",
                                    "frames") if k in r}
        try:
            return PdeSpec(family=r["family"], **kwargs)
        except ValueError as exc:
            raise ConfigError(f"task {self.name}: {exc}") from exc

    def grf_spec(self):
        r = self.recipe
        kwargs = {}
        for key, name in (("grf_kind", "kind"), ("grf_sigma", "sigma"),
                          ("grf_variance", "variance"), ("grf_length", "length"),
                          ("grf_eta", "eta"), ("grf_amplitude", "amplitude"),
                          ("grf_shift", "shift"), ("grf_power", "power")):
            if key in r:
                kwargs[name] = r[key]
        pde = self.pde_spec()
        try:
            return GrfSpec(grid=pde.grid, rank=pde.rank, domain=pde.domain,
                           endpoint=pde.bc == "reflective", **kwargs)
        except ValueError as exc:
            raise ConfigError(f"task {self.name}: {exc}") from exc


@dataclass
class RunConfig:
    path: str = ""
    seed: int = 0
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    tasks: list = field(default_factory=list)
    ablate: dict = field(default_factory=dict)
    text: str = ""

    def task(self, name):
        for t in self.tasks:
            if t.name == name:
                return t
        raise ConfigError(f"no task named {name!r} in config")

    def config_hash(self):
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()

    # reference defaults filled for any field not present in [model]
    def model_defaults(self):
        out = {"blocks": 4, "experts": 10, "width": 64, "levels": 4,
               "bases": (1, 2, 3, 4, 5, 6, 7, 8, 9, 10), "gate_mode": "per_channel",
               "max_tasks": 6, "proj_hidden": 128, "dtype": "float32"}
        out.update(self.model)
        return out

    def train_defaults(self):
        out = {"epochs": 150, "batch": 20, "lr": 1e-3, "weight_decay": 1e-6,
               "step_size": 20, "gamma": 0.5, "clip_norm": 0.0,
               "transfer_epochs": 50, "transfer_lr": 1e-3,
               "transfer_step_size": 20}
        out.update(self.train)
        return out


def _coerce(key, raw, where):
    try:
        if key in _LIST_KEYS:
            return tuple(int(x.strip()) for x in raw.split(",") if x.strip())
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key == "grf_endpoint":
            return raw == "true"
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value {raw!r} for {key}") from exc
    return raw


def parse_config(path):
    """Parse and validate a config file; unknown keys are rejected by name."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = RunConfig(path=path, text=text)
    section = None
    task = None
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"{path}:{ln}: unterminated section header")
            header = line[1:-1].strip()
            if header.startswith("task "):
                name = header[5:].strip()
                if not name:
                    raise ConfigError(f"{path}:{ln}: task section needs a name")
                if any(t.name == name for t in cfg.tasks):
                    raise ConfigError(f"{path}:{ln}: duplicate task section {name!r}")
                task = TaskEntry(name=name, label=len(cfg.tasks))
                cfg.tasks.append(task)
                section = "task"
            elif header in ("run", "model", "train", "ablate"):
                section, task = header, None
            else:
                raise ConfigError(f"{path}:{ln}: unknown section [{header}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected key = value")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        where = f"{path}:{ln}"
        if section is None:
            raise ConfigError(f"{where}: key {key!r} outside any section")
        if section == "run":
            if key not in _RUN_KEYS:
                raise ConfigError(f"{where}: unknown key {key!r} in [run]")
            setattr(cfg, key, _coerce(key, val, where))
        elif section == "model":
            if key not in _MODEL_KEYS:
                raise ConfigError(f"{where}: unknown key {key!r} in [model]")
            cfg.model[key] = _coerce(key, val, where)
        elif section == "train":
            if key not in _TRAIN_KEYS:
                raise ConfigError(f"{where}: unknown key {key!r} in [train]")
            cfg.train[key] = _coerce(key, val, where)
        elif section == "ablate":
            if key not in _ABLATE_KEYS:
                raise ConfigError(f"{where}: unknown key {key!r} in [ablate]")
            if key == "experts":
                cfg.ablate[key] = tuple(int(x) for x in val.split(",") if x.strip())
            else:
                cfg.ablate[key] = _coerce(key, val, where)
        else:
            if key not in _TASK_KEYS:
                raise ConfigError(f"{where}: unknown key {key!r} in [task]")
            value = _coerce(key, val, where)
            if key == "label":
                task.label = value
            elif key == "path":
                task.path = value
            elif key == "n_train":
                task.n_train = value
            elif key == "n_test":
                task.n_test = value
            elif key == "window":
                task.window = value
            else:
                task.recipe[key] = value
    labels = [t.label for t in cfg.tasks]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"{path}: duplicate task label in {labels}")
    return cfg
