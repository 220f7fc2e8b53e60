"""Network files, experiment configs and CSV output.

Network file format (``#`` starts a comment, blank lines ignored)::

    M 3
    N 100
    lambda 0.5 -0.25 0
    J dense
    0 1 0
    1 0 0.5
    0 0.5 0

or, instead of the dense block, ``J coo`` followed by ``i j value`` lines
(0-based).  Each coordinate entry sets both ``J[i][j]`` and ``J[j][i]``; giving
the same pair twice with different values is an error.  Unlisted entries are 0.
Numbers are written with 17 significant digits so a write/read round trip is
exact.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .model import INFINITE, ModelError, NetworkSpec


class ConfigError(ModelError):
    """Malformed network file or experiment configuration."""


# ---------------------------------------------------------------------------
# network files

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_spec(spec: NetworkSpec, coo: bool = False) -> str:
    lines = [f"M {spec.M}", f"N {spec.N}", "lambda " + " ".join(_fmt(v) for v in spec.lam)]
    if coo:
        lines.append("J coo")
        for i, j in zip(*np.nonzero(np.triu(spec.J))):
            lines.append(f"{i} {j} {_fmt(spec.J[i, j])}")
    else:
        lines.append("J dense")
        lines.extend(" ".join(_fmt(v) for v in row) for row in spec.J)
    return "\n".join(lines) + "\n"


def write_spec(spec: NetworkSpec, path, coo: bool = False) -> None:
    Path(path).write_text(format_spec(spec, coo=coo))


def _number(tok: str, lineno: int, what: str) -> float:
    try:
        return float(tok)
    except ValueError:
        raise ConfigError(f"line {lineno}: {what}: {tok!r} is not a number") from None


def _integer(tok: str, lineno: int, what: str) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ConfigError(f"line {lineno}: {what}: {tok!r} is not an integer") from None


def parse_spec(text: str) -> NetworkSpec:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].split()
        if body:
            rows.append((lineno, body))
    header = {}
    pos = 0
    while pos < len(rows) and rows[pos][1][0] in ("M", "N", "lambda"):
        lineno, toks = rows[pos]
        key = toks[0]
        if key in header:
            raise ConfigError(f"line {lineno}: duplicate {key!r}")
        header[key] = (lineno, toks[1:])
        pos += 1
    for key in ("M", "N", "lambda"):
        if key not in header:
            raise ConfigError(f"missing {key!r} line")
    lineno, toks = header["M"]
    if len(toks) != 1:
        raise ConfigError(f"line {lineno}: expected 'M <int>'")
    M = _integer(toks[0], lineno, "M")
    if M < 1:
        raise ConfigError(f"line {lineno}: M must be >= 1")
    lineno, toks = header["N"]
    if len(toks) != 1:
        raise ConfigError(f"line {lineno}: expected 'N <int>'")
    N = _integer(toks[0], lineno, "N")
    if N < 1:
        raise ConfigError(f"line {lineno}: N must be >= 1")
    lineno, toks = header["lambda"]
    if len(toks) != M:
        raise ConfigError(f"line {lineno}: lambda has {len(toks)} entries, expected M={M}")
    lam = [_number(t, lineno, "lambda") for t in toks]

    if pos >= len(rows):
        raise ConfigError("missing 'J dense' or 'J coo' section")
    lineno, toks = rows[pos]
    if toks[0] != "J" or len(toks) != 2 or toks[1] not in ("dense", "coo"):
        raise ConfigError(f"line {lineno}: expected 'J dense' or 'J coo', got {' '.join(toks)!r}")
    mode = toks[1]
    body = rows[pos + 1:]
    J = np.zeros((M, M))
    if mode == "dense":
        if len(body) != M:
            raise ConfigError(f"line {lineno}: dense J needs {M} rows, found {len(body)}")
        for r, (ln, toks) in enumerate(body):
            if len(toks) != M:
                raise ConfigError(f"line {ln}: J row has {len(toks)} entries, expected {M}")
            J[r] = [_number(t, ln, "J") for t in toks]
        bad = np.argwhere(J != J.T)
        if bad.size:
            i, j = bad[0]
            raise ConfigError(f"J is not symmetric: J[{i}][{j}]={J[i, j]!r} (line {body[i][0]}) "
                              f"!= J[{j}][{i}]={J[j, i]!r} (line {body[j][0]})")
    else:
        seen = {}
        for ln, toks in body:
            if len(toks) != 3:
                raise ConfigError(f"line {ln}: expected 'i j value'")
            i = _integer(toks[0], ln, "i")
            j = _integer(toks[1], ln, "j")
            v = _number(toks[2], ln, "J")
            if not (0 <= i < M and 0 <= j < M):
                raise ConfigError(f"line {ln}: index ({i}, {j}) out of range for M={M}")
            key = (min(i, j), max(i, j))
            if key in seen and seen[key][1] != v:
                raise ConfigError(f"line {ln}: J[{i}][{j}]={v!r} conflicts with line {seen[key][0]} "
                                  f"(value {seen[key][1]!r}); J must be symmetric")
            seen[key] = (ln, v)
            J[i, j] = J[j, i] = v
    try:
        return NetworkSpec(J, np.array(lam), N)
    except ModelError as exc:
        raise ConfigError(str(exc)) from None


def read_spec(path) -> NetworkSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read network file {path}: {exc.strerror}") from None
    try:
        return parse_spec(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# experiment configuration

ENGINES = ("kmc", "ode", "sde", "metropolis", "oracle")
INITIAL_MODES = ("uniform-random", "half-filled", "pattern-fragment", "random-spins", "explicit")

_TOP_KEYS = {
    "network", "engine", "beta", "alpha", "schedule", "t_max", "dt", "sample_dt", "n_traj",
    "n_sweeps", "burn_in", "seed", "initial", "output", "training", "targets", "eps_conv",
    "sweep", "sde",
}


@dataclass
class InitialCondition:
    mode: str = "uniform-random"
    file: Path | None = None
    fraction: float = 0.5
    values: list | None = None  # explicit occupations


@dataclass
class TrainingConfig:
    patterns: list  # pattern file paths
    c: float
    lambda0: float = -1.0
    epochs: int = 1
    equilibrator: str = "analytic"
    N: int | None = None  # defaults to the network's N


@dataclass
class SweepConfig:
    N_list: list
    eps_list: list = field(default_factory=lambda: [0.3, 0.1, 0.05])
    horizon: float = 50.0  # run length in units of 1/(alpha N)
    steps_per_unit: int = 100  # ODE steps per 1/(alpha N)
    fit_top: int | None = None  # number of largest N used in the slope fit
    target: int | None = None  # pattern index; default nearest at the end of the run


@dataclass
class ExperimentConfig:
    source: Path | None
    digest: str
    raw: dict
    network: NetworkSpec | None = None
    engine: str = "ode"
    beta: float = INFINITE
    alpha: float = 1.0
    schedule: dict | None = None
    t_max: float = 1.0
    dt: float | None = None
    sample_dt: float | None = None
    n_traj: int = 1
    n_sweeps: int = 1000
    burn_in: int = 0
    seed: int = 0
    initial: InitialCondition = field(default_factory=InitialCondition)
    output: Path | None = None
    training: TrainingConfig | None = None
    targets: list = field(default_factory=list)
    eps_conv: float = 0.05
    sweep: SweepConfig | None = None
    sde_clip: bool = True


def _key_lines(text: str) -> dict:
    """Top-level and one-level-nested key -> line number, for diagnostics."""
    out = {}
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return out
    if not isinstance(node, yaml.MappingNode):
        return out
    for k, v in node.value:
        out[k.value] = k.start_mark.line + 1
        if isinstance(v, yaml.MappingNode):
            for k2, _ in v.value:
                out[f"{k.value}.{k2.value}"] = k2.start_mark.line + 1
    return out


class _Reader:
    def __init__(self, lines, base: Path):
        self.lines = lines
        self.base = base

    def where(self, key):
        ln = self.lines.get(key)
        return f"line {ln}: " if ln else ""

    def fail(self, key, msg):
        raise ConfigError(f"{self.where(key)}field '{key}': {msg}")

    def number(self, d, name, key, default=None, *, positive=False, allow_inf=False):
        if name not in d:
            if default is None:
                self.fail(key, "is required")
            return default
        v = d[name]
        if isinstance(v, str) and v.strip().lower() in ("inf", "infinite", "infinity", ".inf"):
            v = math.inf
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(key, f"expected a number, got {v!r}")
        v = float(v)
        if math.isnan(v) or (math.isinf(v) and not allow_inf):
            self.fail(key, "must be finite")
        if positive and not v > 0:
            self.fail(key, "must be positive")
        return v

    def integer(self, d, name, key, default=None, *, minimum=None):
        if name not in d:
            if default is None:
                self.fail(key, "is required")
            return default
        v = d[name]
        if isinstance(v, float) and v.is_integer():
            v = int(v)
        if isinstance(v, bool) or not isinstance(v, int):
            self.fail(key, f"expected an integer, got {v!r}")
        if minimum is not None and v < minimum:
            self.fail(key, f"must be >= {minimum}")
        return v

    def path(self, value, key, must_exist=True):
        if not isinstance(value, str):
            self.fail(key, f"expected a file path, got {value!r}")
        p = Path(value)
        if not p.is_absolute():
            p = self.base / p
        if must_exist and not p.exists():
            self.fail(key, f"file not found: {p}")
        return p

    def mapping(self, d, name):
        v = d.get(name, {})
        if v is None:
            return {}
        if not isinstance(v, dict):
            self.fail(name, f"expected a mapping, got {v!r}")
        return v

    def only(self, d, allowed, prefix):
        for k in d:
            if k not in allowed:
                key = f"{prefix}.{k}" if prefix else str(k)
                self.fail(key, f"unknown field; expected one of {sorted(allowed)}")


def _inline_network(r: _Reader, d: dict) -> NetworkSpec:
    r.only(d, {"N", "lambda", "J", "J_coo"}, "network")
    N = r.integer(d, "N", "network.N", minimum=1)
    lam = d.get("lambda")
    if not isinstance(lam, list) or not lam:
        r.fail("network.lambda", "expected a non-empty list")
    M = len(lam)
    if "J" in d and "J_coo" in d:
        r.fail("network", "give either J or J_coo, not both")
    J = np.zeros((M, M))
    if "J" in d:
        try:
            J = np.array(d["J"], dtype=float)
        except (TypeError, ValueError):
            r.fail("network.J", "expected an M x M list of numbers")
    elif "J_coo" in d:
        seen = {}
        for entry in d["J_coo"] or []:
            if not (isinstance(entry, list) and len(entry) == 3):
                r.fail("network.J_coo", f"expected [i, j, value] entries, got {entry!r}")
            i, j, v = int(entry[0]), int(entry[1]), float(entry[2])
            if not (0 <= i < M and 0 <= j < M):
                r.fail("network.J_coo", f"index ({i}, {j}) out of range for M={M}")
            key = (min(i, j), max(i, j))
            if key in seen and seen[key] != v:
                r.fail("network.J_coo", f"conflicting values for J[{i}][{j}]")
            seen[key] = v
            J[i, j] = J[j, i] = v
    try:
        return NetworkSpec(J, np.array(lam, dtype=float), N)
    except ModelError as exc:
        r.fail("network", str(exc))


def _file_digest(p: Path) -> str:
    return hashlib.sha256(p.read_bytes()).hexdigest()


def parse_config_text(text: str, base: Path | None = None, source: Path | None = None,
                      overrides: dict | None = None) -> ExperimentConfig:
    base = Path(".") if base is None else base
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        raise ConfigError(f"{where}invalid YAML: {getattr(exc, 'problem', exc)}") from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping at the top level")
    raw = dict(raw)
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    r = _Reader(_key_lines(text), base)
    r.only(raw, _TOP_KEYS, "")

    referenced = []
    network = None
    if "network" in raw:
        net = raw["network"]
        if isinstance(net, dict):
            network = _inline_network(r, net)
        else:
            p = r.path(net, "network")
            referenced.append(p)
            network = read_spec(p)

    engine = raw.get("engine", "ode")
    if engine not in ENGINES:
        r.fail("engine", f"{engine!r} is not one of {list(ENGINES)}")

    cfg = ExperimentConfig(source=source, digest="", raw=raw, network=network, engine=engine)
    cfg.beta = r.number(raw, "beta", "beta", INFINITE, allow_inf=True)
    if cfg.beta < 0:
        r.fail("beta", "must be >= 0")
    cfg.alpha = r.number(raw, "alpha", "alpha", 1.0, positive=True)
    cfg.t_max = r.number(raw, "t_max", "t_max", 1.0, positive=True)
    if "dt" in raw:
        cfg.dt = r.number(raw, "dt", "dt", positive=True)
    if "sample_dt" in raw:
        cfg.sample_dt = r.number(raw, "sample_dt", "sample_dt", positive=True)
    cfg.n_traj = r.integer(raw, "n_traj", "n_traj", 1, minimum=1)
    cfg.n_sweeps = r.integer(raw, "n_sweeps", "n_sweeps", 1000, minimum=1)
    cfg.burn_in = r.integer(raw, "burn_in", "burn_in", 0, minimum=0)
    cfg.seed = r.integer(raw, "seed", "seed", 0, minimum=0)
    cfg.eps_conv = r.number(raw, "eps_conv", "eps_conv", 0.05, positive=True)

    if "schedule" in raw:
        sch = r.mapping(raw, "schedule")
        r.only(sch, {"times", "betas", "scales"}, "schedule")
        if "times" not in sch or ("betas" in sch) == ("scales" in sch):
            r.fail("schedule", "needs 'times' and exactly one of 'betas' or 'scales'")
        cfg.schedule = sch

    ini = raw.get("initial")
    if isinstance(ini, str):
        ini = {"mode": ini}
    else:
        ini = r.mapping(raw, "initial")
    r.only(ini, {"mode", "file", "fraction", "values"}, "initial")
    mode = ini.get("mode", "uniform-random")
    if mode not in INITIAL_MODES:
        r.fail("initial.mode", f"{mode!r} is not one of {list(INITIAL_MODES)}")
    ic = InitialCondition(mode=mode)
    if mode == "pattern-fragment":
        if "file" not in ini:
            r.fail("initial.file", "is required for mode pattern-fragment")
        ic.file = r.path(ini["file"], "initial.file")
        referenced.append(ic.file)
        ic.fraction = r.number(ini, "fraction", "initial.fraction", 0.5)
        if not 0.0 <= ic.fraction <= 1.0:
            r.fail("initial.fraction", "must lie in [0, 1]")
    if mode == "explicit":
        vals = ini.get("values")
        if not isinstance(vals, list):
            r.fail("initial.values", "is required for mode explicit")
        ic.values = vals
    cfg.initial = ic

    if "output" in raw and raw["output"] is not None:
        cfg.output = r.path(raw["output"], "output", must_exist=False)

    if "training" in raw:
        tr = r.mapping(raw, "training")
        r.only(tr, {"patterns", "c", "lambda0", "epochs", "equilibrator", "N"}, "training")
        pats = tr.get("patterns")
        if isinstance(pats, str):
            d = r.path(pats, "training.patterns")
            files = sorted(d.glob("*.txt")) if d.is_dir() else [d]
        elif isinstance(pats, list) and pats:
            files = [r.path(p, "training.patterns") for p in pats]
        else:
            r.fail("training.patterns", "expected a directory or a list of pattern files")
        if not files:
            r.fail("training.patterns", "no pattern files found")
        referenced.extend(files)
        cfg.training = TrainingConfig(
            patterns=files,
            c=r.number(tr, "c", "training.c", positive=True),
            lambda0=r.number(tr, "lambda0", "training.lambda0", -1.0),
            epochs=r.integer(tr, "epochs", "training.epochs", 1, minimum=1),
            equilibrator=tr.get("equilibrator", "analytic"),
            N=r.integer(tr, "N", "training.N", 0, minimum=0) or None,
        )
        if cfg.training.equilibrator not in ("analytic", "metropolis", "ode"):
            r.fail("training.equilibrator", "expected analytic, metropolis or ode")

    if "targets" in raw:
        tg = raw["targets"]
        if not isinstance(tg, list) or not tg:
            r.fail("targets", "expected a list of pattern files")
        cfg.targets = [r.path(p, "targets") for p in tg]
        referenced.extend(cfg.targets)

    if "sweep" in raw:
        sw = r.mapping(raw, "sweep")
        r.only(sw, {"N_list", "eps_list", "horizon", "steps_per_unit", "fit_top", "target"}, "sweep")
        Ns = sw.get("N_list")
        if not isinstance(Ns, list) or len(Ns) < 2 or not all(isinstance(n, int) and n >= 1 for n in Ns):
            r.fail("sweep.N_list", "expected a list of at least two positive integers")
        if len(set(Ns)) != len(Ns):
            r.fail("sweep.N_list", "values must be distinct")
        eps = sw.get("eps_list", [0.3, 0.1, 0.05])
        if not isinstance(eps, list) or not eps or not all(isinstance(e, (int, float)) and 0 < e < 1 for e in eps):
            r.fail("sweep.eps_list", "expected a list of values in (0, 1)")
        cfg.sweep = SweepConfig(
            N_list=sorted(Ns),
            eps_list=[float(e) for e in eps],
            horizon=r.number(sw, "horizon", "sweep.horizon", 50.0, positive=True),
            steps_per_unit=r.integer(sw, "steps_per_unit", "sweep.steps_per_unit", 100, minimum=1),
            fit_top=r.integer(sw, "fit_top", "sweep.fit_top", 0, minimum=0) or None,
            target=sw.get("target"),
        )

    if "sde" in raw:
        sd = r.mapping(raw, "sde")
        r.only(sd, {"clip_noise"}, "sde")
        cfg.sde_clip = bool(sd.get("clip_noise", True))

    h = hashlib.sha256(json.dumps(raw, sort_keys=True, default=str).encode())
    for p in referenced:
        h.update(_file_digest(p).encode())
    cfg.digest = h.hexdigest()
    return cfg


def parse_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        return parse_config_text(text, base=path.parent, source=path, overrides=overrides)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# CSV

def _cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return repr(float(v))


def format_csv(header, rows, provenance: dict) -> str:
    """Comma-separated text with ``# key: value`` provenance lines first.

    Floats use the shortest exact representation; nothing time-dependent is
    written, so identical inputs give identical bytes.
    """
    out = [f"# {k}: {v}" for k, v in provenance.items()]
    out.append(",".join(header))
    for row in rows:
        out.append(",".join(_cell(v) for v in row))
    return "\n".join(out) + "\n"


def write_csv(path, header, rows, provenance: dict) -> None:
    Path(path).write_text(format_csv(header, rows, provenance))


def read_csv(path):
    """Inverse of :func:`write_csv`: ``(provenance, header, rows as float arrays)``."""
    prov, header, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(":")
            prov[key.strip()] = value.strip()
        elif header is None:
            header = line.split(",")
        elif line:
            rows.append(line.split(","))
    return prov, header, rows
