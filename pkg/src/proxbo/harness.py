"""Campaign configuration, multi-seed execution, aggregation, CSV output.

Config files are flat `key=value` text with dotted sections; run output is
one CSV per seed plus a manifest sufficient to reproduce byte-identical
results. Floats are printed at 17 significant digits so CSVs round-trip
losslessly.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acquisition import KGConfig
from .errors import ConfigError
from .explorer import (ExplorerState, RoundRecord, pex_greedy_round,
                       random_search_round, run_round)
from .landscape import BudgetedOracle, LookupLandscape, load_lookup, make_nk
from .sequences import Sequence
from .surrogate import (ConvRegressorConfig, Dataset, Ensemble,
                        RecurrentRegressorConfig, TrainConfig)

ARTIFACT_VERSION = "0.1.0"

_FLOAT = "{:.17g}".format


@dataclass(frozen=True)
class CampaignConfig:
    # landscape
    landscape_kind: str = "nk"            # nk | lookup
    lookup_path: str = ""
    negate: bool = False
    wild_type: str = ""                   # text override; default: lookup first row / NK all-first-symbol
    nk_n: int = 10
    nk_k: int = 2
    nk_v: int = 2
    nk_seed: int = 0
    # surrogate
    surrogate_kind: str = "conv"          # conv | recurrent
    members: int = 5
    channels: tuple[int, ...] = (16, 16)
    kernel_size: int = 9
    hidden_dense: int = 32
    hidden_size: int = 64
    epochs: int = 150
    warm_epochs: int = 40                 # >0: warm-start refits after round 1
    minibatch: int = 64
    learning_rate: float = 5e-3
    bootstrap: bool = True
    # method / acquisition
    method: str = "batch_bo"              # batch_bo | random | pex_greedy
    acquisition: str = "kg"               # ucb | ei | kg
    beta: float = 3.0
    kg_fantasies: int = 4
    kg_inner_pool: int = 128
    kg_update_steps: int = 6
    kg_update_lr: float = 8e-2
    kg_inner_eval: int = 8
    # campaign
    rounds: int = 10
    batch: int = 16
    pool_size: int = 900
    pool_radius: int = 4
    lambda_kind: str = "iqr"              # fixed | iqr
    lambda_value: float = 0.0
    lambda_factor: float = 0.1
    seeds: tuple[int, ...] = (0,)
    out: str = "runs"

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds: must be >= 1")
        if self.batch < 1:
            raise ConfigError("batch: must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds: must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds: must be distinct")
        if self.landscape_kind not in ("nk", "lookup"):
            raise ConfigError(f"landscape.kind: unknown value {self.landscape_kind!r}")
        if self.landscape_kind == "lookup" and not self.lookup_path:
            raise ConfigError("landscape.path: required for lookup landscapes")
        if self.method not in ("batch_bo", "random", "pex_greedy"):
            raise ConfigError(f"method: unknown value {self.method!r}")
        if self.method == "batch_bo" and self.acquisition not in ("ucb", "ei", "kg"):
            raise ConfigError(f"acquisition.kind: unknown value {self.acquisition!r}")
        if self.surrogate_kind not in ("conv", "recurrent"):
            raise ConfigError(f"surrogate.kind: unknown value {self.surrogate_kind!r}")
        if self.lambda_kind not in ("fixed", "iqr"):
            raise ConfigError(f"lambda.kind: unknown value {self.lambda_kind!r}")


_KEY_MAP = {
    "landscape.kind": ("landscape_kind", str),
    "landscape.path": ("lookup_path", str),
    "landscape.negate": ("negate", None),
    "landscape.wild_type": ("wild_type", str),
    "landscape.n": ("nk_n", int),
    "landscape.k": ("nk_k", int),
    "landscape.v": ("nk_v", int),
    "landscape.seed": ("nk_seed", int),
    "surrogate.kind": ("surrogate_kind", str),
    "surrogate.members": ("members", int),
    "surrogate.channels": ("channels", "int_tuple"),
    "surrogate.kernel_size": ("kernel_size", int),
    "surrogate.hidden_dense": ("hidden_dense", int),
    "surrogate.hidden_size": ("hidden_size", int),
    "train.epochs": ("epochs", int),
    "train.warm_epochs": ("warm_epochs", int),
    "train.minibatch": ("minibatch", int),
    "train.learning_rate": ("learning_rate", float),
    "train.bootstrap": ("bootstrap", None),
    "method": ("method", str),
    "acquisition.kind": ("acquisition", str),
    "acquisition.beta": ("beta", float),
    "acquisition.kg.n_fantasies": ("kg_fantasies", int),
    "acquisition.kg.inner_pool_size": ("kg_inner_pool", int),
    "acquisition.kg.update_steps": ("kg_update_steps", int),
    "acquisition.kg.update_lr": ("kg_update_lr", float),
    "acquisition.kg.inner_eval_size": ("kg_inner_eval", int),
    "rounds": ("rounds", int),
    "batch": ("batch", int),
    "pool.size": ("pool_size", int),
    "pool.radius": ("pool_radius", int),
    "lambda.kind": ("lambda_kind", str),
    "lambda.value": ("lambda_value", float),
    "lambda.factor": ("lambda_factor", float),
    "seeds": ("seeds", "int_tuple"),
    "out": ("out", str),
}


def _parse_bool(v: str) -> bool:
    if v.lower() in ("true", "1", "yes", "on"):
        return True
    if v.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def parse_config_text(text: str) -> CampaignConfig:
    """Parse flat `key=value` config text into a CampaignConfig."""
    kwargs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _KEY_MAP:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        attr, conv = _KEY_MAP[key]
        try:
            if conv == "int_tuple":
                kwargs[attr] = tuple(int(p) for p in value.split(",") if p.strip())
            elif conv is None:
                kwargs[attr] = _parse_bool(value)
            else:
                kwargs[attr] = conv(value)
        except ValueError as e:
            raise ConfigError(f"{key}: {e}") from None
    return CampaignConfig(**kwargs)


def load_config(path: str | Path) -> CampaignConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def config_lines(cfg: CampaignConfig) -> list[str]:
    """Canonical key=value echo, inverse of parse_config_text."""
    rev = {attr: key for key, (attr, _) in _KEY_MAP.items()}
    lines = []
    for attr, key in sorted(rev.items(), key=lambda kv: kv[1]):
        v = getattr(cfg, attr)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = _FLOAT(v)
        lines.append(f"{key}={v}")
    return lines


def config_hash(cfg: CampaignConfig) -> str:
    """Hash of everything that defines the experiment, excluding seeds/output."""
    lines = [l for l in config_lines(cfg)
             if not l.startswith(("seeds=", "out="))]
    return hashlib.sha256("\n".join(lines).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------


def _build_landscape(cfg: CampaignConfig):
    if cfg.landscape_kind == "lookup":
        return load_lookup(cfg.lookup_path, wild_type=cfg.wild_type or None,
                           negate=cfg.negate)
    return make_nk(cfg.nk_n, cfg.nk_k, cfg.nk_v, cfg.nk_seed)


def _wild_type_of(cfg: CampaignConfig, landscape) -> Sequence:
    if isinstance(landscape, LookupLandscape):
        return landscape.wild_type
    if cfg.wild_type:
        return landscape.alphabet.encode(cfg.wild_type)
    return Sequence((0,) * landscape.length, landscape.alphabet)


def _surrogate_config(cfg: CampaignConfig):
    if cfg.surrogate_kind == "conv":
        return ConvRegressorConfig(channels=cfg.channels, kernel_size=cfg.kernel_size,
                                   hidden_dense=cfg.hidden_dense)
    return RecurrentRegressorConfig(hidden_size=cfg.hidden_size)


def _lambda_for(cfg: CampaignConfig, data: Dataset) -> float:
    if cfg.lambda_kind == "fixed":
        return cfg.lambda_value
    q75, q25 = np.percentile(data.scores, [75, 25])
    return cfg.lambda_factor * float(q75 - q25)


def run_one_seed(cfg: CampaignConfig, seed: int) -> tuple[list[RoundRecord], Sequence, float, bool]:
    """Execute one campaign; returns (records, wild type, its fitness, exhausted flag)."""
    landscape = _build_landscape(cfg)
    wt = _wild_type_of(cfg, landscape)
    wt_fitness = landscape.evaluate_batch([wt])[0]  # seed measurement, outside the budget
    oracle = BudgetedOracle(landscape, rounds_total=cfg.rounds, batch_size=cfg.batch)
    state = ExplorerState(wild_type=wt)
    state.data.add(wt, wt_fitness)
    state.frontier = [state.make_point(wt, wt_fitness)]

    rng = np.random.default_rng([seed, 0xB0])
    train_cfg = TrainConfig(epochs=cfg.epochs, minibatch=cfg.minibatch,
                            learning_rate=cfg.learning_rate, bootstrap=cfg.bootstrap)
    warm_cfg = (TrainConfig(epochs=cfg.warm_epochs, minibatch=cfg.minibatch,
                            learning_rate=cfg.learning_rate, bootstrap=cfg.bootstrap)
                if cfg.warm_epochs > 0 else None)
    kg_cfg = KGConfig(n_fantasies=cfg.kg_fantasies, inner_pool_size=cfg.kg_inner_pool,
                      update_steps=cfg.kg_update_steps, update_lr=cfg.kg_update_lr,
                      inner_eval_size=cfg.kg_inner_eval)
    ensemble = None
    if cfg.method in ("batch_bo", "pex_greedy"):
        ensemble = Ensemble(cfg.surrogate_kind, _surrogate_config(cfg),
                            n_members=cfg.members, seed=seed)

    records: list[RoundRecord] = []
    lam: float | None = None
    exhausted = False
    for _ in range(cfg.rounds):
        try:
            if cfg.method == "random":
                state, rec = random_search_round(state, oracle, cfg.batch, rng)
            elif cfg.method == "pex_greedy":
                state, rec = pex_greedy_round(state, ensemble, oracle, cfg.batch,
                                              pool_size=cfg.pool_size, radius=cfg.pool_radius,
                                              train_cfg=train_cfg, warm_cfg=warm_cfg, rng=rng)
            else:
                if lam is None and len(state.data) > 1:
                    lam = _lambda_for(cfg, state.data)  # set once after the cold-start round
                state, rec = run_round(state, ensemble, oracle,
                                       strategy=cfg.acquisition, lam=lam or 0.0,
                                       beta=cfg.beta, kg_config=kg_cfg,
                                       pool_size=cfg.pool_size, radius=cfg.pool_radius,
                                       train_cfg=train_cfg, warm_cfg=warm_cfg, rng=rng)
        except RuntimeError:
            exhausted = True  # domain exhausted before the budget; flagged in the CSV
            break
        records.append(rec)
    return records, wt, wt_fitness, exhausted


def write_run_csv(path: Path, records: list[RoundRecord],
                  wt: Sequence, wt_fitness: float, exhausted: bool) -> None:
    lines = ["round,query_index,sequence,fitness,cumulative_max"]
    cum = wt_fitness
    lines.append(f"0,0,{wt.text},{_FLOAT(wt_fitness)},{_FLOAT(cum)}")
    qi = 1
    for rec in records:
        for s, y in zip(rec.sequences, rec.scores):
            cum = max(cum, y)
            lines.append(f"{rec.round_index},{qi},{s.text},{_FLOAT(y)},{_FLOAT(cum)}")
            qi += 1
    if exhausted:
        lines.append("# early_stop=domain_exhausted")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _seed_job(args):
    cfg, seed = args
    return seed, run_one_seed(cfg, seed)


def run_campaign(cfg: CampaignConfig) -> dict[int, list[RoundRecord]]:
    """Run every configured seed, writing one run CSV per seed plus a manifest."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    threads = int(os.environ.get("PROXBO_THREADS", "1"))
    jobs = [(cfg, seed) for seed in cfg.seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = dict(pool.map(_seed_job, jobs))
    else:
        results = dict(map(_seed_job, jobs))

    all_records: dict[int, list[RoundRecord]] = {}
    for seed in cfg.seeds:
        records, wt, wt_fitness, exhausted = results[seed]
        write_run_csv(out / f"run_{seed}.csv", records, wt, wt_fitness, exhausted)
        all_records[seed] = records

    manifest = [f"artifact_version={ARTIFACT_VERSION}",
                f"config_hash={config_hash(cfg)}"] + config_lines(cfg)
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n", encoding="utf-8")
    return all_records


# ---------------------------------------------------------------------------


@dataclass
class AggregateCurve:
    rounds: list[int]
    mean: list[float]
    std: list[float]          # population std across seeds
    n_seeds: int
    max_fitness: float        # best measured score across all seeds

    def __post_init__(self):
        if any(s < 0 for s in self.std):
            raise ValueError("std must be non-negative")


def read_run_csv(path: str | Path) -> dict[int, float]:
    """Per-round final cumulative max (round 0 = the seed wild-type row)."""
    per_round: dict[int, float] = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "round,query_index,sequence,fitness,cumulative_max":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split(",")
            per_round[int(cols[0])] = float(cols[4])
    return per_round


def aggregate_runs(csv_paths: list[str | Path]) -> AggregateCurve:
    """Per-round mean/std of cumulative max across runs (population std)."""
    if not csv_paths:
        raise ValueError("no run CSVs to aggregate")
    curves = [read_run_csv(p) for p in csv_paths]
    rounds = sorted(curves[0])
    for p, c in zip(csv_paths, curves):
        if sorted(c) != rounds:
            raise ValueError(f"{p}: round structure differs from the first run")
    mat = np.array([[c[r] for r in rounds] for c in curves])
    return AggregateCurve(rounds=rounds,
                          mean=mat.mean(axis=0).tolist(),
                          std=mat.std(axis=0).tolist(),
                          n_seeds=len(curves),
                          max_fitness=float(mat.max()))


def write_aggregate(out_dir: str | Path, curve: AggregateCurve) -> Path:
    """Write aggregate.csv and a gnuplot script rendering the mean +- std band."""
    out_dir = Path(out_dir)
    lines = ["round,mean_cumulative_max,std_cumulative_max,n_seeds"]
    for r, m, s in zip(curve.rounds, curve.mean, curve.std):
        lines.append(f"{r},{_FLOAT(m)},{_FLOAT(s)},{curve.n_seeds}")
    lines.append(f"# max_fitness={_FLOAT(curve.max_fitness)}")
    agg = out_dir / "aggregate.csv"
    agg.write_text("\n".join(lines) + "\n", encoding="utf-8")
    plot = [
        "set datafile separator ','",
        "set xlabel 'round'",
        "set ylabel 'cumulative max fitness'",
        "set style fill transparent solid 0.3 noborder",
        "plot 'aggregate.csv' using 1:($2-$3):($2+$3) skip 1 with filledcurves title 'mean +- std', \\",
        "     'aggregate.csv' using 1:2 skip 1 with linespoints title 'mean'",
    ]
    (out_dir / "plot.gp").write_text("\n".join(plot) + "\n", encoding="utf-8")
    return agg


def aggregate_dir(run_dir: str | Path) -> AggregateCurve:
    """Aggregate all run_*.csv in a campaign output directory."""
    run_dir = Path(run_dir)
    paths = sorted(run_dir.glob("run_*.csv"))
    if not paths:
        raise ValueError(f"no run_*.csv files in {run_dir}")
    curve = aggregate_runs(paths)
    write_aggregate(run_dir, curve)
    return curve


# ---------------------------------------------------------------------------


def gen_nk(n: int, k: int, alphabet_size: int, seed: int, out_prefix: str | Path,
           enumerate_table: bool | None = None) -> list[Path]:
    """Write an NK landscape spec file and (if enumerable) its lookup TSV.

    Enumeration is refused above 2**20 states. The TSV records the exact
    optimum in a header comment; its first data row (all-first-symbol) is
    the wild type by the lookup file convention.
    """
    landscape = make_nk(n, k, alphabet_size, seed)
    states = landscape.num_states()
    if enumerate_table is None:
        enumerate_table = states <= 2**20
    elif enumerate_table and states > 2**20:
        raise ValueError(f"{states} states exceed the 2**20 enumeration limit")
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    spec_path = out_prefix.with_suffix(".nk.txt")
    spec_path.write_text(
        f"landscape.kind=nk\nlandscape.n={n}\nlandscape.k={k}\n"
        f"landscape.v={alphabet_size}\nlandscape.seed={seed}\n",
        encoding="utf-8")
    written = [spec_path]
    if enumerate_table:
        best_seq, best_fit = None, -np.inf
        rows = []
        for s in landscape.iter_domain():
            f = landscape.fitness(s)
            rows.append(f"{s.text}\t{_FLOAT(f)}")
            if f > best_fit:
                best_seq, best_fit = s, f
        tsv_path = out_prefix.with_suffix(".tsv")
        header = (f"# NK landscape N={n} K={k} V={alphabet_size} seed={seed}\n"
                  f"# alphabet {landscape.alphabet.symbols}\n"
                  f"# optimum {best_seq.text} {_FLOAT(best_fit)}\n")
        tsv_path.write_text(header + "\n".join(rows) + "\n", encoding="utf-8")
        written.append(tsv_path)
    return written
