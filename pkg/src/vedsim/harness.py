"""Experiment runner: YAML configuration, seeded replicas, CSV output and sweeps."""
from __future__ import annotations

import csv
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence

import numpy as np
import yaml

from .baselines import StaticPolicy, optimal_upper_bound, schedule_v2i_only
from .channel import ChannelConfig
from .comm import ComputeModel, LinkBudgetParams, Mode, compute_cost, dbm_per_hz_to_watts
from .errors import ConfigurationError
from .flsim import ModelState, build_problem, descent_bound, gap_bound, training_round
from .scenario import build_network, classify_round, estimate_round_slots, populate
from .veds import OpvProfile, SovProfile, VedsParams, run_round, solve_slot

log = logging.getLogger(__name__)

SCHEMA = "vedsim/1"
STREAMS = ("population", "mobility", "channel", "participation", "sgd", "flproblem")
SCHEDULERS = ("veds", "v2i", "sa")
VIOLATION_TOL = 0.05


@dataclass
class ScenarioBlock:
    grid_rows: int = 3
    grid_cols: int = 3
    block_length: float = 250.0     # m
    rsu_radius: float = 300.0       # m
    n_vehicles: int = 40
    speed: float = 10.0             # m/s
    speed_jitter: float = 0.0
    participation_prob: float = 0.5


@dataclass
class CommBlock:
    bandwidth: float = 20e6         # Hz
    noise_psd_dbm: float = -174.0   # dBm/Hz
    slot_length: float = 0.02       # s
    model_bits: float = 3e8
    p_max: float = 0.3              # W
    budget_range: tuple = (0.05, 0.1)
    energy_coeff: float = 1e-28
    flops_per_sample: float = 5e6
    batch_size: int = 32
    clock_range: tuple = (0.5e9, 1.0e9)


@dataclass
class VedsBlock:
    V: float = 0.2
    alpha: float = 2.0
    energy_unit: float = 0.1        # J


@dataclass
class FlBlock:
    dimension: int = 16
    mu: float = 0.2
    L: float = 1.0
    G: float = 1.0
    eta: float = 0.1
    batch_size: int = 32
    rounds: int = 1
    spread: float = 0.5


@dataclass
class RunBlock:
    seeds: int = 1
    first_seed: int = 0
    scheduler: str = "veds"
    out_dir: str = "results"
    jobs: int = 1
    slot_trace: bool = False


@dataclass
class ExperimentConfig:
    scenario: ScenarioBlock = field(default_factory=ScenarioBlock)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    comm: CommBlock = field(default_factory=CommBlock)
    veds: VedsBlock = field(default_factory=VedsBlock)
    flsim: FlBlock = field(default_factory=FlBlock)
    run: RunBlock = field(default_factory=RunBlock)

    def __post_init__(self):
        if self.run.scheduler not in SCHEDULERS:
            raise ConfigurationError(f"unknown scheduler {self.run.scheduler!r}; choose from {SCHEDULERS}")
        if self.flsim.rounds < 0 or self.run.seeds < 0 or self.run.jobs < 1:
            raise ConfigurationError("rounds and seeds must be >= 0 and jobs >= 1")

    @property
    def link(self) -> LinkBudgetParams:
        c = self.comm
        return LinkBudgetParams(c.bandwidth, dbm_per_hz_to_watts(c.noise_psd_dbm), c.slot_length)

    @property
    def compute(self) -> ComputeModel:
        c = self.comm
        return ComputeModel(c.flops_per_sample, c.batch_size, c.energy_coeff)

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "ExperimentConfig":
        return _build(cls, data or {})


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _section(cls, data):
    if not isinstance(data, dict):
        raise ConfigurationError(f"section {cls.__name__} must be a mapping")
    defaults = cls()
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigurationError(f"unknown keys in {cls.__name__}: {sorted(unknown)}")
    kw = {}
    for name, value in data.items():
        d = getattr(defaults, name)
        if isinstance(d, tuple):
            value = tuple(value)
        elif isinstance(d, float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kw[name] = value
    return cls(**kw)


SECTIONS = {"scenario": ScenarioBlock, "channel": ChannelConfig, "comm": CommBlock,
            "veds": VedsBlock, "flsim": FlBlock, "run": RunBlock}


def _build(cls, data):
    if not isinstance(data, dict):
        raise ConfigurationError("configuration must be a mapping of sections")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
    return cls(**{k: _section(SECTIONS[k], v or {}) for k, v in data.items()})


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return ExperimentConfig.from_dict(yaml.safe_load(fh))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def override(cfg: ExperimentConfig, section: str, key: str, value) -> ExperimentConfig:
    d = cfg.to_dict()
    if section not in d or key not in d[section]:
        raise ConfigurationError(f"no config field {section}.{key}")
    d[section][key] = value
    return ExperimentConfig.from_dict(d)


def rng_streams(seed: int, names: Sequence[str] = STREAMS) -> dict:
    """Independent generators per concern; adding a stream never shifts the others."""
    return {n: np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(n.encode())]))
            for n in names}


def _policy(name: str):
    if name == "veds":
        return solve_slot
    if name == "v2i":
        return schedule_v2i_only
    return StaticPolicy()


ROUND_COLUMNS = (
    ("schema", ""), ("seed", ""), ("round", ""), ("scheduler", ""), ("n_sov", ""), ("n_opv", ""),
    ("slots", ""), ("slot_length", "s"), ("round_time", "s"), ("elapsed_time", "s"),
    ("successes", ""), ("optimal_upper", ""), ("total_energy", "J"), ("sov_comm_energy", "J"),
    ("opv_energy", "J"), ("compute_energy", "J"), ("max_budget_ratio", ""), ("budget_violations", ""),
    ("mean_final_q_sov", "J"), ("mean_final_q_opv", "J"), ("cot_slots", ""), ("idle_slots", ""),
    ("loss_gap", ""), ("descent_bound", ""), ("gap_bound", ""),
)
VEHICLE_COLUMNS = (
    ("schema", ""), ("seed", ""), ("round", ""), ("vehicle", ""), ("role", ""), ("budget", "J"),
    ("comm_energy", "J"), ("compute_energy", "J"), ("budget_ratio", ""), ("final_queue", "J"),
    ("delivered", "bit"), ("success", ""),
)
SLOT_COLUMNS = (
    ("schema", ""), ("seed", ""), ("round", ""), ("slot", ""), ("sov", ""), ("mode", ""),
    ("relays", ""), ("sov_power", "W"), ("relay_powers", "W"), ("bits", "bit"), ("objective", ""),
)


def header(columns) -> list:
    return [f"{n} [{u}]" if u else n for n, u in columns]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header(columns))
        for r in rows:
            w.writerow([_fmt(r[n]) for n, _ in columns])


@dataclass
class SeedResult:
    seed: int
    rounds: list
    vehicles: list
    slots: list


def profiles(state, sovs, opvs, compute: ComputeModel):
    sp = []
    for m in sovs:
        v = state.by_id(m)
        t_cp, e_cp = compute_cost(compute, v.clock_frequency)
        sp.append(SovProfile(m, v.energy_budget, v.p_max, t_cp, e_cp))
    op = [OpvProfile(n, state.by_id(n).energy_budget, state.by_id(n).p_max) for n in opvs]
    return sp, op


def run_seed(cfg: ExperimentConfig, seed: int, slot_trace: bool = False) -> SeedResult:
    """All rounds of one replica; deterministic in (cfg, seed)."""
    sc, cm, fl = cfg.scenario, cfg.comm, cfg.flsim
    rngs = rng_streams(seed)
    net = build_network(sc.grid_rows, sc.grid_cols, sc.block_length, sc.rsu_radius)
    state = populate(net, sc.n_vehicles, sc.speed, rngs["population"], speed_jitter=sc.speed_jitter,
                     budget_range=cm.budget_range, p_max=cm.p_max, clock_range=cm.clock_range)
    link, compute = cfg.link, cfg.compute
    T = estimate_round_slots(net, sc.speed, link.slot_length)
    problem = build_problem([v.id for v in state.vehicles] or [0], rngs["flproblem"], fl.dimension,
                            fl.mu, fl.L, fl.G, fl.batch_size,
                            {v.id: v.dataset_size for v in state.vehicles} or None, fl.spread)
    model = ModelState(np.zeros(fl.dimension))
    f_star = problem.optimal_loss()
    gap0 = problem.loss(model.weights) - f_star
    history = []
    rounds, vehicles, slots = [], [], []
    elapsed = 0.0
    for k in range(1, fl.rounds + 1):
        state, sovs, opvs = classify_round(state, sc.participation_prob, rngs["participation"])
        sp, op = profiles(state, sovs, opvs, compute)
        params = VedsParams(V=cfg.veds.V, alpha=cfg.veds.alpha, Q=cm.model_bits, T_k=T,
                            energy_unit=cfg.veds.energy_unit, allow_cot=cfg.run.scheduler != "v2i", link=link)
        trace, state = run_round(state, sp, op, params, cfg.channel, rngs, _policy(cfg.run.scheduler))
        delivered = trace.bits.sum(axis=0)
        ok = [m for m, z in zip(trace.sov_ids, delivered) if z >= params.Q]
        model, rec = training_round(model, ok, problem, fl.eta, fl.batch_size, rngs["sgd"])
        history.append(rec)
        elapsed += T * link.slot_length
        ratio = trace.budget_ratio()
        e_cp = trace.e_cp if len(sp) else np.zeros(0)
        rounds.append(dict(
            schema=SCHEMA, seed=seed, round=k, scheduler=cfg.run.scheduler, n_sov=len(sovs), n_opv=len(opvs),
            slots=T, slot_length=link.slot_length, round_time=T * link.slot_length, elapsed_time=elapsed,
            successes=len(ok), optimal_upper=optimal_upper_bound(sovs, trace.ever_covered),
            total_energy=trace.total_energy() + float(np.sum(e_cp)),
            sov_comm_energy=float(trace.sov_energy.sum()), opv_energy=float(trace.opv_energy.sum()),
            compute_energy=float(np.sum(e_cp)),
            max_budget_ratio=float(ratio.max()) if ratio.size else 0.0,
            budget_violations=int(np.sum(ratio > 1 + VIOLATION_TOL)),
            mean_final_q_sov=float(trace.q_sov[-1].mean()) if len(sovs) else 0.0,
            mean_final_q_opv=float(trace.q_opv[-1].mean()) if len(opvs) else 0.0,
            cot_slots=sum(1 for d in trace.decisions if not d.idle and d.mode == Mode.COT),
            idle_slots=sum(1 for d in trace.decisions if d.idle),
            loss_gap=problem.loss(model.weights) - f_star, descent_bound=descent_bound(rec, problem),
            gap_bound=gap_bound(history, problem, gap0),
        ))
        comm = np.concatenate([trace.sov_energy.sum(axis=0), trace.opv_energy.sum(axis=0)])
        cp = np.concatenate([e_cp, np.zeros(len(opvs))])
        budget = np.concatenate([trace.sov_budget, trace.opv_budget])
        qf = np.concatenate([trace.q_sov[-1], trace.q_opv[-1]])
        got = np.concatenate([delivered, np.zeros(len(opvs))])
        for i, vid in enumerate(trace.sov_ids + trace.opv_ids):
            is_sov = i < len(sovs)
            vehicles.append(dict(
                schema=SCHEMA, seed=seed, round=k, vehicle=vid, role="SOV" if is_sov else "OPV",
                budget=budget[i], comm_energy=comm[i], compute_energy=cp[i], budget_ratio=ratio[i],
                final_queue=qf[i], delivered=got[i], success=bool(is_sov and got[i] >= params.Q)))
        if slot_trace:
            sidx = {m: i for i, m in enumerate(trace.sov_ids)}
            for t, d in enumerate(trace.decisions, start=1):
                m = d.scheduled_sov
                slots.append(dict(
                    schema=SCHEMA, seed=seed, round=k, slot=t, sov="" if d.idle else m,
                    mode="IDLE" if d.idle else d.mode.value, relays=";".join(str(n) for n in d.relays),
                    sov_power=0.0 if d.idle else float(d.powers.get(m, 0.0)),
                    relay_powers=";".join(repr(float(d.powers.get(n, 0.0))) for n in d.relays),
                    bits=0.0 if d.idle else float(trace.bits[t - 1, sidx[m]]),
                    objective=float(trace.objective[t - 1])))
    return SeedResult(seed, rounds, vehicles, slots)


def _worker(args):
    data, seed, slot_trace = args
    return run_seed(ExperimentConfig.from_dict(data), seed, slot_trace)


def run_many(cfg: ExperimentConfig, seeds: Sequence[int], jobs: int = 1, slot_trace: bool = False) -> list:
    """Replicas for every seed, sorted by seed whatever the execution order."""
    seeds = sorted(int(s) for s in seeds)
    if jobs <= 1 or len(seeds) <= 1:
        results = [run_seed(cfg, s, slot_trace) for s in seeds]
    else:
        data = cfg.to_dict()
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_worker, [(data, s, slot_trace) for s in seeds]))
    return sorted(results, key=lambda r: r.seed)


def write_results(results, out_dir, slot_trace: bool = False, prefix: str = "") -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {"rounds": os.path.join(out_dir, prefix + "rounds.csv"),
             "vehicles": os.path.join(out_dir, prefix + "vehicles.csv")}
    write_csv(paths["rounds"], ROUND_COLUMNS, [r for res in results for r in res.rounds])
    write_csv(paths["vehicles"], VEHICLE_COLUMNS, [r for res in results for r in res.vehicles])
    if slot_trace:
        paths["slots"] = os.path.join(out_dir, prefix + "slots.csv")
        write_csv(paths["slots"], SLOT_COLUMNS, [r for res in results for r in res.slots])
    return paths


def run(cfg: ExperimentConfig, out_dir: Optional[str] = None, seeds: Optional[Sequence[int]] = None,
        jobs: Optional[int] = None, slot_trace: Optional[bool] = None) -> dict:
    """Run the configured replicas and write the CSVs plus the effective config."""
    out_dir = cfg.run.out_dir if out_dir is None else out_dir
    seeds = range(cfg.run.first_seed, cfg.run.first_seed + cfg.run.seeds) if seeds is None else seeds
    jobs = cfg.run.jobs if jobs is None else jobs
    slot_trace = cfg.run.slot_trace if slot_trace is None else slot_trace
    results = run_many(cfg, seeds, jobs, slot_trace)
    paths = write_results(results, out_dir, slot_trace)
    with open(os.path.join(out_dir, "config.yaml"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    return paths


SWEEP_AXES = {"v": ("scenario", "speed"), "alpha": ("veds", "alpha"), "V": ("veds", "V")}
SWEEP_COLUMNS = (
    ("schema", ""), ("axis", ""), ("value", ""), ("seeds", ""), ("mean_successes", ""),
    ("mean_optimal_upper", ""), ("mean_total_energy", "J"), ("violating_seed_share", ""),
)


def summarize(results) -> dict:
    rows = [r for res in results for r in res.rounds]
    if not rows:
        return dict(mean_successes=float("nan"), mean_optimal_upper=float("nan"),
                    mean_total_energy=float("nan"), violating_seed_share=float("nan"))
    bad = {res.seed for res in results for r in res.rounds if r["budget_violations"] > 0}
    return dict(
        mean_successes=float(np.mean([r["successes"] for r in rows])),
        mean_optimal_upper=float(np.mean([r["optimal_upper"] for r in rows])),
        mean_total_energy=float(np.mean([r["total_energy"] for r in rows])),
        violating_seed_share=len(bad) / len(results),
    )


def sweep(cfg: ExperimentConfig, axis: str, values: Sequence[float], seeds: Sequence[int],
          out_dir: Optional[str] = None, jobs: int = 1) -> list:
    """One replica set per axis value; returns (and optionally writes) the summary rows."""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"axis must be one of {sorted(SWEEP_AXES)}")
    section, key = SWEEP_AXES[axis]
    summary, per_run = [], []
    for value in values:
        c = override(cfg, section, key, float(value))
        results = run_many(c, seeds, jobs)
        summary.append(dict(schema=SCHEMA, axis=axis, value=float(value), seeds=len(results), **summarize(results)))
        per_run.append((float(value), results))
        log.info("sweep %s=%s: %s", axis, value, summary[-1])
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "sweep.csv"), SWEEP_COLUMNS, summary)
        cols = (("axis_value", ""),) + ROUND_COLUMNS
        rows = [dict(r, axis_value=v) for v, res in per_run for s in res for r in s.rounds]
        write_csv(os.path.join(out_dir, "sweep_rounds.csv"), cols, rows)
    return summary
