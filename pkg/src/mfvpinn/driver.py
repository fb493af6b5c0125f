"""Run configuration and the outer adaptive loop with artifact emission."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .adapt import RefinementConfig, RefinementRecord, refine, residual_scores
from .assembly import DEFAULT_LAMBDA_REG, VariationalLoss, build_tensors
from .estimator import DEFAULT_C_H, CoverEstimator
from .geometry import cover_check, initial_covers
from .network import DEFAULT_LAYER_DIMS, MLP, Model, save_checkpoint
from .optim import TrainSchedule, train_generation
from .problems import H1ErrorMeter, get_problem
from .quadrature import SUPPORTED_ORDERS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    problem: str = "poisson_singular"
    strategy: int = 2
    C_M: int = 4
    max_generations: int = 9
    seed: int = 0
    layer_dims: tuple[int, ...] = DEFAULT_LAYER_DIMS
    q: int = 3
    lambda_reg: float = DEFAULT_LAMBDA_REG
    C_h: float = DEFAULT_C_H
    A_ratio: float = 1.25
    level_gap: int = 2
    scale_residual_scores: bool = True
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    h1_ref_level: int = 64
    history_ref_level: int = 32
    backend: str | None = None
    cover_check_grid: int = 0
    write_breakdowns: bool = False
    out: str = "runs/mfvpinn"

    def __post_init__(self):
        if self.max_generations < 1:
            raise ValueError("max_generations must be at least 1")
        if self.q not in SUPPORTED_ORDERS:
            raise ValueError(f"q must be one of {SUPPORTED_ORDERS}")
        if self.lambda_reg < 0 or self.C_h <= 0:
            raise ValueError("lambda_reg must be >= 0 and C_h > 0")
        get_problem(self.problem)
        self.refinement  # validates strategy, C_M, A_ratio

    @property
    def refinement(self) -> RefinementConfig:
        return RefinementConfig(
            strategy=self.strategy,
            C_M=self.C_M,
            A_ratio=self.A_ratio,
            level_gap=self.level_gap,
            scale_residual_scores=self.scale_residual_scores,
            seed=self.seed,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        sched = data.pop("schedule", None) or {}
        if isinstance(sched, dict):
            s_known = {f.name for f in dataclasses.fields(TrainSchedule)}
            bad = set(sched) - s_known
            if bad:
                raise ValueError(f"unknown schedule keys: {sorted(bad)}")
            sched = TrainSchedule(**sched)
        if "layer_dims" in data:
            data["layer_dims"] = tuple(int(d) for d in data["layer_dims"])
        return cls(schedule=sched, **data)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        """YAML (or JSON, which YAML parses) mapping of config fields."""
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if data is not None and not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a mapping")
        return cls.from_dict(data or {})

    def override(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["layer_dims"] = list(self.layer_dims)
        return d


@dataclass
class GenerationResult:
    generation: int
    n_patches: int
    h1_error: float
    es: float
    eta_gamma: np.ndarray
    epochs: int
    stop_reason: str
    cover_ok: bool | None = None


@dataclass
class RunResult:
    config: RunConfig
    generations: list[GenerationResult] = field(default_factory=list)
    history: list = field(default_factory=list)
    refinements: list[RefinementRecord] = field(default_factory=list)
    covers: list = field(default_factory=list)
    params: np.ndarray | None = None
    rate: float = math.nan
    out_dir: Path | None = None

    @property
    def errors(self) -> list[float]:
        return [g.h1_error for g in self.generations]

    @property
    def n_test_functions(self) -> list[int]:
        return [g.n_patches for g in self.generations]


def convergence_rate(n_tests, errors) -> float:
    """Least-squares slope of log(error) against log(number of test functions)."""
    n = np.asarray(n_tests, dtype=float)
    e = np.asarray(errors, dtype=float)
    if len(n) < 2 or np.ptp(np.log(n)) == 0:
        return math.nan
    return float(np.polyfit(np.log(n), np.log(e), 1)[0])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return v


def write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in columns})


def _json_dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1))


def run(config: RunConfig, write: bool = True) -> RunResult:
    """Adaptive loop: train, estimate, measure, emit, refine."""
    problem = get_problem(config.problem)
    out = Path(config.out)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        _json_dump(out / "config.json", config.to_dict())
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    net = MLP(config.layer_dims, config.backend)
    theta = net.init_params(int(seeds[0].generate_state(1)[0]))
    rng = np.random.default_rng(seeds[1])
    model = Model(net, problem.lift)
    refine_cfg = config.refinement
    meter = H1ErrorMeter(problem, config.h1_ref_level)
    history_meter = H1ErrorMeter(problem, config.history_ref_level)
    P0, P1 = initial_covers(problem.domain)
    result = RunResult(config, out_dir=out if write else None)
    tensor_cache, fine_cache = {}, {}
    nn_evals = 0
    cover = P0
    indicator_rows = []

    for m in range(config.max_generations):
        t0 = time.perf_counter()
        try:
            tensors = build_tensors(cover, problem, config.q, tensor_cache)
            loss = VariationalLoss(model, tensors, config.lambda_reg)
            estimator = CoverEstimator(tensors, problem, config.q, config.C_h, fine_cache)

            def indicator(th, estimator=estimator, loss=loss):
                return estimator.evaluate(model, th, loss.residuals(th)).es

            def h1(th):
                return history_meter(model.evaluator(th))

            trained = train_generation(
                m, loss.value_and_grad, theta, config.schedule, indicator, h1, nn_evals, len(cover)
            )
        except Exception as exc:
            raise RuntimeError(f"generation {m} failed: {exc}") from exc
        theta = trained.params
        nn_evals = trained.state.nn_eval_count
        residuals = loss.residuals(theta)
        breakdowns = estimator.evaluate(model, theta, residuals)
        err = meter(model.evaluator(theta))
        ok = cover_check(cover, problem.domain, config.cover_check_grid) if config.cover_check_grid else None
        gen = GenerationResult(
            m, len(cover), float(err), breakdowns.es, breakdowns.eta_gamma, trained.epochs, trained.stop_reason, ok
        )
        result.generations.append(gen)
        result.history.extend(trained.history)
        result.covers.append(cover)
        for k, row in enumerate(trained.history):
            indicator_rows.append(
                {"generation": m, "evaluation_index": k, "nn_eval_count": row.nn_eval_count, "ES": row.ES}
            )
        log.info(
            "generation %d: %d patches, H1 error %.4e, ES %.4e, %d epochs (%s), %.1fs",
            m, len(cover), err, breakdowns.es, trained.epochs, trained.stop_reason, time.perf_counter() - t0,
        )
        if write:
            _json_dump(out / f"patches_gen{m}.json", {"generation": m, "patches": cover.snapshot(breakdowns.eta_gamma)})
            save_checkpoint(out / f"params_gen{m}.bin", theta, config.layer_dims, config.seed)
            if config.write_breakdowns:
                _json_dump(out / f"breakdown_gen{m}.json", [b.to_dict() for b in breakdowns])

        if m + 1 < config.max_generations:
            if m == 0:
                new_ids = [p.id for p in P1 if p.id not in set(P0.ids)]
                record = RefinementRecord(0, config.strategy, [], new_ids, [], 0, 0, len(P1))
                cover = P1
            else:
                if config.strategy == 4:
                    scores = residual_scores(residuals, tensors.gamma, config.scale_residual_scores)
                else:
                    scores = breakdowns.eta_gamma
                cover, record = refine(cover, scores, refine_cfg, rng, problem.domain)
            result.refinements.append(record)

    result.params = theta
    result.rate = convergence_rate(result.n_test_functions, result.errors)
    if write:
        _emit(result, out, indicator_rows)
    return result


def _emit(result: RunResult, out: Path, indicator_rows) -> None:
    write_csv(
        out / "error_decay.csv",
        [{"generation": g.generation, "n_test_functions": g.n_patches, "h1_error": g.h1_error, "ES": g.es}
         for g in result.generations],
        ["generation", "n_test_functions", "h1_error", "ES"],
    )
    write_csv(
        out / "training_history.csv",
        [r.row() for r in result.history],
        ["generation", "epoch", "nn_eval_count", "loss", "ES", "H1_error", "phase"],
    )
    write_csv(out / "indicator_history.csv", indicator_rows, ["generation", "evaluation_index", "nn_eval_count", "ES"])
    write_csv(
        out / "refinement_log.csv",
        [r.row() for r in result.refinements],
        ["generation", "strategy", "marked_ids", "spawned_ids", "removed_ids", "cover_size"],
    )
    cfg = result.config
    save_checkpoint(out / "params_final.bin", result.params, cfg.layer_dims, cfg.seed)
    summary = {
        "problem": cfg.problem,
        "strategy": cfg.strategy,
        "C_M": cfg.C_M,
        "generations": len(result.generations),
        "n_test_functions": result.n_test_functions,
        "h1_errors": result.errors,
        "convergence_rate": result.rate,
        "stop_reasons": [g.stop_reason for g in result.generations],
    }
    _json_dump(out / "summary.json", summary)
