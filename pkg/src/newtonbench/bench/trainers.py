"""Training loops for the ranking and shortest-path benchmarks.

Three modes share every loop:
  baseline    plain loss gradients into the backward pass,
  nl_hessian  regression toward curvature-corrected targets (the batch
              Hessian route; finite differences or smoothing estimates
              stand in where no analytic Hessian exists),
  nl_fisher   gradient whitening by the empirical Fisher, applied in place
              of the output gradients; equivalent to Fisher targets.

Every run is a pure function of its config: data, model init, batch order,
and smoothing draws all derive from cfg.seed through separate seed streams.
"""

import time
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit

from ..errors import ConfigError
from .. import diffsort, net, newton, shortest_path, smoothing
from . import datagen
from .report import TrainReport

RANK_METHODS = ("neuralsort", "softsort", "dsn_logistic", "dsn_cauchy")
PATH_METHODS = ("ss_loss", "ss_algorithm", "fy")
MODES = ("baseline", "nl_hessian", "nl_fisher")

COST_FLOOR = 0.1  # matches datagen.cost_readout so scales line up

# Regularization presets, keyed by (mode, method); the rank task switches
# tables at length n > 7.  Chosen once from a coarse sweep at desk scale.
LAMBDA_PRESETS = {
    ("rank", "small"): {
        ("nl_hessian", "neuralsort"): 0.01,
        ("nl_hessian", "softsort"): 10.0,
        ("nl_hessian", "dsn_logistic"): 0.1,
        ("nl_hessian", "dsn_cauchy"): 0.1,
        ("nl_fisher", "neuralsort"): 0.1,
        ("nl_fisher", "softsort"): 10.0,
        ("nl_fisher", "dsn_logistic"): 0.1,
        ("nl_fisher", "dsn_cauchy"): 0.1,
    },
    ("rank", "large"): {
        ("nl_hessian", "neuralsort"): 0.01,
        ("nl_hessian", "softsort"): 1.0,
        ("nl_hessian", "dsn_logistic"): 0.1,
        ("nl_hessian", "dsn_cauchy"): 0.1,
        ("nl_fisher", "neuralsort"): 100.0,
        ("nl_fisher", "softsort"): 100.0,
        ("nl_fisher", "dsn_logistic"): 0.1,
        ("nl_fisher", "dsn_cauchy"): 0.1,
    },
    ("path", "any"): {
        ("nl_hessian", "ss_loss"): 1000.0,
        ("nl_hessian", "fy"): 1000.0,
        ("nl_fisher", "ss_loss"): 0.1,
        ("nl_fisher", "ss_algorithm"): 1000.0,
        ("nl_fisher", "fy"): 1000.0,
    },
}


def lambda_preset(task, method, mode, n=5):
    if mode == "baseline":
        return 0.0
    if task == "rank":
        table = LAMBDA_PRESETS[("rank", "small" if n <= 7 else "large")]
    else:
        table = LAMBDA_PRESETS[("path", "any")]
    key = (mode, method)
    if key not in table:
        raise ConfigError(f"no lambda preset for {task}/{method}/{mode}")
    return table[key]


@dataclass
class ExperimentConfig:
    task: str
    method: str
    mode: str = "baseline"
    lam: float = None          # None resolves to the preset for (method, mode)
    seed: int = 0
    steps: int = 500
    batch: int = 20
    n: int = 5                 # rank: set length
    grid: int = 4              # path: grid side
    sigma: float = 0.1
    samples: int = 10
    tau: float = None          # None keeps the per-method default
    beta: float = None
    feature_dim: int = 6
    train_count: int = 256
    eval_count: int = 128
    hidden: int = 32
    lr: float = 0.003
    optimizer: str = "adam"
    eval_every: int = None     # None resolves to max(1, steps // 20)
    data_path: str = None

    def __post_init__(self):
        if self.task not in ("rank", "path"):
            raise ConfigError(f"unknown task {self.task!r}")
        methods = RANK_METHODS if self.task == "rank" else PATH_METHODS
        if self.method not in methods:
            raise ConfigError(
                f"method {self.method!r} not valid for task {self.task!r}; "
                f"choose from {methods}"
            )
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.method == "ss_algorithm" and self.mode == "nl_hessian":
            raise ConfigError(
                "nl_hessian is unavailable for ss_algorithm: the Hessian of "
                "the smoothed solver output is intractable; use baseline or "
                "nl_fisher"
            )
        for name in ("steps", "batch", "train_count", "eval_count", "hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.task == "rank" and self.n < 2:
            raise ConfigError(f"ranking length must be >= 2, got {self.n}")
        if self.task == "path" and self.grid < 2:
            raise ConfigError(f"grid side must be >= 2, got {self.grid}")
        if self.sigma <= 0 or self.samples < 1:
            raise ConfigError("sigma must be > 0 and samples >= 1")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.batch > self.train_count:
            raise ConfigError("batch cannot exceed train_count")
        if self.lam is None:
            self.lam = lambda_preset(self.task, self.method, self.mode, self.n)
        if self.mode != "baseline" and self.lam <= 0:
            raise ConfigError("Newton modes need lam > 0")
        if self.eval_every is None:
            self.eval_every = max(1, self.steps // 20)
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")


def config_echo(cfg):
    """Plain-dict echo of the experiment knobs for report embedding."""
    echo = asdict(cfg)
    if echo["data_path"] is None:
        del echo["data_path"]
    return echo


def _sub_seed(*parts):
    """Stable derived integer seed for an independent RNG stream."""
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


def _split(records, eval_count):
    # loaded datasets hold out a third, capped at the configured eval size
    k = min(eval_count, max(1, len(records) // 3))
    return records[:-k], records[-k:]


# ---------------------------------------------------------------- rank task


def _rank_data(cfg):
    if cfg.data_path:
        ds = datagen.load_dataset(cfg.data_path)
        if not isinstance(ds, datagen.RankDataset):
            raise ConfigError(f"{cfg.data_path} is not a ranking dataset")
        train, heldout = _split(ds.records, cfg.eval_count)
        if len(train) < cfg.batch:
            raise ConfigError("dataset too small for the requested batch size")
        return ds, train, heldout
    ds = datagen.gen_ranking_data(
        cfg.seed, cfg.n, cfg.train_count + cfg.eval_count, cfg.feature_dim
    )
    return ds, ds.records[: cfg.train_count], ds.records[cfg.train_count :]


def _rank_model(cfg, feature_dim):
    return net.Mlp.init(
        [feature_dim, cfg.hidden, 1],
        ["tanh", "identity"],
        np.random.SeedSequence((cfg.seed, 201)),
    )


def _rank_forward(model, records):
    feats = np.concatenate([r.features for r in records], axis=0)
    scores, tape = net.forward(model, feats)
    return scores.reshape(len(records), -1), tape


def rank_metrics(score_rows, records):
    """Exact-match and element-rank percentages against stored rankings."""
    exact = 0
    elements = 0
    total_elements = 0
    for row, rec in zip(score_rows, records):
        pred = diffsort.hard_rank(row).order
        truth = tuple(rec.ranking)
        exact += int(pred == truth)
        elements += sum(int(a == b) for a, b in zip(pred, truth))
        total_elements += len(truth)
    return {
        "exact_match": 100.0 * exact / len(records),
        "element_rank": 100.0 * elements / total_elements,
    }


def _rank_probe(records, scfg):
    truths = [diffsort.truth_from_order(r.ranking) for r in records]

    def value(y):
        return float(
            sum(
                diffsort.ranking_loss(row, t, scfg)[0]
                for row, t in zip(y, truths)
            )
        )

    def grad(y):
        return np.stack(
            [diffsort.ranking_loss(row, t, scfg)[1] for row, t in zip(y, truths)]
        )

    return newton.LossProbe(value=value, grad=grad)


def _output_rows(cfg, y, probe, hessian=None):
    """Mode dispatch: what goes into the backward pass for this batch."""
    if cfg.mode == "baseline":
        return probe.grad(y)
    if cfg.mode == "nl_hessian":
        if hessian is None:
            target = newton.newton_target_hessian(y, probe, cfg.lam)
        else:
            target = newton.newton_target_from_parts(y, probe.grad(y), hessian, cfg.lam)
        return newton.newton_loss_eval(y, target)[1]
    rows = probe.grad(y)
    n = y.shape[0]
    return n * newton.inject_fisher(rows / n, cfg.lam)


def run_ranking_experiment(cfg):
    """Train the per-element scorer under cfg and record ranking metrics."""
    if cfg.task != "rank":
        raise ConfigError("run_ranking_experiment wants task='rank'")
    started = time.perf_counter()
    ds, train, heldout = _rank_data(cfg)
    model = _rank_model(cfg, ds.feature_dim)
    opt = net.OptimizerState.create(cfg.optimizer, cfg.lr, model)
    batch_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 202)))
    scfg = diffsort.SortConfig(method=cfg.method, tau=cfg.tau, beta=cfg.beta)

    curve = []

    def evaluate(step):
        rows, _ = _rank_forward(model, heldout)
        point = {"step": step}
        point.update(rank_metrics(rows, heldout))
        curve.append(point)

    evaluate(0)
    for step in range(1, cfg.steps + 1):
        idx = batch_rng.choice(len(train), size=cfg.batch, replace=False)
        batch = [train[i] for i in idx]
        y, tape = _rank_forward(model, batch)
        probe = _rank_probe(batch, scfg)
        rows = _output_rows(cfg, y, probe)
        grads = net.backward(model, tape, rows.reshape(-1, 1))
        net.optimizer_step(opt, model, grads)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            evaluate(step)

    return TrainReport(
        config=config_echo(cfg),
        seed=cfg.seed,
        curve=curve,
        final={k: v for k, v in curve[-1].items() if k != "step"},
        wall_clock=time.perf_counter() - started,
    )


# ---------------------------------------------------------------- path task


def _path_data(cfg):
    if cfg.data_path:
        ds = datagen.load_dataset(cfg.data_path)
        if not isinstance(ds, datagen.GridDataset):
            raise ConfigError(f"{cfg.data_path} is not a grid dataset")
        train, heldout = _split(ds.records, cfg.eval_count)
        if len(train) < cfg.batch:
            raise ConfigError("dataset too small for the requested batch size")
        return ds, train, heldout
    ds = datagen.gen_grid_data(
        cfg.seed, cfg.grid, cfg.train_count + cfg.eval_count, cfg.feature_dim
    )
    return ds, ds.records[: cfg.train_count], ds.records[cfg.train_count :]


def costs_from_raw(raw):
    """Positive cell costs from unconstrained model outputs."""
    return np.logaddexp(0.0, raw) + COST_FLOOR


def _mask_of_raw(raw, size):
    inst = shortest_path.GridInstance(
        height=size, width=size, node_costs=costs_from_raw(raw).reshape(size, size)
    )
    return shortest_path.dijkstra_grid(inst).mask.astype(np.float64).ravel()


def path_metrics(raw_rows, records, size):
    """Perfect-match percentage of predicted against stored path masks."""
    hits = 0
    for raw, rec in zip(raw_rows, records):
        pred = _mask_of_raw(raw, size).reshape(size, size)
        hits += int(np.array_equal(pred, np.asarray(rec.mask, dtype=np.float64)))
    return {"perfect_match": 100.0 * hits / len(records)}


def _path_rows_ss_loss(cfg, y, masks, step):
    """Smoothed-loss gradients (and curvature for nl_hessian)."""
    n, m = y.shape
    rows = np.empty_like(y)
    hess = np.zeros((m, m)) if cfg.mode == "nl_hessian" else None
    size = cfg.grid
    for j in range(n):
        q = masks[j]

        def hamming(u, _q=q):
            return float(np.sum(np.abs(_mask_of_raw(u, size) - _q)))

        scfg = smoothing.SmoothingConfig(
            sigma=cfg.sigma,
            samples=cfg.samples,
            seed=_sub_seed(cfg.seed, 301, step, j),
        )
        rows[j] = smoothing.smooth_grad(hamming, y[j], scfg)
        if hess is not None:
            hess += smoothing.smooth_hessian(hamming, y[j], scfg)
    if hess is not None:
        hess /= n
    return rows, hess


def _path_rows_ss_algorithm(cfg, y, masks, step):
    """Chain the analytic square loss through the smoothed solver output."""
    n, m = y.shape
    rows = np.empty_like(y)
    size = cfg.grid
    for j in range(n):
        solver = smoothing.BlackBox(
            fn=lambda u, _s=size: _mask_of_raw(u, _s), out_dim=m
        )
        scfg = smoothing.SmoothingConfig(
            sigma=cfg.sigma,
            samples=cfg.samples,
            seed=_sub_seed(cfg.seed, 302, step, j),
        )
        jac = smoothing.smooth_jacobian(solver, y[j], scfg)
        # same Philox key as the jacobian call, so both see one draw set
        draws = smoothing._draws(scfg, m)
        mean_mask = np.mean([solver(y[j] + e) for e in draws], axis=0)
        rows[j] = jac.T @ (mean_mask - masks[j])
    return rows, None


def _path_rows_fy(cfg, y, masks, step):
    """Perturbed-argmax loss gradients, chained through the cost map."""
    n, m = y.shape
    size = cfg.grid
    rows = np.empty_like(y)
    hess = np.zeros((m, m)) if cfg.mode == "nl_hessian" else None

    def solver(s):
        return shortest_path.indicator_argmax(s, size, size)

    for j in range(n):
        scores = -costs_from_raw(y[j])
        scfg = smoothing.SmoothingConfig(
            sigma=cfg.sigma,
            samples=cfg.samples,
            seed=_sub_seed(cfg.seed, 303, step, j),
        )
        g_scores = smoothing.fy_loss_grad(scores, masks[j], solver, scfg)
        slope = -expit(y[j])  # d scores / d raw
        rows[j] = g_scores * slope
        if hess is not None:
            jac = smoothing.smooth_jacobian(
                smoothing.BlackBox(fn=solver, out_dim=m), scores, scfg
            )
            curv = expit(y[j]) * (1.0 - expit(y[j]))  # d^2 scores / d raw^2
            h_j = (slope[:, None] * jac) * slope[None, :] - np.diag(g_scores * curv)
            hess += 0.5 * (h_j + h_j.T)
    if hess is not None:
        hess /= n
    return rows, hess


def run_path_experiment(cfg):
    """Train the per-cell cost predictor and record perfect-match rates."""
    if cfg.task != "path":
        raise ConfigError("run_path_experiment wants task='path'")
    started = time.perf_counter()
    ds, train, heldout = _path_data(cfg)
    size = ds.size
    model = net.Mlp.init(
        [ds.feature_dim, cfg.hidden, 1],
        ["tanh", "identity"],
        np.random.SeedSequence((cfg.seed, 201)),
    )
    opt = net.OptimizerState.create(cfg.optimizer, cfg.lr, model)
    batch_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 202)))
    row_fn = {
        "ss_loss": _path_rows_ss_loss,
        "ss_algorithm": _path_rows_ss_algorithm,
        "fy": _path_rows_fy,
    }[cfg.method]

    def forward_rows(records):
        feats = np.concatenate([r.features for r in records], axis=0)
        out, tape = net.forward(model, feats)
        return out.reshape(len(records), -1), tape

    curve = []

    def evaluate(step):
        rows, _ = forward_rows(heldout)
        point = {"step": step}
        point.update(path_metrics(rows, heldout, size))
        curve.append(point)

    evaluate(0)
    for step in range(1, cfg.steps + 1):
        idx = batch_rng.choice(len(train), size=cfg.batch, replace=False)
        batch = [train[i] for i in idx]
        y, tape = forward_rows(batch)
        masks = [np.asarray(r.mask, dtype=np.float64).ravel() for r in batch]
        grad_rows, hessian = row_fn(cfg, y, masks, step)
        probe = newton.LossProbe(value=lambda v: 0.0, grad=lambda v: grad_rows)
        rows = _output_rows(cfg, y, probe, hessian=hessian)
        grads = net.backward(model, tape, rows.reshape(-1, 1))
        net.optimizer_step(opt, model, grads)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            evaluate(step)

    return TrainReport(
        config=config_echo(cfg),
        seed=cfg.seed,
        curve=curve,
        final={k: v for k, v in curve[-1].items() if k != "step"},
        wall_clock=time.perf_counter() - started,
    )


def run_experiment(cfg):
    if cfg.task == "rank":
        return run_ranking_experiment(cfg)
    return run_path_experiment(cfg)


def ablate_lambda(cfg, lam_grid):
    """One baseline run plus (nl_hessian, nl_fisher) runs per lambda.

    Returns (reports, tsv_columns): reports is the flat list of TrainReports
    in execution order; tsv_columns maps column names to final element-rank
    accuracies aligned with lam_grid.
    """
    lams = [float(l) for l in lam_grid]
    if not lams:
        raise ConfigError("lambda grid must be nonempty")
    if any(l <= 0 for l in lams) or sorted(lams) != lams:
        raise ConfigError("lambda grid must be positive and ascending")
    if cfg.task != "rank":
        raise ConfigError("the lambda ablation runs on the rank task")

    reports = []
    base_cfg = ExperimentConfig(**{**asdict(cfg), "mode": "baseline", "lam": None})
    base_report = run_ranking_experiment(base_cfg)
    reports.append(base_report)
    columns = {"baseline": base_report.final["element_rank"]}
    for mode in ("nl_hessian", "nl_fisher"):
        col = []
        for lam in lams:
            run_cfg = ExperimentConfig(**{**asdict(cfg), "mode": mode, "lam": lam})
            rep = run_ranking_experiment(run_cfg)
            reports.append(rep)
            col.append(rep.final["element_rank"])
        columns[mode] = col
    return reports, columns
