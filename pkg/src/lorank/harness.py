"""Experiments, metrics and machine-readable reports.

Every experiment is a pure function of its inputs that returns an
:class:`ExperimentReport`.  Pass flags come from :func:`evaluate`, which only
looks at the report's metrics and its declared thresholds, so a saved report
can be re-checked without rerunning anything.
"""

import itertools
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import genzoo, pgm
from .errors import LorankError, VanishingDirectionError
from .genzoo import forward, half_masks, jacobian, jacobian_fd, layer_jacobians
from .numkernel import format_real, numerical_rank
from .rpca import PcpConfig, format_solution, parse_solution, pcp
from .subspace import (
    RANK_TOL,
    dumps_basis,
    loads_basis,
    ProjectionSpec,
    RegionMask,
    as_region,
    null_project,
    principal_direction,
    projection_residual,
    region_basis,
    region_gram,
)

OPS = {
    "<=": lambda a, b: a <= b,
    ">=": lambda a, b: a >= b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
    "==": lambda a, b: a == b,
}

# Settings for the region-Gram solves.  The low-rank part of a region Gram is
# confined to the latents that drive the region, which is far more coherent
# than the random low-rank matrices the 1/sqrt(n) default is tuned for.
GRAM_PCP = {"lam": 0.4, "max_iter": 5000}


# -- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class Threshold:
    """``metrics[metric] op bound`` or, with ``ref``, ``op bound * metrics[ref]``."""

    metric: str
    op: str
    bound: float
    ref: str = None

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError("unknown comparison %r" % self.op)

    def check(self, metrics):
        value = metrics[self.metric]
        target = self.bound * metrics[self.ref] if self.ref else self.bound
        if isinstance(value, float) and math.isnan(value):
            return False
        return bool(OPS[self.op](value, target))

    def describe(self):
        rhs = format_real(self.bound) + (" * " + self.ref if self.ref else "")
        return "%s %s %s" % (self.metric, self.op, rhs)

    def as_dict(self):
        out = {"metric": self.metric, "op": self.op, "bound": self.bound}
        if self.ref:
            out["ref"] = self.ref
        return out


@dataclass
class ExperimentReport:
    name: str
    parameters: dict
    metrics: dict
    thresholds: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    # Wall-clock timings; kept out of the serialized report so reruns match.
    timings: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        for t in self.thresholds:
            for key in (t.metric, t.ref):
                if key is not None and key not in self.metrics:
                    raise ValueError("threshold references missing metric %r in %s" % (key, self.name))

    @property
    def passed(self):
        return evaluate(self.metrics, self.thresholds)

    def failures(self):
        return [t.describe() for t in self.thresholds if not t.check(self.metrics)]

    def as_dict(self):
        return {
            "name": self.name,
            "parameters": self.parameters,
            "metrics": self.metrics,
            "thresholds": [t.as_dict() for t in self.thresholds],
            "artifacts": list(self.artifacts),
            "notes": list(self.notes),
            "pass": self.passed,
        }


def evaluate(metrics, thresholds):
    return all(t.check(metrics) for t in thresholds)


def _json(obj):
    if isinstance(obj, bool) or obj is None:
        return {True: "true", False: "false", None: "null"}[obj]
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format_real(x) if math.isfinite(x) else '"%s"' % format_real(x)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ", ".join("%s: %s" % (_json(str(k)), _json(v)) for k, v in items) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_json(v) for v in obj) + "]"
    raise TypeError("cannot serialize %r" % type(obj))


def dumps_report(report):
    """Sorted keys, 17 significant digits; non-finite reals become strings."""
    data = report.as_dict() if isinstance(report, ExperimentReport) else report
    return _json(data) + "\n"


def loads_report(text):
    data = json.loads(text)
    thresholds = [Threshold(t["metric"], t["op"], t["bound"], t.get("ref")) for t in data["thresholds"]]
    metrics = {k: (float(v) if isinstance(v, str) else v) for k, v in data["metrics"].items()}
    return ExperimentReport(data["name"], data["parameters"], metrics, thresholds, data["artifacts"], data.get("notes", []))


# -- metrics -----------------------------------------------------------------


def masked_mse(before, after, exclude):
    """Mean squared difference over the indices NOT in ``exclude``."""
    before = np.asarray(before, dtype=float).reshape(-1)
    after = np.asarray(after, dtype=float).reshape(-1)
    if before.shape != after.shape:
        raise ValueError("outputs differ in length: %d vs %d" % (before.size, after.size))
    keep = np.ones(before.size, dtype=bool)
    keep[as_region(exclude, before.size).array] = False
    if not keep.any():
        raise ValueError("exclusion mask covers every output")
    d = after[keep] - before[keep]
    return float(np.mean(d * d))


def region_mse(before, after, region):
    """Mean squared difference over the indices in ``region``."""
    before = np.asarray(before, dtype=float).reshape(-1)
    after = np.asarray(after, dtype=float).reshape(-1)
    if before.shape != after.shape:
        raise ValueError("outputs differ in length: %d vs %d" % (before.size, after.size))
    d = (after - before)[as_region(region, before.size).array]
    return float(np.mean(d * d))


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Per-pixel absolute change on the generator's image grid."""

    values: np.ndarray

    @classmethod
    def from_outputs(cls, before, after, grid):
        d = np.abs(np.asarray(after, dtype=float) - np.asarray(before, dtype=float))
        if d.size != grid * grid:
            raise ValueError("output length %d is not a %dx%d image" % (d.size, grid, grid))
        return cls(d.reshape(grid, grid))

    @property
    def total(self):
        return float(np.sum(self.values))


def cosine(a, b):
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def _ratio(num, den):
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def gram_config(cfg=None, **overrides):
    """PCP settings for region Grams, from a flat config mapping."""
    cfg = cfg or {}
    lam = cfg.get("pcp_lambda", GRAM_PCP["lam"])
    params = dict(lam=lam, max_iter=int(cfg.get("pcp_max_iter", GRAM_PCP["max_iter"])))
    params.update(overrides)
    return PcpConfig(**params)


# -- experiments -------------------------------------------------------------


def rpca_recovery(n_instances=20, size=200, rank=10, fraction=0.05, magnitude=10.0, seed=0, config=None):
    """Planted low-rank plus sparse recovery battery."""
    config = config or PcpConfig(lam=1.0 / math.sqrt(size))
    errors, residuals, iterations, seconds, objective_gap = [], [], [], [], []
    unconverged = 0
    for k in range(n_instances):
        rng = np.random.default_rng([seed, k])
        a = rng.standard_normal((size, rank))
        b = rng.standard_normal((size, rank))
        l0 = a @ b.T
        s0 = np.zeros((size, size))
        idx = rng.choice(size * size, int(round(fraction * size * size)), replace=False)
        s0.flat[idx] = magnitude * rng.choice([-1.0, 1.0], idx.size)
        start = time.perf_counter()
        sol = pcp(l0 + s0, config)
        seconds.append(time.perf_counter() - start)
        errors.append(np.linalg.norm(sol.l - l0) / np.linalg.norm(l0))
        residuals.append(sol.final_residual)
        iterations.append(sol.iterations)
        unconverged += not sol.converged
        lam = sol.lam
        planted = np.sum(np.linalg.svd(l0, compute_uv=False)) + lam * np.abs(s0).sum()
        found = np.sum(np.linalg.svd(sol.l, compute_uv=False)) + lam * np.abs(sol.s).sum()
        objective_gap.append((found - planted) / planted)

    # A symmetric instance checks that the solve keeps Gram matrices symmetric.
    rng = np.random.default_rng([seed, n_instances])
    a = rng.standard_normal((size, rank))
    sym = a @ a.T
    mask = np.triu(rng.random(sym.shape) < fraction)
    spikes = np.where(mask, magnitude * rng.choice([-1.0, 1.0], sym.shape), 0.0)
    sym = sym + spikes + np.triu(spikes, 1).T
    sol = pcp(sym, PcpConfig(lam=1.0 / math.sqrt(sym.shape[0])))
    asym = np.linalg.norm(sol.l - sol.l.T) / max(np.linalg.norm(sol.l), 1e-300)

    metrics = {
        "max_recovery_error": float(max(errors)),
        "max_final_residual": float(max(residuals)),
        "max_iterations": int(max(iterations)),
        "unconverged": int(unconverged),
        "max_objective_gap": float(max(objective_gap)),
        "symmetric_converged": int(sol.converged),
        "symmetric_asymmetry": float(asym),
    }
    params = {"instances": n_instances, "size": size, "rank": rank, "fraction": fraction, "magnitude": magnitude, "seed": seed, "lam": config.lam}
    thresholds = [
        Threshold("max_recovery_error", "<=", 1e-5),
        Threshold("unconverged", "==", 0),
        Threshold("max_final_residual", "<=", config.rel_tol),
        Threshold("symmetric_converged", "==", 1),
        Threshold("symmetric_asymmetry", "<=", 1e-8),
    ]
    return ExperimentReport("rpca", params, metrics, thresholds, timings=seconds)


def jacobian_check(zoo, n_z=10, step=1e-4, seed=0):
    worst = {}
    for name, g in sorted(zoo.items()):
        dev = 0.0
        for k in range(n_z):
            z = latent(g, seed, k)
            dev = max(dev, float(np.max(np.abs(jacobian(g, z) - jacobian_fd(g, z, step)))))
        worst[name] = dev
    metrics = {"max_abs_deviation": max(worst.values())}
    metrics.update({"deviation_" + k: v for k, v in worst.items()})
    return ExperimentReport(
        "jacobian",
        {"generators": sorted(zoo), "n_z": n_z, "step": step, "seed": seed},
        metrics,
        [Threshold("max_abs_deviation", "<=", 1e-6)],
    )


def rank_monotonicity(g, z, rel_tol=1e-8):
    """Per-layer ranks of the suffix Jacobian Grams for one latent code."""
    ranks = [numerical_rank(j.T @ j, rel_tol) for j in layer_jacobians(g, z)]
    increases = sum(1 for a, b in zip(ranks, ranks[1:]) if b > a)
    metrics = {"ranks": ranks, "increases": increases, "first_rank": ranks[0]}
    thresholds = [Threshold("increases", "==", 0)]
    if g.intrinsic_dim < g.d_z:
        thresholds.append(Threshold("first_rank", "<", g.d_z))
    return ExperimentReport("rank_monotonicity", {"kind": g.kind, "rel_tol": rel_tol}, metrics, thresholds)


def rank_sweep(zoo, n_z=10, rel_tol=1e-8, seed=0):
    increases = 0
    bottleneck_runs = bottleneck_hits = 0
    per = {}
    for name, g in sorted(zoo.items()):
        for k in range(n_z):
            r = rank_monotonicity(g, latent(g, seed, k), rel_tol)
            increases += r.metrics["increases"]
            if g.intrinsic_dim < g.d_z:
                bottleneck_runs += 1
                bottleneck_hits += r.metrics["first_rank"] < g.d_z
            if k == 0:
                per["ranks_" + name] = r.metrics["ranks"]
    metrics = {
        "increases": increases,
        "bottleneck_runs": bottleneck_runs,
        "bottleneck_fraction": bottleneck_hits / bottleneck_runs if bottleneck_runs else 1.0,
    }
    metrics.update(per)
    return ExperimentReport(
        "rank",
        {"generators": sorted(zoo), "n_z": n_z, "rel_tol": rel_tol, "seed": seed},
        metrics,
        [Threshold("increases", "==", 0), Threshold("bottleneck_fraction", ">=", 1.0)],
    )


def principal_check(zoo, alpha=0.1, n_random=100, seed=0, regions=None):
    """Top Gram direction against random unit directions, per generator.

    The change compared is the actual output change over the region, which at
    small ``alpha`` tracks the first-order one.
    """
    regions = regions or {}
    worst_beaten = n_random
    per = {}
    for name, g in sorted(zoo.items()):
        z = latent(g, seed, 0)
        region = as_region(regions.get(name, np.arange(g.d_x)), g.d_x)
        idx = region.array
        n = principal_direction(region_gram(jacobian(g, z), region))
        base = forward(g, z)
        top = np.linalg.norm(forward(g, z + alpha * n)[idx] - base[idx])
        rng = np.random.default_rng([seed, 1])
        beaten = 0
        for _ in range(n_random):
            r = rng.standard_normal(g.d_z)
            r /= np.linalg.norm(r)
            beaten += top > np.linalg.norm(forward(g, z + alpha * r)[idx] - base[idx])
        per["beaten_" + name] = int(beaten)
        worst_beaten = min(worst_beaten, beaten)
    metrics = {"min_beaten": int(worst_beaten)}
    metrics.update(per)
    return ExperimentReport(
        "principal",
        {"generators": sorted(zoo), "alpha": alpha, "n_random": n_random, "seed": seed},
        metrics,
        [Threshold("min_beaten", ">=", 99)],
    )


def nullspace_effect(g, z, mask_a, mask_b, alpha, pcp_config=None, rank_tol=RANK_TOL, grid=None):
    """Edit along the region-B null-space direction that moves region A most.

    Returns ``(report, heatmap)``; the heatmap is ``None`` for non-image outputs.
    """
    mask_a = as_region(mask_a, g.d_x)
    mask_b = as_region(mask_b, g.d_x)
    j = jacobian(g, z)
    basis_b = region_basis(j, mask_b, pcp_config, rank_tol)
    null = basis_b.null_space
    if null.shape[1] == 0:
        raise LorankError("region B has full rank %d; its null space is empty" % basis_b.rank)
    gram_a = region_gram(j, mask_a)
    u = principal_direction(null.T @ gram_a @ null) if null.shape[1] > 1 else np.ones(1)
    n = null @ u
    n /= np.linalg.norm(n)
    before = forward(g, z)
    after = forward(g, z + alpha * n)
    change_a = region_mse(before, after, mask_a)
    change_b = region_mse(before, after, mask_b)
    metrics = {
        "change_a": change_a,
        "change_b": change_b,
        "ratio": _ratio(change_b, change_a),
        "rank_b": basis_b.rank,
        "null_dim_b": int(null.shape[1]),
        "pcp_iterations_b": basis_b.solution.iterations,
        "pcp_converged_b": int(basis_b.solution.converged),
    }
    heat = Heatmap.from_outputs(before, after, grid) if grid else None
    params = {"alpha": alpha, "kind": g.kind, "region_a": len(mask_a), "region_b": len(mask_b)}
    return ExperimentReport("nullspace_effect", params, metrics), heat


def projection_comparison(g, z, mask_a, mask_b, alpha, r_relax=0, pcp_config=None, rank_tol=RANK_TOL, index=0):
    """Masked MSE outside region A for the raw and the projected attribute."""
    mask_a = as_region(mask_a, g.d_x)
    mask_b = as_region(mask_b, g.d_x)
    j = jacobian(g, z)
    basis_a = region_basis(j, mask_a, pcp_config, rank_tol)
    basis_b = region_basis(j, mask_b, pcp_config, rank_tol)
    v = basis_a.v[:, index]
    spec = ProjectionSpec(basis_b, min(r_relax, basis_b.rank))
    p = null_project(v, spec)
    before = forward(g, z)
    without = masked_mse(before, forward(g, z + alpha * v), mask_a)
    with_ = masked_mse(before, forward(g, z + alpha * p), mask_a)
    metrics = {
        "mse_without": without,
        "mse_with": with_,
        "factor": _ratio(with_, without),
        "inside_without": region_mse(before, forward(g, z + alpha * v), mask_a),
        "inside_with": region_mse(before, forward(g, z + alpha * p), mask_a),
        "rank_a": basis_a.rank,
        "rank_b": basis_b.rank,
        "retained_norm": float(np.linalg.norm(projection_residual(v, spec))),
    }
    params = {"alpha": alpha, "r_relax": spec.r_relax, "index": index, "kind": g.kind}
    return ExperimentReport("projection_comparison", params, metrics), p


def generalization(g, z_ref, z_targets, mask_a, mask_b, alpha, r_relax=0, pcp_config=None, rank_tol=RANK_TOL, factor=10.0):
    """Apply the direction found at ``z_ref`` to every target code."""
    mask_a = as_region(mask_a, g.d_x)
    mask_b = as_region(mask_b, g.d_x)
    j = jacobian(g, z_ref)
    basis_a = region_basis(j, mask_a, pcp_config, rank_tol)
    basis_b = region_basis(j, mask_b, pcp_config, rank_tol)
    spec = ProjectionSpec(basis_b, min(r_relax, basis_b.rank))
    p = null_project(basis_a.v[:, 0], spec)
    ok = 0
    ratios, deltas = [], []
    for zt in z_targets:
        before = forward(g, zt)
        after = forward(g, zt + alpha * p)
        a = region_mse(before, after, mask_a)
        b = region_mse(before, after, mask_b)
        ok += a >= factor * b
        ratios.append(_ratio(b, a))
        deltas.append(after - before)
    deltas = np.array(deltas)
    metrics = {
        "targets": len(z_targets),
        "pass_fraction": ok / len(z_targets),
        "max_ratio": float(max(ratios)),
        "median_ratio": float(np.median(ratios)),
        "delta_spread": float(np.max(np.abs(deltas - deltas[0]))),
    }
    params = {"alpha": alpha, "r_relax": spec.r_relax, "factor": factor, "kind": g.kind}
    return ExperimentReport("generalization", params, metrics)


def random_subboxes(grid, box, n, min_fraction, seed):
    """``n`` random sub-rectangles of ``box = (x0, y0, x1, y1)`` covering at
    least ``min_fraction`` of its area."""
    x0, y0, x1, y1 = box
    w, h = x1 - x0, y1 - y0
    need = min_fraction * w * h
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        bw = int(rng.integers(1, w + 1))
        bh = int(rng.integers(1, h + 1))
        if bw * bh < need:
            continue
        ox = x0 + int(rng.integers(0, w - bw + 1))
        oy = y0 + int(rng.integers(0, h - bh + 1))
        out.append(RegionMask.from_rect(grid, ox, oy, ox + bw, oy + bh))
    return out


def mask_robustness(g, z, submasks, mask_b, alpha, region_size=None, small_relax=20, pcp_config=None, rank_tol=RANK_TOL):
    """Agreement of the projected top directions found from several sub-masks.

    Sub-masks smaller than half of ``region_size`` get ``small_relax``
    relaxation, clamped to region B's rank.
    """
    if len(submasks) < 2:
        raise ValueError("mask robustness needs at least two sub-masks")
    mask_b = as_region(mask_b, g.d_x)
    j = jacobian(g, z)
    basis_b = region_basis(j, mask_b, pcp_config, rank_tol)
    before = forward(g, z)
    dirs, changes, relax = [], [], []
    unconverged = 0
    for sub in submasks:
        sub = as_region(sub, g.d_x)
        basis = region_basis(j, sub, pcp_config, rank_tol)
        unconverged += not basis.solution.converged
        r = small_relax if region_size and len(sub) < 0.5 * region_size else 0
        spec = ProjectionSpec(basis_b, min(r, basis_b.rank))
        d = null_project(basis.v[:, 0], spec)
        dirs.append(d)
        relax.append(spec.r_relax)
        changes.append(region_mse(before, forward(g, z + alpha * d), sub))
    cos = [abs(cosine(a, b)) for a, b in itertools.combinations(dirs, 2)]
    metrics = {
        "mean_abs_cos": float(np.mean(cos)),
        "min_abs_cos": float(np.min(cos)),
        "min_change": float(min(changes)),
        "relaxed": int(sum(1 for r in relax if r)),
        "unconverged": int(unconverged),
    }
    params = {"alpha": alpha, "submasks": [len(s) for s in submasks], "small_relax": small_relax, "kind": g.kind}
    return ExperimentReport("mask_robustness", params, metrics)


def relaxation_monotonicity(bases_a, bases_b, tol=1e-12):
    """Retained norm of every attribute of A against every relaxation of B.

    Dips smaller than ``tol`` are rounding in the projection and are not
    counted; ``worst_decrease`` records the largest dip either way.
    """
    checked = decreases = 0
    worst = 0.0
    for ba, bb in zip(bases_a, bases_b):
        for i in range(ba.rank):
            v = ba.v[:, i]
            norms = [np.linalg.norm(projection_residual(v, ProjectionSpec(bb, r))) for r in range(bb.rank + 1)]
            checked += 1
            for a, b in zip(norms, norms[1:]):
                worst = max(worst, a - b)
                if b < a - tol:
                    decreases += 1
    metrics = {"directions": checked, "decreases": decreases, "worst_decrease": float(worst)}
    return ExperimentReport("relaxation", {"bases": len(bases_a), "tol": tol}, metrics, [Threshold("decreases", "==", 0)])


def lambda_sweep(g, z, mask_a, mask_b, n_values, alpha=1.0, max_iter=5000, rank_tol=RANK_TOL):
    """The ``lam = 1/n`` sweep: effective ranks and projection quality per n."""
    mask_a = as_region(mask_a, g.d_x)
    mask_b = as_region(mask_b, g.d_x)
    j = jacobian(g, z)
    before = forward(g, z)
    null_dims, ranks_a, iters, converged, mse_with, mse_without = [], [], [], [], [], []
    for n in n_values:
        cfg = PcpConfig.from_n(n, max_iter=max_iter)
        basis_a = region_basis(j, mask_a, cfg, rank_tol)
        basis_b = region_basis(j, mask_b, cfg, rank_tol)
        null_dims.append(g.d_z - basis_b.rank)
        ranks_a.append(basis_a.rank)
        iters.append(basis_b.solution.iterations)
        converged.append(int(basis_b.solution.converged))
        v = basis_a.v[:, 0]
        mse_without.append(masked_mse(before, forward(g, z + alpha * v), mask_a))
        try:
            p = null_project(v, ProjectionSpec(basis_b, 0))
            mse_with.append(masked_mse(before, forward(g, z + alpha * p), mask_a))
        except VanishingDirectionError:
            mse_with.append(math.nan)
    decreases = sum(1 for a, b in zip(null_dims, null_dims[1:]) if b < a)
    metrics = {
        "null_dim_b": null_dims,
        "rank_a": ranks_a,
        "iterations_b": iters,
        "converged_b": converged,
        "mse_with": mse_with,
        "mse_without": mse_without,
        "null_dim_decreases": decreases,
    }
    params = {"n_values": list(n_values), "alpha": alpha, "max_iter": max_iter, "kind": g.kind}
    return ExperimentReport("lambda_sweep", params, metrics, [Threshold("null_dim_decreases", "==", 0)])


# -- suite helpers -------------------------------------------------------------


def roundtrip_check(zoo, pcp_config=None, rank_tol=RANK_TOL, seed=0):
    """Text formats must reload bit-exactly and re-serialize to the same bytes."""
    lossy = []
    checked = 0
    for name, g in sorted(zoo.items()):
        text = genzoo.dumps(g)
        back = genzoo.loads(text)
        same = genzoo.dumps(back) == text and all(
            np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias) and a.activation == b.activation
            for a, b in zip(g.layers, back.layers)
        )
        checked += 1
        if not same:
            lossy.append("generator " + name)
        z = latent(g, seed, 0)
        region = RegionMask(range(g.d_x // 2 or 1))
        basis = region_basis(jacobian(g, z), region, pcp_config, rank_tol)
        text = dumps_basis(basis)
        back = loads_basis(text)
        same = (
            dumps_basis(back) == text
            and np.array_equal(back.v, basis.v)
            and np.array_equal(back.sigma, basis.sigma)
            and back.rank == basis.rank
            and back.region == basis.region
        )
        checked += 1
        if not same:
            lossy.append("basis " + name)
        out = forward(g, z).reshape(1, -1)
        lo, hi = pgm.value_range(out)
        for binary in (False, True):
            data = pgm.encode(out, lo, hi, binary)
            px, rng = pgm.decode(data)
            checked += 1
            if not (np.array_equal(px, pgm.to_pixels(out, lo, hi)) and rng == (lo, hi)):
                lossy.append("pgm %s %s" % ("P5" if binary else "P2", name))
    m = np.outer(np.arange(1.0, 7.0), np.arange(1.0, 6.0)) / 7.0
    m[2, 3] += 5.0
    sol = pcp(m)
    text = format_solution(sol)
    back = parse_solution(text)
    checked += 1
    if format_solution(back) != text or not (np.array_equal(back.l, sol.l) and np.array_equal(back.s, sol.s)):
        lossy.append("pcp solution")
    report = ExperimentReport("report", {"x": 0.1, "seed": seed}, {"a": 1.0 / 3.0, "b": [math.pi, 2], "c": math.inf})
    text = dumps_report(report)
    checked += 1
    if dumps_report(loads_report(text)) != text:
        lossy.append("report")
    metrics = {"checked": checked, "lossy": len(lossy)}
    notes = ["lossy: " + ", ".join(lossy)] if lossy else []
    return ExperimentReport("roundtrip", {"generators": sorted(zoo)}, metrics, [Threshold("lossy", "==", 0)], notes=notes)


def latent(g, seed, k):
    """The ``k``-th seeded latent code for ``g``."""
    return np.random.default_rng([seed, k, g.d_z]).standard_normal(g.d_z)


def targets(g, seed, count, scale=1.0):
    rng = np.random.default_rng([seed, 7919, g.d_z])
    return [scale * rng.standard_normal(g.d_z) for _ in range(count)]


# -- the verification suite ------------------------------------------------------

# Every tunable and every pass bound lives here; the CLI overlays a config file
# and flags on top.  Keys are flat so a config file is just ``key = value``.
DEFAULT_CONFIG = {
    "seed": 0,
    "pcp_lambda": GRAM_PCP["lam"],
    "pcp_max_iter": GRAM_PCP["max_iter"],
    "rank_tol": RANK_TOL,
    "alpha": 1.0,
    "latents": 3,
    "rpca_instances": 20,
    "rpca_size": 200,
    "rpca_rank": 10,
    "rpca_fraction": 0.05,
    "rpca_magnitude": 10.0,
    "rpca_error_max": 1e-5,
    "fd_step": 1e-4,
    "fd_latents": 10,
    "fd_tol": 1e-6,
    "rank_rel_tol": 1e-8,
    "principal_alpha": 0.1,
    "principal_random": 100,
    "principal_min_beaten": 99,
    "null_b_max": 1e-8,
    "null_a_min": 1e-2,
    "null_ratio_max": 1e-3,
    "projection_factor_max": 0.1,
    "targets": 50,
    "target_scale": 1.0,
    "generalization_factor": 10.0,
    "generalization_fraction": 0.9,
    "linear_spread_max": 1e-12,
    "submasks": 5,
    "submask_fraction": 0.25,
    "small_relax": 20,
    "mask_cos_min": 0.9,
    "mask_max_iter": 1000,
    "lambda_n": "20,40,60,80",
    "r_relax": 0,
}


def parse_value(key, text, default=None):
    """Coerce a config string to the type of the default for ``key``."""
    ref = DEFAULT_CONFIG.get(key, default)
    if isinstance(ref, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(ref, int):
        return int(text)
    if isinstance(ref, float):
        return float(text)
    return text


def blocky_regions(g, grid):
    left, right = half_masks(grid)
    return RegionMask(left), RegionMask(right)


def separable(g, mask_a, mask_b):
    """True when no latent coordinate reaches both regions.

    Walks the weight sparsity pattern backwards from each region's outputs,
    so it is exact for any layered generator, whatever the latent split.
    """
    def reach(region):
        live = np.zeros(g.d_x, dtype=bool)
        live[as_region(region, g.d_x).array] = True
        for layer in reversed(g.layers):
            live = np.any(layer.weight[live] != 0.0, axis=0)
        return live

    return not np.any(reach(mask_a) & reach(mask_b))


def _aggregate(reports, worst):
    """Combine per-latent metrics with the named reducers."""
    out = {}
    for key, fn in worst.items():
        out[key] = fn([r.metrics[key] for r in reports])
    return out


class Suite:
    """The acceptance experiments over a set of named generators.

    ``generators`` maps names to :class:`~lorank.genzoo.Generator`; blocky
    generators are recognised by kind and are expected on a square grid.
    """

    def __init__(self, generators, config=None):
        self.generators = dict(generators)
        self.cfg = dict(DEFAULT_CONFIG)
        self.cfg.update(config or {})
        self.pcp = gram_config(self.cfg)

    # names and dispatch

    def blocky(self):
        return sorted(n for n, g in self.generators.items() if g.kind == "blocky")

    def names(self):
        names = ["rpca", "jacobian", "rank", "principal"]
        for b in self.blocky():
            names += ["nullspace-" + b, "projection-" + b, "generalization-" + b, "mask-" + b, "lambda-" + b]
        if any(g.kind == "linear" for g in self.generators.values()):
            names.append("generalization-linear")
        names += ["relaxation", "roundtrip"]
        return names

    def select(self, only=None):
        names = self.names()
        if not only:
            return names
        picked = [n for n in names if any(n == o or n.startswith(o + "-") for o in only)]
        if not picked:
            raise KeyError("no experiment matches %s; known: %s" % (", ".join(only), ", ".join(names)))
        return picked

    def run(self, name):
        """Returns ``(report, images)``; images map file stems to 2-D arrays."""
        head, _, rest = name.partition("-")
        fn = getattr(self, "_" + head)
        return fn(rest) if rest else fn()

    # helpers

    def _zs(self, g):
        return [latent(g, self.cfg["seed"], k) for k in range(self.cfg["latents"])]

    def _grid(self, g):
        grid = int(round(math.sqrt(g.d_x)))
        if grid * grid != g.d_x:
            raise ValueError("blocky generator output is not a square image")
        return grid

    def _strict(self, g):
        return separable(g, *blocky_regions(g, self._grid(g)))

    # experiments

    def _rpca(self):
        c = self.cfg
        r = rpca_recovery(c["rpca_instances"], c["rpca_size"], c["rpca_rank"], c["rpca_fraction"], c["rpca_magnitude"], c["seed"])
        r.thresholds[0] = Threshold("max_recovery_error", "<=", c["rpca_error_max"])
        return r, {}

    def _jacobian(self):
        c = self.cfg
        r = jacobian_check(self.generators, c["fd_latents"], c["fd_step"], c["seed"])
        r.thresholds[:] = [Threshold("max_abs_deviation", "<=", c["fd_tol"])]
        return r, {}

    def _rank(self):
        c = self.cfg
        return rank_sweep(self.generators, c["fd_latents"], c["rank_rel_tol"], c["seed"]), {}

    def _principal(self):
        c = self.cfg
        regions = {b: blocky_regions(self.generators[b], self._grid(self.generators[b]))[0] for b in self.blocky()}
        r = principal_check(self.generators, c["principal_alpha"], c["principal_random"], c["seed"], regions)
        r.thresholds[:] = [Threshold("min_beaten", ">=", c["principal_min_beaten"])]
        return r, {}

    def _nullspace(self, gname):
        c = self.cfg
        g = self.generators[gname]
        grid = self._grid(g)
        a, b = blocky_regions(g, grid)
        runs, swapped, heats = [], [], []
        for z in self._zs(g):
            rep, heat = nullspace_effect(g, z, a, b, c["alpha"], self.pcp, c["rank_tol"], grid)
            runs.append(rep)
            heats.append(heat)
            swapped.append(nullspace_effect(g, z, b, a, c["alpha"], self.pcp, c["rank_tol"])[0])
        metrics = _aggregate(runs, {"change_a": min, "change_b": max, "ratio": max, "null_dim_b": min, "pcp_iterations_b": max})
        sw = _aggregate(swapped, {"change_a": min, "change_b": max, "ratio": max})
        # Swapped roles: region A's null direction should move region B, not A.
        metrics.update({"swapped_change_moved": sw["change_a"], "swapped_change_fixed": sw["change_b"], "swapped_ratio": sw["ratio"]})
        if self._strict(g):
            thresholds = [
                Threshold("change_b", "<=", c["null_b_max"]),
                Threshold("change_a", ">=", c["null_a_min"]),
                Threshold("swapped_change_fixed", "<=", c["null_b_max"]),
                Threshold("swapped_change_moved", ">=", c["null_a_min"]),
            ]
        else:
            thresholds = [Threshold("ratio", "<=", c["null_ratio_max"]), Threshold("swapped_ratio", "<=", c["null_ratio_max"])]
        metrics["heatmap_total"] = heats[0].total
        images = {"heatmap": heats[0].values}
        params = {"generator": gname, "alpha": c["alpha"], "latents": c["latents"], "seed": c["seed"], "strict": self._strict(g)}
        return ExperimentReport("nullspace-" + gname, params, metrics, thresholds), images

    def _projection(self, gname):
        c = self.cfg
        g = self.generators[gname]
        grid = self._grid(g)
        a, b = blocky_regions(g, grid)
        runs, images = [], {}
        for k, z in enumerate(self._zs(g)):
            rep, p = projection_comparison(g, z, a, b, c["alpha"], c["r_relax"], self.pcp, c["rank_tol"])
            runs.append(rep)
            if k == 0:
                images["before"] = forward(g, z).reshape(grid, grid)
                images["after"] = forward(g, z + c["alpha"] * p).reshape(grid, grid)
        # Worst case is the largest with/without factor.
        worst = max(runs, key=lambda r: (r.metrics["factor"], r.metrics["mse_with"]))
        metrics = dict(worst.metrics)
        metrics["max_mse_with"] = max(r.metrics["mse_with"] for r in runs)
        metrics["min_inside_with"] = min(r.metrics["inside_with"] for r in runs)
        params = {"generator": gname, "alpha": c["alpha"], "r_relax": c["r_relax"], "latents": c["latents"], "seed": c["seed"]}
        thresholds = [Threshold("mse_with", "<=", c["projection_factor_max"], ref="mse_without")]
        return ExperimentReport("projection-" + gname, params, metrics, thresholds), images

    def _generalization(self, gname):
        c = self.cfg
        if gname == "linear":
            g = next(self.generators[n] for n in sorted(self.generators) if self.generators[n].kind == "linear")
            half = g.d_x // 2
            a, b = RegionMask(range(half)), RegionMask(range(half, g.d_x))
            # Without projection: the exact-transfer property does not depend on it.
            r = generalization(g, latent(g, c["seed"], 0), targets(g, c["seed"], c["targets"]), a, b, c["alpha"], r_relax=g.d_z, pcp_config=self.pcp, rank_tol=c["rank_tol"])
            r.name = "generalization-linear"
            r.thresholds = [Threshold("delta_spread", "<=", c["linear_spread_max"])]
            return r, {}
        g = self.generators[gname]
        a, b = blocky_regions(g, self._grid(g))
        r = generalization(
            g, latent(g, c["seed"], 0), targets(g, c["seed"], c["targets"], c["target_scale"]), a, b,
            c["alpha"], c["r_relax"], self.pcp, c["rank_tol"], c["generalization_factor"],
        )
        r.name = "generalization-" + gname
        r.parameters.update({"generator": gname, "seed": c["seed"], "target_scale": c["target_scale"]})
        r.thresholds = [Threshold("pass_fraction", ">=", c["generalization_fraction"])]
        return r, {}

    def _mask(self, gname):
        c = self.cfg
        g = self.generators[gname]
        grid = self._grid(g)
        _, b = blocky_regions(g, grid)
        box = (0, 0, grid // 2, grid)
        area = (grid // 2) * grid
        runs = []
        for k, z in enumerate(self._zs(g)):
            subs = random_subboxes(grid, box, c["submasks"], c["submask_fraction"], [c["seed"], k, 31])
            cfg = gram_config(self.cfg, max_iter=c["mask_max_iter"])
            runs.append(mask_robustness(g, z, subs, b, c["alpha"], area, c["small_relax"], cfg, c["rank_tol"]))
        metrics = _aggregate(runs, {"mean_abs_cos": min, "min_abs_cos": min, "min_change": min, "relaxed": sum, "unconverged": sum})
        params = {"generator": gname, "submasks": c["submasks"], "min_fraction": c["submask_fraction"], "small_relax": c["small_relax"], "latents": c["latents"], "seed": c["seed"]}
        return ExperimentReport("mask-" + gname, params, metrics, [Threshold("mean_abs_cos", ">=", c["mask_cos_min"])]), {}

    def _lambda(self, gname):
        c = self.cfg
        g = self.generators[gname]
        a, b = blocky_regions(g, self._grid(g))
        n_values = [float(t) if "." in t else int(t) for t in str(c["lambda_n"]).split(",")]
        r = lambda_sweep(g, latent(g, c["seed"], 0), a, b, n_values, c["alpha"], c["pcp_max_iter"], c["rank_tol"])
        r.name = "lambda-" + gname
        r.parameters.update({"generator": gname, "seed": c["seed"]})
        return r, {}

    def _relaxation(self):
        c = self.cfg
        bases_a, bases_b = [], []
        for gname in self.blocky():
            g = self.generators[gname]
            a, b = blocky_regions(g, self._grid(g))
            for z in self._zs(g):
                j = jacobian(g, z)
                ba = region_basis(j, a, self.pcp, c["rank_tol"])
                bb = region_basis(j, b, self.pcp, c["rank_tol"])
                # Against the other region and against itself, where every
                # relaxation step releases part of the direction.
                bases_a += [ba, bb, ba]
                bases_b += [bb, ba, ba]
        r = relaxation_monotonicity(bases_a, bases_b)
        r.parameters.update({"generators": self.blocky(), "latents": c["latents"], "seed": c["seed"]})
        return r, {}

    def _roundtrip(self):
        r = roundtrip_check(self.generators, self.pcp, self.cfg["rank_tol"], self.cfg["seed"])
        r.parameters.update({"seed": self.cfg["seed"]})
        return r, {}
