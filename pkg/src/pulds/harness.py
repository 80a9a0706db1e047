"""
Monte Carlo runner for the estimator/controller variant grid.

A variant pairs an estimator (SYS) with a controller (CNT):

    SYS 0  Kalman filter on the prior mean parameters
    SYS 1  filter for white-noise (irreducible) parameter uncertainty
    SYS 2  joint state/parameter estimation (reducible uncertainty)
    CNT 0  certainty equivalence
    CNT 1  cautious control
    CNT 2  dual control, with probing in singular modes

plus the exact-parameter baseline. Episodes of one set run together as a
batch along a leading axis; each episode owns a PCG64 stream seeded with
``set_seed + run_index`` and draws all of its noise up front, so results do
not depend on batch composition or order.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import controllers as ctl
from .estimation import (
    InfoStateIrreducible,
    adequacy,
    predict_irreducible,
    predict_reducible,
    reducible_from_prior,
    update_irreducible,
    update_reducible,
)
from .info_metrics import parameter_entropy
from .lds_model import Scenario, make_rng, placement_indices, true_parameters, _sqrt
from .tensor_stats import MomentSet, pack_moments

logger = logging.getLogger(__name__)

CSV_COLUMNS = [
    "variant", "set", "runs", "excluded",
    "cost_mean", "cost_disp", "cost_max",
    "miss_mean", "miss_disp", "miss_max",
]
TRACE_COLUMNS = ["k", "u", "was_probe", "lambda", "I_cum", "theta_stat"]
PROFILE_COLUMNS = [
    "variant", "set", "k", "probe_freq",
    "neg_lambda_mean", "neg_lambda_std",
    "energy_mean", "energy_std",
    "I_cum_mean", "I_cum_std",
]


class AllEpisodesFlagged(RuntimeError):
    pass


@dataclass(frozen=True)
class Variant:
    sys: int = 0
    cnt: int = 0
    exact_params: bool = False

    def __post_init__(self):
        if self.sys not in (0, 1, 2) or self.cnt not in (0, 1, 2):
            raise ValueError(f"sys and cnt must be in 0..2, got {self.sys}, {self.cnt}")

    @property
    def label(self):
        return "exact" if self.exact_params else f"SYS{self.sys}/CNT{self.cnt}"

    @classmethod
    def parse(cls, text):
        if text == "exact":
            return cls(0, 0, True)
        s, c = text.upper().replace("SYS", "").replace("CNT", "").split("/")
        return cls(int(s), int(c))


EXACT = Variant(0, 0, True)
TABLE_VARIANTS = (
    EXACT,
    Variant(0, 0), Variant(1, 0), Variant(2, 0),
    Variant(1, 1), Variant(2, 1), Variant(2, 2),
)


@dataclass
class EpisodeResult:
    seed: int
    cost: float
    miss: float
    flagged: bool
    u: np.ndarray
    was_probe: np.ndarray
    lam: np.ndarray
    I_cum: np.ndarray
    theta: np.ndarray
    param_err: np.ndarray

    def to_bytes(self):
        parts = [np.array([self.seed, self.cost, self.miss, float(self.flagged)])]
        parts += [np.ascontiguousarray(a, dtype=float).ravel() for a in
                  (self.u, self.was_probe, self.lam, self.I_cum, self.theta, self.param_err)]
        return b"".join(p.tobytes() for p in parts)


@dataclass
class VariantStats:
    variant: str
    runs: int
    excluded: int
    cost_mean: float
    cost_disp: float
    cost_max: float
    miss_mean: float
    miss_disp: float
    miss_max: float
    probe_freq: np.ndarray = field(repr=False)
    profiles: dict = field(default_factory=dict, repr=False)

    def row(self, set_index):
        return {
            "variant": self.variant, "set": set_index, "runs": self.runs, "excluded": self.excluded,
            "cost_mean": self.cost_mean, "cost_disp": self.cost_disp, "cost_max": self.cost_max,
            "miss_mean": self.miss_mean, "miss_disp": self.miss_disp, "miss_max": self.miss_max,
        }


# ---------------------------------------------------------------------------
# episode batch


def _noise(sc: Scenario, seeds):
    m = sc.model
    K, n, l, mm = m.horizon, m.n, m.l, m.m
    w, v, pr, x0 = [], [], [], []
    for s in seeds:
        rng = make_rng(int(s))
        w.append(rng.standard_normal((K, n)))
        v.append(rng.standard_normal((K, l)))
        pr.append(rng.standard_normal((K, mm)))
        x0.append(rng.standard_normal(n))
    w = np.array(w) @ _sqrt(m.Q).T
    v = np.array(v) @ _sqrt(m.R).T
    return w, v, np.array(pr), np.array(x0)


def _plan(variant, model, cost, xbar, alpha, xi, P, horizon, reiterate):
    if variant.cnt == 0 or variant.exact_params:
        return ctl.solve_ce(model, cost, horizon)
    nominal = ctl.nominal_trajectory(model, alpha, horizon)
    if variant.cnt == 1:
        return ctl.solve_cautious(model, cost, xi, nominal, horizon)
    gains, _, _ = ctl.plan_dual(model, cost, xbar, alpha, xi, P, horizon, reiterate)
    return gains


def run_batch(sc: Scenario, variant: Variant, seeds, reiterate=False):
    """Run one episode per seed; returns a dict of per-episode arrays."""
    seeds = np.asarray(seeds, dtype=np.int64)
    B = seeds.shape[0]
    model, cost, prior = sc.model, sc.cost, sc.prior
    K, n, mdim = model.horizon, model.n, model.m
    P = prior.P
    w, v, probes, x0n = _noise(sc, seeds)
    F_true, G_true = true_parameters(sc)

    if variant.exact_params:
        Fb0, Gb0 = F_true, G_true
        xi0 = MomentSet.zeros(n, mdim, cross=False)
    else:
        Fb0, Gb0 = model.Fbar, model.Gbar
        xi0 = sc.moments.uncertainty_block() if variant.sys > 0 else MomentSet.zeros(n, mdim, cross=False)
    base_model = model.with_params(Fb0, Gb0)

    x = np.zeros((B, n)) + prior.x0_mean
    if sc.draw_x0:
        x = x + x0n @ _sqrt(prior.x0_cov).T
    xbar = np.broadcast_to(prior.x0_mean, (B, n)).astype(float)
    alpha = np.broadcast_to(prior.x0_cov, (B, n, n)).astype(float)
    reducible = variant.sys == 2 and not variant.exact_params
    if reducible:
        bcast = lambda a: np.broadcast_to(a, (B,) + a.shape).copy()
        ms0 = sc.moments.uncertainty_block()
        state = reducible_from_prior(
            xbar, alpha, bcast(Fb0), bcast(Gb0),
            MomentSet(bcast(ms0.beta), bcast(ms0.gamma), bcast(ms0.nu)),
        )
        init_state = state
        support = placement_indices(prior.placements, n, mdim)
        S0 = parameter_entropy(sc.moments, support)
    else:
        irr = InfoStateIrreducible(xbar, alpha)
        init_irr = irr

    theta_true_vec = np.asarray(prior.theta_true, float)

    def theta_hat(Fb, Gb):
        vec = np.concatenate([Fb.reshape(Fb.shape[:-2] + (-1,)), Gb.reshape(Gb.shape[:-2] + (-1,))], axis=-1)
        return vec[..., placement_indices(prior.placements, n, mdim)]

    u_hist = np.zeros((B, K, mdim))
    probe_hist = np.zeros((B, K), dtype=bool)
    lam_hist = np.zeros((B, K))
    info_hist = np.zeros((B, K))
    theta_hist = np.zeros((B, K))
    err_hist = np.zeros((B, K))
    flagged = np.zeros(B, dtype=bool)

    # gains depend on the data only when parameters are being learned
    gains = _plan(variant, base_model, cost, prior.x0_mean, prior.x0_cov, xi0, P, K, reiterate)
    k0 = 0

    with np.errstate(all="ignore"):
        for k in range(K):
            if reducible and k > 0:
                cur = model.with_params(state.Fbar, state.Gbar)
                gains = _plan(variant, cur, cost, state.xbar, state.alpha,
                              state.moments.uncertainty_block(), P, K - k, reiterate)
                k0 = k
            j = k - k0
            cur_xbar = state.xbar if reducible else irr.xbar
            u, was_probe = ctl.control_at(gains, j, cur_xbar, probe_sigma=sc.probe_sigma, probe=probes[:, k])
            u = np.broadcast_to(u, (B, mdim))
            lam_hist[:, k] = np.broadcast_to(gains.lam[j], (B,))

            x = np.einsum("ij,bj->bi", F_true, x) + np.einsum("ij,bj->bi", G_true, u) + w[:, k]
            z = np.einsum("ij,bj->bi", model.H, x) + v[:, k]

            if reducible:
                pred = predict_reducible(state, u, model)
                theta_hist[:, k] = _safe_adequacy(pred, z, model)
                state = update_reducible(pred, z, model)
                bad = ~(_finite(state.xbar) & _finite(state.alpha) & _finite(x))
                bad |= ~(_finite(state.Fbar) & _finite(state.Gbar))
                if np.any(bad):
                    state = _reset_reducible(state, init_state, bad)
                ent = _batched_entropy(state.moments, support)
                info_hist[:, k] = S0 - ent
                err_hist[:, k] = np.linalg.norm(theta_hat(state.Fbar, state.Gbar) - theta_true_vec, axis=-1)
            else:
                pred = predict_irreducible(irr, xi0, u, base_model)
                theta_hist[:, k] = _safe_adequacy(pred, z, model)
                irr = update_irreducible(pred, z, model)
                bad = ~(_finite(irr.xbar) & _finite(irr.alpha) & _finite(x))
                if np.any(bad):
                    irr = InfoStateIrreducible(
                        np.where(bad[:, None], init_irr.xbar, irr.xbar),
                        np.where(bad[:, None, None], init_irr.alpha, irr.alpha),
                    )
                err_hist[:, k] = np.linalg.norm(theta_hat(Fb0, Gb0) - theta_true_vec, axis=-1)
            flagged |= bad
            x = np.where(bad[:, None], 0.0, x)
            u_hist[:, k] = u
            probe_hist[:, k] = was_probe

    err = x - cost.rho
    term = np.einsum("bi,ij,bj->b", err, cost.A_terminal, err)
    energy = np.einsum("bki,ij,bkj->b", u_hist, cost.B_stage, u_hist)
    cst = 0.5 * (term + energy)
    miss = np.einsum("bi,i->b", err * err, cost.target_mask)
    flagged |= ~np.isfinite(cst) | ~np.isfinite(miss)
    return {
        "seed": seeds, "cost": cst, "miss": miss, "flagged": flagged,
        "u": u_hist, "was_probe": probe_hist, "lam": lam_hist, "I_cum": info_hist,
        "theta": theta_hist, "param_err": err_hist,
    }


def _finite(a):
    return np.all(np.isfinite(a.reshape(a.shape[0], -1)), axis=-1)


def _safe_adequacy(pred, z, model):
    try:
        return adequacy(pred, z, model)[0]
    except np.linalg.LinAlgError:
        return np.full(z.shape[0], np.nan)


def _batched_entropy(ms, support):
    Pm = pack_moments(ms)
    sub = Pm[..., support[:, None], support[None, :]]
    sign, val = np.linalg.slogdet(sub)
    return np.where(sign > 0, val, -np.inf)


def _reset_reducible(state, init, bad):
    def pick(a, b):
        return np.where(bad.reshape((-1,) + (1,) * (a.ndim - 1)), b, a)

    ms, m0 = state.moments, init.moments
    return type(state)(
        pick(state.xbar, init.xbar), pick(state.Fbar, init.Fbar), pick(state.Gbar, init.Gbar),
        pick(state.alpha, init.alpha),
        MomentSet(pick(ms.beta, m0.beta), pick(ms.gamma, m0.gamma), pick(ms.nu, m0.nu),
                  pick(ms.phi, m0.phi), pick(ms.psi, m0.psi)),
    )


def _episode(batch, i):
    return EpisodeResult(
        seed=int(batch["seed"][i]), cost=float(batch["cost"][i]), miss=float(batch["miss"][i]),
        flagged=bool(batch["flagged"][i]), u=batch["u"][i], was_probe=batch["was_probe"][i],
        lam=batch["lam"][i], I_cum=batch["I_cum"][i], theta=batch["theta"][i],
        param_err=batch["param_err"][i],
    )


def run_episode(sc: Scenario, variant: Variant, seed, reiterate=False):
    """Single seeded episode; deterministic in (scenario, variant, seed)."""
    return _episode(run_batch(sc, variant, [seed], reiterate), 0)


def summarize(variant_label, costs, misses, flagged, probes=None, variance=False, profiles=None):
    """Mean/dispersion/max over non-flagged episodes (order independent)."""
    costs = np.asarray(costs, float)
    misses = np.asarray(misses, float)
    flagged = np.asarray(flagged, bool)
    keep = ~flagged
    if not np.any(keep):
        raise AllEpisodesFlagged(f"{variant_label}: every episode was flagged as divergent")
    c = np.sort(costs[keep])
    mi = np.sort(misses[keep])
    disp = np.var if variance else np.std
    pf = np.zeros(0) if probes is None else np.asarray(probes, float)[keep].mean(axis=0)
    return VariantStats(
        variant=variant_label, runs=int(costs.size), excluded=int(flagged.sum()),
        cost_mean=float(c.mean()), cost_disp=float(disp(c)), cost_max=float(c.max()),
        miss_mean=float(mi.mean()), miss_disp=float(disp(mi)), miss_max=float(mi.max()),
        probe_freq=pf, profiles=profiles or {},
    )


def set_seed_for(sc: Scenario, set_index, runs):
    return sc.base_seed + set_index * runs


def run_set(sc: Scenario, variant: Variant, runs, set_seed, variance=False, reiterate=False,
            return_batch=False, chunk=1000):
    """Aggregate statistics over `runs` episodes seeded set_seed + i."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    seeds = set_seed + np.arange(runs)
    parts = [run_batch(sc, variant, seeds[i:i + chunk], reiterate) for i in range(0, runs, chunk)]
    batch = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    keep = ~batch["flagged"]
    energy = (batch["u"] ** 2).sum(axis=-1) * sc.cost.b_lambda
    prof = {}
    if np.any(keep):
        prof = {
            "probe_freq": batch["was_probe"][keep].mean(axis=0),
            "neg_lambda_mean": (-batch["lam"][keep]).mean(axis=0),
            "neg_lambda_std": batch["lam"][keep].std(axis=0),
            "energy_mean": energy[keep].mean(axis=0),
            "energy_std": energy[keep].std(axis=0),
            "I_cum_mean": batch["I_cum"][keep].mean(axis=0),
            "I_cum_std": batch["I_cum"][keep].std(axis=0),
        }
    stats = summarize(variant.label, batch["cost"], batch["miss"], batch["flagged"],
                      batch["was_probe"], variance, prof)
    if stats.excluded:
        logger.warning("%s: %d of %d episodes excluded as divergent", variant.label, stats.excluded, runs)
    return (stats, batch) if return_batch else stats


# ---------------------------------------------------------------------------
# export


def fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path, columns, rows):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(columns)
            for r in rows:
                wr.writerow([fmt(r[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def write_trace(path, ep: EpisodeResult):
    rows = []
    for k in range(ep.u.shape[0]):
        rows.append({
            "k": k, "u": ep.u[k, 0] if ep.u.shape[1] == 1 else " ".join(fmt(a) for a in ep.u[k]),
            "was_probe": bool(ep.was_probe[k]), "lambda": ep.lam[k], "I_cum": ep.I_cum[k],
            "theta_stat": ep.theta[k],
        })
    write_csv(path, TRACE_COLUMNS, rows)


def run_benchmark(sc: Scenario, variants=TABLE_VARIANTS, sets=None, runs=None, out_dir=None,
                  variance=False, traces=False, reiterate=False, progress=None):
    """Full variant grid; returns the table rows and writes CSV/JSON when out_dir is set."""
    sets = sc.sets if sets is None else sets
    runs = sc.runs if runs is None else runs
    rows, profile_rows, all_stats = [], [], []
    for var in variants:
        for s in range(sets):
            seed0 = set_seed_for(sc, s, runs)
            stats, batch = run_set(sc, var, runs, seed0, variance, reiterate, return_batch=True)
            rows.append(stats.row(s))
            all_stats.append((var, s, stats))
            for k in range(sc.model.horizon):
                pr = {"variant": var.label, "set": s, "k": k}
                for key in PROFILE_COLUMNS[3:]:
                    pr[key] = stats.profiles[key][k] if stats.profiles else float("nan")
                profile_rows.append(pr)
            if progress:
                progress(var, s, stats)
            if out_dir is not None and traces:
                tag = var.label.replace("/", "_")
                for i in range(runs):
                    write_trace(Path(out_dir) / "traces" / tag / f"set{s}" / f"run{i:04d}.csv", _episode(batch, i))
    if out_dir is not None:
        out = Path(out_dir)
        write_csv(out / f"{sc.name}_table.csv", CSV_COLUMNS, rows)
        write_csv(out / f"{sc.name}_profiles.csv", PROFILE_COLUMNS, profile_rows)
        try:
            (out / f"{sc.name}_table.json").write_text(
                json.dumps([{k: (float(format(v, ".17g")) if isinstance(v, float) else v) for k, v in r.items()}
                            for r in rows], indent=1) + "\n"
            )
        except OSError as exc:
            raise OSError(f"cannot write {out / (sc.name + '_table.json')}: {exc}") from exc
    return rows, all_stats
