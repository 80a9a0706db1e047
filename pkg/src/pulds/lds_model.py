"""
Linear dynamic systems with Gaussian random parameter matrices.

    x(k+1) = F x(k) + G u(k) + w(k),   w ~ N(0, Q)
    z(k)   = H x(k) + v(k),            v ~ N(0, R)

The inexact entries of F and G are collected into a parameter vector theta;
a placement map says where each theta component lives. Unplaced entries are
exact and come from fixed base matrices (the shift pattern of a companion
form by default).

Randomness: every stochastic routine takes a caller-owned
``numpy.random.Generator``. The harness builds them as
``np.random.Generator(np.random.PCG64(seed))`` and draws with
``standard_normal`` (ziggurat); this pairing is the reproducibility contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensor_stats import MomentSet, psd_report, DimensionError


class ScenarioError(ValueError):
    """Invalid scenario. ``problems`` lists every violated field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def shift_matrix(n):
    """Companion-form shift pattern: ones on the superdiagonal."""
    return np.eye(n, k=1)


@dataclass(frozen=True)
class LdsModel:
    Fbar: np.ndarray
    Gbar: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    horizon: int

    @property
    def n(self):
        return self.H.shape[-1]

    @property
    def m(self):
        return self.Gbar.shape[-1]

    @property
    def l(self):
        return self.H.shape[-2]

    def with_params(self, Fbar, Gbar):
        return replace(self, Fbar=np.asarray(Fbar, float), Gbar=np.asarray(Gbar, float))


@dataclass(frozen=True)
class PriorSpec:
    theta_mean: np.ndarray
    theta_var: np.ndarray
    placements: tuple  # of (matrix, row, col), matrix in {"F", "G"}
    x0_mean: np.ndarray
    x0_cov: np.ndarray
    theta_true: np.ndarray
    f_base: np.ndarray | None = None
    g_base: np.ndarray | None = None

    @property
    def P(self):
        return len(self.theta_mean)


@dataclass(frozen=True)
class CostSpec:
    A_terminal: np.ndarray
    A_stage: np.ndarray
    B_stage: np.ndarray
    rho: np.ndarray
    target_mask: np.ndarray
    horizon: int

    @property
    def b_lambda(self):
        return float(self.B_stage[0, 0])


@dataclass(frozen=True)
class Scenario:
    name: str
    model: LdsModel
    prior: PriorSpec
    cost: CostSpec
    probe_sigma: float
    runs: int = 1000
    sets: int = 3
    base_seed: int = 42
    draw_x0: bool = False
    # exact parameter means/moments implied by the prior
    moments: MomentSet = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# parameter maps


def theta_system(theta):
    """Benchmark third-order companion system; returns (F 3x3, G 3x1)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (6,):
        raise DimensionError(f"theta_system expects 6 parameters, got shape {theta.shape}")
    F = shift_matrix(3)
    F[2, :] = theta[:3]
    G = theta[3:].reshape(3, 1).copy()
    return F, G


def _check_placements(placements, n, m):
    problems = []
    seen = set()
    for idx, pl in enumerate(placements):
        mat, r, c = pl
        if mat not in ("F", "G"):
            problems.append(f"placements[{idx}].matrix must be 'F' or 'G', got {mat!r}")
            continue
        cols = n if mat == "F" else m
        if not (0 <= r < n and 0 <= c < cols):
            problems.append(f"placements[{idx}] ({mat}, {r}, {c}) out of range")
        key = (mat, r, c)
        if key in seen:
            problems.append(f"placements[{idx}] ({mat}, {r}, {c}) overlaps an earlier placement")
        seen.add(key)
    return problems


def apply_theta(theta, placements, n, m, f_base=None, g_base=None):
    """Write theta into base matrices at the placed entries."""
    F = shift_matrix(n) if f_base is None else np.array(f_base, dtype=float)
    G = np.zeros((n, m)) if g_base is None else np.array(g_base, dtype=float)
    for t, (mat, r, c) in zip(np.asarray(theta, dtype=float), placements):
        (F if mat == "F" else G)[r, c] = t
    return F, G


def prior_to_moments(prior: PriorSpec, n, m):
    """(Fbar, Gbar, MomentSet) for independent Gaussian theta components."""
    problems = _check_placements(prior.placements, n, m)
    if problems:
        raise ScenarioError(problems)
    Fbar, Gbar = apply_theta(prior.theta_mean, prior.placements, n, m, prior.f_base, prior.g_base)
    ms = MomentSet.zeros(n, m)
    for var, (mat, r, c) in zip(np.asarray(prior.theta_var, dtype=float), prior.placements):
        if mat == "F":
            ms.beta[r, c, r, c] = var
        else:
            ms.gamma[r, c, r, c] = var
    return Fbar, Gbar, ms


def placement_indices(placements, n, m):
    """Positions of the placed entries inside the packed (vec F, vec G) vector."""
    out = []
    for mat, r, c in placements:
        out.append(r * n + c if mat == "F" else n * n + r * m + c)
    return np.array(out, dtype=int)


# ---------------------------------------------------------------------------
# truth simulation


def step_truth(model: LdsModel, x, u, F, G, rng=None, w=None):
    """x_next = F x + G u + w, w ~ N(0, Q) drawn from rng unless given."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if w is None:
        w = rng.standard_normal(x.shape) @ _sqrt(model.Q).T
    return np.einsum("...ij,...j->...i", F, x) + np.einsum("...ij,...j->...i", G, u) + w


def measure(model: LdsModel, x, rng=None, v=None):
    x = np.asarray(x, dtype=float)
    if v is None:
        v = rng.standard_normal(x.shape[:-1] + (model.l,)) @ _sqrt(model.R).T
    return np.einsum("...ij,...j->...i", model.H, x) + v


def draw_irreducible_parameters(model: LdsModel, ms: MomentSet, rng):
    """One white-noise draw of (F, G) around the model means."""
    from .tensor_stats import pack_moments, psd_factor

    n, m = model.n, model.m
    L = psd_factor(pack_moments(ms.uncertainty_block()), name="parameter covariance")
    d = L @ rng.standard_normal(L.shape[0])
    return model.Fbar + d[: n * n].reshape(n, n), model.Gbar + d[n * n:].reshape(n, m)


def _sqrt(C):
    C = np.asarray(C, dtype=float)
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


# ---------------------------------------------------------------------------
# scenarios

THETA_MEAN = (1.51, -0.89, 0.3, 0.22, 0.57, 0.77)
THETA_VAR = (0.1, 0.1, 0.1, 0.01, 0.01, 0.1)
THETA_TRUE = (1.8, -1.01, 0.58, 0.3, 0.5, 1.0)
BENCH_PLACEMENTS = (("F", 2, 0), ("F", 2, 1), ("F", 2, 2), ("G", 0, 0), ("G", 1, 0), ("G", 2, 0))

_BUILTINS = {
    "interception": dict(mask=[0, 0, 1], probe_sigma=40.0),
    "soft_landing": dict(mask=[1, 1, 1], probe_sigma=10.0),
}


def builtin_config(name):
    if name not in _BUILTINS:
        raise ScenarioError([f"unknown scenario {name!r}; builtins are {sorted(_BUILTINS)}"])
    spec = _BUILTINS[name]
    n = 3
    return {
        "name": name,
        "n": 3,
        "m": 1,
        "l": 1,
        "horizon": 25,
        "theta_mean": list(THETA_MEAN),
        "theta_var": list(THETA_VAR),
        "theta_true": list(THETA_TRUE),
        "placements": [{"matrix": mt, "row": r, "col": c} for mt, r, c in BENCH_PLACEMENTS],
        "x0_mean": [0.0] * n,
        "x0_cov": (10.0 * np.eye(n)).tolist(),
        "q": np.eye(n).tolist(),
        "r": [[1.0]],
        "h": [[0.0, 0.0, 1.0]],
        "cost": {
            "a_terminal": np.diag(np.array(spec["mask"], float)).tolist(),
            "a_stage": np.zeros((n, n)).tolist(),
            "b_lambda": 1e-4,
            "rho": [0.0, 0.0, 20.0],
            "mask": spec["mask"],
        },
        "probe_sigma": spec["probe_sigma"],
        "runs": 1000,
        "sets": 3,
        "seed": 42,
    }


def _arr(cfg, key, problems, shape=None, ndim=None):
    if key not in cfg:
        problems.append(f"{key}: missing")
        return None
    try:
        a = np.asarray(cfg[key], dtype=float)
    except (TypeError, ValueError):
        problems.append(f"{key}: not a numeric array")
        return None
    if ndim is not None and a.ndim != ndim:
        problems.append(f"{key}: expected {ndim}-d array, got {a.ndim}-d")
        return None
    if shape is not None and a.shape != tuple(shape):
        problems.append(f"{key}: expected shape {tuple(shape)}, got {a.shape}")
        return None
    if not np.all(np.isfinite(a)):
        problems.append(f"{key}: non-finite entries")
        return None
    return a


def _int(cfg, key, problems, minimum=None):
    if key not in cfg:
        problems.append(f"{key}: missing")
        return None
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, int):
        problems.append(f"{key}: expected integer, got {v!r}")
        return None
    if minimum is not None and v < minimum:
        problems.append(f"{key}: must be >= {minimum}, got {v}")
        return None
    return v


def _psd(a, key, problems, strict=False):
    if a is None:
        return
    if not np.allclose(a, a.T, rtol=1e-10, atol=1e-12):
        problems.append(f"{key}: not symmetric")
        return
    if strict:
        try:
            np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            problems.append(f"{key}: not positive definite")
    else:
        ok, lo = psd_report(a)
        if not ok:
            problems.append(f"{key}: not positive semidefinite (min eigenvalue {lo:.3g})")


def scenario_from_dict(cfg, name=None):
    """Validate a config mapping and build a Scenario; collects every problem."""
    if not isinstance(cfg, dict):
        raise ScenarioError(["scenario: top level must be an object"])
    problems = []
    n = _int(cfg, "n", problems, 1)
    m = _int(cfg, "m", problems, 1)
    l = _int(cfg, "l", problems, 1)
    horizon = _int(cfg, "horizon", problems, 1)
    runs = _int(cfg, "runs", problems, 1)
    sets = _int(cfg, "sets", problems, 1)
    seed = _int(cfg, "seed", problems, 0)
    if None in (n, m, l):
        raise ScenarioError(problems)

    th_mean = _arr(cfg, "theta_mean", problems, ndim=1)
    P = None if th_mean is None else th_mean.shape[0]
    th_var = _arr(cfg, "theta_var", problems, shape=None if P is None else (P,))
    th_true = _arr(cfg, "theta_true", problems, shape=None if P is None else (P,))
    if th_var is not None and np.any(th_var < 0):
        problems.append("theta_var: variances must be >= 0")

    placements = []
    raw = cfg.get("placements")
    if not isinstance(raw, list):
        problems.append("placements: missing or not a list")
    else:
        for i, p in enumerate(raw):
            try:
                placements.append((str(p["matrix"]), int(p["row"]), int(p["col"])))
            except (KeyError, TypeError, ValueError):
                problems.append(f"placements[{i}]: needs matrix, row, col")
        if P is not None and len(raw) != P:
            problems.append(f"placements: {len(raw)} entries but theta_mean has {P}")
        problems.extend(_check_placements(placements, n, m))

    x0_mean = _arr(cfg, "x0_mean", problems, shape=(n,))
    x0_cov = _arr(cfg, "x0_cov", problems, shape=(n, n))
    _psd(x0_cov, "x0_cov", problems)
    q = _arr(cfg, "q", problems, shape=(n, n))
    _psd(q, "q", problems)
    r = _arr(cfg, "r", problems, shape=(l, l))
    _psd(r, "r", problems, strict=True)
    h = _arr(cfg, "h", problems, shape=(l, n))

    f_base = _arr(cfg, "f_base", problems, shape=(n, n)) if "f_base" in cfg else None
    g_base = _arr(cfg, "g_base", problems, shape=(n, m)) if "g_base" in cfg else None

    cost = cfg.get("cost")
    if not isinstance(cost, dict):
        problems.append("cost: missing or not an object")
        cost = {}
    sub = []
    a_t = _arr(cost, "a_terminal", sub, shape=(n, n))
    _psd(a_t, "a_terminal", sub)
    a_s = _arr(cost, "a_stage", sub, shape=(n, n))
    _psd(a_s, "a_stage", sub)
    b_lam = cost.get("b_lambda")
    if not isinstance(b_lam, (int, float)) or isinstance(b_lam, bool) or not b_lam > 0:
        sub.append(f"b_lambda: must be a positive number, got {b_lam!r}")
    rho = _arr(cost, "rho", sub, shape=(n,))
    mask = _arr(cost, "mask", sub, shape=(n,))
    problems.extend("cost." + s for s in sub)

    ps = cfg.get("probe_sigma")
    if not isinstance(ps, (int, float)) or isinstance(ps, bool) or ps < 0:
        problems.append(f"probe_sigma: must be a number >= 0, got {ps!r}")
    draw_x0 = cfg.get("draw_x0", False)
    if not isinstance(draw_x0, bool):
        problems.append("draw_x0: must be boolean")

    if problems:
        raise ScenarioError(problems)

    prior = PriorSpec(th_mean, th_var, tuple(placements), x0_mean, x0_cov, th_true, f_base, g_base)
    Fbar, Gbar, ms = prior_to_moments(prior, n, m)
    model = LdsModel(Fbar, Gbar, h, q, r, horizon)
    cs = CostSpec(a_t, a_s, float(b_lam) * np.eye(m), rho, mask, horizon)
    return Scenario(
        name=name or str(cfg.get("name", "custom")),
        model=model,
        prior=prior,
        cost=cs,
        probe_sigma=float(ps),
        runs=runs,
        sets=sets,
        base_seed=seed,
        draw_x0=draw_x0,
        moments=ms,
    )


def scenario_to_dict(sc: Scenario):
    """Serializable config; scenario_from_dict(scenario_to_dict(s)) rebuilds s."""
    m = sc.model
    p = sc.prior
    c = sc.cost
    cfg = {
        "name": sc.name,
        "n": m.n,
        "m": m.m,
        "l": m.l,
        "horizon": m.horizon,
        "theta_mean": p.theta_mean.tolist(),
        "theta_var": p.theta_var.tolist(),
        "theta_true": p.theta_true.tolist(),
        "placements": [{"matrix": a, "row": r, "col": col} for a, r, col in p.placements],
        "x0_mean": p.x0_mean.tolist(),
        "x0_cov": p.x0_cov.tolist(),
        "q": m.Q.tolist(),
        "r": m.R.tolist(),
        "h": m.H.tolist(),
        "cost": {
            "a_terminal": c.A_terminal.tolist(),
            "a_stage": c.A_stage.tolist(),
            "b_lambda": c.b_lambda,
            "rho": c.rho.tolist(),
            "mask": c.target_mask.tolist(),
        },
        "probe_sigma": sc.probe_sigma,
        "runs": sc.runs,
        "sets": sc.sets,
        "seed": sc.base_seed,
    }
    if p.f_base is not None:
        cfg["f_base"] = p.f_base.tolist()
    if p.g_base is not None:
        cfg["g_base"] = p.g_base.tolist()
    if sc.draw_x0:
        cfg["draw_x0"] = True
    return cfg


def build_scenario(name_or_config):
    """Builtin name ("interception", "soft_landing") or a config mapping."""
    if isinstance(name_or_config, str):
        return scenario_from_dict(builtin_config(name_or_config), name=name_or_config)
    return scenario_from_dict(name_or_config)


def load_scenario(path):
    path = Path(path)
    text = path.read_text()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}: JSON parse error at line {exc.lineno} column {exc.colno}: {exc.msg}"])
    return scenario_from_dict(cfg, name=cfg.get("name", path.stem) if isinstance(cfg, dict) else None)


def save_scenario(sc: Scenario, path):
    Path(path).write_text(json.dumps(scenario_to_dict(sc), indent=2) + "\n")


def true_parameters(sc: Scenario):
    p = sc.prior
    return apply_theta(p.theta_true, p.placements, sc.model.n, sc.model.m, p.f_base, p.g_base)
