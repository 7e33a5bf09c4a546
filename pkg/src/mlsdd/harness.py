"""Experiment orchestration: configs, single runs, sweeps, spectrum reports.

A run builds the whole pipeline (mesh, coefficients, hierarchy, patches,
per-subdomain eigenproblems, preconditioner, Krylov solve) and reports
iteration counts, coarse-space sizes, the condition-number estimate and
a parallel-time model: T_par sums, over the levels, the maximum
per-subdomain setup time (pencil + local factorization) and adds the
coarse factorization; the Krylov solve is reported separately.
"""

import configparser
import csv
import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .assembly import (DEFAULT_PENALTY_S, DEFAULT_SAFETY, assemble,
                       build_dofmap, build_patches, compute_penalties)
from .errors import InvalidSpec, MlsddError
from .factor import DEFAULT_EPSILON, DEFAULT_TAU_ZERO
from .hierarchy import build_hierarchy, build_pou
from .krylov import DEFAULT_MAXIT, DEFAULT_RESTART, DEFAULT_TOL, gmres, pcg
from .mesh import (CoefficientField, build_mesh, islands_coefficient,
                   load_cellwise_coefficients)
from .precond import build_preconditioner
from .spectral import (DEFAULT_DENSE_CUTOFF, DEFAULT_ETA, SelectionRule,
                       assemble_pencil, build_spectral_hierarchy,
                       finest_spectral_level, solve_pencil)

PROBLEMS = ("laplace", "islands2d", "islands3d", "file-coefficients")
SCHEMES = ("cg-q1", "dg-q1", "ccfv")


@dataclass
class RunConfig:
    """One experiment: problem, decomposition, GEVP and solver settings."""

    problem: str = "islands2d"
    scheme: str = "cg-q1"
    cells: tuple = (64,)
    lengths: tuple = None
    boundary: str = None
    contrast: float = 1e6
    islands_grid: int = 8
    islands_fraction: float = 1.0 / 16.0
    coefficient_file: str = None
    rhs_value: float = 1.0
    subdomains: tuple = (16,)
    delta: float = 2.0
    overlap_mode: str = "h"
    alpha: int = 1
    eta: tuple = (DEFAULT_ETA,)
    n_ev: tuple = None
    solver: str = "pcg"
    mode: str = "additive"
    tol: float = DEFAULT_TOL
    maxit: int = DEFAULT_MAXIT
    restart: int = DEFAULT_RESTART
    omega: float = 1.0
    penalty_s: float = DEFAULT_PENALTY_S
    penalty_safety: float = DEFAULT_SAFETY
    tau_zero: float = DEFAULT_TAU_ZERO
    epsilon: float = DEFAULT_EPSILON
    dense_cutoff: int = DEFAULT_DENSE_CUTOFF
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.cells = _as_int_tuple(self.cells)
        self.subdomains = _as_int_tuple(self.subdomains)
        self.eta = _as_float_tuple(self.eta)
        if self.n_ev is not None:
            self.n_ev = _as_int_tuple(self.n_ev)
        if self.lengths is not None:
            self.lengths = _as_float_tuple(self.lengths)
        self.validate()

    def validate(self):
        if self.problem not in PROBLEMS:
            raise InvalidSpec(f"unknown problem {self.problem!r}")
        if self.scheme not in SCHEMES:
            raise InvalidSpec(f"unknown scheme {self.scheme!r}")
        if self.solver not in ("pcg", "gmres"):
            raise InvalidSpec(f"unknown solver {self.solver!r}")
        if self.mode not in ("additive", "hybrid"):
            raise InvalidSpec(f"unknown mode {self.mode!r}")
        if self.alpha not in (1, 2, 3):
            raise InvalidSpec("alpha must be 1, 2 or 3")
        if any(p2 > p1 for p1, p2 in zip(self.subdomains,
                                         self.subdomains[1:])):
            raise InvalidSpec("subdomain counts must be nonincreasing "
                              "toward the coarse level (P_0 = 1 implied)")
        if self.overlap_mode not in ("h", "H"):
            raise InvalidSpec("overlap_mode must be 'h' or 'H'")
        if self.tol <= 0:
            raise InvalidSpec("tolerance must be positive")

    @property
    def dim(self):
        return 3 if self.problem == "islands3d" or len(self.cells) == 3 else 2

    def mesh_cells(self):
        if len(self.cells) == 1:
            return (self.cells[0],) * self.dim
        if len(self.cells) != self.dim:
            raise InvalidSpec("cells does not match problem dimension")
        return self.cells

    def overlap_layers(self, mesh):
        """delta as element layers: fixed for 'h', proportional to the
        subdomain extent for 'H'."""
        if self.overlap_mode == "h":
            return max(1, int(round(self.delta)))
        extent = (mesh.n_elements / self.subdomains[0]) ** (1.0 / mesh.d)
        return max(1, int(round(self.delta * extent)))

    def selection_rules(self):
        n_levels = len(self.subdomains)
        if self.n_ev is not None:
            vals = list(self.n_ev)
            vals += [vals[-1]] * (n_levels - len(vals))
            return [SelectionRule.fixed(v) for v in vals[:n_levels]]
        vals = list(self.eta)
        vals += [vals[-1]] * (n_levels - len(vals))
        return [SelectionRule.threshold(v) for v in vals[:n_levels]]

    def echo(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


def _as_int_tuple(v):
    if isinstance(v, (int, np.integer)):
        return (int(v),)
    if isinstance(v, str):
        v = v.replace(",", " ").split()
    return tuple(int(x) for x in v)


def _as_float_tuple(v):
    if isinstance(v, (int, float, np.floating)):
        return (float(v),)
    if isinstance(v, str):
        v = v.replace(",", " ").split()
    return tuple(float(x) for x in v)


def build_problem(config):
    """Mesh and coefficient field for the configured test problem."""
    cells = config.mesh_cells()
    mesh = build_mesh(config.dim, cells, lengths=config.lengths,
                      boundary_spec=config.boundary)
    if config.problem == "laplace":
        fielddata = CoefficientField.constant(mesh, 1.0)
    elif config.problem in ("islands2d", "islands3d"):
        fielddata = islands_coefficient(mesh, config.islands_grid,
                                        config.islands_fraction, 1.0,
                                        config.contrast)
    else:
        if not config.coefficient_file:
            raise InvalidSpec("file-coefficients problem needs a file path")
        fielddata = load_cellwise_coefficients(mesh, config.coefficient_file)
    return mesh, fielddata


@dataclass
class ExperimentRow:
    """One table row: counts, sizes, condition estimate and timings."""

    config: dict
    iterations: int = -1
    converged: bool = False
    residual: float = np.nan
    kappa: float = None
    n0: int = -1
    level_dims: tuple = ()
    k0: int = -1
    t_seq: float = np.nan
    t_par: float = np.nan
    t_sub_min: float = np.nan
    t_sub_max: float = np.nan
    t_coarse: float = np.nan
    t_solve: float = np.nan
    error: str = ""

    COLUMNS = ("problem", "scheme", "cells", "subdomains", "levels", "alpha",
               "selection", "overlap", "contrast", "solver", "mode", "it",
               "kappa", "n0", "dims", "k0", "t_seq", "t_par", "t_sub_min",
               "t_sub_max", "t_coarse", "t_solve", "error")

    def cells_label(self):
        return "x".join(str(c) for c in self.config["cells"])

    def selection_label(self):
        if self.config.get("n_ev"):
            return "nev=" + ",".join(str(v) for v in self.config["n_ev"])
        return "eta=" + ",".join(f"{v:g}" for v in self.config["eta"])

    def values(self):
        cfg = self.config
        return (cfg["problem"], cfg["scheme"], self.cells_label(),
                ",".join(str(p) for p in cfg["subdomains"]),
                len(cfg["subdomains"]) + 1, cfg["alpha"],
                self.selection_label(),
                f"{cfg['overlap_mode']}:{cfg['delta']:g}",
                f"{cfg['contrast']:g}", cfg["solver"], cfg["mode"],
                self.iterations, _fmt(self.kappa), self.n0,
                ",".join(str(d) for d in self.level_dims), self.k0,
                _fmt(self.t_seq), _fmt(self.t_par), _fmt(self.t_sub_min),
                _fmt(self.t_sub_max), _fmt(self.t_coarse),
                _fmt(self.t_solve), self.error)

    def as_dict(self):
        return dict(zip(self.COLUMNS, self.values()))


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.4g}" if np.isfinite(x) else ""
    return x


@dataclass
class ExperimentResult:
    """Full artifacts of a run (the row plus live objects for inspection)."""

    row: ExperimentRow
    a: object = None
    rhs: object = None
    solution: object = None
    levels: list = None
    hierarchy: object = None
    report: object = None
    state: object = None


def run_experiment(config, keep_objects=False):
    """Execute the full pipeline for one configuration.

    Module errors propagate with the config echo attached; solver
    nonconvergence is reported in the row, not raised.
    """
    try:
        return _run_experiment(config, keep_objects)
    except MlsddError as exc:
        exc.config_echo = config.echo()
        raise


def _run_experiment(config, keep_objects):
    t_start = time.perf_counter()
    mesh, fielddata = build_problem(config)
    dofmap = build_dofmap(mesh, config.scheme)
    penalty = None
    if config.scheme == "dg-q1":
        penalty = compute_penalties(mesh, fielddata, s=config.penalty_s,
                                    safety=config.penalty_safety)
    a, rhs = assemble(mesh, fielddata, dofmap, penalty=penalty,
                      f=config.rhs_value)

    t0 = time.perf_counter()
    layers = config.overlap_layers(mesh)
    hier = build_hierarchy(mesh, list(config.subdomains), layers,
                           scheme=config.scheme)
    n_levels = hier.num_levels
    pou = build_pou(mesh, dofmap, hier.levels[n_levels].elem_sets, layers,
                    level=n_levels)
    t_partition = time.perf_counter() - t0

    t0 = time.perf_counter()
    patches = build_patches(mesh, fielddata, dofmap,
                            hier.levels[n_levels].elem_sets, penalty=penalty,
                            level=n_levels)
    t_patches = time.perf_counter() - t0

    pencil_times = {}
    levels = build_spectral_hierarchy(
        a, patches, pou, hier, alpha=config.alpha,
        rules=config.selection_rules(), tau_zero=config.tau_zero,
        epsilon=config.epsilon, dense_cutoff=config.dense_cutoff,
        seed=config.seed, timings=pencil_times, threads=config.threads)

    state = build_preconditioner(levels, mode=config.mode,
                                 omega=config.omega,
                                 tau_zero=config.tau_zero,
                                 epsilon=config.epsilon)
    t_seq = time.perf_counter() - t_start

    # parallel-time model: per-level max of (pencil + local factorization),
    # plus the sequential coarse factorization
    t_par = 0.0
    sub_all = []
    for l in range(n_levels, 0, -1):
        pt = np.asarray(pencil_times.get(l, [0.0]))
        ft = np.asarray(state.factor_times.get(l, [0.0]))
        if len(ft) != len(pt):
            ft = np.resize(ft, pt.shape)
        per_sub = pt + ft
        t_par += per_sub.max()
        sub_all.extend(per_sub.tolist())
    t_coarse = sum(state.factor_times.get(0, [0.0]))
    t_par += t_coarse

    t0 = time.perf_counter()
    if config.solver == "pcg":
        x, report = pcg(a, state, rhs, tol=config.tol, maxit=config.maxit)
    else:
        x, report = gmres(a, state, rhs, tol=config.tol, maxit=config.maxit,
                          restart=config.restart)
    t_solve = time.perf_counter() - t0
    report.timings = {"partition": t_partition, "patches": t_patches,
                      "setup_total": t_seq, "solve": t_solve,
                      "coarse_factor": t_coarse, "t_par": t_par}
    report.subdomain_times = {l: pencil_times.get(l, [])
                              for l in range(1, n_levels + 1)}

    row = ExperimentRow(
        config=config.echo(), iterations=report.iterations,
        converged=report.converged, residual=report.relative_residual,
        kappa=report.kappa_estimate, n0=levels[-1].n,
        level_dims=tuple(lv.n for lv in levels), k0=hier.k0,
        t_seq=t_seq, t_par=t_par,
        t_sub_min=float(min(sub_all)) if sub_all else np.nan,
        t_sub_max=float(max(sub_all)) if sub_all else np.nan,
        t_coarse=t_coarse, t_solve=t_solve)
    if not report.converged:
        row.error = "not-converged"
    result = ExperimentResult(row=row)
    if keep_objects:
        result.a, result.rhs, result.solution = a, rhs, x
        result.levels, result.hierarchy = levels, hier
        result.report, result.state = report, state
    return result


def sweep(config, axes, paired=False):
    """Run a Cartesian (or paired) sweep over config fields.

    ``axes``: list of (field name, values iterable).  Failed runs emit a
    row tagged with the error instead of aborting the sweep.  An empty
    axis list degenerates to the single base run.
    """
    if not axes:
        combos = [()]
    elif paired:
        lengths = {len(vals) for _, vals in axes}
        if len(lengths) != 1:
            raise InvalidSpec("paired sweep needs equal-length axes")
        combos = list(zip(*[[(name, v) for v in vals]
                            for name, vals in axes]))
    else:
        combos = [()]
        for name, vals in axes:
            combos = [c + ((name, v),) for c in combos for v in vals]
    rows = []
    for combo in combos:
        cfg = replace(config, **dict(combo)) if combo else config
        try:
            rows.append(run_experiment(cfg).row)
        except MlsddError as exc:
            row = ExperimentRow(config=cfg.echo())
            row.error = f"{type(exc).__name__}: {exc}"
            rows.append(row)
    return rows


# -- spectrum analysis ------------------------------------------------------

def detect_gap(values, floor_ratio=1e-7):
    """Largest consecutive ratio jump in an ascending eigenvalue list.

    Values below ``floor_ratio * max`` are kernel artifacts of the
    regularized factorization; they are clamped to the floor so the jump
    out of the kernel cluster does not mask the physical gap between the
    isolated-inclusion modes and the bulk.  Returns
    (count_below_gap, gap_ratio).
    """
    values = np.asarray(values)
    if len(values) < 2:
        return len(values), np.inf
    floor = floor_ratio * abs(values[-1]) if values[-1] else 1e-300
    lo = np.maximum(np.abs(values[:-1]), floor)
    ratios = values[1:] / lo
    k = int(np.argmax(ratios))
    return k + 1, float(ratios[k])


def analyze_spectrum(config, subdomain=None):
    """Per-subdomain GEVP spectra of the finest level with gap detection.

    Uses the dense eigensolver path, so keep the mesh small.  Returns a
    list of dicts (one per subdomain).
    """
    mesh, fielddata = build_problem(config)
    dofmap = build_dofmap(mesh, config.scheme)
    penalty = None
    if config.scheme == "dg-q1":
        penalty = compute_penalties(mesh, fielddata, s=config.penalty_s,
                                    safety=config.penalty_safety)
    a, _ = assemble(mesh, fielddata, dofmap, penalty=penalty)
    layers = config.overlap_layers(mesh)
    hier = build_hierarchy(mesh, list(config.subdomains), layers,
                           scheme=config.scheme)
    nl = hier.num_levels
    pou = build_pou(mesh, dofmap, hier.levels[nl].elem_sets, layers, level=nl)
    patches = build_patches(mesh, fielddata, dofmap,
                            hier.levels[nl].elem_sets, penalty=penalty,
                            level=nl)
    lv = finest_spectral_level(a, patches, pou, level=nl)
    subs = range(lv.n_subdomains) if subdomain is None else [subdomain]
    out = []
    rule = config.selection_rules()[0]
    for i in subs:
        pencil = assemble_pencil(lv, i, config.alpha)
        eig = solve_pencil(pencil, rule, tau_zero=config.tau_zero,
                           epsilon=config.epsilon,
                           dense_cutoff=max(config.dense_cutoff,
                                            len(pencil.dofs)),
                           seed=config.seed, warn_empty=False)
        below, ratio = detect_gap(eig.spectrum)
        touches_dirichlet = eig.n_kernel == 0
        out.append({
            "subdomain": i,
            "n_dofs": int(len(pencil.dofs)),
            "selected": eig.m,
            "kernel_dim": eig.n_kernel,
            "touches_dirichlet": bool(touches_dirichlet),
            "count_below_gap": below,
            "gap_ratio": ratio,
            "eigenvalues": eig.spectrum.tolist(),
        })
    return out


# -- emission ---------------------------------------------------------------

def rows_to_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ExperimentRow.COLUMNS)
        for row in rows:
            writer.writerow(row.values())


def format_table(rows):
    """Aligned text table of experiment rows."""
    cols = ExperimentRow.COLUMNS
    data = [tuple(str(v) for v in row.values()) for row in rows]
    widths = [max(len(c), *(len(d[k]) for d in data)) if data else len(c)
              for k, c in enumerate(cols)]
    lines = [" ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip()]
    lines.append(" ".join("-" * w for w in widths))
    for d in data:
        lines.append(" ".join(v.ljust(w) for v, w in zip(d, widths)).rstrip())
    return "\n".join(lines)


def spectrum_to_csv(reports, path, level=None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "subdomain", "k", "lambda"])
        for rep in reports:
            for k, lam in enumerate(rep["eigenvalues"]):
                writer.writerow([level if level is not None else "",
                                 rep["subdomain"], k + 1, repr(lam)])


def residuals_to_csv(report, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "residual"])
        for k, r in enumerate(report.residual_history):
            writer.writerow([k, repr(float(r))])


def report_to_json(row, report, path):
    payload = {"row": row.as_dict(), "config": row.config}
    if report is not None:
        payload["krylov"] = report.as_dict()
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=str)


# -- oracle checks -----------------------------------------------------------

def theory_constants(config, result, penalty=None):
    """(k0, a0, b0, c1) entering the condition bounds for this run."""
    from .spectral import c1_constant, dg_c2_constant
    k0 = result.hierarchy.k0
    if config.scheme == "cg-q1":
        a0 = b0 = float(k0)
        c2 = None
    else:
        from .spectral import dg_a0_constant
        if penalty is None:
            mesh, fielddata = build_problem(config)
            penalty = compute_penalties(mesh, fielddata, s=config.penalty_s,
                                        safety=config.penalty_safety)
        b0 = float(k0)
        a0 = float(dg_a0_constant(penalty, k0, config.dim))
        c2 = dg_c2_constant(penalty, config.dim)
    rules = config.selection_rules()
    if any(r.mode != "eta" for r in rules):
        raise InvalidSpec("theoretical bounds need threshold selection")
    c1 = max(c1_constant(config.alpha, r.value, c2=c2) for r in rules)
    return k0, a0, b0, c1


def run_oracle(config):
    """Dense brute-force verification of a (small) configuration.

    Checks: partition-of-unity exactness, patch-sum identity, additive
    preconditioner symmetry/definiteness, dense condition number against
    the theoretical bound, and the Krylov solution against a sparse
    direct solve.  Returns (ok, list of message strings).
    """
    import scipy.sparse.linalg as spla
    from .precond import condition_bound_report, dense_kappa
    msgs = []
    ok = True

    def check(name, passed, detail=""):
        nonlocal ok
        ok &= bool(passed)
        msgs.append(f"[{'PASS' if passed else 'FAIL'}] {name}"
                    + (f": {detail}" if detail else ""))

    result = run_experiment(config, keep_objects=True)
    a, rhs = result.a, result.rhs
    if a.dim > 6000:
        raise InvalidSpec("oracle checks need a small problem (<= 6000 dofs)")
    levels, hier = result.levels, result.hierarchy

    rng = np.random.default_rng(config.seed)
    lvf = levels[0]
    err = 0.0
    for _ in range(20):
        v = rng.standard_normal(lvf.n)
        z = np.zeros_like(v)
        for dofs, w in zip(lvf.dof_lists, lvf.chi):
            z[dofs] += w * v[dofs]
        err = max(err, float(np.abs(z - v).max()))
    check("pou-exactness", err == 0.0, f"max err {err:.2e}")

    mesh, fielddata = build_problem(config)
    dofmap = build_dofmap(mesh, config.scheme)
    penalty = None
    if config.scheme == "dg-q1":
        penalty = compute_penalties(mesh, fielddata, s=config.penalty_s,
                                    safety=config.penalty_safety)
    nl = hier.num_levels
    patches = build_patches(mesh, fielddata, dofmap,
                            hier.levels[nl].elem_sets, penalty=penalty)
    diff = np.abs((patches.total().csr - a.csr).toarray()).max()
    scale = a.max_abs()
    check("patch-sum", diff <= 1e-13 * scale, f"rel err {diff / scale:.2e}")

    state = result.state
    if config.mode == "additive":
        u, v = rng.standard_normal(a.dim), rng.standard_normal(a.dim)
        bu, bv = state.apply(u), state.apply(v)
        sym = abs(u @ bv - v @ bu) / max(abs(u @ bv), 1e-300)
        check("additive-symmetry", sym <= 1e-12, f"rel asym {sym:.2e}")
        pd = min(float(r @ state.apply(r))
                 for r in [rng.standard_normal(a.dim) for _ in range(20)])
        check("additive-definiteness", pd > 0.0, f"min <Br,r> {pd:.3e}")
        kappa, _ = dense_kappa(a, state)
        try:
            k0, a0, b0, c1 = theory_constants(config, result, penalty)
            rep = condition_bound_report(k0, hier.num_levels, a0, b0, c1,
                                         measured=kappa)
            check("condition-bound", rep.satisfied,
                  f"kappa {kappa:.3g} <= bound {rep.applicable_bound:.3g}")
        except InvalidSpec as exc:
            msgs.append(f"[SKIP] condition-bound: {exc}")
    xd = spla.spsolve(a.csr.tocsc(), rhs)
    rel = np.linalg.norm(result.solution - xd) / np.linalg.norm(xd)
    check("direct-solve-agreement", rel <= 1e-6, f"rel err {rel:.2e}")
    return ok, msgs


# -- config file ------------------------------------------------------------

_SECTION_FIELDS = {
    "problem": ("problem", "scheme", "cells", "lengths", "boundary",
                "contrast", "islands_grid", "islands_fraction",
                "coefficient_file", "rhs_value"),
    "decomposition": ("subdomains", "delta", "overlap_mode"),
    "spectral": ("alpha", "eta", "n_ev", "tau_zero", "epsilon",
                 "dense_cutoff"),
    "solver": ("solver", "mode", "tol", "maxit", "restart", "omega",
               "penalty_s", "penalty_safety"),
    "run": ("seed", "threads"),
}

_INT_FIELDS = {"islands_grid", "alpha", "maxit", "restart", "dense_cutoff",
               "seed", "threads"}
_FLOAT_FIELDS = {"contrast", "islands_fraction", "rhs_value", "delta", "tol",
                 "omega", "penalty_s", "penalty_safety", "tau_zero",
                 "epsilon"}
_TUPLE_FIELDS = {"cells", "lengths", "subdomains", "eta", "n_ev"}


def _convert(name, raw):
    raw = raw.strip()
    if raw.lower() in ("none", ""):
        return None
    if name in _INT_FIELDS:
        return int(raw)
    if name in _FLOAT_FIELDS:
        return float(raw)
    if name in _TUPLE_FIELDS:
        return tuple(float(t) if name in ("eta", "lengths") else int(float(t))
                     for t in raw.replace(",", " ").split())
    return raw


def load_config(path=None, overrides=()):
    """RunConfig from a key = value config file plus override strings.

    Overrides are "key=value" (section-less); unknown keys raise.
    """
    kwargs = {}
    known = {f.name for f in fields(RunConfig)}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        with open(path) as fh:
            parser.read_file(fh)
        for section in parser.sections():
            if section not in _SECTION_FIELDS:
                raise InvalidSpec(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in _SECTION_FIELDS[section]:
                    raise InvalidSpec(
                        f"unknown key {key!r} in section [{section}]")
                kwargs[key] = _convert(key, raw)
    for text in overrides:
        if "=" not in text:
            raise InvalidSpec(f"override {text!r} is not key=value")
        key, raw = text.split("=", 1)
        key = key.strip().split(".")[-1]
        if key not in known:
            raise InvalidSpec(f"unknown config key {key!r}")
        kwargs[key] = _convert(key, raw)
    return RunConfig(**kwargs)


def save_config(config, path):
    parser = configparser.ConfigParser()
    for section, names in _SECTION_FIELDS.items():
        parser[section] = {}
        for name in names:
            v = getattr(config, name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = " ".join(f"{x:g}" if isinstance(x, float) else str(x)
                             for x in v)
            parser[section][name] = str(v)
    with open(path, "w") as fh:
        parser.write(fh)
