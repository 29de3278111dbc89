"""Config-driven experiments on synthetic CP problems.

A config is a JSON object::

    {
      "schema": 1,
      "problem": {"dims": [20, 20, 20], "rank": 3, "collinearity": 0.5,
                  "noise_homo": 1, "noise_hetero": 1, "seed": 0},
      "start": {"kind": "random", "seed": 100, "scale": 1e-3},
      "methods": [{"kind": "fixed_point", "map": "als"},
                  {"kind": "saa", "window": 1, "betas": "theorem", "map": "als"}],
      "max_iter": 300, "f_tol": 1e-26, "window": 20,
      "output": "out"
    }

``problem`` may instead give ``{"path": "tensor.txt", "seed": 0}`` for a cached
tensor. ``betas`` may be a list, ``"theorem"`` (closed-form optimum at ``x*``)
or ``"bruteforce"`` (grid search over -1:0.05:1). For the SD map ``alpha`` is a
number, ``"theorem"`` or ``"1/L"``.
"""

from dataclasses import dataclass, field
import json
import os
import warnings

import numpy as np

from . import accelerate as acc
from . import cpd
from . import krylov
from . import spectral
from .errors import BoundUnavailableError, DivergenceError, NumericalError, PreconditionError
from .tensor import SyntheticSpec, generate_synthetic, load_tensor, save_tensor

SCHEMA_VERSION = 1
COEFF_GRID = (-1.0, 1.0, 0.05)


class ConfigError(ValueError):
    """Invalid experiment config. ``key`` names the offending entry."""

    def __init__(self, key, message, line=None):
        where = f" (line {line})" if line else ""
        super().__init__(f"{key}: {message}{where}")
        self.key = key
        self.line = line


_TOP_KEYS = {"schema", "problem", "start", "methods", "max_iter", "f_tol", "window",
             "output", "analysis", "seeds", "fov_angles"}
_PROBLEM_KEYS = {"dims", "rank", "collinearity", "noise_homo", "noise_hetero", "seed", "path"}
_START_KEYS = {"kind", "seed", "scale"}
_METHOD_KEYS = {"name", "kind", "window", "betas", "map", "alpha", "globalize", "max_iter"}
_ANALYSIS_KEYS = {"spectrum", "bounds", "fov", "gmres_compare"}


@dataclass
class MethodEntry:
    label: str
    kind: str
    window: object
    betas: object
    fmap: str
    alpha: object
    globalize: bool
    max_iter: int


@dataclass
class ExperimentConfig:
    problem: dict
    methods: list
    start: dict
    max_iter: int = 300
    f_tol: float = 1e-26
    window: int = 20
    output: str = "out"
    analysis: dict = field(default_factory=dict)
    seeds: list = None
    fov_angles: int = 512
    base_dir: str = "."

    @property
    def seed(self):
        return int(self.problem["seed"])


def _line_of(text, key):
    if text is None:
        return None
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def _check_keys(obj, allowed, where, text):
    if not isinstance(obj, dict):
        raise ConfigError(where, "must be an object", _line_of(text, where.split(".")[-1]))
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}", "unknown key", _line_of(text, k))


def _number(value, key, text, positive=False, integer=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    if integer:
        ok = ok and float(value).is_integer()
    if not ok or (positive and value <= 0):
        kind = "positive " if positive else ""
        kind += "integer" if integer else "number"
        raise ConfigError(key, f"expected a {kind}, got {value!r}", _line_of(text, key.split(".")[-1]))
    return int(value) if integer else float(value)


def parse_config(data, text=None, base_dir="."):
    """Validate a decoded config object and return an :class:`ExperimentConfig`."""
    _check_keys(data, _TOP_KEYS, "config", text)
    if data.get("schema") != SCHEMA_VERSION:
        raise ConfigError("config.schema", f"expected schema {SCHEMA_VERSION}, got "
                          f"{data.get('schema')!r}", _line_of(text, "schema"))
    prob = data.get("problem")
    if prob is None:
        raise ConfigError("config.problem", "missing")
    _check_keys(prob, _PROBLEM_KEYS, "problem", text)
    if "seed" not in prob:
        raise ConfigError("problem.seed", "a seed is mandatory", _line_of(text, "problem"))
    _number(prob["seed"], "problem.seed", text, integer=True)
    if "path" not in prob:
        try:
            SyntheticSpec(**{k: v for k, v in prob.items() if k != "path"})
        except (TypeError, ValueError) as exc:
            raise ConfigError("problem", str(exc), _line_of(text, "problem")) from exc
    elif "rank" not in prob:
        raise ConfigError("problem.rank", "required with 'path'", _line_of(text, "path"))

    start = data.get("start", {})
    _check_keys(start, _START_KEYS, "start", text)
    start = {"kind": "random", "seed": 100 + int(prob["seed"]), "scale": 1e-3, **start}
    if start["kind"] not in ("random", "perturbed"):
        raise ConfigError("start.kind", f"unknown start {start['kind']!r}", _line_of(text, "kind"))

    methods = data.get("methods")
    if not isinstance(methods, list) or not methods:
        raise ConfigError("config.methods", "need at least one method", _line_of(text, "methods"))
    entries = []
    for i, m in enumerate(methods):
        where = f"methods[{i}]"
        _check_keys(m, _METHOD_KEYS, where, text)
        kind = str(m.get("kind", ""))
        window = m.get("window", 0 if kind in ("fixed_point",) else None)
        if window in ("inf", "infinity"):
            window = None
        betas = m.get("betas", ())
        try:
            probe_betas = ()
            if isinstance(betas, list):
                probe_betas = betas
            elif kind.lower() in acc.STATIONARY:
                if betas not in ("theorem", "bruteforce"):
                    raise ValueError(f"betas must be a list, 'theorem' or 'bruteforce', got {betas!r}")
                n = (window or 0) + 1 if kind.lower() == "sngmres" else (window or 0)
                probe_betas = [0.0] * n
            spec = acc.MethodSpec(kind, window, tuple(probe_betas), bool(m.get("globalize", False)))
        except (TypeError, ValueError) as exc:
            bad_kind = "kind" in str(exc)
            line = (_line_of(text, kind) if bad_kind and kind else None) or _line_of(text, "kind")
            raise ConfigError(f"{where}.kind" if bad_kind else where, str(exc), line) from exc
        fmap = m.get("map", "als")
        if fmap not in ("als", "sd"):
            raise ConfigError(f"{where}.map", f"unknown map {fmap!r}", _line_of(text, "map"))
        alpha = m.get("alpha")
        if fmap == "sd":
            if alpha is None:
                raise ConfigError(f"{where}.alpha", "the SD map needs alpha", _line_of(text, "map"))
            if alpha not in ("theorem", "1/L"):
                alpha = _number(alpha, f"{where}.alpha", text, positive=True)
        if betas == "theorem" and not (spec.window == 1 and spec.kind in ("saa", "sngmresr")):
            raise ConfigError(f"{where}.betas", "closed-form coefficients exist for saa/sngmresr "
                              "with window 1 only", _line_of(text, "betas"))
        if betas == "bruteforce" and spec.window not in (1, 2):
            raise ConfigError(f"{where}.betas", "brute force supports window 1 or 2",
                              _line_of(text, "betas"))
        label = m.get("name") or _default_label(spec, fmap)
        entries.append(MethodEntry(label, spec.kind, spec.window, betas, fmap, alpha,
                                   spec.globalize,
                                   _number(m.get("max_iter", data.get("max_iter", 300)),
                                           f"{where}.max_iter", text, positive=True, integer=True)))
    labels = [e.label for e in entries]
    if len(set(labels)) != len(labels):
        raise ConfigError("config.methods", "method names must be unique", _line_of(text, "methods"))

    analysis = data.get("analysis", {})
    _check_keys(analysis, _ANALYSIS_KEYS, "analysis", text)
    seeds = data.get("seeds")
    if seeds is not None:
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("config.seeds", "must be a nonempty list", _line_of(text, "seeds"))
        seeds = [_number(s, "config.seeds", text, integer=True) for s in seeds]
    return ExperimentConfig(
        problem=dict(prob), methods=entries, start=start,
        max_iter=_number(data.get("max_iter", 300), "config.max_iter", text, positive=True,
                         integer=True),
        f_tol=_number(data.get("f_tol", 1e-26), "config.f_tol", text),
        window=_number(data.get("window", 20), "config.window", text, positive=True, integer=True),
        output=str(data.get("output", "out")),
        analysis=dict(analysis), seeds=seeds,
        fov_angles=_number(data.get("fov_angles", 512), "config.fov_angles", text, positive=True,
                           integer=True),
        base_dir=base_dir)


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc.msg}", exc.lineno) from exc
    return parse_config(data, text, os.path.dirname(os.path.abspath(path)))


def _default_label(spec, fmap):
    w = "inf" if spec.window is None else str(spec.window)
    if spec.kind in ("fixed_point", "nesterov"):
        return f"{spec.kind}-{fmap}"
    return f"{spec.kind}{w}-{fmap}"


# ---------------------------------------------------------------- problem setup

@dataclass
class Instance:
    """A problem with its refined fixed point and linearization."""

    problem: cpd.CpdProblem
    seed: int
    x0: np.ndarray
    xstar: np.ndarray
    fstar: float
    H: np.ndarray = None
    J_als: np.ndarray = None
    kappa_bar: float = None
    L: float = None
    ell: float = None
    als_report: spectral.SpectralReport = None

    @property
    def num_degenerate(self):
        return self.problem.num_degenerate

    @property
    def rho_q(self):
        return self.als_report.rho


def build_problem(problem_cfg, base_dir=".", seed=None):
    """CpdProblem from a config section; ``seed`` overrides the configured seed."""
    if "path" in problem_cfg:
        path = problem_cfg["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        data, rank = load_tensor(path)
        return cpd.CpdProblem(data, int(problem_cfg.get("rank", rank)))
    cfg = {k: v for k, v in problem_cfg.items() if k != "path"}
    if seed is not None:
        cfg["seed"] = seed
    spec = SyntheticSpec(**cfg)
    data, _ = generate_synthetic(spec)
    return cpd.CpdProblem(data, spec.rank)


def prepare_instance(config, seed=None, linearize=True):
    """Generate the problem, refine ``x*`` by ALS from the seeded start and
    (optionally) compute the Hessian, ALS Jacobian and their spectra."""
    seed = config.seed if seed is None else int(seed)
    problem = build_problem(config.problem, config.base_dir, seed)
    start_seed = int(config.start["seed"]) + (seed - config.seed)
    x0 = problem.random_point(np.random.default_rng(start_seed))
    xstar = cpd.refine_fixed_point(problem, x0)
    inst = Instance(problem, seed, x0, xstar, cpd.objective(problem, xstar))
    if linearize:
        linearize_instance(inst)
    return inst


def linearize_instance(inst):
    p = inst.problem
    inst.H = cpd.hessian(p, inst.xstar, mode="analytic")
    inst.kappa_bar, inst.L, inst.ell = cpd.modified_condition_number(inst.H, inst.num_degenerate)
    inst.J_als = cpd.als_jacobian_from_hessian(inst.H, p.block_sizes)
    inst.als_report = spectral.modified_spectral_radius(inst.J_als, inst.num_degenerate, 1.0)
    return inst


def start_point(config, inst):
    if config.start["kind"] == "random":
        return inst.x0.copy()
    rng = np.random.default_rng(int(config.start["seed"]))
    return inst.xstar + float(config.start["scale"]) * rng.standard_normal(inst.xstar.size)


# ---------------------------------------------------------------- method resolution

@dataclass
class ResolvedMethod:
    entry: MethodEntry
    spec: acc.MethodSpec
    alpha: float
    theory_rho: float = None
    theory_source: str = None
    extra: dict = field(default_factory=dict)


def resolve_method(entry, inst):
    """Turn a config entry into a runnable spec with coefficients and theory value."""
    nd = inst.num_degenerate
    alpha = None
    b = None
    betas = entry.betas
    extra = {}
    if entry.fmap == "sd":
        if entry.alpha == "theorem":
            if entry.kind == "saa" and betas == "theorem":
                alpha, b, rho = spectral.optimal_sd_params(inst.L, inst.ell, "saa_optimal")
                extra["closed_form_rho"] = (rho, "sAA(1)-SD optimal (alpha*, beta*)")
            elif entry.kind == "sngmresr" and betas == "theorem":
                alpha, b, rho = spectral.optimal_sd_params(inst.L, inst.ell, "sngmresr_optimal")
                extra["closed_form_rho"] = (rho, "sNGMRES-R(1)-SD optimal")
            else:
                alpha, _, rho = spectral.optimal_sd_params(inst.L, inst.ell, "sd")
                extra["closed_form_rho"] = (rho, "SD optimal step (kappa-1)/(kappa+1)")
        elif entry.alpha == "1/L":
            alpha = 1.0 / inst.L
            if entry.kind == "saa" and betas == "theorem":
                _, b, rho = spectral.optimal_sd_params(inst.L, inst.ell, "saa_alpha_1_over_L")
                extra["closed_form_rho"] = (rho, "sAA(1)-SD with alpha = 1/L")
        else:
            alpha = float(entry.alpha)
        qprime = np.eye(inst.H.shape[0]) - alpha * inst.H
    else:
        qprime = inst.J_als
    qrep = spectral.modified_spectral_radius(qprime, nd, 1.0) if entry.fmap == "sd" \
        else inst.als_report

    if betas == "theorem":
        if entry.fmap == "sd":
            if b is None:
                raise ValueError(f"{entry.label}: theorem coefficients on the SD map need "
                                 "alpha 'theorem' or '1/L'")
        else:
            variant = "saa" if entry.kind == "saa" else "sngmresr"
            lower, b = spectral.complex_lower_bound(qrep.rho, variant)
            extra["closed_form_rho"] = (lower, f"{variant}(1) optimal factor for rho_q' "
                                        "(exact when the dominant eigenvalue is real)")
        betas = (b,)
    elif betas == "bruteforce":
        bf, rho = spectral.brute_force_beta(qrep.eigenvalues, entry.kind, entry.window,
                                            grid=COEFF_GRID, num_excluded=nd)
        betas = tuple(bf)
        extra["bruteforce_rho"] = rho
    else:
        betas = tuple(betas or ())
    spec = acc.MethodSpec(entry.kind, entry.window, betas, entry.globalize)

    theory, source = None, None
    if entry.kind == "fixed_point":
        theory, source = qrep.rho, "modified spectral radius of q'"
    elif spec.stationary:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            T = spectral.build_companion(qprime, spec.kind, spec.betas).matrix
            theory = spectral.modified_spectral_radius(T, nd, 1.0).rho
        source = "modified spectral radius of the companion matrix T"
    return ResolvedMethod(entry, spec, alpha, theory, source, extra)


def run_method(resolved, inst, x_start, max_iter, f_tol):
    p = inst.problem
    if resolved.entry.fmap == "sd":
        alpha = resolved.alpha
        q = lambda x: cpd.q_sd(p, x, alpha)          # noqa: E731
    else:
        q = lambda x: cpd.q_als(p, x)                # noqa: E731
    kwargs = dict(f=lambda x: cpd.objective(p, x), grad=lambda x: cpd.gradient(p, x),
                  gap=lambda x: cpd.objective_gap(p, x, inst.xstar),
                  max_iter=max_iter, f_tol=f_tol)
    runner = acc.run_stationary if resolved.spec.stationary else acc.run_accelerated
    return runner(q, resolved.spec, x_start, **kwargs)


def same_basin(inst, x, tol=1e-6):
    """True when the reconstruction of ``x`` matches that of ``x*`` to ``tol`` (relative)."""
    p = inst.problem
    diff = cpd.tensor_difference(p, x, inst.xstar)
    scale = max(1.0, float(np.linalg.norm(p.data)))
    return float(np.linalg.norm(diff)) <= tol * scale


# ---------------------------------------------------------------- commands

def _fmt(v):
    return None if v is None else float(f"{float(v):.17g}")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _safe(label):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in label)


def cmd_run(config):
    """Run every configured method; write traces, ``report.json`` and ``manifest.json``.

    Returns ``(report, status)``; status 3 means some method diverged.
    """
    out = config.output if os.path.isabs(config.output) else \
        os.path.join(config.base_dir, config.output)
    os.makedirs(out, exist_ok=True)
    inst = prepare_instance(config)
    files = []
    save_tensor(os.path.join(out, "problem.tensor"), inst.problem.data, inst.problem.rank)
    cpd.FactorPoint(inst.problem.factors(inst.xstar)).save(os.path.join(out, "xstar.txt"))
    files += ["problem.tensor", "xstar.txt"]
    x_start = start_point(config, inst)
    report = {"schema": SCHEMA_VERSION, "seed": inst.seed, "f_star": _fmt(inst.fstar),
              "kappa_bar": _fmt(inst.kappa_bar), "L": _fmt(inst.L), "ell": _fmt(inst.ell),
              "rho_q_als": _fmt(inst.rho_q), "methods": []}
    status = 0
    for i, entry in enumerate(config.methods):
        res = resolve_method(entry, inst)
        row = {"name": entry.label, "kind": res.spec.kind, "map": entry.fmap,
               "window": res.spec.window, "betas": [_fmt(b) for b in res.spec.betas],
               "alpha": _fmt(res.alpha), "theory_rho": _fmt(res.theory_rho),
               "theory_source": res.theory_source}
        for key, val in res.extra.items():
            if isinstance(val, tuple):
                row[key] = {"value": _fmt(val[0]), "source": val[1]}
            else:
                row[key] = _fmt(val)
        fname = f"trace_{i:02d}_{_safe(entry.label)}.csv"
        try:
            trace = run_method(res, inst, x_start, entry.max_iter, config.f_tol)
        except DivergenceError as exc:
            trace = exc.trace
            status = 3
            row["status"] = "diverged"
        else:
            row["status"] = trace.status
        trace.to_csv(os.path.join(out, fname))
        files.append(fname)
        row["trace"] = fname
        row["iterations"] = len(trace) - 1
        if row["status"] != "diverged":
            row["same_basin"] = bool(same_basin(inst, trace.x))
            try:
                if row["same_basin"]:
                    rho_hat = acc.estimate_convergence_factor(trace, window=config.window)
                else:
                    fin = trace.f[-1]
                    rho_hat = acc.estimate_convergence_factor(trace, f_star=fin,
                                                              window=config.window)
                row["rho_hat"] = _fmt(rho_hat)
            except ValueError as exc:
                row["rho_hat"] = None
                row["rho_hat_note"] = str(exc)
        report["methods"].append(row)
    if config.analysis.get("spectrum") or config.analysis.get("bounds"):
        report["bounds"] = instance_bounds(inst)
    _write_json(os.path.join(out, "report.json"), report)
    files.append("report.json")
    _write_json(os.path.join(out, "manifest.json"), {"files": files})
    return report, status


def instance_bounds(inst):
    """Closed-form factors and bounds for an instance, each with its formula name."""
    rq = inst.rho_q
    out = {}
    lower, beta = spectral.complex_lower_bound(rq, "saa")
    out["rho_p"] = {"value": _fmt(lower), "beta": _fmt(beta),
                    "source": "sAA(1) lower bound 1 - sqrt(1 - rho_q')"}
    lower, beta = spectral.complex_lower_bound(rq, "sngmresr")
    out["rho_pN"] = {"value": _fmt(lower), "beta": _fmt(beta),
                     "source": "sNGMRES-R(1) lower bound rho/(1 + sqrt(1 - rho^2))"}
    try:
        weak, _ = spectral.weaker_saa_lower_bound(inst.als_report.eigenvalues,
                                                  inst.num_degenerate)
        out["rho_p_weak"] = {"value": _fmt(weak),
                             "source": "sAA(1) bound from largest nonnegative real eigenvalue"}
    except BoundUnavailableError:
        out["rho_p_weak"] = None
    eigs = inst.als_report.eigenvalues
    kept = eigs[np.argsort(np.abs(eigs - 1), kind="stable")[inst.num_degenerate:]]
    r1, r2 = float(np.max(np.abs(kept.real))), float(np.max(np.abs(kept.imag)))
    out["box"] = {"r1": _fmt(r1), "r2": _fmt(r2)}
    try:
        d1, d2, a = spectral.rect_bounds_sngmres_r1(r1, r2)
        out["delta1"], out["delta2"], out["a_star"] = _fmt(d1), _fmt(d2), _fmt(a)
    except BoundUnavailableError as exc:
        out["delta1"], out["delta2"] = _fmt(exc.delta1), None
    for variant in ("sd", "saa_alpha_1_over_L", "saa_optimal", "sngmresr_optimal"):
        alpha, beta, rho = spectral.optimal_sd_params(inst.L, inst.ell, variant.lower())
        out[f"sd_{variant.lower()}"] = {"alpha": _fmt(alpha), "beta": _fmt(beta),
                                        "rho": _fmt(rho)}
    out["dominant_is_real"] = bool(abs(inst.als_report.dominant_imag) < 1e-8)
    return out


def cmd_spectrum(config, fmap="als", method="saa1", xstar_path=None, alpha=None):
    """Eigenvalues of ``q'`` and of the companion matrix for ``method`` with its
    closed-form coefficient, plus the instance bounds."""
    problem = build_problem(config.problem, config.base_dir)
    if xstar_path is not None:
        xstar = cpd.FactorPoint.load(xstar_path).flatten()
        tol = cpd.default_gradient_tol(problem)
        gnorm = float(np.linalg.norm(cpd.gradient(problem, xstar)))
        if gnorm > tol:
            raise PreconditionError(f"x* is not a fixed point: ||g|| = {gnorm:.3e} > {tol:.3e}")
        inst = Instance(problem, config.seed, None, xstar, cpd.objective(problem, xstar))
        linearize_instance(inst)
    else:
        inst = prepare_instance(config)
    nd = inst.num_degenerate
    if fmap == "sd":
        if alpha is None:
            alpha, _, _ = spectral.optimal_sd_params(inst.L, inst.ell, "sd")
        qprime = np.eye(inst.H.shape[0]) - alpha * inst.H
        qrep = spectral.modified_spectral_radius(qprime, nd, 1.0)
    elif fmap == "als":
        qprime, qrep = inst.J_als, inst.als_report
    else:
        raise ValueError(f"unknown map {fmap!r}")
    variants = {"saa1": "saa", "sngmresr1": "sngmresr"}
    if method not in variants:
        raise ValueError(f"unknown method {method!r}; expected saa1 or sngmresr1")
    variant = variants[method]
    if fmap == "sd":
        key = "saa_optimal" if variant == "saa" else "sngmresr_optimal"
        alpha_t, beta, rho_formula = spectral.optimal_sd_params(inst.L, inst.ell, key)
        qp_method = np.eye(inst.H.shape[0]) - alpha_t * inst.H
    else:
        rho_formula, beta = spectral.complex_lower_bound(qrep.rho, variant)
        qp_method = qprime
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        T = spectral.build_companion(qp_method, variant, (beta,)).matrix
        trep = spectral.modified_spectral_radius(T, nd, 1.0)
    qrep.kappa_bar, qrep.L, qrep.ell = inst.kappa_bar, inst.L, inst.ell
    hrep = spectral.modified_spectral_radius(inst.H, nd, 0.0)
    return {
        "map": fmap, "alpha": _fmt(alpha), "method": method,
        "gnorm_xstar": _fmt(np.linalg.norm(cpd.gradient(inst.problem, inst.xstar))),
        "qprime": qrep.to_dict(),
        "qprime_excluded": [[_fmt(z.real), _fmt(z.imag)] for z in qrep.excluded],
        "qprime_dominant_imag": _fmt(qrep.dominant_imag),
        "hessian_excluded": [_fmt(z.real) for z in hrep.excluded],
        "companion": {"beta": _fmt(beta), "rho": _fmt(trep.rho),
                      "eigs_re": [_fmt(v) for v in trep.eigenvalues.real],
                      "eigs_im": [_fmt(v) for v in trep.eigenvalues.imag],
                      "formula_rho": _fmt(rho_formula)},
        "bounds": instance_bounds(inst),
    }


TABLE_KINDS = ("sd_factors", "als_bounds", "bruteforce", "gmres_bounds")


def _seeds(config):
    return config.seeds if config.seeds else [config.seed]


def _measure(inst, entry, config, x_start):
    res = resolve_method(entry, inst)
    try:
        trace = run_method(res, inst, x_start, entry.max_iter, config.f_tol)
        return res, acc.estimate_convergence_factor(trace, window=config.window)
    except (DivergenceError, ValueError):
        return res, None


def table_sd_factors(config=None, kappa_bar=None):
    """Rows ``(seed, kappa_bar, rho_sd, rho_saa_1L, rho_saa_opt, rho_sngmresr)`` of theory
    values, plus measured factors when computed from instances."""
    header = ["seed", "kappa_bar", "rho_sd", "rho_saa_alpha_1_over_L", "rho_saa_optimal",
              "rho_sngmresr_optimal"]
    if kappa_bar is not None:
        row = ["", kappa_bar] + [spectral.optimal_sd_params(kappa_bar, 1.0, v)[2]
                                 for v in ("sd", "saa_alpha_1_over_l", "saa_optimal",
                                           "sngmresr_optimal")]
        return header, [row]
    header += ["measured_sd", "measured_saa_optimal", "measured_sngmresr_optimal"]
    rows = []
    entries = [MethodEntry("sd", "fixed_point", 0, (), "sd", "theorem", False, config.max_iter),
               MethodEntry("saa", "saa", 1, "theorem", "sd", "theorem", False, config.max_iter),
               MethodEntry("sngmresr", "sngmresr", 1, "theorem", "sd", "theorem", False,
                           config.max_iter)]
    for seed in _seeds(config):
        inst = prepare_instance(config, seed)
        theory = [spectral.optimal_sd_params(inst.L, inst.ell, v)[2]
                  for v in ("sd", "saa_alpha_1_over_l", "saa_optimal", "sngmresr_optimal")]
        x_start = start_point(config, inst)
        measured = [_measure(inst, e, config, x_start)[1] for e in entries]
        rows.append([seed, inst.kappa_bar] + theory + measured)
    return header, rows


def table_als_bounds(config):
    header = ["seed", "rho_q", "dominant_imag", "rho_p", "rho_pN", "r1", "r2", "delta1",
              "bruteforce_sngmresr_rho", "delta2", "bruteforce_saa_rho", "sandwich_ok"]
    rows = []
    for seed in _seeds(config):
        inst = prepare_instance(config, seed)
        b = instance_bounds(inst)
        eigs = inst.als_report.eigenvalues
        _, bfr = spectral.brute_force_beta(eigs, "sngmresr", 1, COEFF_GRID, inst.num_degenerate)
        _, bfa = spectral.brute_force_beta(eigs, "saa", 1, COEFF_GRID, inst.num_degenerate)
        d1, d2 = b["delta1"], b["delta2"]
        ok = d1 is not None and d1 <= bfr and (d2 is None or bfr <= d2)
        rows.append([seed, inst.rho_q, inst.als_report.dominant_imag, b["rho_p"]["value"],
                     b["rho_pN"]["value"], b["box"]["r1"], b["box"]["r2"], d1, bfr, d2, bfa,
                     int(ok)])
    return header, rows


def table_bruteforce(config):
    header = ["seed", "variant", "m", "betas", "rho_bruteforce", "rho_measured"]
    rows = []
    for seed in _seeds(config):
        inst = prepare_instance(config, seed)
        x_start = start_point(config, inst)
        for variant in ("saa", "sngmres", "sngmresr"):
            for m in (1, 2):
                entry = MethodEntry(f"{variant}{m}", variant, m, "bruteforce", "als", None, False,
                                    config.max_iter)
                res, measured = _measure(inst, entry, config, x_start)
                rows.append([seed, variant, m, " ".join(f"{b:.2f}" for b in res.spec.betas),
                             res.extra["bruteforce_rho"], measured])
    return header, rows


def gmres_analysis(inst, n_angles=512, rhs_seed=0):
    """Projected linear system at ``x*``, its field of values and GMRES history."""
    H = inst.H
    M = cpd.block_lower(H, inst.problem.block_sizes)
    A = np.linalg.solve(M, H)
    B, Q = krylov.project_nonsingular(A, inst.num_degenerate)
    rng = np.random.default_rng(rhs_seed)
    rhs = Q.T @ rng.standard_normal(A.shape[0])
    hist = krylov.gmres(B, rhs, max_iter=min(B.shape[0], 200), tol=1e-13)
    fov = krylov.fov_report(B, n_angles)
    fov_bb = krylov.fov_report(B, n_angles, use_rect=True)
    return B, Q, hist, fov, fov_bb


def table_gmres_bounds(config):
    header = ["seed", "nu", "r", "rho_beta_num", "c_beta_num", "rho_beta_bb", "zero_in_fov",
              "gmres_rate", "bound_holds"]
    rows = []
    for seed in _seeds(config):
        inst = prepare_instance(config, seed)
        try:
            _, _, hist, fov, fov_bb = gmres_analysis(inst, config.fov_angles)
        except NumericalError:
            rows.append([seed] + [None] * 8)
            continue
        res = np.asarray(hist.residuals) / hist.residuals[0]
        k = np.arange(len(res))
        tail = res[res > 1e-12]
        rate = float(tail[-1] ** (1.0 / (len(tail) - 1))) if len(tail) > 1 else None
        holds = None if fov.rho_beta is None else \
            int(bool(np.all(res <= fov.c_beta * fov.rho_beta ** k)))
        rows.append([seed, fov.nu, fov.r, fov.rho_beta, fov.c_beta, fov_bb.rho_beta,
                     int(fov.zero_in_fov), rate, holds])
    return header, rows


def cmd_table(kind, config=None, kappa_bar=None):
    if kind == "sd_factors":
        return table_sd_factors(config, kappa_bar)
    if config is None:
        raise ValueError(f"table {kind!r} needs a config")
    if kind == "als_bounds":
        return table_als_bounds(config)
    if kind == "bruteforce":
        return table_bruteforce(config)
    if kind == "gmres_bounds":
        return table_gmres_bounds(config)
    raise ValueError(f"unknown table kind {kind!r}; expected one of {TABLE_KINDS}")


def format_csv(header, rows):
    def cell(v):
        if v is None:
            return ""
        if isinstance(v, (bool, np.bool_)):
            return str(int(v))
        if isinstance(v, (int, np.integer, str)):
            return str(v)
        return f"{float(v):.17g}"
    lines = [",".join(header)] + [",".join(cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def cmd_gmres_compare(config, max_iter=None):
    """GMRES on the projected linearization at ``x*`` next to AA(inf) and NGMRES(inf)
    run on the nonlinear problem from the configured start.

    Returns ``(header, rows, summary)``; rows hold normalized residual norms per
    iteration and the Beckermann bound ``c_beta rho_beta^k``.
    """
    inst = prepare_instance(config)
    _, _, hist, fov, _ = gmres_analysis(inst, config.fov_angles)
    p = inst.problem
    x_start = start_point(config, inst)
    n = max_iter or config.max_iter
    q = lambda x: cpd.q_als(p, x)                              # noqa: E731
    grad = lambda x: cpd.gradient(p, x)                        # noqa: E731
    f = lambda x: cpd.objective(p, x)                          # noqa: E731
    runs = {}
    for kind in ("aa", "ngmres"):
        try:
            tr = acc.run_accelerated(q, acc.MethodSpec(kind, None), x_start, f=f, grad=grad,
                                     max_iter=n, g_tol=1e-12 * max(1.0, tr_scale(p)))
            runs[kind] = np.asarray(tr.rnorm) / tr.rnorm[0]
        except DivergenceError as exc:
            runs[kind] = np.asarray(exc.trace.rnorm) / exc.trace.rnorm[0]
    g = np.asarray(hist.residuals) / hist.residuals[0]
    length = max(len(g), *(len(v) for v in runs.values()))
    rows = []
    for k in range(length):
        bound = None if fov.rho_beta is None else fov.c_beta * fov.rho_beta ** k
        rows.append([k, g[k] if k < len(g) else None,
                     runs["aa"][k] if k < len(runs["aa"]) else None,
                     runs["ngmres"][k] if k < len(runs["ngmres"]) else None, bound])
    summary = {"rho_beta": _fmt(fov.rho_beta), "c_beta": _fmt(fov.c_beta),
               "zero_in_fov": fov.zero_in_fov}
    if fov.rho_beta is not None:
        def rate(v):
            v = v[v > 1e-10]
            return float(v[-1] ** (1 / (len(v) - 1))) if len(v) > 1 else None
        summary.update({"gmres_rate": _fmt(rate(g)), "aa_rate": _fmt(rate(runs["aa"])),
                        "ngmres_rate": _fmt(rate(runs["ngmres"]))})
        summary["nonlinear_within_bound"] = bool(all(
            r is None or r <= fov.rho_beta * (1 + 1e-2)
            for r in (summary["aa_rate"], summary["ngmres_rate"])))
    return ["k", "gmres", "aa_inf", "ngmres_inf", "beckermann_bound"], rows, summary


def tr_scale(problem):
    return float(np.linalg.norm(problem.data))
