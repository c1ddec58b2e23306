"""Convergence studies, reference eigenvalues, stabilization sweeps and source tests."""

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .assembly import (OperatorCache, ProblemSpec, StabilizationConfig, assemble, assemble_load,
                       cell_dofs, interpolate, rayleigh_quotients, stiffness_apply)
from .eigsolve import solve_gevp, solve_source
from .geometry import polygon_centroid
from .mesh import MeshFamilySpec, assign_regions, generate_mesh
from .polybasis import ScaledMonomialBasis, polygon_quadrature

CSV_COLUMNS = ("h", "k", "stab", "mass_mode", "eig_index", "lambda_h", "lambda_ref",
               "ref_provenance", "error", "rate", "runtime_ms")
REFERENCE_SOURCES = ("auto", "analytic-square", "derived-extrapolation", "user-values")


@dataclass
class StudyConfig:
    family: str = "square"
    resolutions: tuple = (8, 16, 32, 64)  # n, with nominal mesh size h = 1/n
    degrees: tuple = (1,)
    domain: str = "unit-square"
    bc: str = "dirichlet"
    mass_mode: str = "stabilized"
    stabilization: StabilizationConfig = field(default_factory=StabilizationConfig)
    diffusivity: dict = None
    # (label, (xmin, ymin), (xmax, ymax)) boxes for region labels
    regions: tuple = ()
    eig_indices: tuple = (1, 2, 3, 4, 5, 6)
    reference: str = "auto"
    reference_values: tuple = None
    seed: int = 0
    lloyd_iterations: int = 100
    amplitude: float = 0.2
    error_measure: str = "relative"
    timing: bool = True
    # re-evaluate eigenvalues as extended-precision Rayleigh quotients
    polish: bool = True

    def __post_init__(self):
        if len(self.resolutions) < 2:
            raise ValueError("a study needs at least two resolutions")
        if self.reference not in REFERENCE_SOURCES:
            raise ValueError(f"unknown reference source {self.reference!r}")
        if self.error_measure not in ("relative", "absolute"):
            raise ValueError("error_measure must be 'relative' or 'absolute'")
        if self.reference == "user-values" and self.reference_values is None:
            raise ValueError("reference 'user-values' needs reference_values")

    def problem(self, k):
        return ProblemSpec(k=k, bc=self.bc, mass_mode=self.mass_mode,
                           stabilization=self.stabilization, diffusivity=self.diffusivity)

    def mesh(self, n):
        mesh = generate_mesh(MeshFamilySpec(self.family, n, self.domain, self.seed,
                                            self.lloyd_iterations, self.amplitude))
        if self.regions:
            assign_regions(mesh, self.regions)
        return mesh


@dataclass
class ReferenceValues:
    values: np.ndarray
    provenance: str
    uncertainty: np.ndarray = None
    low_confidence: np.ndarray = None


@dataclass
class ConvergenceReport:
    rows: list
    failures: int = 0
    reference: ReferenceValues = None

    def column(self, k, index, key="error"):
        return np.array([r[key] for r in self.rows if r["k"] == k and r["eig_index"] == index])

    def slopes(self):
        """Least-squares slope of log(error) against log(h) per (k, index)."""
        out = {}
        for k, idx in sorted({(r["k"], r["eig_index"]) for r in self.rows}):
            h = self.column(k, idx, "h")
            e = self.column(k, idx)
            ok = np.isfinite(e) & (e > 0)
            if ok.sum() >= 2:
                out[(k, idx)] = float(np.polyfit(np.log(h[ok]), np.log(e[ok]), 1)[0])
        return out

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([format_value(r[c]) for c in CSV_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def format_value(v):
    if isinstance(v, (float, np.floating)):
        return "nan" if not np.isfinite(v) else repr(float(v))
    return str(v)


# ---------------------------------------------------------------- references

def multiplicity_groups(values, rtol=1e-3):
    """Split ascending values into clusters whose consecutive relative gap is < rtol."""
    values = np.asarray(values, dtype=float)
    groups = []
    for i, v in enumerate(values):
        if groups and abs(v - values[i - 1]) < rtol * max(abs(v), abs(values[i - 1])):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


# Omega_delta: lower-left quadrant of (-1,1)^2 (label 1); the rest has K = I
DEFAULT_DELTA_REGION = (1, (-1.0, -1.0), (0.0, 0.0))


def interface_config(delta, region=DEFAULT_DELTA_REGION, **kw):
    """Study on (-1,1)^2, Neumann, with K = delta*I on the region and I elsewhere."""
    kw.setdefault("family", "voronoi")
    return StudyConfig(domain="square", bc="neumann", regions=(region,),
                       diffusivity={0: np.eye(2), int(region[0]): delta * np.eye(2)}, **kw)


def study_config_from_dict(cfg):
    """StudyConfig from the JSON layout used by the CLI.

    Problem keys (k, bc, mass_mode, stab, ...) follow problem_from_dict; "k"
    may be given instead of "degrees". Regions are [label, [x0, y0], [x1, y1]].
    """
    from .assembly import problem_from_dict
    cfg = dict(cfg)
    problem = problem_from_dict(cfg)
    known = {f for f in StudyConfig.__dataclass_fields__}
    kw = {key: cfg[key] for key in known & set(cfg)
          if key not in ("stabilization", "diffusivity", "bc", "mass_mode")}
    for key in ("resolutions", "degrees", "eig_indices", "reference_values"):
        if kw.get(key) is not None:
            kw[key] = tuple(kw[key])
    if "regions" in kw:
        kw["regions"] = tuple((int(r[0]), tuple(r[1]), tuple(r[2])) for r in kw["regions"])
    kw.setdefault("degrees", (problem.k,))
    return StudyConfig(bc=problem.bc, mass_mode=problem.mass_mode,
                       stabilization=problem.stabilization, diffusivity=problem.diffusivity, **kw)


def analytic_eigenvalues(domain, bc, count):
    """Laplacian eigenvalues of the unit square or (-1,1)^2, ascending, with multiplicity."""
    if domain not in ("unit-square", "square"):
        raise ValueError(f"no analytic eigenvalues for domain {domain!r}")
    scale = np.pi ** 2 if domain == "unit-square" else np.pi ** 2 / 4.0
    lo = 1 if bc == "dirichlet" else 0
    m = int(math.isqrt(count)) + 3
    vals = sorted(scale * (a * a + b * b) for a in range(lo, lo + m) for b in range(lo, lo + m))
    if bc == "neumann":
        vals = vals[1:]  # the constant mode is not tracked
    return np.array(vals[:count])


def richardson(values):
    """Aitken extrapolation of a sequence computed on successively halved meshes.

    Returns (limit, uncertainty, observed order, monotone flag).
    """
    l1, l2, l3 = values[-3:]
    d1, d2 = l2 - l1, l3 - l2
    monotone = d1 * d2 > 0 and abs(d2) < abs(d1)
    if not monotone or d1 == d2:
        return l3, abs(d2), float("nan"), False
    ratio = d1 / d2
    p = math.log2(ratio)
    limit = l3 + d2 / (ratio - 1.0)
    return limit, abs(limit - l3), p, True


def reference_eigenvalues(domain, bc="dirichlet", count=6, diffusivity=None, regions=(),
                          source="auto", resolutions=(8, 16, 32), family="square"):
    """Reference eigenvalues (zero modes excluded), with provenance.

    Analytic for the Laplacian on squares; otherwise extrapolated from the
    three finest k=2 stabilized solves.
    """
    laplacian = diffusivity is None or all(np.allclose(K, np.eye(2)) for K in diffusivity.values())
    if source in ("auto", "analytic-square") and laplacian and domain in ("unit-square", "square"):
        vals = analytic_eigenvalues(domain, bc, count)
        return ReferenceValues(vals, "analytic", np.zeros(count), np.zeros(count, dtype=bool))
    if source == "analytic-square":
        raise ValueError("analytic reference only exists for the Laplacian on a square")
    cfg = StudyConfig(family=family, resolutions=tuple(resolutions), degrees=(2,), domain=domain,
                      bc=bc, diffusivity=diffusivity, regions=tuple(regions))
    seq = []
    for n in resolutions[-3:]:
        lam, _ = _solve_nonzero(cfg.mesh(n), cfg.problem(2), count)
        seq.append(lam)
    seq = np.array(seq)
    out = np.empty(count)
    unc = np.empty(count)
    low = np.zeros(count, dtype=bool)
    for i in range(count):
        out[i], unc[i], _, ok = richardson(seq[:, i])
        low[i] = not ok
    return ReferenceValues(out, "derived-extrapolation(k=2,n=%s)" % "/".join(map(str, resolutions[-3:])),
                           unc, low)


# ---------------------------------------------------------------- studies

POLISH_RTOL = 1e-6


def _solve_nonzero(mesh, problem, count, cache=None, polish=True):
    cache = OperatorCache() if cache is None else cache
    system = assemble(mesh, problem, cache)
    extra = 1 if problem.bc == "neumann" else 0
    spec = solve_gevp(system.A_free, system.M_free, count + extra,
                      spd_mass=problem.mass_mode == "stabilized")
    if len(spec.nonzero) < count:
        spec = solve_gevp(system.A_free, system.M_free, count + extra + 2,
                          spd_mass=problem.mass_mode == "stabilized")
    if polish:
        # the double-precision eigenvalues carry ~1e-11 relative noise at k >= 3
        # (conditioning of A); the Rayleigh quotient is accurate to O(residual^2)
        rq = rayleigh_quotients(mesh, problem, system, spec.eigenvectors, cache).astype(float)
        close = np.abs(rq - spec.eigenvalues) <= POLISH_RTOL * np.maximum(np.abs(spec.eigenvalues), 1.0)
        keep = ~spec.zero_modes & close
        spec.eigenvalues = np.where(keep, rq, spec.eigenvalues)
        spec.meta["polished"] = int(keep.sum())
    lam = np.sort(spec.nonzero)[:count]
    return lam, spec


def _reference_for(config):
    count = max(config.eig_indices)
    if config.reference == "user-values":
        vals = np.asarray(config.reference_values, dtype=float)
        return ReferenceValues(vals, "user", np.zeros(len(vals)), np.zeros(len(vals), dtype=bool))
    return reference_eigenvalues(config.domain, config.bc, count, config.diffusivity,
                                 config.regions, config.reference)


def run_study(config, reference=None):
    reference = reference or _reference_for(config)
    count = max(config.eig_indices)
    rows = []
    failures = 0
    for k in config.degrees:
        prev = None
        for n in config.resolutions:
            h = 1.0 / n
            t0 = time.perf_counter()
            try:
                lam, _ = _solve_nonzero(config.mesh(n), config.problem(k), count, polish=config.polish)
                ok = True
            except Exception:  # recorded per row; the study goes on
                lam = np.full(count, np.nan)
                ok = False
                failures += 1
            ms = (time.perf_counter() - t0) * 1e3 if config.timing else 0.0
            errs = {}
            for i in config.eig_indices:
                lref = float(reference.values[i - 1])
                err = abs(lref - lam[i - 1])
                if config.error_measure == "relative":
                    err /= abs(lref)
                rate = float("nan")
                if prev is not None and ok and np.isfinite(prev[1].get(i, np.nan)):
                    rate = math.log(prev[1][i] / err) / math.log(prev[0] / h)
                errs[i] = err
                rows.append({"h": h, "k": k, "stab": config.stabilization.kind,
                             "mass_mode": config.mass_mode, "eig_index": i,
                             "lambda_h": float(lam[i - 1]), "lambda_ref": lref,
                             "ref_provenance": reference.provenance, "error": float(err),
                             "rate": rate, "runtime_ms": round(ms, 3)})
            prev = (h, errs) if ok else None
    return ConvergenceReport(rows, failures, reference)


@dataclass
class SweepReport:
    multipliers: list
    eigenvalues: np.ndarray  # (len(multipliers), nev); nan rows for failed solves
    failed: list

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        nev = self.eigenvalues.shape[1]
        w.writerow(["multiplier"] + [f"lambda_{i + 1}" for i in range(nev)] + ["status"])
        for m, lam, bad in zip(self.multipliers, self.eigenvalues, self.failed):
            w.writerow([repr(float(m))] + [format_value(x) for x in lam] + ["failed" if bad else "ok"])
        return buf.getvalue()

    def failure_onset(self, reference, rtol=0.1):
        """Smallest multiplier whose eigenvalues leave a rtol band around ``reference``."""
        reference = np.asarray(reference)[: self.eigenvalues.shape[1]]
        for m, lam, bad in sorted(zip(self.multipliers, self.eigenvalues, self.failed),
                                  key=lambda t: t[0]):
            if bad or np.any(np.abs(lam - reference) > rtol * np.abs(reference)):
                return m
        return None


def sweep_stabilization(config, multipliers, n=None, k=None, nev=4):
    """Re-solve one mesh/degree with the mass stabilization scaled by each multiplier."""
    n = config.resolutions[-1] if n is None else n
    k = config.degrees[0] if k is None else k
    mesh = config.mesh(n)
    cache = OperatorCache()
    rows, failed = [], []
    for m in multipliers:
        stab = replace(config.stabilization, tau_multiplier=config.stabilization.tau_multiplier * m)
        problem = replace(config.problem(k), mass_mode="stabilized", stabilization=stab)
        try:
            lam, _ = _solve_nonzero(mesh, problem, nev, cache, polish=config.polish)
            rows.append(lam)
            failed.append(False)
        except Exception:
            rows.append(np.full(nev, np.nan))
            failed.append(True)
    return SweepReport(list(multipliers), np.array(rows), failed)


# ---------------------------------------------------------------- source problem

@dataclass
class Manufactured:
    u: callable
    grad: callable
    f: callable
    name: str = ""


def sinsin():
    pi = np.pi
    return Manufactured(
        u=lambda p: np.sin(pi * p[:, 0]) * np.sin(pi * p[:, 1]),
        grad=lambda p: np.column_stack([pi * np.cos(pi * p[:, 0]) * np.sin(pi * p[:, 1]),
                                        pi * np.sin(pi * p[:, 0]) * np.cos(pi * p[:, 1])]),
        f=lambda p: 2 * pi ** 2 * np.sin(pi * p[:, 0]) * np.sin(pi * p[:, 1]),
        name="sinsin")


def polynomial_solution(k, seed=0):
    """A dense random polynomial of total degree k with its exact -Laplacian."""
    rng = np.random.default_rng(seed)
    exps = [(a, b) for d in range(k + 1) for a in range(d + 1) for b in [d - a]]
    c = rng.uniform(-1, 1, len(exps))

    def u(p):
        return sum(ci * p[:, 0] ** a * p[:, 1] ** b for ci, (a, b) in zip(c, exps))

    def grad(p):
        gx = sum(ci * a * p[:, 0] ** max(a - 1, 0) * p[:, 1] ** b for ci, (a, b) in zip(c, exps))
        gy = sum(ci * b * p[:, 0] ** a * p[:, 1] ** max(b - 1, 0) for ci, (a, b) in zip(c, exps))
        return np.column_stack([gx + 0 * p[:, 0], gy + 0 * p[:, 0]])

    def f(p):
        out = np.zeros(len(p))
        for ci, (a, b) in zip(c, exps):
            if a >= 2:
                out -= ci * a * (a - 1) * p[:, 0] ** (a - 2) * p[:, 1] ** b
            if b >= 2:
                out -= ci * b * (b - 1) * p[:, 0] ** a * p[:, 1] ** (b - 2)
        return out

    return Manufactured(u, grad, f, name=f"poly{k}")


def solve_source_problem(mesh, problem, sol, cache=None, refine=2):
    """Dirichlet source solve with boundary DoFs lifted from the exact solution.

    ``refine`` steps of iterative refinement use an extended-precision
    residual, which recovers the accuracy lost to cond(A) at high k.
    """
    cache = OperatorCache() if cache is None else cache
    system = assemble(mesh, problem, cache)
    b = assemble_load(mesh, problem.k, sol.f, cache)
    g = np.zeros(system.n_dofs)
    c = system.constrained
    g[c] = interpolate(mesh, problem.k, sol.u)[c]
    rhs = (b - system.A @ g)[system.free]
    x = solve_source(system.A_free, rhs)
    g[system.free] = x
    if refine:
        gl = g.astype(np.longdouble)
        for _ in range(refine):
            r = (b - stiffness_apply(mesh, problem, gl, cache))[system.free]
            gl[system.free] += solve_source(system.A_free, r.astype(float))
        g = gl.astype(float)
    return g, system


def h1_surrogate_error(mesh, k, uh, grad_u, cache=None):
    """Broken |u - Pi_nabla u_h|_{1,h} by quadrature."""
    cache = OperatorCache() if cache is None else cache
    total = 0.0
    for c in range(mesh.n_cells):
        verts = mesh.cell_vertices(c)
        ops = cache.get(verts, k, mesh.cell_edge_orientation[c])
        coef = ops.pi_nabla_star @ uh[cell_dofs(mesh, k, c)]
        xc = polygon_centroid(verts)
        basis = ScaledMonomialBasis(k, xc, ops.diameter)
        quad = polygon_quadrature(verts, 2 * k + 4, center=xc)
        gh = np.einsum("qad,a->qd", basis.gradient(quad.points), coef)
        diff = grad_u(quad.points) - gh
        total += quad.integrate((diff ** 2).sum(axis=1))
    return math.sqrt(max(total, 0.0))


def source_convergence(config, sol=None):
    """H1-surrogate errors and rates of the Dirichlet source problem per (k, h)."""
    sol = sol or sinsin()
    rows = []
    for k in config.degrees:
        prev = None
        for n in config.resolutions:
            t0 = time.perf_counter()
            mesh = config.mesh(n)
            cache = OperatorCache()
            problem = replace(config.problem(k), bc="dirichlet")
            uh, _ = solve_source_problem(mesh, problem, sol, cache)
            err = h1_surrogate_error(mesh, k, uh, sol.grad, cache)
            h = 1.0 / n
            rate = float("nan") if prev is None else math.log(prev[1] / err) / math.log(prev[0] / h)
            ms = (time.perf_counter() - t0) * 1e3 if config.timing else 0.0
            rows.append({"h": h, "k": k, "error_h1": err, "rate": rate, "runtime_ms": round(ms, 3)})
            prev = (h, err)
    return rows


def source_rows_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ("h", "k", "error_h1", "rate", "runtime_ms")
    w.writerow(cols)
    for r in rows:
        w.writerow([format_value(r[c]) for c in cols])
    return buf.getvalue()
