"""Direct-method stabilization: rescaled iterates, error bounds, uniqueness.

The forward iteration h_n(a) = 3^n f(a/3^n) repairs maps whose defect decays
fast at small scales; the backward iteration h_n(a) = 3^{-n} f(3^n a) covers
slow-growth defects.  Convergence is decided by the Cauchy criterion on
successive iterates, and the distance from f to the repaired limit is
certified by a control-function series with matching closed forms.

Powers of three are not exactly representable in binary floating point, so
every comparison here is tolerance-relative, never exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Union

import numpy as np

from .algebra import Element, random_elements, spectral_norms, zeros
from .checkers import CheckReport, Witness, _build_report, _stability_equation_values
from .mappings import MapSpec, Perturbed, apply_array, domain_dim

__all__ = [
    "BoundSpec",
    "CalibrationError",
    "ConstantControl",
    "ControlDirectionError",
    "DivergedError",
    "PowerControl",
    "ProfileControl",
    "StabilizationResult",
    "StabilizerConfig",
    "bound_closed_form",
    "bound_series_truncated",
    "calibrate_control",
    "control_of_elements",
    "control_value",
    "resolve_direction",
    "stabilize_batch",
    "stabilize_point",
    "verify_uniqueness",
]

FORWARD = "forward"
BACKWARD = "backward"
DIVERGENCE_GROWTH_STEPS = 5
ITERATE_OVERFLOW_LIMIT = 1e150


class ControlDirectionError(ValueError):
    """Control function and iteration direction violate the convergence condition."""


class CalibrationError(RuntimeError):
    """Empirical control-coefficient fit failed (unbounded ratio)."""


class DivergedError(RuntimeError):
    """A stabilization run needed by the caller did not converge."""

    def __init__(self, message: str, results=None):
        super().__init__(message)
        self.results = results


# ---------------------------------------------------------------------------
# control functions (the right-hand-side bounds on defects)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerControl:
    """coeff * (na^exp1 + nb^exp2 + nc^exp3) with the convention 0^e := 0."""

    coeff: float
    exp1: float
    exp2: float
    exp3: float

    def __post_init__(self) -> None:
        if self.coeff < 0.0:
            raise ValueError("coeff must be nonnegative")


@dataclass(frozen=True)
class ProfileControl:
    """coeff * (prof(na) + prof(nb) + prof(nc)) with prof(t) = t^degree.

    The profile is sub-multiplicative with prof(0) = 0 and prof(t)/t -> 0 at
    zero for degree > 1, the regime the forward direction needs.
    """

    coeff: float
    degree: float

    def __post_init__(self) -> None:
        if self.coeff < 0.0:
            raise ValueError("coeff must be nonnegative")

    def profile(self, t: float) -> float:
        return 0.0 if t == 0.0 else float(t) ** self.degree


@dataclass(frozen=True)
class ConstantControl:
    """coeff per nonzero argument; the zero-exponent limit of PowerControl.

    Evaluating at (a, 2a, 0) gives 2 * coeff, which makes the backward series
    sum to exactly coeff.
    """

    coeff: float

    def __post_init__(self) -> None:
        if self.coeff < 0.0:
            raise ValueError("coeff must be nonnegative")


BoundSpec = Union[PowerControl, ProfileControl, ConstantControl]


def _npow(t: float, e: float) -> float:
    return 0.0 if t == 0.0 else float(t) ** e


def control_value(spec: BoundSpec, na: float, nb: float, nc: float) -> float:
    """Evaluate the control function on the three argument norms."""
    if isinstance(spec, PowerControl):
        return spec.coeff * (_npow(na, spec.exp1) + _npow(nb, spec.exp2) + _npow(nc, spec.exp3))
    if isinstance(spec, ProfileControl):
        return spec.coeff * (spec.profile(na) + spec.profile(nb) + spec.profile(nc))
    if isinstance(spec, ConstantControl):
        return spec.coeff * (float(na > 0.0) + float(nb > 0.0) + float(nc > 0.0))
    raise TypeError(f"unknown bound spec {type(spec).__name__}")


def control_of_elements(spec: BoundSpec) -> Callable[[Element, Element, Element], float]:
    """Control function lifted to algebra elements via their operator norms."""

    def phi(a: Element, b: Element, c: Element) -> float:
        norms = spectral_norms(np.stack([a.entries, b.entries, c.entries]))
        return control_value(spec, float(norms[0]), float(norms[1]), float(norms[2]))

    return phi


def validate_control_direction(spec: BoundSpec, direction: str) -> None:
    """Reject (control, direction) pairs whose error series diverges.

    The raised message names the violated convergence condition.
    """
    if direction not in (FORWARD, BACKWARD):
        raise ValueError(f"direction must be '{FORWARD}' or '{BACKWARD}', got {direction!r}")
    if isinstance(spec, PowerControl):
        if direction == FORWARD and not (spec.exp1 > 1.0 and spec.exp2 > 1.0):
            raise ControlDirectionError(
                "forward series needs exponents > 1 (term ratio 3^(1-exp) must be < 1)"
            )
        if direction == BACKWARD and not (spec.exp1 < 1.0 and spec.exp2 < 1.0):
            raise ControlDirectionError(
                "backward series needs exponents < 1 (term ratio 3^(exp-1) must be < 1)"
            )
    elif isinstance(spec, ProfileControl):
        if direction == FORWARD and not (3.0 * spec.profile(1.0 / 3.0) < 1.0):
            raise ControlDirectionError("forward profile series needs 3*prof(1/3) < 1")
        if direction == BACKWARD and not (spec.profile(3.0) / 3.0 < 1.0):
            raise ControlDirectionError("backward profile series needs prof(3)/3 < 1")
    elif isinstance(spec, ConstantControl):
        if direction == FORWARD:
            raise ControlDirectionError(
                "constant control admits no forward bound (terms grow like 3^i)"
            )
    else:
        raise TypeError(f"unknown bound spec {type(spec).__name__}")


def bound_closed_form(spec: BoundSpec, norm_a: float, direction: str) -> float:
    """Closed-form distance bound ||f(a) - h(a)|| for the admissible direction."""
    validate_control_direction(spec, direction)
    if norm_a < 0.0:
        raise ValueError("norm_a must be nonnegative")
    if isinstance(spec, PowerControl):
        c, e1, e2 = spec.coeff, spec.exp1, spec.exp2
        if direction == FORWARD:
            return c * _npow(norm_a, e1) / (1.0 - 3.0 ** (1.0 - e1)) + c * 2.0**e2 * _npow(
                norm_a, e2
            ) / (1.0 - 3.0 ** (1.0 - e2))
        return c * _npow(norm_a, e1) / (3.0 ** (1.0 - e1) - 1.0) + c * 2.0**e2 * _npow(
            norm_a, e2
        ) / (3.0 ** (1.0 - e2) - 1.0)
    if isinstance(spec, ProfileControl):
        c = spec.coeff
        if direction == FORWARD:
            return c * (1.0 + spec.profile(2.0)) * spec.profile(norm_a) / (
                1.0 - 3.0 * spec.profile(1.0 / 3.0)
            )
        return c * (1.0 + spec.profile(2.0)) * spec.profile(norm_a) / (
            1.0 - spec.profile(3.0) / 3.0
        )
    return spec.coeff  # constant control, backward only


def bound_series_truncated(
    phi: Callable[[Element, Element, Element], float],
    a: Element,
    direction: str,
    terms: int,
) -> tuple[float, float]:
    """Truncated error series along (a, 2a, 0) plus a geometric tail estimate.

    Forward sums 3^i * phi(a/3^i, 2a/3^i, 0) from i = 0; backward sums
    3^{-i} * phi(3^i a, 2*3^i a, 0) from i = 1 (the index origins differ on
    purpose).  The tail uses the empirical ratio of the last two terms and
    is infinite when that ratio fails to certify convergence.
    """
    if direction not in (FORWARD, BACKWARD):
        raise ValueError(f"direction must be '{FORWARD}' or '{BACKWARD}', got {direction!r}")
    if terms < 1:
        raise ValueError("terms must be >= 1")
    zero = zeros(a.dim)
    term_values = []
    for k in range(terms):
        if direction == FORWARD:
            factor = 3.0**k
            ak = Element(a.entries / factor)
            term = factor * phi(ak, Element(2.0 * a.entries / factor), zero)
        else:
            factor = 3.0 ** (k + 1)
            ak = Element(a.entries * factor)
            term = phi(ak, Element(2.0 * factor * a.entries), zero) / factor
        term_values.append(term)
    value = float(math.fsum(term_values))
    last = term_values[-1]
    prev = term_values[-2] if terms >= 2 else 0.0
    if last == 0.0:
        tail = 0.0
    elif prev <= 0.0 or last >= prev:
        tail = math.inf
    else:
        ratio = last / prev
        tail = last * ratio / (1.0 - ratio)
    return value, tail


# ---------------------------------------------------------------------------
# stabilization iterations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StabilizerConfig:
    max_iter: int = 64
    tol: float = 1e-10
    direction: str = "auto"

    def __post_init__(self) -> None:
        if self.max_iter < 2:
            raise ValueError("max_iter must be >= 2")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.direction not in (FORWARD, BACKWARD, "auto"):
            raise ValueError("direction must be 'forward', 'backward' or 'auto'")


@dataclass
class StabilizationResult:
    """Trace of one stabilization run.

    ``limit`` is None exactly when the run diverged; a fabricated limit is
    never reported.  ``certified_bound`` is NaN until a caller attaches a
    control-function certificate.
    """

    limit: Element | None
    iterations_used: int
    cauchy_residuals: list[float]
    direction: str
    status: str  # converged | diverged | exhausted
    certified_bound: float = float("nan")

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def resolve_direction(f: MapSpec, cfg: StabilizerConfig) -> str | None:
    """Direction from config, or from the perturbation exponent; None => probe.

    Exponents above one shrink under forward rescaling, below one under
    backward rescaling; exactly one (and exact maps) fall back to probing.
    """
    if cfg.direction != "auto":
        return cfg.direction
    if isinstance(f, Perturbed):
        p = f.perturbation
        if p.mode in ("constant", "affine"):
            return BACKWARD
        if p.power > 1.0:
            return FORWARD
        if p.power < 1.0:
            return BACKWARD
    return None


def _iterate_batch(f: MapSpec, A: np.ndarray, direction: str, cfg: StabilizerConfig):
    """Lockstep stabilization of a sample stack with per-sample freezing.

    Each sample stops independently the first time its Cauchy residual meets
    tol * (1 + ||a||), diverges after five consecutive residual increases
    that end above the initial residual, or exhausts max_iter.
    """
    count = A.shape[0]
    scales = 1.0 + spectral_norms(A)
    h_prev = apply_array(f, A)
    traces: list[list[float]] = [[] for _ in range(count)]
    status = ["active"] * count
    limits: list[np.ndarray | None] = [None] * count
    iters = [0] * count
    grow = np.zeros(count, dtype=int)
    last_res = np.full(count, np.inf)

    for n in range(1, cfg.max_iter + 1):
        factor = 3.0**n
        if direction == FORWARD:
            h = factor * apply_array(f, A / factor)
        else:
            h = apply_array(f, A * factor) / factor
        res = spectral_norms(h - h_prev)
        peaks = np.max(np.abs(h), axis=(1, 2))
        for i in range(count):
            if status[i] != "active":
                continue
            r = float(res[i])
            traces[i].append(r)
            if r <= cfg.tol * scales[i]:
                status[i] = "converged"
                limits[i] = h[i].copy()
                iters[i] = n
                continue
            if r > last_res[i]:
                grow[i] += 1
            else:
                grow[i] = 0
            last_res[i] = r
            blown = peaks[i] > ITERATE_OVERFLOW_LIMIT
            if blown or (grow[i] >= DIVERGENCE_GROWTH_STEPS and r > traces[i][0]):
                status[i] = "diverged"
                iters[i] = n
                continue
            if n == cfg.max_iter:
                status[i] = "exhausted"
                limits[i] = h[i].copy()
                iters[i] = n
        if all(s != "active" for s in status):
            break
        h_prev = h

    return [
        StabilizationResult(
            limit=None if limits[i] is None else Element(limits[i]),
            iterations_used=iters[i],
            cauchy_residuals=traces[i],
            direction=direction,
            status=status[i],
        )
        for i in range(count)
    ]


def stabilize_batch(f: MapSpec, A: np.ndarray, cfg: StabilizerConfig) -> list[StabilizationResult]:
    """Stabilize a (count, d, d) stack of points; pure per point.

    With direction "auto" and no usable exponent, both directions are probed
    and each sample keeps the convergent run (ties favour the faster one,
    then forward).
    """
    A = np.asarray(A, dtype=np.complex128)
    direction = resolve_direction(f, cfg)
    if direction is not None:
        return _iterate_batch(f, A, direction, cfg)
    fwd = _iterate_batch(f, A, FORWARD, cfg)
    bwd = _iterate_batch(f, A, BACKWARD, cfg)
    picked = []
    for rf, rb in zip(fwd, bwd):
        if rf.converged and rb.converged:
            picked.append(rf if rf.iterations_used <= rb.iterations_used else rb)
        elif rf.converged:
            picked.append(rf)
        elif rb.converged:
            picked.append(rb)
        else:
            picked.append(rf)
    return picked


def stabilize_point(f: MapSpec, a: Element, cfg: StabilizerConfig) -> StabilizationResult:
    """Stabilize a single point; see stabilize_batch for the auto policy."""
    if a.dim != domain_dim(f):
        raise ValueError(f"point dim {a.dim} does not match map dim {domain_dim(f)}")
    return stabilize_batch(f, a.entries[np.newaxis], cfg)[0]


# ---------------------------------------------------------------------------
# empirical control calibration and uniqueness
# ---------------------------------------------------------------------------


def _calibrated_coeff(
    f: MapSpec, template: BoundSpec, seed: int, samples: int, norm_cap: float, stream: int
) -> float:
    d = domain_dim(f)
    A = random_elements(seed, samples, d, norm_cap, stream=stream)
    B = random_elements(seed, samples, d, norm_cap, stream=stream + 1)
    C = random_elements(seed, samples, d, norm_cap, stream=stream + 2)
    residuals = _stability_equation_values(f, A, B, C, phase=1.0)
    unit = replace(template, coeff=1.0)
    na = spectral_norms(A)
    nb = spectral_norms(B)
    nc = spectral_norms(C)
    worst = 0.0
    for i in range(samples):
        base = control_value(unit, float(na[i]), float(nb[i]), float(nc[i]))
        r = float(residuals[i])
        if base == 0.0:
            if r > 1e-12:
                raise CalibrationError(
                    "nonzero residual at an all-zero sample: no finite coefficient dominates"
                )
            continue  # 0/0 guarded as 0
        worst = max(worst, r / base)
    return worst


def calibrate_control(
    f: MapSpec,
    template: BoundSpec,
    seed: int,
    samples: int,
    norm_cap: float = 10.0,
    sweep_factor: float | None = None,
) -> BoundSpec:
    """Fit the control coefficient so the template dominates sampled residuals.

    The coefficient is the worst sampled ratio of the master-equation
    residual to the unit-coefficient control value, so the returned control
    dominates every sampled residual by construction.  With ``sweep_factor``
    set, the fit is repeated at the inflated norm cap and a growth beyond
    fifty percent raises CalibrationError (an unbounded ratio means no
    coefficient works at every scale).
    """
    if samples < 10:
        raise ValueError("calibration needs at least 10 samples")
    coeff = _calibrated_coeff(f, template, seed, samples, norm_cap, stream=40)
    if sweep_factor is not None:
        if sweep_factor <= 1.0:
            raise ValueError("sweep_factor must exceed 1")
        coeff_hi = _calibrated_coeff(
            f, template, seed, samples, norm_cap * sweep_factor, stream=43
        )
        if coeff_hi > coeff * 1.5 + 1e-12:
            raise CalibrationError(
                f"control ratio grows with the norm cap ({coeff:.3e} -> {coeff_hi:.3e}); "
                "no finite coefficient dominates at every scale"
            )
        coeff = max(coeff, coeff_hi)
    return replace(template, coeff=coeff)


def verify_uniqueness(
    f: MapSpec,
    cfg: StabilizerConfig,
    seed: int,
    samples: int,
    norm_cap: float = 10.0,
    tol: float = 1e-9,
) -> CheckReport:
    """Agreement of depth-doubled and scale-shifted stabilization runs.

    For each sampled point the limit is recomputed with doubled max_iter and
    from the tripled point rescaled back; the largest discrepancy must stay
    within tol * (1 + ||a||).  Any non-convergent run raises DivergedError.
    """
    d = domain_dim(f)
    A = random_elements(seed, samples, d, norm_cap, stream=50)
    deep_cfg = replace(cfg, max_iter=2 * cfg.max_iter)
    base = stabilize_batch(f, A, cfg)
    deep = stabilize_batch(f, A, deep_cfg)
    shifted = stabilize_batch(f, 3.0 * A, cfg)
    for results in (base, deep, shifted):
        bad = [r for r in results if not r.converged]
        if bad:
            raise DivergedError(
                f"{len(bad)} of {samples} stabilization runs did not converge", results=results
            )
    h_base = np.stack([r.limit.entries for r in base])
    h_deep = np.stack([r.limit.entries for r in deep])
    h_shift = np.stack([r.limit.entries for r in shifted]) / 3.0
    disc = np.maximum(
        spectral_norms(h_deep - h_base),
        spectral_norms(h_shift - h_base),
    )
    scales = 1.0 + spectral_norms(A)

    def witness(i: int) -> Witness:
        return Witness(i, float(disc[i]), {"a": float(spectral_norms(A[i][np.newaxis])[0])})

    return _build_report("uniqueness", disc, np.zeros(samples), scales, tol, witness)
