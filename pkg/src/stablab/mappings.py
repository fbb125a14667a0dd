"""Catalog of finitely-described maps between matrix algebras.

The exact kinds (identity, transpose, unitary conjugation, negation, zero)
are C-linear by construction; transpose and unitary conjugation are the
standard Jordan *-homomorphism witnesses, and transpose is the canonical
example that preserves squares without preserving products.  A Perturbed
map adds a controlled defect term to an exact base.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .algebra import (
    DimensionMismatchError,
    Element,
    identity as identity_element,
    matrix_unit,
    op_norm,
    random_elements,
    spectral_norms,
)

__all__ = [
    "Identity",
    "Transpose",
    "Negation",
    "ZeroMap",
    "UnitaryConjugation",
    "Perturbation",
    "Perturbed",
    "MapSpec",
    "JordanStarReport",
    "apply_array",
    "describe",
    "domain_dim",
    "codomain_dim",
    "evaluate",
    "is_exact_jordan_star",
    "jordan_star_defects",
    "multiplicativity_witness",
    "phase_permutation_unitary",
    "unit_circle_grid",
    "unit_direction",
]

PERTURBATION_MODES = ("power", "constant", "affine")


@dataclass(frozen=True)
class Identity:
    dim: int


@dataclass(frozen=True)
class Transpose:
    dim: int


@dataclass(frozen=True)
class Negation:
    dim: int


@dataclass(frozen=True)
class ZeroMap:
    dim: int


@dataclass(frozen=True)
class UnitaryConjugation:
    """x -> u x u* for a fixed unitary u; multiplicative, star- and square-preserving."""

    u: Element

    def __post_init__(self) -> None:
        defect = self.u.entries.conj().T @ self.u.entries - np.eye(self.u.dim)
        if float(spectral_norms(defect[np.newaxis])[0]) > 1e-10:
            raise ValueError("u is not unitary within 1e-10")

    @property
    def dim(self) -> int:
        return self.u.dim


@dataclass(frozen=True)
class Perturbation:
    """Additive defect term attached to an exact base map.

    mode "power":    eps(x) = size * ||x||^power * direction, eps(0) = 0
                     (the zero value is a continuity convention and holds
                     for every exponent, including power <= 0)
    mode "constant": eps(x) = size * direction for x != 0, eps(0) = 0
    mode "affine":   eps(x) = size * direction for every x, including 0

    With odd=True the direction is modulated by the phase of tr(x)
    (zero when the trace vanishes), making the field odd: eps(-x) = -eps(x).
    The direction matrix is fixed and must have operator norm at most one.
    """

    size: float
    power: float
    direction: Element
    mode: str = "power"
    odd: bool = False

    def __post_init__(self) -> None:
        if self.size < 0.0:
            raise ValueError("size must be nonnegative")
        if self.mode not in PERTURBATION_MODES:
            raise ValueError(f"mode must be one of {PERTURBATION_MODES}, got {self.mode!r}")
        if op_norm(self.direction) > 1.0 + 1e-9:
            raise ValueError("direction must have operator norm <= 1")


@dataclass(frozen=True)
class Perturbed:
    base: "MapSpec"
    perturbation: Perturbation

    def __post_init__(self) -> None:
        if isinstance(self.base, Perturbed):
            raise ValueError("perturbations do not nest: base must be an exact kind")
        if self.perturbation.direction.dim != domain_dim(self.base):
            raise DimensionMismatchError("perturbation direction dimension differs from base map")

    @property
    def dim(self) -> int:
        return domain_dim(self.base)


MapSpec = Union[Identity, Transpose, Negation, ZeroMap, UnitaryConjugation, Perturbed]


def domain_dim(f: MapSpec) -> int:
    return f.dim


def codomain_dim(f: MapSpec) -> int:
    # v1 catalog: maps stay inside one algebra.
    return f.dim


def describe(f: MapSpec) -> str:
    if isinstance(f, Identity):
        return f"identity(dim={f.dim})"
    if isinstance(f, Transpose):
        return f"transpose(dim={f.dim})"
    if isinstance(f, Negation):
        return f"negation(dim={f.dim})"
    if isinstance(f, ZeroMap):
        return f"zero(dim={f.dim})"
    if isinstance(f, UnitaryConjugation):
        return f"unitary_conjugation(dim={f.dim})"
    p = f.perturbation
    odd = ", odd" if p.odd else ""
    return f"perturbed({describe(f.base)}, mode={p.mode}, size={p.size}, power={p.power}{odd})"


def unit_direction(dim: int, name: str) -> Element:
    """Named unit-operator-norm direction matrices.

    "identity" is self-adjoint; "corner" is the nilpotent top-right matrix
    unit (requires dim >= 2), whose square vanishes exactly.
    """
    if name == "identity":
        return identity_element(dim)
    if name == "corner":
        if dim < 2:
            raise ValueError("corner direction needs dim >= 2")
        return matrix_unit(dim, 0, dim - 1)
    raise ValueError(f"unknown direction name {name!r}")


def phase_permutation_unitary(dim: int, seed: int) -> Element:
    """Deterministic unitary: a permutation matrix with random unit phases."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    perm = rng.permutation(dim)
    phases = np.exp(2j * np.pi * rng.uniform(0.0, 1.0, dim))
    arr = np.zeros((dim, dim), dtype=np.complex128)
    for col in range(dim):
        arr[perm[col], col] = phases[col]
    return Element(arr)


def _safe_pow(values: np.ndarray, exponent: float) -> np.ndarray:
    """t^exponent with the convention 0^e := 0 for every e (including e <= 0)."""
    vals = np.asarray(values, dtype=float)
    positive = vals > 0.0
    guarded = np.where(positive, vals, 1.0)
    return np.where(positive, guarded**exponent, 0.0)


def _perturbation_term(p: Perturbation, xs: np.ndarray) -> np.ndarray:
    norms = spectral_norms(xs)
    if p.mode == "power":
        mag = p.size * _safe_pow(norms, p.power)
    elif p.mode == "constant":
        mag = p.size * (np.asarray(norms) > 0.0).astype(float)
    else:  # affine: offset applies at zero too
        mag = np.full_like(np.asarray(norms, dtype=float), p.size)
    coeff = np.asarray(mag, dtype=np.complex128)
    if p.odd:
        tr = np.trace(xs, axis1=-2, axis2=-1)
        mod = np.abs(tr)
        phase = np.where(mod > 0.0, tr / np.where(mod > 0.0, mod, 1.0), 0.0)
        coeff = coeff * phase
    return coeff[..., np.newaxis, np.newaxis] * p.direction.entries


def apply_array(f: MapSpec, xs: np.ndarray) -> np.ndarray:
    """Evaluate f entrywise over a (..., d, d) stack of matrices."""
    xs = np.asarray(xs, dtype=np.complex128)
    if xs.shape[-1] != f.dim or xs.shape[-2] != f.dim:
        raise DimensionMismatchError(f"map of dim {f.dim} applied to shape {xs.shape}")
    if isinstance(f, Identity):
        return xs.copy()
    if isinstance(f, ZeroMap):
        return np.zeros_like(xs)
    if isinstance(f, Negation):
        return -xs
    if isinstance(f, Transpose):
        return np.swapaxes(xs, -1, -2).copy()
    if isinstance(f, UnitaryConjugation):
        u = f.u.entries
        return u @ xs @ u.conj().T
    if isinstance(f, Perturbed):
        return apply_array(f.base, xs) + _perturbation_term(f.perturbation, xs)
    raise TypeError(f"unknown map spec {type(f).__name__}")


def evaluate(f: MapSpec, a: Element) -> Element:
    """Evaluate the map at a single algebra element."""
    if a.dim != domain_dim(f):
        raise DimensionMismatchError(f"map of dim {domain_dim(f)} applied to dim {a.dim}")
    return Element(apply_array(f, a.entries))


def unit_circle_grid(extra: int = 16) -> list[complex]:
    """Unit scalars 1, -1, i, -i plus ``extra`` equally spaced phases, deduplicated.

    The scalar 1 appears exactly once.
    """
    values: list[complex] = [1.0 + 0.0j, -1.0 + 0.0j, 1.0j, -1.0j]
    for k in range(extra):
        values.append(complex(np.exp(2j * np.pi * k / extra)))
    seen: set[tuple[float, float]] = set()
    grid: list[complex] = []
    for v in values:
        key = (round(v.real, 12), round(v.imag, 12))
        if key not in seen:
            seen.add(key)
            grid.append(v)
    return grid


@dataclass
class JordanStarReport:
    """Verdict of the Jordan *-homomorphism law check with a replayable witness."""

    ok: bool
    tol: float
    num_samples: int
    defects: dict[str, float]
    worst_check: str
    worst_sample: int
    witness: Element | None


def _conj_t(xs: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(xs, -1, -2))


def jordan_star_defects(
    eval_fn: Callable[[np.ndarray], np.ndarray],
    dim: int,
    samples: int,
    seed: int,
    norm_cap: float = 1.0,
    phases: list[complex] | None = None,
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Per-sample residuals of the Jordan *-homomorphism laws for a pointwise evaluator.

    Checks, in order: squares (f(a^2) vs f(a)^2), involution, additivity on
    sampled pairs, and homogeneity over the unit-scalar grid.  Returns the
    residual arrays keyed by check name plus the sample stack used.  All
    evaluation points go through a single eval_fn call, so evaluators that
    stabilize pointwise pay one lockstep run.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    if phases is None:
        phases = unit_circle_grid()
    twists = [mu for mu in phases if mu != 1]
    A = random_elements(seed, samples, dim, norm_cap, stream=1)
    B = random_elements(seed, samples, dim, norm_cap, stream=2)
    blocks = [A, A @ A, _conj_t(A), A + B, B] + [mu * A for mu in twists]
    values = eval_fn(np.concatenate(blocks, axis=0))
    parts = [values[k * samples : (k + 1) * samples] for k in range(len(blocks))]
    fa, faa, fas, fab, fb = parts[:5]
    defects = {
        "squares": spectral_norms(faa - fa @ fa),
        "involution": spectral_norms(fas - _conj_t(fa)),
        "additivity": spectral_norms(fab - fa - fb),
    }
    hom = np.zeros(samples)
    for mu, fmu in zip(twists, parts[5:]):
        hom = np.maximum(hom, spectral_norms(fmu - mu * fa))
    defects["homogeneity"] = hom
    return defects, A


def is_exact_jordan_star(
    f: MapSpec,
    samples: int,
    seed: int,
    tol: float,
    norm_cap: float = 1.0,
    phases: list[complex] | None = None,
) -> JordanStarReport:
    """True iff all sampled Jordan *-homomorphism residuals stay within tol.

    On failure the report carries the violating check and sample so the
    defect can be replayed.
    """
    defects, A = jordan_star_defects(
        lambda xs: apply_array(f, xs), domain_dim(f), samples, seed, norm_cap, phases
    )
    worst_check = ""
    worst_sample = 0
    worst_value = -1.0
    for name, values in defects.items():
        idx = int(np.argmax(values))
        if float(values[idx]) > worst_value:
            worst_value = float(values[idx])
            worst_check = name
            worst_sample = idx
    ok = worst_value <= tol
    return JordanStarReport(
        ok=ok,
        tol=tol,
        num_samples=samples,
        defects={name: float(np.max(values)) for name, values in defects.items()},
        worst_check=worst_check,
        worst_sample=worst_sample,
        witness=None if ok else Element(A[worst_sample]),
    )


def multiplicativity_witness(
    f: MapSpec,
    seed: int,
    samples: int = 200,
    threshold: float = 0.1,
    norm_cap: float = 10.0,
) -> tuple[Element, Element, float] | None:
    """A sampled pair with ||f(ab) - f(a)f(b)|| above threshold, if one exists.

    Separates the Jordan property from full multiplicativity: the transpose
    map passes every Jordan check yet produces such a pair in dim >= 2.
    """
    d = domain_dim(f)
    A = random_elements(seed, samples, d, norm_cap, stream=5)
    B = random_elements(seed, samples, d, norm_cap, stream=6)
    residuals = spectral_norms(apply_array(f, A @ B) - apply_array(f, A) @ apply_array(f, B))
    idx = int(np.argmax(residuals))
    if float(residuals[idx]) > threshold:
        return Element(A[idx]), Element(B[idx]), float(residuals[idx])
    return None
