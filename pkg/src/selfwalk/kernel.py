"""Interaction kernels: the linear drift functional of a self-interacting walk.

A kernel is a finite map from half-integer edge offsets (seen from the walker)
to real weights that sum to zero.  Offsets are stored doubled, so the edge
at offset ``e`` is keyed by the odd integer ``2e``; an absolute edge
``{x, x+1}`` is identified by its left endpoint ``x``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from fractions import Fraction
from typing import Mapping

import numpy as np


class KernelError(ValueError):
    """Invalid kernel construction or literal."""


class DegenerateKernelError(KernelError):
    pass


class HeightInvarianceError(KernelError):
    pass


class NotApplicableError(KernelError):
    pass


SUM_TOLERANCE = 1e-12
PD_GRID_POINTS = 4096
PD_TOLERANCE = 1e-9
BOUNDARY_TOLERANCE = 1e-12


def _half(o2: int) -> str:
    return f"{o2}/2"


def _is_exact(w) -> bool:
    return isinstance(w, (int, Fraction, np.integer))


def _exact(w) -> Fraction:
    if isinstance(w, Fraction):
        return w
    if isinstance(w, (int, np.integer)):
        return Fraction(int(w))
    return Fraction(float(w))


@dataclass(frozen=True)
class InteractionKernel:
    """Immutable drift functional ``D(l) = sum_e coeffs[e] * l(e)``.

    ``coeffs`` maps doubled offsets ``2e`` (odd integers) to float weights.
    """

    coeffs: Mapping[int, float]
    literal: str = field(default="", compare=False)

    @property
    def offsets(self) -> tuple[int, ...]:
        return tuple(sorted(self.coeffs))

    @property
    def e_min(self) -> int:
        return min(self.coeffs)

    @property
    def e_max(self) -> int:
        return max(self.coeffs)

    @property
    def is_symmetric(self) -> bool:
        return all(self.coeffs.get(-o, 0.0) == -w for o, w in self.coeffs.items())

    def weight(self, o2: int) -> float:
        return self.coeffs.get(o2, 0.0)

    def evaluate(self, ell: Mapping[int, float]) -> float:
        """Plain evaluation of ``sum_e a_e l(e)`` on a relative profile keyed by 2e."""
        return sum(w * ell.get(o, 0.0) for o, w in self.coeffs.items())

    def dipoles(self) -> list[tuple[float, int, int]]:
        """Rewrite the drift as ``sum_k w_k * (l(p_k) - l(m_k))``.

        Symmetric kernels pair ``e`` with ``-e``, which makes the drift of a
        mirrored profile the exact negative of the original.  Other kernels
        are referenced to their leftmost edge.  Either form uses the zero sum
        of the weights, so a constant shift of the profile cancels exactly.
        """
        if self.is_symmetric:
            return [(self.coeffs[o], o, -o) for o in self.offsets if o > 0]
        ref = self.e_min
        return [(w, o, ref) for o, w in sorted(self.coeffs.items()) if o != ref]

    def __str__(self) -> str:
        return self.literal or format_literal(self.coeffs)


def format_literal(coeffs: Mapping[int, float]) -> str:
    return ";".join(f"{_half(o)}:{float(coeffs[o])!r}" for o in sorted(coeffs))


def new_general(coeffs: Mapping, literal: str | None = None) -> InteractionKernel:
    """Build a kernel from ``{2e: weight}``; the weights must sum to zero.

    Integer and Fraction weights are checked exactly; floats within
    ``SUM_TOLERANCE``.
    """
    clean = {}
    for o, w in coeffs.items():
        o = int(o)
        if o % 2 == 0:
            raise KernelError(f"edge offset {o}/2 is not a half-integer")
        if w != 0:
            clean[o] = w
    if not clean:
        raise DegenerateKernelError("kernel has empty support")
    exact_input = all(_is_exact(w) for w in clean.values())
    total = _exact_sum(clean.values())
    if (exact_input and total != 0) or abs(float(total)) > SUM_TOLERANCE:
        raise HeightInvarianceError(
            f"weights sum to {float(total)!r}, not 0 (drift would depend on height)"
        )
    fcoeffs = {o: float(w) for o, w in sorted(clean.items())}
    return InteractionKernel(fcoeffs, literal or format_literal(fcoeffs))


def _exact_sum(ws) -> float | Fraction:
    """Exact sum for rationals; for floats the correctly rounded sum, which is the same number."""
    ws = list(ws)
    if all(_is_exact(w) for w in ws):
        return sum((_exact(w) for w in ws), Fraction(0))
    return math.fsum(float(w) for w in ws)


def new_symmetric(a, b) -> InteractionKernel:
    """The left-right symmetric family: weights (a, b, -b, -a) at offsets -3/2..3/2."""
    coeffs = {-3: a, -1: b, 1: -b, 3: -a}
    if a == 0 and b == 0:
        raise DegenerateKernelError("a = b = 0 gives the empty kernel")
    return new_general(coeffs, literal=f"{float(a)!r},{float(b)!r}")


def parse_literal(text: str) -> InteractionKernel:
    """Parse ``"a,b"`` or ``"e:w;e:w;..."`` with ``e`` written as ``n/2``."""
    text = text.strip()
    try:
        if ":" not in text:
            parts = text.split(",")
            if len(parts) != 2:
                raise KernelError(f"cannot parse kernel literal {text!r}")
            a, b = (Fraction(p.strip()) for p in parts)
            k = new_symmetric(a, b)
            return k
        coeffs: dict[int, Fraction] = {}
        for item in filter(None, (s.strip() for s in text.split(";"))):
            e, w = item.split(":")
            o2 = Fraction(e.strip()) * 2
            if o2.denominator != 1:
                raise KernelError(f"offset {e!r} is not a half-integer")
            coeffs[int(o2)] = coeffs.get(int(o2), 0) + Fraction(w.strip())
        return new_general(coeffs)
    except (ValueError, ZeroDivisionError) as exc:
        if isinstance(exc, KernelError):
            raise
        raise KernelError(f"cannot parse kernel literal {text!r}: {exc}") from exc


def polynomial(kernel: InteractionKernel) -> list[float]:
    """Coefficients of ``sum_k a_{k+1/2} x^(k-k0)``, increasing degree, unnormalized."""
    k0 = (kernel.e_min - 1) // 2
    k1 = (kernel.e_max - 1) // 2
    return [kernel.weight(2 * k + 1) for k in range(k0, k1 + 1)]


def eta_coeffs(kernel: InteractionKernel) -> dict[int, float]:
    """Site weights ``c(x) = sum_{e >= x+1/2} a_e`` so that the drift is ``sum_x c(x) eta(x)``.

    Partial sums are correctly rounded (``math.fsum``), i.e. exact sums rounded once.
    """
    out: dict[int, float] = {}
    lo = (kernel.e_min + 1) // 2
    hi = (kernel.e_max - 1) // 2
    tail: list[float] = []
    for x in range(hi, lo - 1, -1):
        tail.append(kernel.weight(2 * x + 1))
        acc = math.fsum(tail)
        if acc != 0:
            out[x] = acc
    return dict(sorted(out.items()))


def precision(kernel: InteractionKernel) -> dict[int, float]:
    """Gibbs precision sequence ``alpha = -c``."""
    return {x: -c for x, c in eta_coeffs(kernel).items()}


def fourier_symbol(kernel: InteractionKernel, theta: np.ndarray) -> np.ndarray:
    alpha = precision(kernel)
    out = np.zeros_like(theta, dtype=float)
    for x, v in alpha.items():
        out += v * np.cos(theta * x)
    return out


@lru_cache(maxsize=None)
def _cos_table(degree: int) -> np.ndarray:
    theta = np.linspace(0.0, math.pi, PD_GRID_POINTS)
    table = np.cos(np.outer(np.arange(degree + 1), theta))
    table.flags.writeable = False
    return table


def is_positive_definite(kernel: InteractionKernel) -> bool:
    """Symbol ``sum_x alpha(x) cos(theta x)`` above ``PD_TOLERANCE`` on a grid of ``[0, pi]``."""
    if not kernel.is_symmetric:
        raise NotApplicableError("positive definiteness is defined for symmetric kernels only")
    alpha = precision(kernel)
    coef = np.zeros(max(map(abs, alpha), default=0) + 1)
    for x, v in alpha.items():
        coef[abs(x)] += v
    if coef.size <= 2:
        # c0 + c1 cos(theta) is monotone and the grid holds both ends, so its minimum is exact there
        c0, c1 = coef[0], (coef[1] if coef.size == 2 else 0.0)
        return bool(min(c0 + c1, c0 - c1) > PD_TOLERANCE)
    return bool((coef @ _cos_table(coef.size - 1)).min() > PD_TOLERANCE)


def critical_ratio(k: int) -> float:
    """Stuck threshold ``A_k = 1 + 2 cos(2 pi / (k + 2))``."""
    if k < 1:
        raise ValueError(f"critical ratio needs k >= 1, got {k}")
    return 1.0 + 2.0 * math.cos(2.0 * math.pi / (k + 2))


def predict_stuck_size(a: float, b: float) -> int | None:
    """Number of sites ``k + 2`` with ``b/|a|`` strictly inside ``(A_k, A_{k+1})``.

    Returns None when ``a < 0 < b`` fails, when the ratio is at least 3, or
    when it sits on a threshold (within ``BOUNDARY_TOLERANCE``).
    """
    if not (a < 0 < b):
        return None
    r = b / abs(a)
    if r >= 3.0:
        return None
    theta = math.acos((r - 1.0) / 2.0)
    k = max(1, int(math.floor(2.0 * math.pi / theta)) - 2)
    # the closed form can be off by one near thresholds
    while k > 1 and critical_ratio(k) >= r:
        k -= 1
    while critical_ratio(k + 1) <= r:
        k += 1
    if abs(r - critical_ratio(k)) <= BOUNDARY_TOLERANCE or abs(r - critical_ratio(k + 1)) <= BOUNDARY_TOLERANCE:
        return None
    return k + 2


def classify(kernel: InteractionKernel) -> "KernelClassification":
    sym = kernel.is_symmetric
    stuck = None
    if sym and set(kernel.coeffs) <= {-3, -1, 1, 3}:
        stuck = predict_stuck_size(kernel.weight(-3), kernel.weight(-1))
    return KernelClassification(
        polynomial=polynomial(kernel),
        is_symmetric=sym,
        eta_coeffs=eta_coeffs(kernel),
        positive_definite=is_positive_definite(kernel) if sym else False,
        predicted_stuck_sites=stuck,
    )


@dataclass(frozen=True)
class KernelClassification:
    polynomial: list[float]
    is_symmetric: bool
    eta_coeffs: dict[int, float]
    positive_definite: bool
    predicted_stuck_sites: int | None
