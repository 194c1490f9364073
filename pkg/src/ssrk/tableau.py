"""Tableaux for additive-noise stochastic Runge-Kutta schemes.

A scheme is described by the coefficient set (A, B, D, alpha, beta, gamma,
c, c_hat): A weights the drift stages, B the Wiener increments I_r, D the
time-integrated increments I_r0/h, and the three update vectors play the
same roles in the final combination.  Order and symplecticity are decided
by exact coefficient identities, so the checks below are deterministic and
independent of any step size or random seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, StructureError

__all__ = [
    "Tableau",
    "ConditionEntry",
    "ConditionReport",
    "ORDER_TARGETS",
    "BUILTIN_SCHEMES",
    "DEFAULT_TOL",
    "check_order_conditions",
    "check_symplectic",
    "make_builtin",
    "tableau_to_json",
    "tableau_from_json",
]

DEFAULT_TOL = 1e-12

ORDER_TARGETS = ("ms_1_0", "ms_1_5", "ms_2_0_second_order")

_KNOWN_FLAGS = frozenset({"explicit", "diagonally_implicit"})


def _as_matrix(x, s: int, label: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != (s, s):
        raise StructureError(f"{label} must have shape ({s}, {s}), got {a.shape}")
    a.setflags(write=False)
    return a


def _as_vector(x, s: int, label: str) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (s,):
        raise StructureError(f"{label} must have shape ({s},), got {v.shape}")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class Tableau:
    """Coefficient set of an s-stage additive-noise SRK scheme.

    Immutable after construction; user-supplied tableaux go through the
    same type and the same checks as the builtin ones.
    """

    s: int
    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    c: np.ndarray
    c_hat: np.ndarray
    name: str = ""
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.s, int) or self.s < 1:
            raise StructureError(f"stage count must be a positive integer, got {self.s!r}")
        object.__setattr__(self, "A", _as_matrix(self.A, self.s, "A"))
        object.__setattr__(self, "B", _as_matrix(self.B, self.s, "B"))
        object.__setattr__(self, "D", _as_matrix(self.D, self.s, "D"))
        object.__setattr__(self, "alpha", _as_vector(self.alpha, self.s, "alpha"))
        object.__setattr__(self, "beta", _as_vector(self.beta, self.s, "beta"))
        object.__setattr__(self, "gamma", _as_vector(self.gamma, self.s, "gamma"))
        object.__setattr__(self, "c", _as_vector(self.c, self.s, "c"))
        object.__setattr__(self, "c_hat", _as_vector(self.c_hat, self.s, "c_hat"))
        object.__setattr__(self, "flags", tuple(self.flags))
        unknown = set(self.flags) - _KNOWN_FLAGS
        if unknown:
            raise StructureError(f"unknown tableau flags: {sorted(unknown)}")
        # Additive noise keeps the B/D stage sums independent of the stage
        # values, so explicitness is a property of A alone.
        if "explicit" in self.flags and np.any(np.triu(self.A) != 0.0):
            raise StructureError("tableau flagged explicit but A is not strictly lower triangular")
        if "diagonally_implicit" in self.flags and np.any(np.triu(self.A, k=1) != 0.0):
            raise StructureError("tableau flagged diagonally_implicit but A is not lower triangular")

    @property
    def is_explicit(self) -> bool:
        return "explicit" in self.flags

    @property
    def is_lower_triangular(self) -> bool:
        return not np.any(np.triu(self.A, k=1) != 0.0)


@dataclass(frozen=True)
class ConditionEntry:
    condition_id: str
    residual: float
    satisfied: bool


@dataclass(frozen=True)
class ConditionReport:
    """Per-condition residuals plus an overall verdict.

    ``satisfied`` for each entry means |residual| <= tolerance; the verdict
    summarizes which block of conditions holds.
    """

    entries: tuple[ConditionEntry, ...]
    max_abs_residual: float
    verdict: str
    tolerance: float
    target: str | None = None

    def entry(self, condition_id: str) -> ConditionEntry:
        for e in self.entries:
            if e.condition_id == condition_id:
                return e
        raise KeyError(condition_id)

    def failing(self) -> list[str]:
        return [e.condition_id for e in self.entries if not e.satisfied]

    def all_satisfied(self) -> bool:
        return all(e.satisfied for e in self.entries)


def _order_residuals(t: Tableau) -> dict[int, tuple[str, float]]:
    """The ten coefficient identities, as (description, max-abs residual)."""
    e = np.ones(t.s)
    Be = t.B @ e
    De = t.D @ e
    return {
        1: ("c = A e", float(np.max(np.abs(t.c - t.A @ e)))),
        2: ("alpha' e = 1", abs(float(t.alpha @ e) - 1.0)),
        3: ("beta' e = 1", abs(float(t.beta @ e) - 1.0)),
        4: ("gamma' e = 0", abs(float(t.gamma @ e))),
        5: ("alpha' A e = 1/2", abs(float(t.alpha @ (t.A @ e)) - 0.5)),
        6: ("alpha' B e = 0", abs(float(t.alpha @ Be))),
        7: ("alpha' D e = 1", abs(float(t.alpha @ De) - 1.0)),
        8: ("beta' chat = 1", abs(float(t.beta @ t.c_hat) - 1.0)),
        9: ("gamma' chat = -1", abs(float(t.gamma @ t.c_hat) + 1.0)),
        10: (
            "alpha' ((Be)^2 + (De)^2/3 + Be*De) = 1/2",
            abs(float(t.alpha @ (Be**2 + De**2 / 3.0 + Be * De)) - 0.5),
        ),
    }


# Condition blocks checked per target.  The second-order-system target drops
# condition 10: its source term vanishes identically for systems whose noise
# enters the momentum block only.
_TARGET_CONDITIONS = {
    "ms_1_0": range(1, 5),
    "ms_1_5": range(1, 11),
    "ms_2_0_second_order": range(1, 10),
}

_TARGET_TOP_VERDICT = {
    "ms_1_0": "order_1_0",
    "ms_1_5": "order_1_5",
    "ms_2_0_second_order": "order_2_0_second_order_systems",
}


def check_order_conditions(t: Tableau, target: str = "ms_1_5", tol: float = DEFAULT_TOL) -> ConditionReport:
    """Check the mean-square order identities of ``t`` against ``target``.

    Targets: ``ms_1_0`` checks conditions 1-4, ``ms_1_5`` checks 1-10 and
    ``ms_2_0_second_order`` checks 1-9.  The verdict is the highest order
    block fully satisfied: the target's own verdict, ``order_1_0`` if only
    conditions 1-4 hold, else ``below_order_1``.
    """
    if target not in _TARGET_CONDITIONS:
        raise DomainError(f"unknown order target {target!r}; expected one of {ORDER_TARGETS}")
    if not tol > 0:
        raise DomainError(f"tolerance must be positive, got {tol}")
    residuals = _order_residuals(t)
    entries = []
    for k in _TARGET_CONDITIONS[target]:
        desc, r = residuals[k]
        entries.append(ConditionEntry(f"{k}: {desc}", r, r <= tol))
    by_number = {k: entries[i] for i, k in enumerate(_TARGET_CONDITIONS[target])}
    base_ok = all(by_number[k].satisfied for k in range(1, 5))
    if all(e.satisfied for e in entries):
        verdict = _TARGET_TOP_VERDICT[target]
    elif base_ok:
        verdict = "order_1_0"
    else:
        verdict = "below_order_1"
    return ConditionReport(
        entries=tuple(entries),
        max_abs_residual=max(e.residual for e in entries),
        verdict=verdict,
        tolerance=tol,
        target=target,
    )


def check_symplectic(t: Tableau, tol: float = DEFAULT_TOL) -> ConditionReport:
    """Check alpha_i a_ij + alpha_j a_ji = alpha_i alpha_j for all i, j.

    With additive noise only the A/alpha block is constrained; the noise
    weights enter the update as state-independent shifts.
    """
    if not tol > 0:
        raise DomainError(f"tolerance must be positive, got {tol}")
    M = (
        t.alpha[:, None] * t.A
        + t.alpha[None, :] * t.A.T
        - np.outer(t.alpha, t.alpha)
    )
    entries = []
    for i in range(t.s):
        for j in range(i, t.s):
            r = abs(float(M[i, j]))
            entries.append(ConditionEntry(f"a[{i + 1},{j + 1}]", r, r <= tol))
    max_r = max(e.residual for e in entries)
    return ConditionReport(
        entries=tuple(entries),
        max_abs_residual=max_r,
        verdict="symplectic" if max_r <= tol else "not_symplectic",
        tolerance=tol,
        target="symplectic",
    )


def _require_open_unit(a1: float) -> None:
    if not 0.0 < a1 < 1.0:
        raise DomainError(f"alpha1 must satisfy 0 < alpha1 < 1, got {a1}")


def _noise_columns(a1: float) -> tuple[np.ndarray, np.ndarray]:
    """First columns of B and D shared by the 2-stage one-parameter families."""
    b = np.array([-math.sqrt(2.0 * (1.0 - a1) / (3.0 * a1)), math.sqrt(2.0 * a1 / (3.0 * (1.0 - a1)))])
    d = np.array(
        [
            1.0 + math.sqrt(3.0 * (1.0 - a1) / (2.0 * a1)),
            1.0 + math.sqrt(6.0 * a1 * (1.0 - a1)) / (2.0 * (a1 - 1.0)),
        ]
    )
    return b, d


def _two_stage(A: np.ndarray, c: np.ndarray, b: np.ndarray, d: np.ndarray, a1: float, name: str, flags) -> Tableau:
    return Tableau(
        s=2,
        A=A,
        B=np.column_stack([b, np.zeros(2)]),
        D=np.column_stack([d, np.zeros(2)]),
        alpha=np.array([a1, 1.0 - a1]),
        beta=np.array([0.0, 1.0]),
        gamma=np.array([1.0, -1.0]),
        c=c,
        c_hat=np.array([0.0, 1.0]),
        name=name,
        flags=flags,
    )


def _make_srk_alpha1(a1: float) -> Tableau:
    _require_open_unit(a1)
    b, d = _noise_columns(a1)
    c2 = 1.0 / (2.0 - 2.0 * a1)
    A = np.array([[0.0, 0.0], [c2, 0.0]])
    return _two_stage(A, np.array([0.0, c2]), b, d, a1, f"srk_alpha1({a1!r})", ("explicit",))


def _sym_base(a1: float) -> tuple[np.ndarray, np.ndarray]:
    A = np.array([[a1 / 2.0, 0.0], [a1, (1.0 - a1) / 2.0]])
    c = np.array([a1 / 2.0, (a1 + 1.0) / 2.0])
    return A, c


def _make_ssrk_alpha1(a1: float) -> Tableau:
    _require_open_unit(a1)
    b, d = _noise_columns(a1)
    A, c = _sym_base(a1)
    return _two_stage(A, c, b, d, a1, f"ssrk_alpha1({a1!r})", ("diagonally_implicit",))


def _make_ssrk_alpha1_b1(a1: float, b1: float) -> Tableau:
    _require_open_unit(a1)
    bound = (2.0 / 3.0) * math.sqrt((1.0 - a1) / a1)
    if not -bound < b1 < bound:
        raise DomainError(
            f"b1 must satisfy -(2/3)*sqrt((1-alpha1)/alpha1) < b1 < (2/3)*sqrt((1-alpha1)/alpha1)"
            f" = +/-{bound!r}, got {b1}"
        )
    root = math.sqrt(2.0 / a1 - 3.0 * b1 * b1 - 2.0)
    b = np.array([b1, a1 * b1 / (a1 - 1.0)])
    d = np.array(
        [
            1.0 - 1.5 * b1 - 0.5 * root,
            1.0 - (3.0 * b1 * a1 + a1 * root) / (2.0 * (a1 - 1.0)),
        ]
    )
    A, c = _sym_base(a1)
    return _two_stage(A, c, b, d, a1, f"ssrk_alpha1_b1({a1!r},{b1!r})", ("diagonally_implicit",))


def _make_euler_maruyama() -> Tableau:
    z = np.zeros((1, 1))
    return Tableau(
        s=1,
        A=z,
        B=z,
        D=z,
        alpha=np.array([1.0]),
        beta=np.array([1.0]),
        gamma=np.array([0.0]),
        c=np.zeros(1),
        c_hat=np.zeros(1),
        name="euler_maruyama",
        flags=("explicit",),
    )


def _make_midpoint() -> Tableau:
    # Stage value is the chord midpoint (y_n + y_{n+1})/2, which for additive
    # noise requires half of the Wiener increment in the stage: b_11 = 1/2.
    return Tableau(
        s=1,
        A=np.array([[0.5]]),
        B=np.array([[0.5]]),
        D=np.zeros((1, 1)),
        alpha=np.array([1.0]),
        beta=np.array([1.0]),
        gamma=np.array([0.0]),
        c=np.array([0.5]),
        c_hat=np.array([0.5]),
        name="midpoint",
        flags=("diagonally_implicit",),
    )


BUILTIN_SCHEMES = {
    "euler_maruyama": 0,
    "midpoint": 0,
    "srk_alpha1": 1,
    "ssrk_alpha1": 1,
    "ssrk_alpha1_b1": 2,
}


def make_builtin(name: str, params: Sequence[float] = ()) -> Tableau:
    """Construct a builtin tableau by name.

    ``srk_alpha1`` and ``ssrk_alpha1`` take [alpha1] with 0 < alpha1 < 1;
    ``ssrk_alpha1_b1`` takes [alpha1, b1] with
    |b1| < (2/3)*sqrt((1-alpha1)/alpha1); ``euler_maruyama`` and
    ``midpoint`` take no parameters.
    """
    if name not in BUILTIN_SCHEMES:
        raise DomainError(f"unknown builtin scheme {name!r}; known: {sorted(BUILTIN_SCHEMES)}")
    params = [float(p) for p in params]
    want = BUILTIN_SCHEMES[name]
    if len(params) != want:
        raise DomainError(f"{name} takes {want} parameter(s), got {len(params)}")
    if name == "euler_maruyama":
        return _make_euler_maruyama()
    if name == "midpoint":
        return _make_midpoint()
    if name == "srk_alpha1":
        return _make_srk_alpha1(params[0])
    if name == "ssrk_alpha1":
        return _make_ssrk_alpha1(params[0])
    return _make_ssrk_alpha1_b1(params[0], params[1])


def tableau_to_json(t: Tableau) -> str:
    """Serialize to a JSON document with row-major matrices."""
    doc = {
        "name": t.name,
        "s": t.s,
        "A": t.A.tolist(),
        "B": t.B.tolist(),
        "D": t.D.tolist(),
        "alpha": t.alpha.tolist(),
        "beta": t.beta.tolist(),
        "gamma": t.gamma.tolist(),
        "c": t.c.tolist(),
        "c_hat": t.c_hat.tolist(),
        "flags": list(t.flags),
    }
    return json.dumps(doc, indent=2)


def tableau_from_json(text: str) -> Tableau:
    """Parse a tableau from its JSON document form."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StructureError(f"invalid tableau JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise StructureError("tableau JSON must be an object")
    missing = {"s", "A", "B", "D", "alpha", "beta", "gamma", "c", "c_hat"} - doc.keys()
    if missing:
        raise StructureError(f"tableau JSON missing keys: {sorted(missing)}")
    s = doc["s"]
    if not isinstance(s, int):
        raise StructureError(f"'s' must be an integer, got {s!r}")
    try:
        return Tableau(
            s=s,
            A=doc["A"],
            B=doc["B"],
            D=doc["D"],
            alpha=doc["alpha"],
            beta=doc["beta"],
            gamma=doc["gamma"],
            c=doc["c"],
            c_hat=doc["c_hat"],
            name=str(doc.get("name", "")),
            flags=tuple(doc.get("flags", ())),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, StructureError):
            raise
        raise StructureError(f"malformed tableau JSON: {exc}") from exc
