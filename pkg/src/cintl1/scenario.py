"""Experiment parameters, derived physical scales and scaling-regime checks.

All quantities are nondimensional: lengths are measured in units of the
correlation length ``ell`` (normally 1) and the background speed is
``c_o = 1``, so the central angular frequency is ``omega0 = 2*pi/lambda0``
and the central wavenumber equals ``omega0``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

logger = logging.getLogger(__name__)

#: Ratio above which a "much less than" relation is flagged with a warning.
MUCH_LESS_WARN = 0.5

NARROWBAND = "narrowband"
BROADBAND = "broadband"


class ScenarioError(ValueError):
    """Raised for invalid or inconsistent scenario parameters."""


@dataclass(frozen=True)
class Scenario:
    """Physical and algorithmic parameters of one imaging experiment.

    Field names match the JSON document layout one to one.

    Parameters
    ----------
    dim : int
        Spatial dimension, 2 (linear array) or 3 (planar square array).
    lambda0 : float
        Central wavelength.
    B_over_w0 : float
        Bandwidth as a fraction of the central frequency.
    ell : float
        Correlation length of the fluctuations.
    sigma : float
        Standard deviation of the fluctuations.
    L : float
        Range of the imaging region centre from the array.
    a : float
        Side length of the aperture.
    Nr : int
        Number of receivers. In 3D it must be a perfect square.
    D, D3 : float
        Cross-range and range extents of the imaging region.
    X_over_Xd : float
        Spatial threshold ``X`` in units of the decoherence length.
    Omega_rule : str
        Rule for the frequency threshold: ``"auto"``, ``"B"``,
        ``"Omega_d"``, ``"B/2"``, ``"0.5*B"``, ``"2*Omega_d"`` or a number.
    noise_level : float
        Additive noise standard deviation relative to the signal RMS.
    master_seed : int
        Root seed of every random stream used by an experiment.
    mesh_h, mesh_h3 : float or None
        Steps of the unknown mesh in cross-range and range. ``None`` for
        ``mesh_h`` selects one sixth of the cross-range unit. ``None`` for
        ``mesh_h3`` means a single cross-range section at range ``L``.
    sample_spacing : float or None
        Step of the points where the CINT image is sampled into ``d``.
        ``None`` selects twice the mesh step.
    """

    dim: int = 2
    lambda0: float = 1.75e-5
    B_over_w0: float = 0.0032
    ell: float = 1.0
    sigma: float = 1.5e-6
    L: float = 800.0
    a: float = 16.0
    Nr: int = 801
    D: float = 0.5
    D3: float = 0.02
    X_over_Xd: float = 0.5
    Omega_rule: str = "B/2"
    noise_level: float = 0.05
    master_seed: int = 20150601
    mesh_h: float | None = None
    mesh_h3: float | None = None
    sample_spacing: float | None = None

    def __post_init__(self) -> None:
        if self.dim not in (2, 3):
            raise ScenarioError(f"dim must be 2 or 3, got {self.dim}")
        for name in ("lambda0", "ell", "L", "a", "D", "D3", "B_over_w0"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ScenarioError(f"{name} must be positive and finite, got {value}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ScenarioError(f"sigma must be nonnegative, got {self.sigma}")
        if self.noise_level < 0:
            raise ScenarioError(f"noise_level must be >= 0, got {self.noise_level}")
        if self.X_over_Xd <= 0:
            raise ScenarioError("X_over_Xd must be positive")
        if int(self.Nr) != self.Nr or self.Nr < 1:
            raise ScenarioError(f"Nr must be a positive integer, got {self.Nr}")
        if self.dim == 3 and math.isqrt(self.Nr) ** 2 != self.Nr:
            raise ScenarioError("in 3D, Nr must be a perfect square (square grid array)")
        for name in ("mesh_h", "mesh_h3", "sample_spacing"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ScenarioError(f"{name} must be positive or null, got {value}")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ScenarioError("master_seed must fit in 64 unsigned bits")
        parse_omega_rule(self.Omega_rule)

    @property
    def omega0(self) -> float:
        """Central angular frequency (c_o = 1)."""
        return 2.0 * math.pi / self.lambda0

    @property
    def B(self) -> float:
        """Bandwidth in angular-frequency units."""
        return self.B_over_w0 * self.omega0

    def replace(self, **changes: Any) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Short stable hash of the parameters, used to tag outputs."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "Scenario":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**doc)


def load_scenario(path: str | Path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


def save_scenario(s: Scenario, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(s.to_dict(), fh, indent=2)


_RULE = re.compile(
    r"^\s*(?:(?P<coef>[0-9.eE+-]+)\s*\*\s*)?(?P<base>B|Omega_d)(?:\s*/\s*(?P<div>[0-9.eE+-]+))?\s*$"
)


def parse_omega_rule(rule: str | float) -> tuple[str, float]:
    """Parse an ``Omega_rule`` string into ``(base, factor)``.

    ``base`` is ``"auto"``, ``"B"``, ``"Omega_d"`` or ``"abs"`` (an absolute
    value in angular-frequency units, stored in ``factor``).

    >>> parse_omega_rule("B/2")
    ('B', 0.5)
    >>> parse_omega_rule("3*Omega_d")
    ('Omega_d', 3.0)
    """
    if isinstance(rule, (int, float)):
        return "abs", float(rule)
    text = str(rule).strip()
    if text == "auto":
        return "auto", 1.0
    m = _RULE.match(text)
    if m is None:
        try:
            return "abs", float(text)
        except ValueError:
            raise ScenarioError(f"cannot parse Omega_rule {rule!r}") from None
    factor = float(m.group("coef") or 1.0) / float(m.group("div") or 1.0)
    if not factor > 0:
        raise ScenarioError(f"Omega_rule factor must be positive: {rule!r}")
    return m.group("base"), factor


@dataclass(frozen=True)
class DerivedScales:
    """Secondary scales computed from a :class:`Scenario`.

    Frequencies are in angular units (not normalised by ``omega0``);
    use :attr:`Omega_d_over_w0` for the normalised decoherence frequency.
    """

    k0: float
    omega0: float
    B: float
    S: float
    Omega_d: float
    X_d: float
    X: float
    Omega: float
    X_e: float
    Omega_e: float
    R: float
    R3: float
    Rt: float
    Rt3: float
    theta: float
    gamma: float
    regime: str
    L: float

    @property
    def Omega_d_over_w0(self) -> float:
        return self.Omega_d / self.omega0

    @property
    def inv_gamma(self) -> float:
        return 1.0 / self.gamma

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["Omega_d_over_w0"] = self.Omega_d_over_w0
        return out


def classify_bandwidth(B: float, Omega_d: float) -> str:
    """Narrowband iff ``B <= Omega_d`` (the tie goes to narrowband)."""
    return NARROWBAND if B <= Omega_d else BROADBAND


def scattering_mean_free_path(sigma: float, k: float, ell: float = 1.0) -> float:
    """``S = 8 / (sqrt(2 pi) sigma^2 k^2 ell)``; infinite when ``sigma = 0``."""
    if sigma == 0:
        return math.inf
    return 8.0 / (math.sqrt(2.0 * math.pi) * sigma**2 * k**2 * ell)


def derive_scales(s: Scenario) -> DerivedScales:
    """Compute every secondary scale of the model from the scenario.

    Raises
    ------
    ScenarioError
        If any derived quantity is not finite (for instance ``sigma = 0``,
        which makes the decoherence scales infinite).
    """
    w0 = s.omega0
    k0 = w0  # c_o = 1
    B = s.B
    S = scattering_mean_free_path(s.sigma, k0, s.ell)
    if s.sigma == 0:
        raise ScenarioError("sigma = 0 gives infinite decoherence scales")
    Omega_d = 2.0 * w0 / (2.0 * math.pi) ** 1.25 * s.lambda0 / (s.sigma * math.sqrt(s.ell * s.L))
    X_d = math.sqrt(3.0) * s.ell * Omega_d / w0
    regime = classify_bandwidth(B, Omega_d)
    X = s.X_over_Xd * X_d

    base, factor = parse_omega_rule(s.Omega_rule)
    if base == "auto":
        Omega = B if regime == NARROWBAND else Omega_d
    elif base == "B":
        Omega = factor * B
    elif base == "Omega_d":
        Omega = factor * Omega_d
    else:
        Omega = factor

    apod = 1.0 / (4.0 * (s.a / 6.0) ** 2)
    X_e = (1.0 / X_d**2 + 1.0 / X**2 + apod) ** -0.5
    Omega_e = (1.0 / Omega_d**2 + 1.0 / Omega**2 + 1.0 / (4.0 * B**2)) ** -0.5
    R = s.L / (k0 * X_e)
    R3 = 1.0 / Omega_e
    Rt = 6.0 * math.sqrt(2.0) * s.L / (k0 * s.a)
    Rt3 = 1.0 / B
    theta = 6.0 * w0 * X_e / (Omega_e * s.a)
    gamma = 1.0 / (1.0 - X_e**2 / (4.0 * X_d**2))

    out = DerivedScales(
        k0=k0, omega0=w0, B=B, S=S, Omega_d=Omega_d, X_d=X_d, X=X, Omega=Omega,
        X_e=X_e, Omega_e=Omega_e, R=R, R3=R3, Rt=Rt, Rt3=Rt3, theta=theta,
        gamma=gamma, regime=regime, L=s.L,
    )
    for name, value in out.to_dict().items():
        if isinstance(value, float) and not math.isfinite(value):
            raise ScenarioError(f"derived scale {name} is not finite")
    return out


def cross_range_unit(s: Scenario, d: DerivedScales, convention: str = "angular") -> float:
    """Cross-range length unit used to state source separations and mesh steps.

    ``"angular"`` returns ``L / (k0 X)``. ``"literal"`` returns
    ``lambda0 L / X``, which is ``2 pi`` times larger.
    """
    if convention == "angular":
        return s.L / (d.k0 * d.X)
    if convention == "literal":
        return s.lambda0 * s.L / d.X
    raise ScenarioError(f"unknown cross-range unit convention {convention!r}")


def mesh_step(s: Scenario, d: DerivedScales, convention: str = "angular") -> float:
    """Cross-range mesh step: ``mesh_h`` or one sixth of the cross-range unit."""
    if s.mesh_h is not None:
        return s.mesh_h
    return cross_range_unit(s, d, convention) / 6.0


def sample_step(s: Scenario, d: DerivedScales, convention: str = "angular") -> float:
    if s.sample_spacing is not None:
        return s.sample_spacing
    return 2.0 * mesh_step(s, d, convention)


# --------------------------------------------------------------------------
# regime validation


@dataclass(frozen=True)
class RegimeCheck:
    """One inequality ``lhs REL rhs`` of the scaling assumptions."""

    assumption: str
    relation: str
    lhs: float
    rhs: float
    kind: str  # "<<", "<" or "<~"
    applies: bool = True

    @property
    def ratio(self) -> float:
        if self.rhs == 0:
            return math.inf if self.lhs > 0 else 0.0
        return self.lhs / self.rhs

    @property
    def passed(self) -> bool:
        return self.ratio < 1.0 if self.kind != "<~" else self.ratio <= 1.0

    @property
    def warning(self) -> bool:
        return self.kind == "<<" and MUCH_LESS_WARN <= self.ratio < 1.0

    def as_row(self) -> dict[str, Any]:
        return {
            "assumption": self.assumption, "relation": self.relation, "lhs": self.lhs,
            "rhs": self.rhs, "ratio": self.ratio, "passed": self.passed,
            "warning": self.warning, "applies": self.applies,
        }


ASSUMPTION_IDS = ("a3", "a4", "a9", "a10", "as1", "as2", "as3", "as4", "as4bb", "as3bb", "as5")


@dataclass
class RegimeReport:
    """Every scaling inequality evaluated with its numeric ratio."""

    checks: list[RegimeCheck] = field(default_factory=list)

    def assumptions(self) -> list[str]:
        seen: list[str] = []
        for c in self.checks:
            if c.assumption not in seen:
                seen.append(c.assumption)
        return seen

    def failures(self, only_applicable: bool = True) -> list[RegimeCheck]:
        return [c for c in self.checks if not c.passed and (c.applies or not only_applicable)]

    def get(self, relation: str) -> RegimeCheck:
        for c in self.checks:
            if c.relation == relation:
                return c
        raise KeyError(relation)

    def rows(self) -> list[dict[str, Any]]:
        return [c.as_row() for c in self.checks]

    def to_json(self) -> str:
        return json.dumps(self.rows(), indent=2)


def validate_regime(s: Scenario, d: DerivedScales | None = None) -> RegimeReport:
    """Evaluate the scaling assumptions of the model, never raising.

    ``"<<"`` relations pass when the ratio is below 1; ratios in
    ``[0.5, 1)`` are logged as warnings.  Works with ``sigma = 0`` (the
    lower bound on ``sigma`` is then reported as failed).
    """
    lam, ell, L, a, sig = s.lambda0, s.ell, s.L, s.a, s.sigma
    w0, B = s.omega0, s.B
    if d is None:
        try:
            d = derive_scales(s)
        except ScenarioError:
            d = None
    nb = d is None or d.regime == NARROWBAND
    X_d = d.X_d if d is not None else math.inf
    Omega_d = d.Omega_d if d is not None else math.inf
    X = d.X if d is not None else math.inf
    Omega = d.Omega if d is not None else B

    sig_lo = lam / math.sqrt(ell * L)
    sig_hi = math.sqrt(ell * lam) / L
    curv = (ell / L) ** 1.5
    fresnel = math.sqrt(lam * L)
    para = (lam * L**3) ** 0.25
    bb_lo = lam ** (2.0 / 3.0) * ell ** (1.0 / 6.0) / L ** (5.0 / 6.0)
    nb_hi = w0 * min(1.0, lam * L / (a * X_d))

    C = RegimeCheck
    checks = [
        C("a3", "lambda0 << ell", lam, ell, "<<"),
        C("a3", "ell << L", ell, L, "<<"),
        C("a4", "sigma << (ell/L)^(3/2)", sig, curv, "<<"),
        C("a4", "sigma << sqrt(ell lambda0)/L", sig, sig_hi, "<<"),
        C("a9", "lambda0/sqrt(ell L) << sigma", sig_lo, sig, "<<"),
        C("a10", "sqrt(lambda0 L) << ell", fresnel, ell, "<<"),
        C("a10", "ell << L", ell, L, "<<"),
        C("as1", "ell < a", ell, a, "<"),
        C("as1", "a << (lambda0 L^3)^(1/4)", a, para, "<<"),
        C("as2", "sqrt(lambda0 L) << ell", fresnel, ell, "<<"),
        C("as2", "ell << (lambda0 L^3)^(1/4)", ell, para, "<<"),
        C("as2", "(lambda0 L^3)^(1/4) << L", para, L, "<<"),
        C("as3", "lambda0/sqrt(ell L) << sigma", sig_lo, sig, "<<"),
        C("as3", "sigma << sqrt(ell lambda0)/L", sig, sig_hi, "<<"),
        C("as3", "sqrt(ell lambda0)/L << (ell/L)^(3/2)", sig_hi, curv, "<<"),
        C("as4", "omega0 (a/L)^2 << B", w0 * (a / L) ** 2, B, "<<", nb),
        C("as4", "B << omega0 min(1, lambda0 L/(a X_d))", B, nb_hi, "<<", nb),
        C("as4bb", "Omega_d << B", Omega_d, B, "<<", not nb),
        C("as4bb", "B << omega0", B, w0, "<<", not nb),
        C("as3bb", "lambda0/sqrt(ell L) << lambda0^(2/3) ell^(1/6)/L^(5/6)", sig_lo, bb_lo, "<<", not nb),
        C("as3bb", "lambda0^(2/3) ell^(1/6)/L^(5/6) << sigma", bb_lo, sig, "<<", not nb),
        C("as3bb", "sigma << sqrt(ell lambda0)/L", sig, sig_hi, "<<", not nb),
        C("as5", "c_o/Omega << D3", 1.0 / Omega, s.D3, "<<"),
        C("as5", "D3 << lambda0 L^2/a^2", s.D3, lam * L**2 / a**2, "<<"),
        C("as5", "lambda0 L/X << D", lam * L / X, s.D, "<<"),
        C("as5", "D <~ a", s.D, a, "<~"),
    ]
    report = RegimeReport(checks)
    for c in checks:
        if not c.applies:
            continue
        if not c.passed:
            logger.warning("scaling assumption %s fails: %s (ratio %.3g)", c.assumption, c.relation, c.ratio)
        elif c.warning:
            logger.warning("scaling assumption %s marginal: %s (ratio %.3g)", c.assumption, c.relation, c.ratio)
    return report
