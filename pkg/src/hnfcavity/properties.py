"""Effective properties of a two-species hybrid nanofluid.

Density, heat capacity and the product of density and thermal expansion
mix linearly by volume.  Viscosity follows Brinkman.  Conductivity applies
the Maxwell model twice: first the base fluid loaded with species B, then
that effective medium loaded with species A.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

PHI_MAX = 0.05


class PropertyError(ValueError):
    pass


@dataclass(frozen=True)
class MaterialSpec:
    name: str
    density: float
    specific_heat: float
    conductivity: float
    expansion_coeff: float

    def __post_init__(self):
        for attr in ("density", "specific_heat", "conductivity", "expansion_coeff"):
            if not getattr(self, attr) > 0:
                raise PropertyError(f"{self.name}: {attr} must be strictly positive")


@dataclass(frozen=True)
class MixtureSpec:
    base: MaterialSpec
    particle_a: MaterialSpec
    particle_b: MaterialSpec
    phi_total: float = 0.0
    split_a: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.phi_total <= PHI_MAX:
            raise PropertyError(f"phi_total={self.phi_total} outside [0, {PHI_MAX}]")
        if not 0.0 <= self.split_a <= 1.0:
            raise PropertyError(f"split_a={self.split_a} outside [0, 1]")


@dataclass(frozen=True)
class PropertyRatios:
    """Coefficient ratios of the nondimensional equations.

    ``k_ratio`` (k_hnf / k_f) is not a coefficient of the equations but
    weights the wall heat flux in the Nusselt number.
    """

    rho_ratio: float = 1.0      # rho_f / rho_hnf
    mu_ratio: float = 1.0       # mu_hnf / mu_f
    rhobeta_ratio: float = 1.0  # (rho beta)_hnf / (rho_hnf beta_f)
    alpha_ratio: float = 1.0    # alpha_hnf / alpha_f
    k_ratio: float = 1.0        # k_hnf / k_f

    def viscous_coefficient(self, pr: float) -> float:
        return self.rho_ratio * self.mu_ratio * pr

    def buoyancy_coefficient(self, pr: float, ra: float) -> float:
        return self.rhobeta_ratio * pr * ra


CLEAR_FLUID = PropertyRatios()


def maxwell(k_medium: float, k_particle: float, phi: float) -> float:
    """Maxwell effective conductivity of spheres at volume fraction ``phi``."""
    d = k_medium - k_particle
    return k_medium * (k_particle + 2 * k_medium - 2 * phi * d) / (k_particle + 2 * k_medium + phi * d)


def brinkman(phi: float) -> float:
    return (1.0 - phi) ** -2.5


def compute_ratios(mix: MixtureSpec) -> PropertyRatios:
    f, a, b = mix.base, mix.particle_a, mix.particle_b
    phi = mix.phi_total
    phi_a = phi * mix.split_a
    phi_b = phi - phi_a

    def linear(prop):
        return (1 - phi) * prop(f) + phi_a * prop(a) + phi_b * prop(b)

    rho = linear(lambda m: m.density)
    rho_beta = linear(lambda m: m.density * m.expansion_coeff)
    rho_cp = linear(lambda m: m.density * m.specific_heat)
    k_b = maxwell(f.conductivity, b.conductivity, phi_b)
    k = maxwell(k_b, a.conductivity, phi_a)

    alpha = k / rho_cp
    alpha_f = f.conductivity / (f.density * f.specific_heat)
    return PropertyRatios(
        rho_ratio=f.density / rho,
        mu_ratio=brinkman(phi),
        rhobeta_ratio=rho_beta / (rho * f.expansion_coeff),
        alpha_ratio=alpha / alpha_f,
        k_ratio=k / f.conductivity,
    )


def load_materials(path=None) -> dict[str, MaterialSpec]:
    """Parse a material table: ``name density specific_heat conductivity expansion_coeff``."""
    if path is None:
        text = resources.files("hnfcavity").joinpath("data/materials.txt").read_text()
        label = "materials.txt"
    else:
        text = Path(path).read_text()
        label = str(path)
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise PropertyError(f"{label}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            values = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise PropertyError(f"{label}:{lineno}: {exc}") from None
        out[parts[0]] = MaterialSpec(parts[0], *values)
    return out


def default_materials(path=None, names=("water", "Cu", "Al2O3")):
    """Return the (base, particle_a, particle_b) triple from the material table."""
    table = load_materials(path)
    missing = [n for n in names if n not in table]
    if missing:
        raise PropertyError(f"material table lacks {', '.join(missing)}")
    return tuple(table[n] for n in names)


def hybrid_ratios(phi: float, split_a: float = 0.5, materials_path=None) -> PropertyRatios:
    """Ratios for the default water / Cu / Al2O3 mixture."""
    base, a, b = default_materials(materials_path)
    return compute_ratios(MixtureSpec(base, a, b, phi, split_a))
