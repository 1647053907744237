"""Tissue property presets and the simulation profiles built from them."""

from importlib import resources

import numpy as np

from .forward import LayerProfile

__all__ = ["tissue_properties", "thoracic_profile", "desk_profile", "PRESETS"]

_cache = None


def tissue_properties():
    """name -> (relative permittivity, conductivity S/m) from the data file."""
    global _cache
    if _cache is None:
        table = {}
        text = (resources.files("uwbinvert") / "data" / "tissues.csv").read_text()
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, eps, sigma = line.split(",")
            table[name] = (float(eps), float(sigma))
        _cache = table
    return dict(_cache)


def thoracic_profile(lung="deflated", d0=0.01):
    """Five-layer thoracic stack: skin, fat, muscle, bone, semi-infinite lung.

    Thicknesses 0.3 / 1.25 / 1.0 / 0.75 cm; ``lung`` selects the deflated or
    inflated last-layer properties.
    """
    t = tissue_properties()
    lung_key = f"lung_{lung}"
    if lung_key not in t:
        raise ValueError(f"unknown lung state {lung!r}")
    names = ["skin", "fat", "muscle", "bone", lung_key]
    eps = np.array([t[n][0] for n in names])
    sigma = np.array([t[n][1] for n in names])
    d = np.array([d0, 0.003, 0.0125, 0.010, 0.0075])
    return LayerProfile(eps, sigma, d)


def desk_profile(d0=0.012):
    """Small two-layer problem (skin over semi-infinite fat) used by the
    fast end-to-end suites."""
    t = tissue_properties()
    eps = np.array([t["skin"][0], t["fat"][0]])
    sigma = np.array([t["skin"][1], t["fat"][1]])
    d = np.array([d0, 0.004])
    return LayerProfile(eps, sigma, d)


PRESETS = {
    "thoracic_deflated": lambda: thoracic_profile("deflated"),
    "thoracic_inflated": lambda: thoracic_profile("inflated"),
    "desk2": desk_profile,
}
