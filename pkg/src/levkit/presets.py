"""Material presets and scenario manifests shipped as JSON.

Files are looked up first in every directory listed in ``LEVKIT_CONFIG_DIR``
(``os.pathsep`` separated), then in the package data directory.
"""
from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path

from .errors import ValidationError

ENV_VAR = "LEVKIT_CONFIG_DIR"


def search_path():
    dirs = []
    env = os.environ.get(ENV_VAR)
    if env:
        dirs.extend(Path(p) for p in env.split(os.pathsep) if p)
    dirs.append(Path(str(resources.files("levkit") / "data")))
    return dirs


def find_file(name):
    for d in search_path():
        p = d / name
        if p.is_file():
            return p
    raise ValidationError(f"config file {name!r} not found in {[str(d) for d in search_path()]}")


def load_json(name):
    with find_file(name).open(encoding="utf-8") as fh:
        return json.load(fh)


def material_table():
    doc = load_json("materials.json")
    mats = doc.get("materials")
    if not isinstance(mats, dict) or not mats:
        raise ValidationError("materials.json has no 'materials' table")
    return doc.get("default", next(iter(mats))), mats


def material_names():
    return sorted(material_table()[1])


def plate_from_preset(name=None, side_length=None, L_tilde=None, magnet_side=None, **overrides):
    """Build a :class:`~levkit.levitation.PlateSpec` from a named preset.

    Give either ``side_length`` in metres or ``L_tilde`` together with the
    magnet side (defaults to the standard array).
    """
    from .constants import MAGNET_SIDE
    from .levitation import PlateSpec

    default, mats = material_table()
    name = name or default
    if name not in mats:
        raise ValidationError(f"unknown material {name!r}; known: {sorted(mats)}")
    entry = dict(mats[name])
    if side_length is None:
        if L_tilde is None:
            raise ValidationError("give side_length or L_tilde")
        side_length = L_tilde * (magnet_side or MAGNET_SIDE)
    fields = dict(side_length=side_length, thickness=entry.get("thickness", 1e-4),
                  density=entry["density"], chi=tuple(entry["chi"]), name=name)
    fields.update(overrides)
    return PlateSpec(**fields)
