"""Class identifiers for the thirteen Circle of Willis vessel components."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

# Column order of the per-class result tables.
CLASS_NAMES = (
    "BA",
    "R-PCA",
    "L-PCA",
    "R-ICA",
    "R-MCA",
    "L-ICA",
    "L-MCA",
    "R-Pcom",
    "L-Pcom",
    "Acom",
    "R-ACA",
    "L-ACA",
    "3rd-A2",
)

# Communicating arteries and the rare third A2; everything else is Group 1.
GROUP2 = frozenset({"R-Pcom", "L-Pcom", "Acom", "3rd-A2"})


@dataclass(frozen=True)
class LabelMap:
    """Bidirectional mapping between voxel values and component names."""

    entries: dict[int, str]
    _ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = dict(self.entries)
        if len(entries) != len(CLASS_NAMES):
            raise ValueError(f"label map needs {len(CLASS_NAMES)} entries, got {len(entries)}")
        for value in entries:
            if not isinstance(value, int) or not 0 < value <= 255:
                raise ValueError(f"label identifier {value!r} outside 1..255")
        names = list(entries.values())
        missing = set(CLASS_NAMES) - set(names)
        if missing:
            raise ValueError(f"label map missing classes: {sorted(missing)}")
        if len(set(names)) != len(names):
            raise ValueError("label map assigns one class to several identifiers")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "_ids", {name: value for value, name in entries.items()})

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise KeyError(f"unknown class {name!r}") from None

    def name(self, value: int) -> str:
        try:
            return self.entries[value]
        except KeyError:
            raise KeyError(f"unknown label value {value}") from None

    def resolve(self, cls: int | str) -> int:
        """Return the label value for a class given by name or value."""
        if isinstance(cls, str):
            return self[cls]
        if int(cls) not in self.entries:
            raise KeyError(f"unknown label value {cls}")
        return int(cls)

    def group(self, cls: int | str) -> int:
        name = cls if isinstance(cls, str) else self.name(cls)
        if name not in self._ids:
            raise KeyError(f"unknown class {name!r}")
        return 2 if name in GROUP2 else 1

    @property
    def values(self) -> list[int]:
        """Label values in table column order."""
        return [self._ids[name] for name in CLASS_NAMES]

    def to_dict(self) -> dict:
        return {"labels": {name: self._ids[name] for name in CLASS_NAMES}}


DEFAULT_LABEL_MAP = LabelMap({i + 1: name for i, name in enumerate(CLASS_NAMES)})


def load_label_map(path: str | Path | None = None) -> LabelMap:
    """Read a label map from a JSON config, or return the built-in default.

    The config holds ``{"labels": {"BA": 1, ..., "3rd-A2": 15}}`` with all
    thirteen classes listed. Duplicate identifiers raise ``ValueError``.
    """
    if path is None:
        return DEFAULT_LABEL_MAP
    with open(path) as fh:
        config = json.load(fh)
    return label_map_from_config(config)


def label_map_from_config(config: dict) -> LabelMap:
    labels = config.get("labels", config)
    if not isinstance(labels, dict):
        raise ValueError("label map config must be an object of name -> identifier")
    values = list(labels.values())
    if len(set(values)) != len(values):
        raise ValueError("duplicate label identifiers in config")
    unknown = set(labels) - set(CLASS_NAMES)
    if unknown:
        raise ValueError(f"unknown class names in config: {sorted(unknown)}")
    return LabelMap({int(v): k for k, v in labels.items()})
