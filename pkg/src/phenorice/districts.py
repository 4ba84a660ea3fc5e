"""Canonical Telangana district names and alias resolution."""
from __future__ import annotations

import os
import re
from functools import lru_cache
from importlib import resources
from pathlib import Path


class UnknownDistrictError(KeyError):
    def __init__(self, names):
        self.names = [names] if isinstance(names, str) else list(names)
        super().__init__(f"unknown district name(s): {', '.join(map(repr, self.names))}")

    def __str__(self):
        return self.args[0]


def _key(name: str) -> str:
    return re.sub(r"[^0-9a-z]", "", name.casefold())


class DistrictDictionary:
    """Alias table read from a ``alias<TAB>canonical`` file."""

    def __init__(self, pairs):
        self.canonical: set[str] = set()
        self._lookup: dict[str, str] = {}
        for alias, canon in pairs:
            self.canonical.add(canon)
        for canon in self.canonical:
            self._lookup[_key(canon)] = canon
        for alias, canon in pairs:
            k = _key(alias)
            if k in self._lookup and self._lookup[k] != canon:
                raise ValueError(f"alias {alias!r} maps to both {self._lookup[k]!r} and {canon!r}")
            self._lookup[k] = canon

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "DistrictDictionary":
        with open(path, encoding="utf-8") as fh:
            return cls(_parse(fh.read()))

    def resolve(self, raw: str) -> str:
        k = _key(raw or "")
        if not k or k not in self._lookup:
            raise UnknownDistrictError(raw)
        return self._lookup[k]

    def aliases(self) -> list[str]:
        return sorted(self._lookup)


def _parse(text: str):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"line {lineno}: expected 'alias<TAB>canonical', got {line!r}")
        pairs.append((parts[0].strip(), parts[1].strip()))
    return pairs


@lru_cache(maxsize=1)
def default_dictionary() -> DistrictDictionary:
    override = os.environ.get("PHENORICE_DISTRICTS")
    if override:
        return DistrictDictionary.from_file(Path(override))
    text = resources.files("phenorice").joinpath("data/districts.tsv").read_text(encoding="utf-8")
    return DistrictDictionary(_parse(text))


def normalize_district_name(raw: str, dictionary: DistrictDictionary | None = None) -> str:
    return (dictionary or default_dictionary()).resolve(raw)


def canonical_districts() -> list[str]:
    return sorted(default_dictionary().canonical)
