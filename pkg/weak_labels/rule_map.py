"""
Concept taxonomy + rule-to-concept map (the distant-supervision knowledge base).

Files live under kb/ (see config.TAXONOMY_PATH / config.RULE_MAP_PATH):

- taxonomy: one concept name per line, order = index order of every y_E vector
- rule map: `rule_id | human description | Concept A; Concept B`

Blank lines and lines starting with `#` are ignored in both.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Sequence

import numpy as np


class RuleMapError(ValueError):
    pass


class UnknownConceptError(RuleMapError):
    def __init__(self, rule_id: str, concept: str, lineno: int = 0):
        where = f" (line {lineno})" if lineno else ""
        super().__init__(f"rule '{rule_id}'{where} maps to unknown concept '{concept}'")
        self.rule_id = rule_id
        self.concept = concept


class DuplicateRuleError(RuleMapError):
    pass


class EmptyConceptListError(RuleMapError):
    pass


class UnknownRuleError(RuleMapError):
    pass


@dataclass(frozen=True)
class ConceptTaxonomy:
    names: tuple

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if not names:
            raise ValueError("taxonomy needs at least one concept")
        if any(not n.strip() for n in names):
            raise ValueError("concept names must be nonempty")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate concept names in taxonomy: {dupes}")
        object.__setattr__(self, "_index", {name: i for i, name in enumerate(names)})

    @property
    def k(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        return self._index[name]

    def vector(self, names: Iterable[str]) -> np.ndarray:
        """0/1 concept vector (int8, taxonomy order) with the given names set."""
        vec = np.zeros(self.k, dtype=np.int8)
        for name in names:
            vec[self._index[name]] = 1
        return vec

    def names_of(self, vector) -> List[str]:
        vector = np.asarray(vector).reshape(-1)
        if vector.shape[0] != self.k:
            raise ValueError(f"concept vector has length {vector.shape[0]}, taxonomy has {self.k}")
        return [self.names[i] for i in np.flatnonzero(vector)]


@dataclass(frozen=True)
class RuleEntry:
    description: str
    concepts: FrozenSet[str]


@dataclass(frozen=True)
class RuleConceptMap:
    entries: Mapping[str, RuleEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, rule_id: str) -> bool:
        return rule_id in self.entries

    def concepts_for(self, rule_id: str) -> FrozenSet[str]:
        return self.entries[rule_id].concepts

    @property
    def rule_ids(self) -> List[str]:
        return list(self.entries)


def _content_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line and not line.startswith("#"):
            yield lineno, line


def parse_taxonomy(text: str) -> ConceptTaxonomy:
    return ConceptTaxonomy(tuple(line for _, line in _content_lines(text)))


def load_taxonomy(path: Path) -> ConceptTaxonomy:
    return parse_taxonomy(Path(path).read_text(encoding="utf-8"))


def write_taxonomy(taxonomy: ConceptTaxonomy, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(taxonomy.names) + "\n", encoding="utf-8")
    return path


def parse_rule_map(text: str, taxonomy: ConceptTaxonomy) -> RuleConceptMap:
    entries: Dict[str, RuleEntry] = {}
    for lineno, line in _content_lines(text):
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3:
            raise RuleMapError(f"line {lineno}: expected 'rule_id | description | concepts', got {line!r}")
        rule_id, description, concept_field = parts
        if not rule_id:
            raise RuleMapError(f"line {lineno}: empty rule_id")
        if rule_id in entries:
            raise DuplicateRuleError(f"line {lineno}: duplicate rule_id '{rule_id}'")
        concepts = [c.strip() for c in concept_field.split(";") if c.strip()]
        if not concepts:
            raise EmptyConceptListError(f"line {lineno}: rule '{rule_id}' maps to no concepts")
        for concept in concepts:
            if concept not in taxonomy:
                raise UnknownConceptError(rule_id, concept, lineno)
        entries[rule_id] = RuleEntry(description, frozenset(concepts))
    return RuleConceptMap(entries)


def load_rule_map(path: Path, taxonomy: ConceptTaxonomy) -> RuleConceptMap:
    return parse_rule_map(Path(path).read_text(encoding="utf-8"), taxonomy)


def write_rule_map(rule_map: RuleConceptMap, taxonomy: ConceptTaxonomy, path: Path) -> Path:
    """Write concepts of each rule in taxonomy order so the file is byte-stable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["# rule_id | description | concepts"]
    for rule_id, entry in rule_map.entries.items():
        concepts = sorted(entry.concepts, key=taxonomy.index)
        lines.append(f"{rule_id} | {entry.description} | {'; '.join(concepts)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def build_rule_map(rules: Sequence[tuple], taxonomy: ConceptTaxonomy) -> RuleConceptMap:
    """Validated map from (rule_id, description, concept names) tuples."""
    lines = [f"{rid} | {desc} | {'; '.join(concepts)}" for rid, desc, concepts in rules]
    return parse_rule_map("\n".join(lines), taxonomy)
