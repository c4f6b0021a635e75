"""Atom-contribution logP / molar refractivity and condition binning.

Atom types come from an ordered rule table (``data/crippen.tsv`` by default)
whose predicates look at an atom's element, aromaticity, hydrogen count,
connectivity and (one level of nested) neighbours. Each heavy atom adds the
contribution of its first matching heavy-atom row plus, per attached implicit
hydrogen, the contribution of the first matching hydrogen row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from mgcvae.errors import InvalidProperty, TableError
from mgcvae.molgraph import ELEMENTS, BondType, MolGraph

LOGP_BINS: tuple[int, ...] = tuple(range(-6, 6))
MR_BINS: tuple[int, ...] = tuple(range(10, 100, 10))
CONDITION_DIM = len(LOGP_BINS) + len(MR_BINS)

# generation grid used for the condition tables
LOGP_GRID = (0, 1, 2, 3)
MR_GRID = (20, 30, 40, 50, 60)

_BONDS = {
    "-": (BondType.SINGLE,),
    "=": (BondType.DOUBLE,),
    "#": (BondType.TRIPLE,),
    ":": (BondType.AROMATIC,),
    "_": (BondType.SINGLE, BondType.AROMATIC),
    "~": tuple(BondType),
}
_UPPER = {el for el in ELEMENTS}
_LOWER = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}


# -- predicate language -------------------------------------------------------------


class _Env(NamedTuple):
    g: MolGraph
    h: list[int]


AtomTest = Callable[[_Env, int, int], bool]  # (env, atom, excluded atom) -> bool


def _split_terms(text: str, line: int | None) -> list[str]:
    terms, depth, cur = [], 0, []
    for ch in text:
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise TableError(f"unbalanced ']' in {text!r}", line)
        if ch == " " and depth == 0:
            if cur:
                terms.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth:
        raise TableError(f"unbalanced '[' in {text!r}", line)
    if cur:
        terms.append("".join(cur))
    return terms


def _class_test(spec: str, line: int | None) -> Callable[[str, bool], bool]:
    options = []
    for tok in spec.split("|"):
        if tok == "A":
            options.append(lambda el, ar: not ar)
        elif tok == "a":
            options.append(lambda el, ar: ar)
        elif tok == "*":
            options.append(lambda el, ar: True)
        elif tok == "Q":
            options.append(lambda el, ar: el != "C")
        elif tok in _UPPER:
            options.append(lambda el, ar, t=tok: el == t and not ar)
        elif tok in _LOWER:
            options.append(lambda el, ar, t=_LOWER[tok]: el == t and ar)
        else:
            raise TableError(f"unknown atom class {tok!r}", line)
    return lambda el, ar: any(f(el, ar) for f in options)


def _compare(op: str, want: int) -> Callable[[int], bool]:
    return {"=": lambda v: v == want, ">=": lambda v: v >= want, "<=": lambda v: v <= want}[op]


@dataclass(frozen=True)
class _Predicate:
    local: tuple[Callable[[_Env, int], bool], ...]
    neighbours: tuple[tuple[tuple[BondType, ...], Callable[[str, bool], bool], "_Predicate | None"], ...]
    elements: frozenset[str] | None
    hydrogen: bool = False

    def __call__(self, env: _Env, atom: int, exclude: int = -1) -> bool:
        if not all(t(env, atom) for t in self.local):
            return False
        if not self.neighbours:
            return True
        g = env.g
        cands = [(j, o) for j, o in g.adjacency[atom] if j != exclude]
        return _assign(env, atom, self.neighbours, cands, 0, set())


def _assign(env, atom, specs, cands, k, used) -> bool:
    if k == len(specs):
        return True
    bonds, cls, nested = specs[k]
    g = env.g
    for j, o in cands:
        if j in used or o not in bonds:
            continue
        a = g.atoms[j]
        if not cls(a.element, a.aromatic):
            continue
        if nested is not None and not nested(env, j, atom):
            continue
        used.add(j)
        if _assign(env, atom, specs, cands, k + 1, used):
            return True
        used.discard(j)
    return False


def parse_predicate(text: str, line: int | None = None) -> _Predicate:
    local: list[Callable[[_Env, int], bool]] = []
    neighbours = []
    elements = None
    hydrogen = False
    for term in _split_terms(text.strip(), line):
        if term == "hydrogen":
            hydrogen = True
            continue
        if term.startswith("nb="):
            body = term[3:]
            if not body or body[0] not in _BONDS:
                raise TableError(f"bad neighbour term {term!r}", line)
            bonds = _BONDS[body[0]]
            rest = body[1:]
            nested = None
            if rest.endswith("]"):
                cut = rest.index("[")
                nested = parse_predicate(rest[cut + 1:-1], line)
                rest = rest[:cut]
            neighbours.append((bonds, _class_test(rest, line), nested))
            continue
        for op in (">=", "<=", "="):
            if op in term:
                key, value = term.split(op, 1)
                break
        else:
            raise TableError(f"cannot parse term {term!r}", line)
        if key == "el":
            names = value.split("|")
            bad = [e for e in names if e not in _UPPER]
            if bad or op != "=":
                raise TableError(f"bad element list {value!r}", line)
            elements = frozenset(names)
            local.append(lambda env, i, s=elements: env.g.atoms[i].element in s)
            continue
        try:
            want = int(value)
        except ValueError:
            raise TableError(f"expected an integer in {term!r}", line) from None
        cmp = _compare(op, want)
        if key == "ar":
            local.append(lambda env, i, c=cmp: c(int(env.g.atoms[i].aromatic)))
        elif key == "h":
            local.append(lambda env, i, c=cmp: c(env.h[i]))
        elif key == "x":
            local.append(lambda env, i, c=cmp: c(env.g.degree(i) + env.h[i]))
        elif key == "deg":
            local.append(lambda env, i, c=cmp: c(env.g.degree(i)))
        else:
            raise TableError(f"unknown key {key!r}", line)
    return _Predicate(tuple(local), tuple(neighbours), elements, hydrogen)


# -- contribution table -------------------------------------------------------------


class Entry(NamedTuple):
    type_id: str
    predicate: _Predicate
    logp: float
    mr: float
    source: str


@dataclass(frozen=True)
class ContributionTable:
    heavy: tuple[Entry, ...]
    hydrogen: tuple[Entry, ...]
    version: int = 1

    def __post_init__(self):
        for el in ELEMENTS:
            if not any(e.predicate.elements is not None and el in e.predicate.elements
                       and len(e.predicate.local) == 1 and not e.predicate.neighbours for e in self.heavy):
                raise TableError(f"no fallback entry for element {el}")
        if not any(not e.predicate.local and not e.predicate.neighbours for e in self.hydrogen):
            raise TableError("no fallback hydrogen entry")

    def __getitem__(self, type_id: str) -> Entry:
        for e in self.heavy + self.hydrogen:
            if e.type_id == type_id:
                return e
        raise KeyError(type_id)

    @classmethod
    def from_text(cls, text: str) -> ContributionTable:
        heavy, hydro = [], []
        version = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.rstrip("\n")
            if line.startswith("#version"):
                try:
                    version = int(line.split("\t")[1])
                except (IndexError, ValueError):
                    raise TableError("bad version line", lineno) from None
                continue
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise TableError(f"expected 4 tab-separated columns, got {len(cols)}", lineno)
            type_id, pred_text, logp, mr = cols
            try:
                lp, m = float(logp), float(mr)
            except ValueError:
                raise TableError("contribution is not a number", lineno) from None
            pred = parse_predicate(pred_text, lineno)
            (hydro if pred.hydrogen else heavy).append(Entry(type_id, pred, lp, m, pred_text))
        if version != 1:
            raise TableError(f"unsupported table version {version}")
        return cls(tuple(heavy), tuple(hydro), version)

    @classmethod
    def from_file(cls, path: str | Path) -> ContributionTable:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def default_table() -> ContributionTable:
    text = resources.files("mgcvae").joinpath("data/crippen.tsv").read_text(encoding="utf-8")
    return ContributionTable.from_text(text)


class AtomContribution(NamedTuple):
    heavy_type: str
    hydrogen_type: str
    n_hydrogens: int
    logp: float
    mr: float


def atom_contributions(g: MolGraph, table: ContributionTable | None = None) -> list[AtomContribution]:
    table = table or default_table()
    env = _Env(g, [g.implicit_h(i) for i in range(g.n_atoms)])
    out = []
    for i in range(g.n_atoms):
        heavy = next(e for e in table.heavy if e.predicate(env, i))
        nh = env.h[i]
        hyd = next(e for e in table.hydrogen if e.predicate(env, i))
        out.append(AtomContribution(heavy.type_id, hyd.type_id, nh,
                                    heavy.logp + nh * hyd.logp, heavy.mr + nh * hyd.mr))
    return out


def crippen_logp(g: MolGraph, table: ContributionTable | None = None) -> float:
    return math.fsum(c.logp for c in atom_contributions(g, table))


def crippen_mr(g: MolGraph, table: ContributionTable | None = None) -> float:
    return math.fsum(c.mr for c in atom_contributions(g, table))


def properties(g: MolGraph, table: ContributionTable | None = None) -> tuple[float, float]:
    contribs = atom_contributions(g, table)
    return math.fsum(c.logp for c in contribs), math.fsum(c.mr for c in contribs)


# -- condition bins -----------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class ConditionVector:
    """Concatenated one-hot logP bin (-6..5) and MR bin (10..90)."""

    logp_bin: int
    mr_bin: int
    vector: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.logp_bin not in LOGP_BINS or self.mr_bin not in MR_BINS:
            raise InvalidProperty(f"condition ({self.logp_bin}, {self.mr_bin}) outside the bin sets")
        v = np.zeros(CONDITION_DIM)
        v[LOGP_BINS.index(self.logp_bin)] = 1.0
        v[len(LOGP_BINS) + MR_BINS.index(self.mr_bin)] = 1.0
        object.__setattr__(self, "vector", v)

    @property
    def logp_onehot(self) -> np.ndarray:
        return self.vector[:len(LOGP_BINS)]

    @property
    def mr_onehot(self) -> np.ndarray:
        return self.vector[len(LOGP_BINS):]

    @classmethod
    def from_vector(cls, v) -> ConditionVector:
        v = np.asarray(v)
        return cls(LOGP_BINS[int(np.argmax(v[:len(LOGP_BINS)]))],
                   MR_BINS[int(np.argmax(v[len(LOGP_BINS):]))])


def logp_bin(logp: float) -> int:
    if not math.isfinite(logp):
        raise InvalidProperty(f"logP must be finite, got {logp}")
    return min(max(_round_half_up(logp), LOGP_BINS[0]), LOGP_BINS[-1])


def mr_bin(mr: float) -> int:
    if not math.isfinite(mr):
        raise InvalidProperty(f"MR must be finite, got {mr}")
    return min(max(10 * _round_half_up(mr / 10.0), MR_BINS[0]), MR_BINS[-1])


def bin_conditions(logp: float, mr: float) -> ConditionVector:
    """Round half up to the nearest integer logP / nearest ten MR, clipped."""
    return ConditionVector(logp_bin(logp), mr_bin(mr))
