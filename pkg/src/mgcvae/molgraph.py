"""Molecular graph model, validity rules and the initial-graph-matrix codec.

The matrix layout for a schema with ``S`` rows, ``A`` atom types and ``B`` bond
types is ``S x (1 + A + S*B)``:

* column 0 is a one-hot over rows marking the atom count (row ``n - 1``);
* columns ``1 .. A`` hold the atom-type one-hot of each occupied row;
* the block of ``B`` columns starting at ``1 + A + B*j`` in row ``i`` holds the
  bond-type one-hot between atoms ``i`` and ``j`` (all zero for "no bond").

Rows at or beyond the atom count are all zero.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from mgcvae.errors import InvalidGraph, SizeOverflow

ELEMENTS: tuple[str, ...] = ("B", "C", "N", "O", "F", "Si", "P", "S", "Cl", "Br", "Sn", "I")
ELEMENT_INDEX = {el: k for k, el in enumerate(ELEMENTS)}
AROMATIC_ELEMENTS = frozenset({"B", "C", "N", "O", "P", "S"})

MAX_VALENCE = {
    "B": 3, "C": 4, "N": 3, "O": 2, "F": 1, "Si": 4,
    "P": 5, "S": 6, "Cl": 1, "Br": 1, "Sn": 4, "I": 1,
}
# Allowed total valences used to derive implicit hydrogens on non-aromatic atoms.
DEFAULT_VALENCES = {el: (v,) for el, v in MAX_VALENCE.items()}
DEFAULT_VALENCES["P"] = (3, 5)
DEFAULT_VALENCES["S"] = (2, 4, 6)


class BondType(enum.IntEnum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3

    @property
    def order(self) -> float:
        return (1.0, 2.0, 3.0, 1.5)[self]


@dataclass(frozen=True)
class Schema:
    """Matrix schema: max atoms ``S``, atom types ``A``, bond types ``B``."""

    S: int = 16
    A: int = len(ELEMENTS)
    B: int = len(BondType)

    def __post_init__(self):
        if self.A != len(ELEMENTS) or self.B != len(BondType):
            raise ValueError(f"schema A/B must be {len(ELEMENTS)}/{len(BondType)}")
        if self.S < 1:
            raise ValueError("schema S must be positive")

    @property
    def width(self) -> int:
        return 1 + self.A + self.S * self.B

    @property
    def flat_size(self) -> int:
        return self.S * self.width

    def bond_column(self, j: int) -> int:
        return 1 + self.A + self.B * j

    def to_dict(self) -> dict:
        return {"S": self.S, "A": self.A, "B": self.B}


DEFAULT_SCHEMA = Schema()


@dataclass(frozen=True)
class Atom:
    element: str
    aromatic: bool = False


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    order: BondType


@dataclass(frozen=True)
class MolGraph:
    """Heavy-atom graph; hydrogens stay implicit."""

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...] = field(default=())

    @classmethod
    def build(cls, atoms: Iterable, bonds: Iterable = ()) -> MolGraph:
        """Convenience constructor from ``(element, aromatic)`` / ``(i, j, order)`` tuples."""
        at = tuple(a if isinstance(a, Atom) else Atom(a[0], bool(a[1])) if isinstance(a, tuple) else Atom(a)
                   for a in atoms)
        bd = tuple(b if isinstance(b, Bond) else Bond(int(b[0]), int(b[1]), BondType(b[2])) for b in bonds)
        return cls(at, bd)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, BondType], ...], ...]:
        """Per atom, the ``(neighbour, bond type)`` pairs (bonds with bad indices skipped)."""
        adj: list[list[tuple[int, BondType]]] = [[] for _ in self.atoms]
        n = len(self.atoms)
        for b in self.bonds:
            if 0 <= b.i < n and 0 <= b.j < n and b.i != b.j:
                adj[b.i].append((b.j, b.order))
                adj[b.j].append((b.i, b.order))
        return tuple(tuple(a) for a in adj)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    def valence(self, i: int) -> int:
        """Valence consumed by explicit bonds of atom ``i`` (see :func:`used_valence`)."""
        return used_valence(self.atoms[i].element, [o for _, o in self.adjacency[i]])

    def implicit_h(self, i: int) -> int:
        return implicit_hydrogens(self.atoms[i].element, [o for _, o in self.adjacency[i]])

    def bond_between(self, i: int, j: int) -> BondType | None:
        for k, o in self.adjacency[i]:
            if k == j:
                return o
        return None

    def permute(self, perm: Sequence[int]) -> MolGraph:
        """Relabel so that old atom ``k`` becomes new atom ``perm[k]``."""
        atoms: list[Atom | None] = [None] * len(self.atoms)
        for k, a in enumerate(self.atoms):
            atoms[perm[k]] = a
        bonds = []
        for b in self.bonds:
            i, j = perm[b.i], perm[b.j]
            bonds.append(Bond(min(i, j), max(i, j), b.order))
        bonds.sort(key=lambda b: (b.i, b.j))
        return MolGraph(tuple(atoms), tuple(bonds))  # type: ignore[arg-type]


def used_valence(element: str, orders: Iterable[BondType]) -> int:
    """Valence consumed by a set of incident bonds.

    Aromatic bonds count 1 each. An aromatic C or B additionally needs one unit
    for its ring pi bond unless it already carries an exocyclic multiple bond;
    aromatic heteroatoms may donate a lone pair instead, so they need nothing
    extra. This is the Kekule-consistent count: benzene C uses 3, fused ring C
    uses 4, furan O uses 2, ring C=O uses 4.
    """
    total = 0
    n_arom = 0
    multiple = False
    for o in orders:
        if o == BondType.AROMATIC:
            n_arom += 1
        else:
            total += int(o) + 1
            multiple = multiple or o != BondType.SINGLE
    total += n_arom
    if n_arom and element in ("C", "B") and not multiple:
        total += 1
    return total


def implicit_hydrogens(element: str, orders: Sequence[BondType]) -> int:
    used = used_valence(element, orders)
    if any(o == BondType.AROMATIC for o in orders):
        if element in ("C", "B"):
            return max(0, MAX_VALENCE[element] - used)
        return 0
    for v in DEFAULT_VALENCES[element]:
        if v >= used:
            return v - used
    return 0


# -- validation ------------------------------------------------------------------


class Violation(NamedTuple):
    rule: str
    index: int
    message: str


@dataclass(frozen=True)
class ValidityReport:
    violations: tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid


def _components(n: int, edges: Iterable[tuple[int, int]]) -> list[list[int]]:
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for k in range(n):
        groups.setdefault(find(k), []).append(k)
    return sorted(groups.values(), key=lambda g: g[0])


def _on_cycle(n: int, edges: Sequence[tuple[int, int]], k: int) -> bool:
    """True when edge ``k`` lies on a cycle of the graph formed by ``edges``."""
    i, j = edges[k]
    adj: list[list[int]] = [[] for _ in range(n)]
    for m, (a, b) in enumerate(edges):
        if m != k:
            adj[a].append(b)
            adj[b].append(a)
    seen = {i}
    stack = [i]
    while stack:
        u = stack.pop()
        if u == j:
            return True
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return False


def validate(g: MolGraph, max_atoms: int = DEFAULT_SCHEMA.S) -> ValidityReport:
    """Check every graph invariant and report all violations found."""
    out: list[Violation] = []
    n = g.n_atoms
    if n < 1 or n > max_atoms:
        out.append(Violation("size", n, f"{n} atoms outside [1, {max_atoms}]"))
    for k, a in enumerate(g.atoms):
        if a.element not in ELEMENT_INDEX:
            out.append(Violation("element", k, f"unsupported element {a.element!r}"))
    seen: set[tuple[int, int]] = set()
    good_bonds: list[Bond] = []
    for k, b in enumerate(g.bonds):
        if not (0 <= b.i < n and 0 <= b.j < n):
            out.append(Violation("bond_index", k, f"bond ({b.i},{b.j}) out of range"))
            continue
        if b.i == b.j:
            out.append(Violation("self_loop", k, f"self-loop on atom {b.i}"))
            continue
        if b.i > b.j:
            out.append(Violation("bond_order", k, f"bond ({b.i},{b.j}) not stored with i < j"))
        key = (min(b.i, b.j), max(b.i, b.j))
        if key in seen:
            out.append(Violation("duplicate_bond", k, f"duplicate bond {key}"))
            continue
        seen.add(key)
        good_bonds.append(b)
    if out and any(v.rule == "element" for v in out):
        return ValidityReport(tuple(out))

    if n > 1 and len(_components(n, seen)) > 1:
        out.append(Violation("connectivity", 0, "graph is disconnected"))

    for k in range(n):
        el = g.atoms[k].element
        v = g.valence(k)
        if v > MAX_VALENCE[el]:
            out.append(Violation("valence", k, f"{el} uses valence {v} > {MAX_VALENCE[el]}"))

    arom_edges = [(b.i, b.j) for b in good_bonds if b.order == BondType.AROMATIC]
    arom_count = [0] * n
    for i, j in arom_edges:
        arom_count[i] += 1
        arom_count[j] += 1
    for k, a in enumerate(g.atoms):
        if arom_count[k] and a.element not in AROMATIC_ELEMENTS:
            out.append(Violation("aromatic_element", k, f"{a.element} cannot be aromatic"))
        if bool(arom_count[k]) != a.aromatic:
            out.append(Violation("aromatic_flag", k, "aromatic flag disagrees with aromatic bonds"))
        if arom_count[k] and arom_count[k] not in (2, 3):
            out.append(Violation("aromatic_degree", k, f"{arom_count[k]} aromatic neighbours"))
    for k, (i, j) in enumerate(arom_edges):
        if not _on_cycle(n, arom_edges, k):
            out.append(Violation("aromatic_cycle", k, f"aromatic bond ({i},{j}) not on an aromatic cycle"))

    all_edges = [(b.i, b.j) for b in good_bonds]
    for k, b in enumerate(good_bonds):
        if (b.order == BondType.SINGLE and g.atoms[b.i].aromatic and g.atoms[b.j].aromatic
                and _on_cycle(n, all_edges, k)):
            out.append(Violation("aromatic_ring_single", k,
                                 f"single ring bond ({b.i},{b.j}) between aromatic atoms"))
    return ValidityReport(tuple(out))


def ensure_valid(g: MolGraph, max_atoms: int = DEFAULT_SCHEMA.S) -> None:
    report = validate(g, max_atoms)
    if not report.valid:
        raise InvalidGraph("; ".join(v.message for v in report.violations), report.violations)


# -- matrix codec -----------------------------------------------------------------


def encode_matrix(g: MolGraph, schema: Schema = DEFAULT_SCHEMA) -> np.ndarray:
    """One-hot initial graph matrix of shape ``(S, 1 + A + S*B)``."""
    n = g.n_atoms
    if n > schema.S:
        raise SizeOverflow(f"{n} atoms exceed schema size {schema.S}")
    if n < 1:
        raise InvalidGraph("empty graph")
    x = np.zeros((schema.S, schema.width))
    x[n - 1, 0] = 1.0
    for i, a in enumerate(g.atoms):
        x[i, 1 + ELEMENT_INDEX[a.element]] = 1.0
    for b in g.bonds:
        x[b.i, schema.bond_column(b.j) + int(b.order)] = 1.0
        x[b.j, schema.bond_column(b.i) + int(b.order)] = 1.0
    return x


def decode_matrix(raw: np.ndarray, schema: Schema = DEFAULT_SCHEMA) -> MolGraph:
    """Turn a (probabilistic) matrix back into a valid graph.

    Atom count and atom types are argmaxes; each bond block is averaged with its
    transpose and becomes a bond only when its best entry reaches 0.5. The
    candidate set is then passed through :func:`repair`.
    """
    raw = np.asarray(raw, dtype=float).reshape(schema.S, schema.width)
    n = int(np.argmax(raw[:, 0])) + 1
    elements = [ELEMENTS[int(np.argmax(raw[i, 1:1 + schema.A]))] for i in range(n)]
    a0 = 1 + schema.A
    blocks = raw[:n, a0:a0 + n * schema.B].reshape(n, n, schema.B)
    sym = 0.5 * (blocks + blocks.transpose(1, 0, 2))
    best = sym.max(axis=2)
    kind = sym.argmax(axis=2)
    iu, ju = np.triu_indices(n, k=1)
    mask = best[iu, ju] >= 0.5
    candidates = [(int(i), int(j), BondType(int(kind[i, j])), float(best[i, j]))
                  for i, j in zip(iu[mask], ju[mask])]
    return repair(elements, candidates)


def repair(elements: Sequence[str], candidates: Iterable[tuple[int, int, BondType, float]]) -> MolGraph:
    """Greedy valence-feasible bond selection followed by structural cleanup.

    ``candidates`` are ``(i, j, bond type, confidence)``. Bonds are taken in
    descending confidence (ties: lexicographic ``(i, j)``) and skipped when they
    would overdraw an endpoint's valence, put an aromatic bond on an element with
    no aromatic form, or give an atom a fourth aromatic neighbour. The largest
    connected component survives (ties: the one holding the lowest index). Aromatic
    bonds off an all-aromatic cycle are retyped single (or dropped when that would
    overdraw valence), and single ring bonds between two aromatic atoms are
    removed, until the graph is stable.
    """
    elements = list(elements)
    n = len(elements)
    order = sorted(((i, j, BondType(t), c) for i, j, t, c in candidates if i != j),
                   key=lambda b: (-b[3], min(b[0], b[1]), max(b[0], b[1])))
    incident: list[list[BondType]] = [[] for _ in range(n)]
    accepted: dict[tuple[int, int], BondType] = {}
    conf: dict[tuple[int, int], float] = {}
    for i, j, t, c in order:
        key = (min(i, j), max(i, j))
        if key in accepted:
            continue
        if t == BondType.AROMATIC:
            if elements[i] not in AROMATIC_ELEMENTS or elements[j] not in AROMATIC_ELEMENTS:
                continue
            if (sum(o == BondType.AROMATIC for o in incident[i]) >= 3
                    or sum(o == BondType.AROMATIC for o in incident[j]) >= 3):
                continue
        if (used_valence(elements[i], incident[i] + [t]) > MAX_VALENCE[elements[i]]
                or used_valence(elements[j], incident[j] + [t]) > MAX_VALENCE[elements[j]]):
            continue
        accepted[key] = t
        conf[key] = c
        incident[i].append(t)
        incident[j].append(t)

    keep = list(range(n))
    for _ in range(2 * n + 2):
        keep, accepted = _largest_component(keep, accepted)
        changed = _fix_aromatic(keep, elements, accepted)
        changed |= _drop_aromatic_ring_singles(keep, elements, accepted, conf)
        if not changed:
            break
    keep, accepted = _largest_component(keep, accepted)

    remap = {old: new for new, old in enumerate(keep)}
    arom = {k: False for k in keep}
    for (i, j), t in accepted.items():
        if t == BondType.AROMATIC:
            arom[i] = arom[j] = True
    atoms = tuple(Atom(elements[k], arom[k]) for k in keep)
    bonds = tuple(Bond(remap[i], remap[j], t) for (i, j), t in sorted(accepted.items()))
    g = MolGraph(atoms, bonds)
    if not validate(g, max(1, n)).valid:
        return MolGraph((Atom(elements[0]),))
    return g


def _largest_component(keep, accepted):
    index = {k: p for p, k in enumerate(keep)}
    comps = _components(len(keep), [(index[i], index[j]) for i, j in accepted])
    best = max(comps, key=lambda c: (len(c), -c[0]))
    chosen = [keep[p] for p in best]
    cs = set(chosen)
    return chosen, {e: t for e, t in accepted.items() if e[0] in cs}


def _fix_aromatic(keep, elements, accepted) -> bool:
    changed = False
    while True:
        arom = [e for e, t in accepted.items() if t == BondType.AROMATIC]
        index = {k: p for p, k in enumerate(keep)}
        edges = [(index[i], index[j]) for i, j in arom]
        bad = [arom[k] for k in range(len(arom)) if not _on_cycle(len(keep), edges, k)]
        if not bad:
            return changed
        for e in bad:
            accepted[e] = BondType.SINGLE
            ok = all(
                used_valence(elements[a], [t for f, t in accepted.items() if a in f]) <= MAX_VALENCE[elements[a]]
                for a in e
            )
            if not ok:
                del accepted[e]
        changed = True


def _drop_aromatic_ring_singles(keep, elements, accepted, conf) -> bool:
    arom_atoms = {a for e, t in accepted.items() if t == BondType.AROMATIC for a in e}
    singles = sorted((e for e, t in accepted.items()
                      if t == BondType.SINGLE and e[0] in arom_atoms and e[1] in arom_atoms),
                     key=lambda e: (conf.get(e, 0.0), e))
    changed = False
    index = {k: p for p, k in enumerate(keep)}
    for e in singles:
        edges = [(index[i], index[j]) for i, j in accepted]
        if _on_cycle(len(keep), edges, edges.index((index[e[0]], index[e[1]]))):
            del accepted[e]
            changed = True
    return changed
