"""SMILES subset reader and canonical writer.

Supported: the twelve whitelisted elements written bare (``Si`` and ``Sn``
included), lowercase aromatic ``b c n o p s``, bonds ``= # :``, branches and
ring closures (``1``-``9`` and ``%nn``). Charges, fragments, bracket atoms and
stereo markers are rejected outright; nothing is silently rewritten.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

from mgcvae.errors import RejectedFeature, SmilesSyntaxError, UnsupportedElement
from mgcvae.molgraph import (
    ELEMENT_INDEX,
    Atom,
    Bond,
    BondType,
    MolGraph,
    _on_cycle,
    ensure_valid,
)

_TWO_LETTER = ("Cl", "Br", "Si", "Sn")
_ONE_LETTER = frozenset("BCNOFPSI")
_AROMATIC = frozenset("bcnops")
_BOND_SYMBOLS = {"=": BondType.DOUBLE, "#": BondType.TRIPLE, ":": BondType.AROMATIC}
# Checked over the whole string before tokenising; first hit decides the reason.
_REJECTED = (
    ("charge", "+-"),
    ("fragment", "."),
    ("bracket", "[]"),
    ("stereo", "@/\\"),
)


class TokenKind(enum.Enum):
    ATOM = "atom"
    BOND = "bond"
    BRANCH_OPEN = "branch_open"
    BRANCH_CLOSE = "branch_close"
    RING_CLOSURE = "ring_closure"


@dataclass(frozen=True)
class SmilesToken:
    kind: TokenKind
    payload: str | int | None
    aromatic: bool = False
    position: int = 0


def check_features(text: str) -> None:
    """Raise :class:`RejectedFeature` if ``text`` uses an unsupported feature."""
    for feature, chars in _REJECTED:
        for pos, ch in enumerate(text):
            if ch in chars:
                raise RejectedFeature(feature, text, pos)


def tokenize(text: str) -> list[SmilesToken]:
    check_features(text)
    tokens: list[SmilesToken] = []
    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        pair = text[pos:pos + 2]
        if pair in _TWO_LETTER:
            tokens.append(SmilesToken(TokenKind.ATOM, pair, False, pos))
            pos += 2
        elif ch in _ONE_LETTER:
            tokens.append(SmilesToken(TokenKind.ATOM, ch, False, pos))
            pos += 1
        elif ch in _AROMATIC:
            tokens.append(SmilesToken(TokenKind.ATOM, ch.upper(), True, pos))
            pos += 1
        elif ch in _BOND_SYMBOLS:
            tokens.append(SmilesToken(TokenKind.BOND, ch, False, pos))
            pos += 1
        elif ch == "(":
            tokens.append(SmilesToken(TokenKind.BRANCH_OPEN, None, False, pos))
            pos += 1
        elif ch == ")":
            tokens.append(SmilesToken(TokenKind.BRANCH_CLOSE, None, False, pos))
            pos += 1
        elif ch.isdigit():
            tokens.append(SmilesToken(TokenKind.RING_CLOSURE, int(ch), False, pos))
            pos += 1
        elif ch == "%":
            digits = text[pos + 1:pos + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise SmilesSyntaxError("'%' must be followed by two digits", text, pos)
            tokens.append(SmilesToken(TokenKind.RING_CLOSURE, int(digits), False, pos))
            pos += 3
        elif ch.isalpha():
            raise UnsupportedElement(f"element symbol starting with {ch!r} not supported", text, pos)
        else:
            raise SmilesSyntaxError(f"unexpected character {ch!r}", text, pos)
    return tokens


def parse_smiles(text: str) -> MolGraph:
    """Parse a SMILES string into a :class:`MolGraph`.

    Implicit bonds between two aromatic atoms are aromatic unless they turn out
    to be acyclic (a biaryl link), in which case they are single.
    """
    if not text:
        raise SmilesSyntaxError("empty SMILES")
    tokens = tokenize(text)
    atoms: list[Atom] = []
    bonds: dict[tuple[int, int], BondType] = {}
    implicit: set[tuple[int, int]] = set()
    rings: dict[int, tuple[int, BondType | None, int]] = {}
    stack: list[int] = []
    prev: int | None = None
    pending: BondType | None = None
    pending_pos = 0

    def add_bond(i: int, j: int, order: BondType | None, pos: int) -> None:
        key = (min(i, j), max(i, j))
        if i == j or key in bonds:
            raise SmilesSyntaxError("duplicate bond or ring closure to self", text, pos)
        if order is None:
            both_aromatic = atoms[i].aromatic and atoms[j].aromatic
            order = BondType.AROMATIC if both_aromatic else BondType.SINGLE
            if both_aromatic:
                implicit.add(key)
        bonds[key] = order

    for tok in tokens:
        if tok.kind is TokenKind.ATOM:
            atoms.append(Atom(tok.payload, tok.aromatic))  # type: ignore[arg-type]
            k = len(atoms) - 1
            if prev is not None:
                add_bond(prev, k, pending, tok.position)
            elif pending is not None:
                raise SmilesSyntaxError("bond symbol without a preceding atom", text, pending_pos)
            prev, pending = k, None
        elif tok.kind is TokenKind.BOND:
            if prev is None or pending is not None:
                raise SmilesSyntaxError("misplaced bond symbol", text, tok.position)
            pending, pending_pos = _BOND_SYMBOLS[tok.payload], tok.position  # type: ignore[index]
        elif tok.kind is TokenKind.BRANCH_OPEN:
            if prev is None or pending is not None:
                raise SmilesSyntaxError("branch must follow an atom", text, tok.position)
            stack.append(prev)
        elif tok.kind is TokenKind.BRANCH_CLOSE:
            if not stack or pending is not None:
                raise SmilesSyntaxError("unbalanced ')'", text, tok.position)
            if prev == stack[-1]:
                raise SmilesSyntaxError("empty branch", text, tok.position)
            prev = stack.pop()
        else:
            if prev is None:
                raise SmilesSyntaxError("ring closure without an atom", text, tok.position)
            num = tok.payload
            if num in rings:
                other, order, _ = rings.pop(num)  # type: ignore[arg-type]
                if order is not None and pending is not None and order != pending:
                    raise SmilesSyntaxError("conflicting ring-closure bond symbols", text, tok.position)
                add_bond(other, prev, order if order is not None else pending, tok.position)
            else:
                rings[num] = (prev, pending, tok.position)  # type: ignore[index]
            pending = None
    if pending is not None:
        raise SmilesSyntaxError("dangling bond symbol", text, pending_pos)
    if stack:
        raise SmilesSyntaxError("unclosed branch", text, len(text))
    if rings:
        num, (_, _, pos) = next(iter(rings.items()))
        raise SmilesSyntaxError(f"unpaired ring closure {num}", text, pos)
    for a in atoms:
        if a.element not in ELEMENT_INDEX:
            raise UnsupportedElement(f"element {a.element!r} not supported", text)

    keys = list(bonds)
    edges = keys
    for k, key in enumerate(keys):
        if key in implicit and not _on_cycle(len(atoms), edges, k):
            bonds[key] = BondType.SINGLE
    return MolGraph(tuple(atoms), tuple(Bond(i, j, o) for (i, j), o in sorted(bonds.items())))


# -- canonical ranking ----------------------------------------------------------------


def _bond_code(o: BondType) -> int:
    return int(o)


def _ranks_from(keys: list) -> list[int]:
    """Rank = number of atoms whose key is strictly smaller (tied atoms share it)."""
    order = sorted(range(len(keys)), key=keys.__getitem__)
    ranks = [0] * len(keys)
    for pos, idx in enumerate(order):
        if pos and keys[idx] == keys[order[pos - 1]]:
            ranks[idx] = ranks[order[pos - 1]]
        else:
            ranks[idx] = pos
    return ranks


def _refine(adj, ranks: list[int]) -> list[int]:
    count = len(set(ranks))
    while True:
        keys = [(ranks[i], tuple(sorted((ranks[j], c) for j, c in adj[i]))) for i in range(len(ranks))]
        ranks = _ranks_from(keys)
        new_count = len(set(ranks))
        if new_count == count:
            return ranks
        count = new_count


def initial_invariants(g: MolGraph) -> list[tuple]:
    """Per-atom (element, aromatic flag, degree, twice the bond-order sum)."""
    out = []
    for i, a in enumerate(g.atoms):
        twice = sum(int(2 * o.order) for _, o in g.adjacency[i])
        out.append((ELEMENT_INDEX.get(a.element, 99), a.aromatic, g.degree(i), twice))
    return out


class _Labeling(NamedTuple):
    cert: tuple
    ranks: list[int]


def canonical_rank(g: MolGraph) -> list[int]:
    """Canonical total order of atoms (a permutation of ``0..n-1``).

    Invariants are refined over neighbour ranks until stable; remaining ties are
    broken by individualising each member of the first (smallest) tied class in
    turn and keeping the branch with the smallest graph certificate. Branches
    known to be equivalent under an automorphism already discovered are pruned.
    Any relabelling of ``g`` therefore yields the same canonical graph.
    """
    ensure_valid(g, max_atoms=max(g.n_atoms, 1))
    return _canonical_labeling(g).ranks


def _canonical_labeling(g: MolGraph) -> _Labeling:
    n = g.n_atoms
    adj = [[(j, _bond_code(o)) for j, o in g.adjacency[i]] for i in range(n)]
    labels = [(ELEMENT_INDEX[a.element], a.aromatic) for a in g.atoms]
    edges = [(b.i, b.j, _bond_code(b.order)) for b in g.bonds]
    best: list[_Labeling] = []
    autos: list[list[int]] = []

    def certificate(ranks):
        inv = [0] * n
        for atom, r in enumerate(ranks):
            inv[r] = atom
        return (
            tuple(labels[inv[r]] for r in range(n)),
            tuple(sorted((min(ranks[i], ranks[j]), max(ranks[i], ranks[j]), c) for i, j, c in edges)),
        )

    def orbit_of(fixed: list[int]):
        parent = list(range(n))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for sigma in autos:
            if all(sigma[f] == f for f in fixed):
                for a, b in enumerate(sigma):
                    ra, rb = find(a), find(b)
                    if ra != rb:
                        parent[ra] = rb
        return find

    def search(ranks: list[int], fixed: list[int]) -> None:
        ranks = _refine(adj, ranks)
        if len(set(ranks)) == n:
            cert = certificate(ranks)
            if not best:
                best.append(_Labeling(cert, ranks))
            elif cert == best[0].cert:
                inv_best = [0] * n
                for atom, r in enumerate(best[0].ranks):
                    inv_best[r] = atom
                autos.append([inv_best[ranks[a]] for a in range(n)])
            elif cert < best[0].cert:
                best[0] = _Labeling(cert, ranks)
            return
        counts: dict[int, int] = {}
        for r in ranks:
            counts[r] = counts.get(r, 0) + 1
        target = min(r for r, c in counts.items() if c > 1)
        cell = [a for a in range(n) if ranks[a] == target]
        explored: list[int] = []
        for v in cell:
            if explored:
                find = orbit_of(fixed)
                if any(find(v) == find(u) for u in explored):
                    continue
            child = [r + 1 if (r == target and a != v) else r for a, r in enumerate(ranks)]
            search(child, fixed + [v])
            explored.append(v)

    search(_ranks_from(initial_invariants(g)), [])
    return best[0]


# -- writer -------------------------------------------------------------------------


def _atom_symbol(a: Atom) -> str:
    return a.element.lower() if a.aromatic else a.element


def _bond_symbol(o: BondType) -> str:
    return {BondType.DOUBLE: "=", BondType.TRIPLE: "#"}.get(o, "")


def _ring_label(num: int) -> str:
    return str(num) if num < 10 else f"%{num:02d}"


def write_smiles(g: MolGraph) -> str:
    """Canonical SMILES: depends only on the labelled graph, not atom order."""
    ensure_valid(g, max_atoms=max(g.n_atoms, 1))
    ranks = _canonical_labeling(g).ranks
    return _write_ranked(g, ranks)


def _write_ranked(g: MolGraph, ranks: list[int]) -> str:
    n = g.n_atoms
    nbrs = [sorted(g.adjacency[i], key=lambda t: ranks[t[0]]) for i in range(n)]
    start = min(range(n), key=ranks.__getitem__)

    children: list[list[int]] = [[] for _ in range(n)]
    closures: list[list[int]] = [[] for _ in range(n)]
    visited = [False] * n
    seen_closure: set[tuple[int, int]] = set()
    stack = [(start, -1, iter(nbrs[start]))]
    visited[start] = True
    while stack:
        u, parent, it = stack[-1]
        for v, _ in it:
            if v == parent:
                continue
            if visited[v]:
                key = (min(u, v), max(u, v))
                if key not in seen_closure:
                    seen_closure.add(key)
                    closures[u].append(v)
                    closures[v].append(u)
                continue
            visited[v] = True
            children[u].append(v)
            stack.append((v, u, iter(nbrs[v])))
            break
        else:
            stack.pop()

    written = [False] * n
    ring_num: dict[tuple[int, int], int] = {}
    in_use: set[int] = set()
    out: list[str] = []

    def emit(u: int) -> None:
        written[u] = True
        out.append(_atom_symbol(g.atoms[u]))
        closing = sorted((v for v in closures[u] if written[v]), key=ranks.__getitem__)
        opening = sorted((v for v in closures[u] if not written[v]), key=ranks.__getitem__)
        freed = []
        for v in closing:
            num = ring_num.pop((min(u, v), max(u, v)))
            out.append(_ring_label(num))
            freed.append(num)
        for v in opening:
            num = next(k for k in range(1, 100) if k not in in_use)
            in_use.add(num)
            ring_num[(min(u, v), max(u, v))] = num
            out.append(_bond_symbol(g.bond_between(u, v)) + _ring_label(num))
        in_use.difference_update(freed)
        kids = children[u]
        for k, v in enumerate(kids):
            sym = _bond_symbol(g.bond_between(u, v))
            last = k == len(kids) - 1
            # "S" directly followed by aromatic "n" would read back as tin.
            ambiguous = out[-1] == "S" and not sym and g.atoms[v].aromatic and g.atoms[v].element == "N"
            if last and not ambiguous:
                out.append(sym)
                emit(v)
            else:
                out.append("(" + sym)
                emit(v)
                out.append(")")

    emit(start)
    return "".join(out)


def canonicalize(text: str) -> str:
    """Parse and rewrite ``text`` in canonical form."""
    return write_smiles(parse_smiles(text))
