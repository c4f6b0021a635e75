"""Evaluation: generation metrics, condition-satisfaction tables, circular
fingerprints, a power-iteration PCA and CSV/SVG report files."""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from mgcvae.errors import EmptyInput
from mgcvae.molgraph import ELEMENT_INDEX, MolGraph, _on_cycle, validate
from mgcvae.props import logp_bin, mr_bin
from mgcvae.smiles import write_smiles

# -- generation metrics -------------------------------------------------------------


@dataclass(frozen=True)
class MetricsResult:
    validity: float
    uniqueness: float
    novelty: float
    n_generated: int
    n_valid: int
    n_unique: int
    n_novel: int


def metrics(generated: Sequence[MolGraph | None], training: Iterable[str]) -> MetricsResult:
    """Validity over all samples; uniqueness and novelty over the valid ones.

    ``None`` entries count as failed generations. ``training`` holds canonical
    SMILES.
    """
    if len(generated) == 0:
        raise EmptyInput("no generated molecules to evaluate")
    train = set(training)
    canon = [write_smiles(g) for g in generated if g is not None and validate(g).valid]
    nv = len(canon)
    unique = set(canon)
    novel = sum(1 for s in canon if s not in train)
    return MetricsResult(
        validity=nv / len(generated),
        uniqueness=len(unique) / nv if nv else 0.0,
        novelty=novel / nv if nv else 0.0,
        n_generated=len(generated),
        n_valid=nv,
        n_unique=len(unique),
        n_novel=novel,
    )


# -- condition satisfaction ---------------------------------------------------------


def satisfaction(props: Sequence[tuple[float, float]], c1: int, c2: int) -> tuple[float, float, float]:
    """Percent of molecules whose binned logP equals ``c1``, binned MR equals ``c2``, and both."""
    if len(props) == 0:
        raise EmptyInput(f"no molecules for condition ({c1}, {c2})")
    hit_l = hit_m = hit_b = 0
    for lp, mr in props:
        a, b = logp_bin(lp) == c1, mr_bin(mr) == c2
        hit_l += a
        hit_m += b
        hit_b += a and b
    n = len(props)
    return 100.0 * hit_l / n, 100.0 * hit_m / n, 100.0 * hit_b / n


@dataclass(frozen=True)
class ConditionRow:
    c1: int
    c2: int
    cvae: tuple[float, float, float]
    vae: tuple[float, float, float]

    @property
    def difference(self) -> tuple[float, float, float]:
        return tuple(a - b for a, b in zip(self.cvae, self.vae))


@dataclass(frozen=True)
class ConditionTable:
    rows: tuple[ConditionRow, ...] = ()

    HEADER = ("mgcvae_logp_pct", "mgcvae_mr_pct", "mgcvae_both_pct",
              "mgvae_logp_pct", "mgvae_mr_pct", "mgvae_both_pct",
              "diff_logp_pct", "diff_mr_pct", "diff_both_pct",
              "condition_logp", "condition_mr")

    def row(self, c1: int, c2: int) -> ConditionRow:
        for r in self.rows:
            if (r.c1, r.c2) == (c1, c2):
                return r
        raise KeyError((c1, c2))


def condition_table(conditional: Mapping[tuple[int, int], Sequence[tuple[float, float]]],
                    baseline: Sequence[tuple[float, float]]) -> ConditionTable:
    """Score conditioned samples per pair against the same pair's bins in an unconditioned baseline.

    Rows are ordered by MR condition, then logP condition.
    """
    rows = []
    for c1, c2 in sorted(conditional, key=lambda k: (k[1], k[0])):
        rows.append(ConditionRow(c1, c2, satisfaction(conditional[(c1, c2)], c1, c2),
                                 satisfaction(baseline, c1, c2)))
    return ConditionTable(tuple(rows))


# -- circular fingerprints ----------------------------------------------------------

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def fnv1a64(values: Iterable[int]) -> int:
    """64-bit FNV-1a over the little-endian 8-byte encoding of each integer (mod 2**64)."""
    h = _FNV_OFFSET
    for v in values:
        for byte in struct.pack("<Q", v & _MASK):
            h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


def _ring_atoms(g: MolGraph) -> list[bool]:
    edges = [(b.i, b.j) for b in g.bonds]
    ring = [False] * g.n_atoms
    for k, (i, j) in enumerate(edges):
        if _on_cycle(g.n_atoms, edges, k):
            ring[i] = ring[j] = True
    return ring


def morgan_identifiers(g: MolGraph, radius: int = 2) -> list[tuple[int, int, int]]:
    """``(round, atom, identifier)`` for every identifier kept after deduplication.

    Round 0 identifiers hash (element, heavy degree, implicit H, aromatic, in ring).
    Round r hashes the atom's previous identifier with its sorted
    (bond type, neighbour identifier) pairs. An environment covering exactly the
    same bond set as one already kept is dropped (lower identifier wins within a
    round), as are repeated identifiers.
    """
    n = g.n_atoms
    ring = _ring_atoms(g)
    ids = [fnv1a64((ELEMENT_INDEX[a.element], g.degree(i), g.implicit_h(i), int(a.aromatic), int(ring[i])))
           for i, a in enumerate(g.atoms)]
    kept, seen_ids = [], set()
    for i in range(n):
        if ids[i] not in seen_ids:
            seen_ids.add(ids[i])
            kept.append((0, i, ids[i]))
    cover: list[frozenset] = [frozenset()] * n
    seen_cover: set[frozenset] = set()
    bond_key = {}
    for b in g.bonds:
        bond_key[(b.i, b.j)] = bond_key[(b.j, b.i)] = (min(b.i, b.j), max(b.i, b.j))
    for r in range(1, radius + 1):
        new_ids, new_cover = [], []
        for i in range(n):
            nbrs = sorted((int(o), ids[j]) for j, o in g.adjacency[i])
            flat = [r, ids[i]] + [v for pair in nbrs for v in pair]
            new_ids.append(fnv1a64(flat))
            env = set(cover[i])
            for j, _ in g.adjacency[i]:
                env.add(bond_key[(i, j)])
                env |= cover[j]
            new_cover.append(frozenset(env))
        for i in sorted(range(n), key=lambda k: (new_ids[k], k)):
            if not new_cover[i] or new_cover[i] in seen_cover or new_ids[i] in seen_ids:
                continue
            seen_cover.add(new_cover[i])
            seen_ids.add(new_ids[i])
            kept.append((r, i, new_ids[i]))
        ids, cover = new_ids, new_cover
    return kept


@dataclass(frozen=True)
class FingerprintVector:
    bits: np.ndarray = field(repr=False, compare=False)

    @property
    def on_bits(self) -> tuple[int, ...]:
        return tuple(int(k) for k in np.flatnonzero(self.bits))

    def __eq__(self, other) -> bool:
        return isinstance(other, FingerprintVector) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash(self.on_bits)


def morgan_fp(g: MolGraph, radius: int = 2, nbits: int = 1024) -> FingerprintVector:
    bits = np.zeros(nbits, dtype=np.uint8)
    for _, _, ident in morgan_identifiers(g, radius):
        bits[ident % nbits] = 1
    return FingerprintVector(bits)


# -- PCA ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PCAResult:
    projection: np.ndarray
    explained_variance: tuple[float, float]
    components: np.ndarray
    mean: np.ndarray
    total_variance: float = 0.0

    @property
    def explained_ratio(self) -> tuple[float, float]:
        total = self.total_variance
        return tuple(v / total if total > 0 else 0.0 for v in self.explained_variance)


def _top_eigvec(C: np.ndarray, tol: float, max_iter: int, squarings: int = 8) -> tuple[np.ndarray, float]:
    """Power iteration on ``C**(2**squarings)`` (rescaled), which shares C's top
    eigenvector but has a far larger eigen-gap; returns the vector and its
    Rayleigh quotient on C."""
    d = C.shape[0]
    scale = np.abs(C).max()
    if scale == 0.0:
        return np.eye(d)[0], 0.0
    M = C / scale
    for _ in range(squarings):
        M = M @ M
        top = np.abs(M).max()
        if top == 0.0:
            return np.eye(d)[0], 0.0
        M /= top
    v = np.ones(d) + np.linspace(0.0, 1.0, d) * 1e-3
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            break
        w /= norm
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return v, float(v @ C @ v)


def _fix_sign(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def pca2(points: np.ndarray, tol: float = 1e-9, max_iter: int = 1000) -> PCAResult:
    """Top two principal components by power iteration with deflation."""
    X = np.asarray(points, dtype=np.float64)
    n, d = X.shape
    if n < 3 or d < 2:
        raise ValueError(f"need at least 3 points in 2+ dimensions, got {X.shape}")
    mean = X.mean(axis=0)
    Xc = X - mean
    C = Xc.T @ Xc / (n - 1)
    total = float(np.trace(C))
    v1, l1 = _top_eigvec(C, tol, max_iter)
    v1 = _fix_sign(v1)
    floor = 1e-12 * max(total, 1e-300)
    if l1 <= floor:
        l1 = 0.0
    D = C - l1 * np.outer(v1, v1)
    # keep the deflated problem inside the orthogonal complement of v1
    P = np.eye(d) - np.outer(v1, v1)
    D = P @ D @ P
    v2, l2 = _top_eigvec(D, tol, max_iter)
    v2 = v2 - (v2 @ v1) * v1
    if l2 <= floor or np.linalg.norm(v2) < 1e-6:
        # rank < 2: the first basis vector least aligned with v1, orthogonalised
        e = np.eye(d)[int(np.argmin(np.abs(v1)))]
        v2, l2 = e - (e @ v1) * v1, 0.0
    v2 = _fix_sign(v2 / np.linalg.norm(v2))
    comps = np.vstack([v1, v2])
    proj = Xc @ comps.T
    return PCAResult(proj, (max(l1, 0.0), max(l2, 0.0)), comps, mean, total)


# -- report files -------------------------------------------------------------------


def _fmt(v: float, digits: int = 2) -> str:
    return f"{v:.{digits}f}"


def metrics_csv(results: Mapping[str, MetricsResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "n_generated", "n_valid", "n_unique", "n_novel", "validity", "uniqueness", "novelty"])
    for name, m in results.items():
        w.writerow([name, m.n_generated, m.n_valid, m.n_unique, m.n_novel,
                    _fmt(m.validity, 4), _fmt(m.uniqueness, 4), _fmt(m.novelty, 4)])
    return buf.getvalue()


def condition_table_csv(table: ConditionTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ConditionTable.HEADER)
    for r in table.rows:
        w.writerow([_fmt(v) for v in (*r.cvae, *r.vae, *r.difference)] + [r.c1, r.c2])
    return buf.getvalue()


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _svg(width: int, height: int, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">')
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>"]) + "\n"


def _axis_map(lo: float, hi: float, a: float, b: float):
    span = hi - lo if hi > lo else 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def _legend(names: Sequence[str], x: float, y: float) -> list[str]:
    out = []
    for k, name in enumerate(names):
        col = _PALETTE[k % len(_PALETTE)]
        out.append(f'<rect x="{x:.1f}" y="{y + 14 * k - 8:.1f}" width="10" height="10" fill="{col}"/>')
        out.append(f'<text x="{x + 14:.1f}" y="{y + 14 * k + 1:.1f}">{name}</text>')
    return out


def pca_scatter_svg(result: PCAResult, labels: Sequence[str], width: int = 520, height: int = 440) -> str:
    """Scatter of the first two components, one colour per label."""
    P = result.projection
    names = list(dict.fromkeys(labels))
    left, right, top, bottom = 50, width - 110, 20, height - 40
    fx = _axis_map(float(P[:, 0].min()), float(P[:, 0].max()), left, right)
    fy = _axis_map(float(P[:, 1].min()), float(P[:, 1].max()), bottom, top)
    body = [f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" fill="none" stroke="black"/>',
            f'<text x="{(left + right) / 2:.1f}" y="{height - 12}" text-anchor="middle">'
            f'PC1 ({result.explained_ratio[0]:.1%})</text>',
            f'<text x="14" y="{(top + bottom) / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 14 {(top + bottom) / 2:.1f})">PC2 ({result.explained_ratio[1]:.1%})</text>']
    for k, name in enumerate(names):
        col = _PALETTE[k % len(_PALETTE)]
        pts = [f'<circle cx="{fx(x):.2f}" cy="{fy(y):.2f}" r="1.6"/>'
               for (x, y), lab in zip(P, labels) if lab == name]
        body.append(f'<g fill="{col}" fill-opacity="0.45">')
        body.extend(pts)
        body.append("</g>")
    body.extend(_legend(names, right + 12, top + 10))
    return _svg(width, height, body)


def histogram(values: Sequence[float], lo: float, width: float) -> dict[float, int]:
    counts: dict[float, int] = {}
    for v in values:
        edge = lo + width * math.floor((v - lo) / width)
        counts[edge] = counts.get(edge, 0) + 1
    return counts


def prop_hist_svg(sources: Mapping[str, Sequence[tuple[float, float]]], width: int = 760, height: int = 320) -> str:
    """Side-by-side normalised step histograms: logP (unit bins) and MR (width-5 bins)."""
    names = list(sources)
    body = []
    panels = (("logP", 0, -6.0, 1.0), ("MR", 1, 5.0, 5.0))
    pw = (width - 130) / 2
    for p, (title, col_idx, lo, bw) in enumerate(panels):
        x0 = 45 + p * (pw + 20)
        x1, top, bottom = x0 + pw - 20, 25, height - 40
        hists = {}
        for name in names:
            vals = [row[col_idx] for row in sources[name]]
            h = histogram(vals, lo, bw)
            total = max(len(vals), 1)
            hists[name] = {e: c / total for e, c in h.items()}
        edges = sorted({e for h in hists.values() for e in h})
        if not edges:
            edges = [lo]
        xmin, xmax = edges[0], edges[-1] + bw
        ymax = max([f for h in hists.values() for f in h.values()] or [1.0])
        fx = _axis_map(xmin, xmax, x0, x1)
        fy = _axis_map(0.0, ymax * 1.05, bottom, top)
        body.append(f'<rect x="{x0:.1f}" y="{top}" width="{x1 - x0:.1f}" height="{bottom - top}" '
                    f'fill="none" stroke="black"/>')
        body.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{height - 12}" text-anchor="middle">{title}</text>')
        for tick in (xmin, (xmin + xmax) / 2, xmax):
            body.append(f'<text x="{fx(tick):.1f}" y="{bottom + 14}" text-anchor="middle">{tick:g}</text>')
        for k, name in enumerate(names):
            h = hists[name]
            pts = []
            e = xmin
            while e < xmax - 1e-9:
                f = h.get(e, 0.0)
                pts.append(f"{fx(e):.2f},{fy(f):.2f}")
                pts.append(f"{fx(e + bw):.2f},{fy(f):.2f}")
                e += bw
            body.append(f'<polyline fill="none" stroke="{_PALETTE[k % len(_PALETTE)]}" stroke-width="1.5" '
                        f'points="{" ".join(pts)}"/>')
    body.extend(_legend(names, width - 75, 35))
    return _svg(width, height, body)


def emit_report(results: Mapping[str, MetricsResult], table: ConditionTable,
                projection: tuple[PCAResult, Sequence[str]] | None,
                histograms: Mapping[str, Sequence[tuple[float, float]]],
                out_dir: str | Path) -> list[Path]:
    """Write ``metrics.csv``, ``condition_table.csv``, ``pca_scatter.svg`` and ``prop_hist.svg``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "metrics.csv": metrics_csv(results),
        "condition_table.csv": condition_table_csv(table),
        "prop_hist.svg": prop_hist_svg(histograms),
    }
    if projection is not None:
        files["pca_scatter.svg"] = pca_scatter_svg(*projection)
    written = []
    for name, text in files.items():
        path = out / name
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(path)
    return written
