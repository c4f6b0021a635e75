from __future__ import annotations

import math

import numpy as np
import pytest
from conftest import DATA, graphs
from hypothesis import given
from hypothesis import strategies as st

from mgcvae.errors import InvalidProperty, TableError
from mgcvae.molgraph import ELEMENTS, Atom, MolGraph
from mgcvae.props import (
    CONDITION_DIM,
    LOGP_BINS,
    LOGP_GRID,
    MR_BINS,
    MR_GRID,
    ConditionVector,
    ContributionTable,
    atom_contributions,
    bin_conditions,
    crippen_logp,
    crippen_mr,
    default_table,
    logp_bin,
    mr_bin,
    parse_predicate,
    properties,
)
from mgcvae.props import _Env
from mgcvae.smiles import parse_smiles, write_smiles

# reference values from an established Wildman-Crippen implementation
REFERENCE = {
    "CCO": (-0.0014, 12.7598),
    "c1ccccc1": (1.6866, 26.442),
    "C": (0.6361, 6.731),
}


@pytest.mark.parametrize("smiles", sorted(REFERENCE))
def test_reference_small_molecules(smiles):
    logp, mr = properties(parse_smiles(smiles))
    assert logp == pytest.approx(REFERENCE[smiles][0], abs=1e-9)
    assert mr == pytest.approx(REFERENCE[smiles][1], abs=1e-9)


def test_golden_file():
    rows = [line.split("\t") for line in (DATA / "crippen_golden.tsv").read_text().splitlines()
            if line and not line.startswith("#")]
    rows = [(smi, float(lp), float(mr)) for smi, lp, mr in rows]
    assert len(rows) >= 100
    dl = np.array([crippen_logp(parse_smiles(s)) - lp for s, lp, _ in rows])
    dm = np.array([crippen_mr(parse_smiles(s)) - mr for s, _, mr in rows])
    # golden values carry 6 decimals
    assert np.abs(dl).max() <= 1e-6 and np.abs(dm).max() <= 1e-6


@pytest.mark.parametrize("el", ELEMENTS)
def test_single_atom_is_one_term(el):
    g = MolGraph((Atom(el),))
    table = default_table()
    (c,) = atom_contributions(g)
    heavy, hyd = table[c.heavy_type], None
    for e in table.hydrogen:
        if e.type_id == c.hydrogen_type:
            hyd = e
            break
    assert crippen_logp(g) == heavy.logp + c.n_hydrogens * hyd.logp
    assert crippen_mr(g) == heavy.mr + c.n_hydrogens * hyd.mr


@given(graphs, st.randoms(use_true_random=False))
def test_permutation_invariance(g, rnd):
    perm = list(range(g.n_atoms))
    rnd.shuffle(perm)
    assert properties(g.permute(perm)) == properties(g)


@given(graphs)
def test_deterministic_by_canonical_string(g):
    again = parse_smiles(write_smiles(g))
    assert properties(again) == properties(g)


def _union(a: MolGraph, b: MolGraph) -> MolGraph:
    shift = a.n_atoms
    bonds = [(x.i, x.j, x.order) for x in a.bonds] + [(x.i + shift, x.j + shift, x.order) for x in b.bonds]
    return MolGraph.build([(t.element, t.aromatic) for t in a.atoms + b.atoms], bonds)


@given(graphs, graphs)
def test_additivity_over_disjoint_union(a, b):
    la, ma = properties(a)
    lb, mb = properties(b)
    lu, mu = properties(_union(a, b))
    assert lu == pytest.approx(la + lb, abs=1e-12)
    assert mu == pytest.approx(ma + mb, abs=1e-12)


def test_mr_positive_on_dataset(zinc_rows):
    assert all(crippen_mr(parse_smiles(s)) > 0 for s, _, _ in zinc_rows[:5000])


def test_bin_examples():
    c = bin_conditions(2.4, 41.0)
    assert (c.logp_bin, c.mr_bin) == (2, 40)
    c = bin_conditions(-7.2, 3.0)
    assert (c.logp_bin, c.mr_bin) == (-6, 10)
    assert logp_bin(2.5) == 3 and logp_bin(-2.5) == -2 and mr_bin(45.0) == 50


def test_grid():
    assert LOGP_GRID == (0, 1, 2, 3)
    assert MR_GRID == (20, 30, 40, 50, 60)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(InvalidProperty):
        bin_conditions(bad, 40.0)
    with pytest.raises(InvalidProperty):
        bin_conditions(1.0, bad)


@given(st.floats(allow_nan=False, allow_infinity=False), st.floats(allow_nan=False, allow_infinity=False))
def test_binning_partitions_reals(logp, mr):
    c = bin_conditions(logp, mr)
    v = c.vector
    assert v.shape == (CONDITION_DIM,) == (21,)
    assert c.logp_onehot.sum() == 1 and c.mr_onehot.sum() == 1
    assert c.logp_bin in LOGP_BINS and c.mr_bin in MR_BINS
    assert ConditionVector.from_vector(v) == c
    if LOGP_BINS[0] <= logp <= LOGP_BINS[-1]:
        assert abs(logp - c.logp_bin) <= 0.5


def test_condition_out_of_range():
    with pytest.raises(InvalidProperty):
        ConditionVector(6, 40)
    with pytest.raises(InvalidProperty):
        ConditionVector(0, 45)


def _table_text(extra: str = "") -> str:
    lines = ["#version\t1"]
    lines += [f"X{el}\tel={el}\t0.1\t1.0" for el in ELEMENTS]
    lines.append("H\thydrogen\t0.1\t1.0")
    return "\n".join(lines) + "\n" + extra


def test_minimal_table_is_total():
    table = ContributionTable.from_text(_table_text())
    g = parse_smiles("CC(=O)Nc1ccccc1")
    n_h = sum(g.implicit_h(i) for i in range(g.n_atoms))
    assert crippen_logp(g, table) == pytest.approx(0.1 * (g.n_atoms + n_h))


def test_table_error_line_numbers():
    with pytest.raises(TableError) as info:
        ContributionTable.from_text(_table_text("bad\tel=C\tx\t1.0\n"))
    assert info.value.line == len(ELEMENTS) + 3
    with pytest.raises(TableError) as info:
        ContributionTable.from_text(_table_text("bad\tel=C nb=[\t1\t1\n"))
    assert info.value.line == len(ELEMENTS) + 3
    with pytest.raises(TableError) as info:
        ContributionTable.from_text("#version\t1\nonly\ttwo\n")
    assert info.value.line == 2


def test_table_requires_fallback():
    text = "\n".join(line for line in _table_text().splitlines() if not line.startswith("XF\t"))
    with pytest.raises(TableError):
        ContributionTable.from_text(text)


def test_table_requires_version():
    with pytest.raises(TableError):
        ContributionTable.from_text(_table_text().replace("#version\t1", "#version\t9"))


def test_predicates_on_acetic_acid():
    g = parse_smiles("CC(=O)O")
    env_h = [g.implicit_h(i) for i in range(g.n_atoms)]
    env = _Env(g, env_h)
    carbonyl = parse_predicate("el=C nb==O nb=-O")
    assert [carbonyl(env, i) for i in range(4)] == [False, True, False, False]
    methyl = parse_predicate("el=C h=3 nb=-C[nb==O]")
    assert [methyl(env, i) for i in range(4)] == [True, False, False, False]
    hydroxyl = parse_predicate("el=O h>=1")
    assert [hydroxyl(env, i) for i in range(4)] == [False, False, False, True]
