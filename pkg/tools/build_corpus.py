"""Build the bundled desk-scale corpus and the Crippen golden file.

Dev-only: needs ``rdkit`` and the ``molsets`` wheel (MOSES, a ZINC-derived set).
Neither is a runtime dependency of the package.

    python tools/build_corpus.py /path/to/moses/dataset/data
"""

import gzip
import random
import re
import sys
from pathlib import Path

from rdkit import Chem, RDLogger
from rdkit.Chem import BRICS, Crippen

RDLogger.DisableLog("rdApp.*")

ROOT = Path(__file__).resolve().parents[1]
FORBIDDEN = re.compile(r"[\[\]+\-.@/\\]")
TARGET_TOTAL = 52_000
N_GOLDEN = 1000


def passes(mol):
    if mol is None or mol.GetNumHeavyAtoms() > 16:
        return None
    smi = Chem.MolToSmiles(mol)
    if FORBIDDEN.search(smi):
        return None
    logp, mr = Crippen.MolLogP(mol), Crippen.MolMR(mol)
    if not (-6 < logp < 5 and 5 < mr < 95):
        return None
    return smi, logp, mr


def read_moses(data_dir):
    out = []
    for name in ("train", "test", "test_scaffolds"):
        with gzip.open(Path(data_dir) / f"{name}.csv.gz", "rt") as fh:
            next(fh)
            out.extend(line.split(",")[0] for line in fh if line.strip())
    return out


def main(data_dir):
    parents = read_moses(data_dir)
    whole = {}
    for smi in parents:
        r = passes(Chem.MolFromSmiles(smi))
        if r:
            whole[r[0]] = r
    print("whole molecules:", len(whole), flush=True)

    frags = {}
    rng = random.Random(0)
    order = list(range(len(parents)))
    rng.shuffle(order)
    need = TARGET_TOTAL - len(whole)
    for k, i in enumerate(order):
        if len(frags) >= need:
            break
        mol = Chem.MolFromSmiles(parents[i])
        for f in BRICS.BRICSDecompose(mol, minFragmentSize=4):
            capped = Chem.MolFromSmiles(re.sub(r"\[\d*\*\]", "[H]", f))
            r = passes(capped)
            if r and r[0] not in whole:
                frags[r[0]] = r
        if k % 20000 == 0:
            print(k, len(frags), flush=True)

    def dump(path, rows, header):
        with open(path, "w") as fh:
            fh.write(header)
            for smi, logp, mr in rows:
                fh.write(f"{smi}\t{logp:.6f}\t{mr:.6f}\n")

    whole_rows = [whole[s] for s in sorted(whole)]
    frag_rows = [frags[s] for s in sorted(frags)][:need]
    dump(ROOT / "src/mgcvae/data/zinc16.smi", whole_rows,
         "# ZINC molecules (via MOSES) with <=16 heavy atoms, no brackets/charges/fragments\n"
         "# SMILES\tlogP\tMR  (reference Wildman-Crippen values)\n")
    dump(ROOT / "src/mgcvae/data/zinc16_brics.smi", frag_rows,
         "# BRICS fragments of ZINC molecules, open valences capped with H, same filters\n"
         "# SMILES\tlogP\tMR  (reference Wildman-Crippen values)\n")
    golden = random.Random(1).sample(whole_rows, N_GOLDEN)
    dump(ROOT / "tests/data/crippen_golden.tsv", golden,
         "# SMILES\tlogP\tMR from an established Wildman-Crippen implementation\n")


if __name__ == "__main__":
    main(sys.argv[1])
