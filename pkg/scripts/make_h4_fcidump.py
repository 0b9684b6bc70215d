"""Generate the linear H4 / STO-6G fixture (2 bohr spacing, Boys-localized orbitals).

Requires PySCF, which is not a package dependency; the generated file is
checked in under ``src/shadowfn/data``.

    python scripts/make_h4_fcidump.py [output path]
"""

import sys
from pathlib import Path

import numpy as np
from pyscf import ao2mo, fci, gto, lo, scf

from shadowfn.chemio import IntegralTable, write_fcidump

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "shadowfn" / "data" / "h4_sto6g_2bohr.FCIDUMP"


def main(out=DEFAULT_OUT):
    mol = gto.M(
        atom=[("H", (0.0, 0.0, 2.0 * i)) for i in range(4)],
        unit="Bohr",
        basis="sto-6g",
        verbose=0,
    )
    mf = scf.RHF(mol).run()
    coeff = lo.Boys(mol, mf.mo_coeff).kernel()
    # order orbitals along the chain and fix signs so the largest AO weight is positive
    centroid = np.array([(coeff[:, i] ** 2) @ np.arange(mol.nao) for i in range(mol.nao)])
    coeff = coeff[:, np.argsort(centroid)]
    coeff *= np.sign(coeff[np.abs(coeff).argmax(axis=0), np.arange(mol.nao)])

    h1 = coeff.T @ mf.get_hcore() @ coeff
    eri = ao2mo.restore(1, ao2mo.kernel(mol, coeff), mol.nao)
    table = IntegralTable(mol.nao, mol.nelectron, 0, mol.energy_nuc(), h1, eri)
    write_fcidump(table, out)

    e_fci = fci.FCI(mf).kernel()[0]
    print(f"wrote {out}\nE_HF = {mf.e_tot:.8f}  E_FCI = {e_fci:.8f}")


if __name__ == "__main__":
    main(*sys.argv[1:])
