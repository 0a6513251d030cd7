"""Regenerate the bundled FCIDUMP fixtures (needs pyscf, which the package itself does not)."""

import json
from pathlib import Path

from pyscf import fci, gto, scf
from pyscf.tools import fcidump

DATA = Path(__file__).resolve().parents[1] / "src" / "aimadapt" / "data"

SYSTEMS = {
    "h2_sto3g_0.74": "H 0 0 0; H 0 0 0.74",
    "h4_chain_sto3g_1.5": "H 0 0 0; H 0 0 1.5; H 0 0 3.0; H 0 0 4.5",
}


def main():
    meta = {}
    for name, atoms in SYSTEMS.items():
        mol = gto.M(atom=atoms, basis="sto-3g", unit="angstrom", verbose=0)
        mf = scf.RHF(mol).run()
        path = DATA / f"{name}.fcidump"
        fcidump.from_scf(mf, str(path), tol=1e-14)
        e_fci = fci.FCI(mf).kernel()[0]
        meta[name] = {"geometry": atoms, "e_hf": mf.e_tot, "e_fci": e_fci,
                      "norb": mol.nao, "nelec": mol.nelectron}
        print(name, mf.e_tot, e_fci)
    (DATA / "fixtures.json").write_text(json.dumps(meta, indent=2) + "\n")


if __name__ == "__main__":
    main()
