"""Smoke test for the binn_py extension.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/binn_py-*.whl
"""

import json
import tempfile
from pathlib import Path

import binn_py


def main():
    small = json.dumps({"n_genes": 80, "genes_per_metabolite": [20, 20, 20, 20]})
    ds = binn_py.generate(n_lines=240, seed=3, config_json=small)
    assert len(ds.genotype) == 240 and len(ds.genotype[0]) == 80
    assert ds.metabolite_ids == ["A", "S", "CK", "SL"]

    mask = binn_py.LayerMask.from_pathway_table(ds.pathway_table, ds.marker_ids)
    assert mask.entity_ids == ["A", "CK", "S", "SL"]
    assert mask.n_inputs == 80

    model = binn_py.BinnModel([mask], seed=1)
    before = model.predict(ds.genotype[:5])
    epochs = model.fit(ds.genotype[:160], ds.phenotype[:160], ds.genotype[160:], ds.phenotype[160:], max_epochs=50)
    assert epochs >= 1
    latents = model.latents(ds.genotype[:5])
    assert len(latents) == 1 and len(latents[0][0]) == 4
    clone = binn_py.BinnModel.from_json(model.to_json())
    assert clone.predict(ds.genotype[:5]) == model.predict(ds.genotype[:5])
    assert before != model.predict(ds.genotype[:5])

    cfg = json.dumps({
        "families": ["binn_mse", "ridge"],
        "outer_splits": 2,
        "inner_folds": 3,
        "train_fraction": 0.5,
        "folds_to_train": 1,
        "record_timing": False,
    })
    res = binn_py.run_experiment(ds, mask, cfg)
    assert res.n_audit_violations == 0
    assert {row[0] for row in res.metrics} == {"binn_mse", "ridge"}
    ens = res.ensemble
    preds = ens.predict(ds.genotype, family="ridge")
    assert len(preds) == 240

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "ensemble.json"
        ens.save(path)
        again = binn_py.ModelEnsemble.load(path)
        assert again.predict(ds.genotype[:3]) == ens.predict(ds.genotype[:3])

    ranking = ens.sensitivity(ds.genotype, ds.line_ids, family="binn_mse")
    assert sorted(e[0] for e in ranking) == ["A", "CK", "S", "SL"]
    assert [e[3] for e in ranking] == [1, 2, 3, 4]
    print("top entity:", ranking[0][0])
    print("ok")


if __name__ == "__main__":
    main()
