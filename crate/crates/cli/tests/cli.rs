use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn binn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_binn"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = binn(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

/// A small run shared by the header checks.
fn small_run(dir: &Path) {
    fs::write(
        dir.join("gen.json"),
        r#"{"n_lines": 160, "n_genes": 40, "genes_per_metabolite": [10, 10, 10, 10]}"#,
    )
    .unwrap();
    fs::write(
        dir.join("train.json"),
        r#"{"data": {"genotype": "data/genotype.csv", "phenotype": "data/phenotype.csv", "intermediates": "data/metabolites.csv"},
            "mask": {"source": "pathway_table", "path": "data/causal_table.json"},
            "experiment": {"families": ["binn_mse", "ridge"], "outer_splits": 1, "inner_folds": 3,
                           "train_fraction": 0.5, "folds_to_train": 1, "record_timing": false,
                           "train": {"max_epochs": 20}}}"#,
    )
    .unwrap();
    ok(&["generate", "--config", "gen.json", "--out-dir", "data"], dir);
    ok(&["train", "--config", "train.json", "--out-dir", "run"], dir);
}

#[test]
fn outputs_have_stable_headers_and_bad_input_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_run(dir);
    ok(&["evaluate", "--ensemble", "run/ensemble.json", "--genotype", "data/genotype.csv", "--phenotype", "data/phenotype.csv", "--out-dir", "eval"], dir);
    ok(&["sensitivity", "--ensemble", "run/ensemble.json", "--genotype", "data/genotype.csv", "--metabolites", "data/metabolites.csv", "--out-dir", "sens"], dir);
    ok(&["report", "--metrics", "run/metrics.csv", "--out-dir", "rep"], dir);

    let golden = [
        ("run/metrics.csv", "family,split,fold,size,seed,mse,pearson,spearman,wall_seconds"),
        ("run/latent_correlations.csv", "family,split,fold,size,seed,layer,entity,pearson"),
        ("eval/predictions.csv", "line_id,binn_mse,ridge"),
        ("eval/evaluation_metrics.csv", "family,n_lines,mse,pearson,spearman"),
        ("sens/sensitivity.csv", "entity_id,delta,model_count,rank"),
        ("sens/latent_truth.csv", "model,family,seed,size,layer,entity_id,pearson"),
        ("rep/summary_long.csv", "family,size,seed,metric,n,n_failed,median,q1,q3,iqr"),
        ("rep/metrics_long.csv", "family,split,fold,size,seed,metric,value"),
        ("rep/comparison.csv", "family,baseline,size,seed,metric,median,baseline_median,percent_change"),
    ];
    for (file, expected) in golden {
        assert_eq!(header(&dir.join(file)), expected, "{file}");
    }
    for f in ["run/resolved_config.json", "run/audit.json", "run/failures.json", "sens/sensitivity.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }

    let usage = [
        vec!["evaluate", "--ensemble", "run/ensemble.json", "--genotype", "data/genotype.csv", "--expression", "data/metabolites.csv"],
        vec!["evaluate", "--ensemble", "missing.json", "--genotype", "data/genotype.csv"],
        vec!["evaluate", "--ensemble", "run/ensemble.json", "--genotype", "data/genotype.csv", "--family", "nope"],
        vec!["sensitivity", "--ensemble", "run/ensemble.json", "--genotype", "data/genotype.csv", "--perturb-scale", "-1"],
        vec!["train", "--config", "gen.json", "--out-dir", "bad"],
    ];
    for args in usage {
        assert_eq!(binn(&args, dir).status.code(), Some(2), "{args:?}");
    }
}
