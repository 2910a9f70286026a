use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use binn::io::{self, DatasetPaths};
use binn::mask_builder::{build_from_data, build_from_pathway_table, MaskFile, MaskProvenance, MaskSource};
use binn::report;
use binn::sensitivity::{ensemble_sensitivity, latent_truth_correlations, SensitivityReport};
use binn::stats::MetricSet;
use binn::synthetic::{generate, GeneratorConfig, Metabolite};
use binn::training::audit::{Stage, Violation};
use binn::training::ensemble::{EnsembleRecord, ModelEnsemble, ModelFamily};
use binn::training::experiment::{run_experiment, ExperimentData, MaskSet};
use binn::training::splits::SplitScheme;
use binn::{GenotypeMatrix, LayerMask};

use crate::config::{resolve, resolve_data, BuildMaskConfigFile, MaskInput, SensitivityConfigFile, TrainConfigFile};
use crate::{
    BuildMaskArgs, Cli, Command, DataArgs, EvaluateArgs, GenerateArgs, ReportArgs, SensitivityArgs, TrainArgs,
    UsageError,
};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parsed config plus the directory its relative paths resolve against.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<(T, Option<PathBuf>)> {
    let Some(p) = path else { return Ok((T::default(), None)) };
    let cfg = io::read_plain_json(p).with_context(|| format!("reading config {}", p.display()))?;
    let base = p.parent().map(Path::to_path_buf);
    Ok((cfg, base))
}

fn apply_data(d: &mut DatasetPaths, args: &DataArgs) {
    if let Some(p) = &args.genotype {
        d.genotype = p.clone();
    }
    if args.phenotype.is_some() {
        d.phenotype = args.phenotype.clone();
    }
    if args.intermediates.is_some() {
        d.intermediates = args.intermediates.clone();
    }
    if args.populations.is_some() {
        d.populations = args.populations.clone();
    }
}

fn parse_family(s: &str) -> Result<ModelFamily> {
    ModelFamily::parse(s.trim()).map_err(|e| usage(e.to_string()))
}

fn write_resolved<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    io::write_plain_json(&out.join(RESOLVED_CONFIG), cfg)?;
    Ok(())
}

fn write_csv_file(path: &Path, body: impl FnOnce(&mut dyn std::io::Write) -> binn::Result<()>) -> Result<()> {
    io::write_atomic(path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: Cli) -> Result<()> {
    let out = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Generate(a) => cmd_generate(&cli, a, &out),
        Command::BuildMask(a) => cmd_build_mask(&cli, a, &out),
        Command::Train(a) => cmd_train(&cli, a, &out),
        Command::Evaluate(a) => cmd_evaluate(a, &out),
        Command::Sensitivity(a) => cmd_sensitivity(&cli, a, &out),
        Command::Report(a) => cmd_report(a, &out),
    }
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs, out: &Path) -> Result<()> {
    let (mut cfg, _) = load_config::<GeneratorConfig>(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_lines {
        cfg.n_lines = n;
    }
    if let Some(d) = &a.dominant {
        cfg.dominant_metabolite = Metabolite::parse(d).map_err(|e| usage(e.to_string()))?;
    }
    if a.noise_seed.is_some() {
        cfg.noise_seed = a.noise_seed;
    }
    let d = generate(&cfg)?;
    io::export_synthetic(out, &d)?;
    write_resolved(out, &cfg)?;
    println!(
        "wrote {} lines x {} markers to {}",
        d.genotype.n_lines(),
        d.genotype.n_markers(),
        out.display()
    );
    Ok(())
}

fn cmd_build_mask(cli: &Cli, a: &BuildMaskArgs, out: &Path) -> Result<()> {
    let (mut cfg, base) = load_config::<BuildMaskConfigFile>(cli.config.as_deref())?;
    resolve_data(base.as_deref(), &mut cfg.data);
    cfg.pathway_table = cfg.pathway_table.map(|p| resolve(base.as_deref(), &p));
    apply_data(&mut cfg.data, &a.data);
    if a.pathway_table.is_some() {
        cfg.pathway_table = a.pathway_table.clone();
    }
    if let Some(v) = a.l1_ratio {
        cfg.recipe.l1_ratio = v;
    }
    if let Some(v) = a.top_k {
        cfg.recipe.top_k_snps_per_gene = v;
    }
    let seed = cli.seed.unwrap_or(0);
    if cfg.data.genotype.as_os_str().is_empty() {
        return Err(usage("build-mask needs --genotype"));
    }
    let (mask, lines) = match &cfg.pathway_table {
        Some(t) => {
            cfg.recipe.source = MaskSource::PathwayTable;
            let (g, _) = io::read_genotype(&cfg.data.genotype)?;
            (build_from_pathway_table(&io::read_pathway_table(t)?, g.marker_ids())?, Vec::new())
        }
        None => {
            cfg.recipe.source = MaskSource::ElasticNetPlusAssociation;
            if cfg.data.intermediates.is_none() || cfg.data.phenotype.is_none() {
                return Err(usage(
                    "a data-driven mask needs --phenotype and --intermediates (or a --pathway-table)",
                ));
            }
            let ds = io::ingest(&cfg.data)?;
            let rows: Vec<usize> = (0..ds.genotype.n_lines()).collect();
            let m = build_from_data(
                &ds.genotype,
                ds.intermediates.as_ref().expect("checked"),
                ds.phenotype.as_ref().expect("checked"),
                &rows,
                &cfg.recipe,
                seed,
            )?;
            (m, ds.genotype.line_ids().to_vec())
        }
    };
    let path = a.out.clone().unwrap_or_else(|| out.join("mask.json"));
    let file = MaskFile::new(
        std::slice::from_ref(&mask),
        MaskProvenance {
            recipe: cfg.recipe.clone(),
            split_id: None,
            seed,
            training_lines: lines,
        },
    );
    io::write_json(&path, "mask", &file)?;
    if let Some(dir) = path.parent() {
        write_resolved(if dir.as_os_str().is_empty() { Path::new(".") } else { dir }, &cfg)?;
    }
    println!(
        "mask: {} entities over {} markers ({} connections) -> {}",
        mask.n_entities(),
        mask.n_inputs(),
        mask.supports().iter().map(Vec::len).sum::<usize>(),
        path.display()
    );
    Ok(())
}

fn read_mask_file(path: &Path) -> Result<Vec<LayerMask>> {
    let f: MaskFile = io::read_json(path, "mask").with_context(|| format!("reading mask {}", path.display()))?;
    Ok(f.layer_masks()?)
}

#[derive(Serialize)]
struct SplitStages {
    seed: u64,
    split: usize,
    stages: Vec<Stage>,
}

#[derive(Serialize)]
struct AuditSummary {
    records: usize,
    violations: Vec<Violation>,
    splits: Vec<SplitStages>,
}

fn cmd_train(cli: &Cli, a: &TrainArgs, out: &Path) -> Result<()> {
    let (mut cfg, base) = load_config::<TrainConfigFile>(cli.config.as_deref())?;
    resolve_data(base.as_deref(), &mut cfg.data);
    cfg.mask = match cfg.mask {
        MaskInput::File { path } => MaskInput::File {
            path: resolve(base.as_deref(), &path),
        },
        MaskInput::PathwayTable { path } => MaskInput::PathwayTable {
            path: resolve(base.as_deref(), &path),
        },
        m => m,
    };
    apply_data(&mut cfg.data, &a.data);
    if let Some(p) = &a.mask {
        cfg.mask = MaskInput::File { path: p.clone() };
    }
    if let Some(p) = &a.pathway_table {
        cfg.mask = MaskInput::PathwayTable { path: p.clone() };
    }
    if a.l1_ratio.is_some() || a.top_k.is_some() {
        let MaskInput::Recipe { recipe } = &mut cfg.mask else {
            return Err(usage("--l1-ratio/--top-k only apply to data-driven masks"));
        };
        if let Some(v) = a.l1_ratio {
            recipe.l1_ratio = v;
        }
        if let Some(v) = a.top_k {
            recipe.top_k_snps_per_gene = v;
        }
    }
    let e = &mut cfg.experiment;
    if let Some(f) = &a.families {
        e.families = f.iter().map(|s| parse_family(s)).collect::<Result<_>>()?;
    }
    if let Some(s) = &a.sizes {
        e.sizes = Some(s.clone());
    }
    if let Some(l) = &a.lambda {
        e.lambda_grid = l.clone();
    }
    if let Some(v) = a.label_fraction {
        e.label_fraction = v;
    }
    if let Some(s) = &a.scheme {
        e.scheme = SplitScheme::parse(s).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(s) = cli.seed {
        e.seeds = vec![s];
    }
    if let Some(j) = cli.jobs {
        e.jobs = j;
    }
    if cfg.data.genotype.as_os_str().is_empty() {
        return Err(usage("train needs a genotype file (--genotype or data.genotype)"));
    }
    if cfg.data.phenotype.is_none() {
        return Err(usage("train needs a phenotype file (--phenotype or data.phenotype)"));
    }
    cfg.experiment.validate()?;
    let ds = io::ingest(&cfg.data)?;
    let masks = match &cfg.mask {
        MaskInput::File { path } => MaskSet::Fixed(read_mask_file(path)?),
        MaskInput::PathwayTable { path } => MaskSet::Fixed(vec![build_from_pathway_table(
            &io::read_pathway_table(path)?,
            ds.genotype.marker_ids(),
        )?]),
        MaskInput::Recipe { recipe } => MaskSet::PerSplit(recipe.clone()),
    };
    if let MaskSet::Fixed(m) = &masks {
        if m.first().map(|m| m.input_feature_ids()) != Some(ds.genotype.marker_ids()) {
            return Err(usage("mask input features do not match the genotype markers"));
        }
    }
    let phenotype = ds.phenotype.as_ref().expect("checked");
    let result = run_experiment(
        ExperimentData {
            genotype: &ds.genotype,
            phenotype,
            intermediates: ds.intermediates.as_ref(),
        },
        &masks,
        &cfg.experiment,
    )?;
    if result.ensemble.members.is_empty() {
        anyhow::bail!("every training fold failed; see the log for details");
    }
    io::write_json(&out.join("ensemble.json"), "ensemble", &result.ensemble.to_record())?;
    write_csv_file(&out.join("metrics.csv"), |w| report::write_metrics(w, &result.metrics))?;
    write_csv_file(&out.join("latent_correlations.csv"), |w| {
        report::write_latent_correlations(w, &result.latent_correlations)
    })?;
    io::write_plain_json(&out.join("failures.json"), &result.failures)?;
    let splits = result
        .audit
        .stages()
        .into_iter()
        .map(|((seed, split), s)| SplitStages {
            seed,
            split,
            stages: s.into_iter().collect(),
        })
        .collect();
    let violations = result.audit.violations();
    io::write_plain_json(
        &out.join("audit.json"),
        &AuditSummary {
            records: result.audit.records().len(),
            violations: violations.clone(),
            splits,
        },
    )?;
    write_resolved(out, &cfg)?;
    println!(
        "trained {} models ({} failed folds, {} audit violations) -> {}",
        result.ensemble.members.len(),
        result.failures.len(),
        violations.len(),
        out.display()
    );
    Ok(())
}

fn load_ensemble(path: &Path) -> Result<ModelEnsemble> {
    let rec: EnsembleRecord =
        io::read_json(path, "ensemble").with_context(|| format!("reading ensemble {}", path.display()))?;
    Ok(ModelEnsemble::from_record(rec)?)
}

fn load_genotype(path: &Path, ensemble: &ModelEnsemble) -> Result<GenotypeMatrix> {
    let (g, _) = io::read_genotype(path)?;
    Ok(g.align_markers(&ensemble.marker_ids)?)
}

fn families_of(ensemble: &ModelEnsemble, only: Option<&str>) -> Result<Vec<ModelFamily>> {
    if let Some(f) = only {
        let f = parse_family(f)?;
        if ensemble.family(f).next().is_none() {
            return Err(usage(format!("ensemble has no {f} members")));
        }
        return Ok(vec![f]);
    }
    let mut fams: Vec<ModelFamily> = ensemble.members.iter().map(|m| m.family).collect();
    fams.sort();
    fams.dedup();
    Ok(fams)
}

#[derive(Serialize)]
struct EvaluationRow {
    family: ModelFamily,
    n_lines: usize,
    mse: f64,
    pearson: f64,
    spearman: f64,
}

fn cmd_evaluate(a: &EvaluateArgs, out: &Path) -> Result<()> {
    if a.intermediates.is_some() {
        return Err(usage(
            "evaluate uses genotypes only; intermediate omics files are not accepted at inference",
        ));
    }
    let ensemble = load_ensemble(&a.ensemble)?;
    let g = load_genotype(&a.genotype, &ensemble)?;
    let families = families_of(&ensemble, a.family.as_deref())?;
    let preds: Vec<Vec<f64>> = families
        .iter()
        .map(|&f| Ok(ensemble.predict_mean(g.values(), Some(f))?.to_vec()))
        .collect::<Result<_>>()?;
    write_csv_file(&out.join("predictions.csv"), |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["line_id".to_string()];
        header.extend(families.iter().map(|f| f.to_string()));
        out.write_record(&header)?;
        for (i, id) in g.line_ids().iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(preds.iter().map(|p| p[i].to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    })?;
    if let Some(p) = &a.phenotype {
        let y = io::align_keyed(g.line_ids(), io::read_phenotype(p)?, "phenotype file")?;
        let rows = families
            .iter()
            .zip(&preds)
            .map(|(&family, p)| {
                let m = MetricSet::compute(&y, p)?;
                Ok(EvaluationRow {
                    family,
                    n_lines: y.len(),
                    mse: m.mse,
                    pearson: m.pearson_r,
                    spearman: m.spearman_rho,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_csv_file(&out.join("evaluation_metrics.csv"), |w| report::write_rows(w, &rows))?;
        for r in &rows {
            println!("{}: mse {:.4}, pearson {:.4}", r.family, r.mse, r.pearson);
        }
    }
    println!(
        "predicted {} lines with {} famil{} -> {}",
        g.n_lines(),
        families.len(),
        if families.len() == 1 { "y" } else { "ies" },
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SensitivityFile<'a> {
    options: &'a binn::sensitivity::SensitivityOptions,
    top_n: Option<usize>,
    ensemble: String,
    n_models: usize,
    report: &'a SensitivityReport,
}

fn cmd_sensitivity(cli: &Cli, a: &SensitivityArgs, out: &Path) -> Result<()> {
    let (mut cfg, _) = load_config::<SensitivityConfigFile>(cli.config.as_deref())?;
    let o = &mut cfg.options;
    if let Some(f) = &a.family {
        o.family = Some(parse_family(f)?);
    }
    if a.replicate.is_some() {
        o.seed = a.replicate;
    }
    if a.size.is_some() {
        o.size = a.size;
    }
    if a.layer.is_some() {
        o.layer = a.layer;
    }
    if let Some(s) = a.perturb_scale {
        if !(s > 0.0 && s.is_finite()) {
            return Err(usage(format!("--perturb-scale must be positive, got {s}")));
        }
        o.perturbation_scale = s;
    }
    if a.top_n.is_some() {
        cfg.top_n = a.top_n;
    }
    let ensemble = load_ensemble(&a.ensemble)?;
    let g = load_genotype(&a.genotype, &ensemble)?;
    let rep = ensemble_sensitivity(&ensemble, &g, &cfg.options)?;
    write_csv_file(&out.join("sensitivity.csv"), |w| rep.write_csv(w, cfg.top_n))?;
    io::write_json(
        &out.join("sensitivity.json"),
        "sensitivity",
        &SensitivityFile {
            options: &cfg.options,
            top_n: cfg.top_n,
            ensemble: a.ensemble.display().to_string(),
            n_models: rep.per_model.len(),
            report: &rep,
        },
    )?;
    if let Some(p) = &a.intermediates {
        let truth = io::read_expression(p)?;
        let rows = latent_truth_correlations(&ensemble, &g, &truth, &cfg.options)?;
        write_csv_file(&out.join("latent_truth.csv"), |w| report::write_rows(w, &rows))?;
    }
    write_resolved(out, &cfg)?;
    for e in rep.entities.iter().take(cfg.top_n.unwrap_or(10)) {
        println!("{:>3}  {:<16} {:.6}  ({} models)", e.rank, e.entity_id, e.delta, e.model_count);
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs, out: &Path) -> Result<()> {
    let baseline = parse_family(&a.baseline)?;
    let f = File::open(&a.metrics).map_err(binn::BinnError::from).with_context(|| a.metrics.display().to_string())?;
    let rows = report::read_metrics(BufReader::new(f))?;
    let summary = report::summarize(&rows);
    write_csv_file(&out.join("summary.csv"), |w| report::write_rows(w, &report::summarize_wide(&rows)))?;
    write_csv_file(&out.join("summary_long.csv"), |w| report::write_rows(w, &summary))?;
    write_csv_file(&out.join("comparison.csv"), |w| {
        report::write_rows(w, &report::compare(&summary, baseline))
    })?;
    write_csv_file(&out.join("metrics_long.csv"), |w| report::write_rows(w, &report::long_format(&rows)))?;
    if let Some(p) = &a.latent {
        let f = File::open(p).map_err(binn::BinnError::from).with_context(|| p.display().to_string())?;
        let lat = report::read_latent_correlations(BufReader::new(f))?;
        write_csv_file(&out.join("latent_long.csv"), |w| report::write_latent_correlations(w, &lat))?;
        write_csv_file(&out.join("latent_summary.csv"), |w| {
            report::write_rows(w, &report::summarize_latent(&lat))
        })?;
    }
    let mut by: BTreeMap<(ModelFamily, usize), Vec<f64>> = BTreeMap::new();
    for s in summary.iter().filter(|s| s.metric == report::Metric::Mse) {
        by.entry((s.family, s.size)).or_default().push(s.median);
    }
    for ((fam, size), v) in by {
        println!("{:<10} n={size:<6} median mse {:.4}", fam.as_str(), binn::stats::median(&v));
    }
    Ok(())
}
