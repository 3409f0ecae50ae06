//! Command-line definitions and dispatch.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use divens_core::calibration::{fit_temperature, CalibrationConfig};
use divens_core::data::{
    read_label_matrix, read_labels, save_tensor, write_labels, Category, ClassGroups,
    EmbeddingMatrix, LogitMatrix, Manifest, ModelRecord,
};
use divens_core::ensemble::{
    ensemble, ensemble_correct, greedy_select, interpolation_sweep, CalibratedModel,
    EnsembleConfig, EnsembleMode, GreedyConfig,
};
use divens_core::features::{
    compress, concat_columns, diversity_rank, fractional_concat, linear_cka, normalize, RankMethod,
};
use divens_core::probe::{default_l2_grid, fit_multilabel_probe, fit_probe, ProbeConfig};
use divens_core::specialization::JointCategory;
use divens_core::synth::{
    brute_force_best_subset, synth_pair, synth_specialists, GroupSpec, JointSpec,
    MAX_BRUTE_FORCE_POOL,
};
use serde::{Deserialize, Serialize};

use crate::format::{num, write_json, CsvOut};
use crate::report::{self, AccuracySource, FigureOptions};
use crate::workspace::Workspace;

#[derive(Debug, Parser)]
#[command(
    name = "divens",
    version,
    about = "Diversity statistics for model ensembles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Model manifest (JSON).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Directory for output files; created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Ensemble mode: avg_prob or avg_logit.
    #[arg(long, global = true, default_value = "avg_prob")]
    pub mode: EnsembleMode,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Class groups JSON replacing the manifest's groups.
    #[arg(long, global = true)]
    pub groups: Option<PathBuf>,
    /// Accuracies behind the expected-inconsistency baseline.
    #[arg(long, global = true, value_enum, default_value_t = AccuracySource::Measured)]
    pub expected_from: AccuracySource,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a temperature for every model in the manifest.
    Calibrate {
        /// Write the fitted temperatures back into the manifest.
        #[arg(long)]
        update_manifest: bool,
        /// Output JSON (default `<out-dir>/temps.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full error breakdown of the base model against each other model.
    Pairwise {
        #[arg(long)]
        other: Option<String>,
        /// Ignore manifest temperatures and fit them again.
        #[arg(long)]
        refit: bool,
        /// Output CSV (default `<out-dir>/pairwise.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of a weighted ensemble of manifest models.
    Ensemble {
        #[arg(long, value_delimiter = ',', required = true)]
        members: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        weights: Option<Vec<f64>>,
        /// Also save the ensemble probabilities as a tensor.
        #[arg(long)]
        probs_out: Option<PathBuf>,
    },
    /// Accuracy along the interpolation path between the base and another model.
    Interpolate {
        #[arg(long)]
        other: String,
        /// `start:end:step` over [0, 1].
        #[arg(long, default_value = "0:1:0.1")]
        t_grid: String,
        /// Interpolate the two class groups in opposite directions. Implied
        /// by `--groups`.
        #[arg(long)]
        class_aware: bool,
        /// Output CSV (default `<out-dir>/interpolate.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy forward selection from a pool, starting at the base model.
    Greedy {
        /// Starting model (default: the manifest's base model).
        #[arg(long)]
        base: Option<String>,
        /// Comma-separated names, or a file with one name per line
        /// (default: every other model).
        #[arg(long)]
        pool: Option<String>,
        #[arg(long, visible_alias = "k")]
        k_max: Option<usize>,
        #[arg(long)]
        stop_on_no_gain: bool,
        /// Also run exhaustive search (pools of at most 12).
        #[arg(long)]
        oracle: bool,
        /// Output JSON (default `<out-dir>/greedy.json`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Confidence-angle records, histogram and per-class table for one pair.
    Specialize {
        #[arg(long)]
        other: String,
        #[arg(long, default_value_t = 18)]
        bins: usize,
        /// Histogram categories (default ONLY1,ONLY2,NEITHER).
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<JointCategory>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fractional concatenation of two embeddings.
    Concat {
        #[command(flatten)]
        pair: EmbeddingPair,
        #[arg(long)]
        frac_a: f64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        spec_out: Option<PathBuf>,
    },
    /// Diversity ranking of the columns of two embeddings.
    Rank {
        #[command(flatten)]
        pair: EmbeddingPair,
        #[arg(long, default_value = "cross_cov_asc")]
        method: RankMethod,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep the k most diverse columns of two concatenated embeddings.
    Compress {
        #[command(flatten)]
        pair: EmbeddingPair,
        #[arg(long, default_value = "cross_cov_asc")]
        method: RankMethod,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multinomial linear probe on one or more embeddings (stacked when several).
    Probe {
        #[arg(long, value_delimiter = ',', required = true)]
        features: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[command(flatten)]
        probe: ProbeArgs,
    },
    /// One-vs-rest probes scored by 11-point mAP.
    ProbeMl {
        #[arg(long, value_delimiter = ',', required = true)]
        features: Vec<PathBuf>,
        /// CSV of N rows by C columns of 0/1.
        #[arg(long)]
        label_matrix: PathBuf,
        #[command(flatten)]
        probe: ProbeArgs,
    },
    /// Linear CKA between two embeddings.
    Cka {
        #[command(flatten)]
        pair: EmbeddingPair,
    },
    /// Write a synthetic model pair, labels and manifest.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = "")]
        out_prefix: String,
    },
    /// Model table: one row per non-base model against the base.
    Table1 {
        #[arg(long)]
        refit: bool,
    },
    /// Figure data files (fig1..fig6), comma separated.
    Figures {
        #[arg(long, default_value = "fig1,fig2,fig3,fig4,fig5")]
        which: String,
        #[arg(long, default_value_t = 18)]
        bins: usize,
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<JointCategory>>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long, default_value = "default")]
        l2_grid: String,
        #[arg(long, default_value_t = 0.2)]
        holdout: f64,
        #[arg(long)]
        refit: bool,
    },
}

#[derive(Debug, Args)]
pub struct EmbeddingPair {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Use embeddings as stored instead of row-normalizing them.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// `default` (1e-6 ... 1e1) or a comma-separated list.
    #[arg(long, default_value = "default")]
    pub l2_grid: String,
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// How a command ended when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Nothing was requested, so nothing was written.
    Empty,
    /// Some models could not be used; their rows carry the reason.
    Partial,
}

fn outcome(failures: usize) -> Outcome {
    if failures == 0 {
        Outcome::Success
    } else {
        Outcome::Partial
    }
}

pub fn parse_l2_grid(s: &str) -> Result<Vec<f64>> {
    if s.trim().eq_ignore_ascii_case("default") {
        return Ok(default_l2_grid());
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad l2 value {v:?}"))
        })
        .collect()
}

fn probe_config(grid: &str, holdout: f64, seed: u64) -> Result<ProbeConfig> {
    Ok(ProbeConfig {
        l2_grid: parse_l2_grid(grid)?,
        holdout_fraction: holdout,
        seed,
        ..Default::default()
    })
}

fn load_embedding(path: &Path, raw: bool) -> Result<EmbeddingMatrix> {
    let e = EmbeddingMatrix::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(if raw { e } else { normalize(&e)? })
}

fn load_pair(p: &EmbeddingPair) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    Ok((load_embedding(&p.a, p.raw)?, load_embedding(&p.b, p.raw)?))
}

/// Parses `start:end:step` into the grid points, end included when hit.
pub fn parse_t_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad t-grid value {v:?}"))
        })
        .collect::<Result<_>>()?;
    let [start, end, step] = parts[..] else {
        bail!("t-grid {s:?} must be start:end:step");
    };
    if !(0.0..=1.0).contains(&start)
        || !(0.0..=1.0).contains(&end)
        || start > end
        || step.is_nan()
        || step <= 0.0
    {
        bail!("t-grid {s:?} must satisfy 0 <= start <= end <= 1 and step > 0");
    }
    // counted in steps so the endpoint is not lost to rounding
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| (start + i as f64 * step).min(end))
        .collect())
}

fn read_groups(path: &Path) -> Result<ClassGroups> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let g: ClassGroups =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(ClassGroups::new(g.groups().to_vec())?)
}

fn read_pool(arg: &str) -> Result<Vec<String>> {
    let path = Path::new(arg);
    let names: Vec<String> = if path.is_file() {
        fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect()
    } else {
        arg.split(',')
            .map(str::trim)
            .filter(|n| !n.is_empty())
            .map(String::from)
            .collect()
    };
    Ok(names)
}

fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct CalibrationEntry {
    category: Category,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nll_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nll_after: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    at_boundary: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    evaluations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct CalibrationReport {
    labels_path: PathBuf,
    labels_sha256: String,
    models: BTreeMap<String, CalibrationEntry>,
}

fn in_dir(dir: &Path, p: Option<&PathBuf>, default: &str) -> PathBuf {
    p.cloned().unwrap_or_else(|| dir.join(default))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum SynthSpec {
    Pair(JointSpec),
    Specialists {
        n_classes: usize,
        seed: u64,
        groups: Vec<GroupSpec>,
    },
}

#[derive(Serialize)]
struct EnsembleReport<'a> {
    members: &'a [String],
    mode: EnsembleMode,
    weights: Option<&'a [f64]>,
    n_examples: usize,
    n_correct: usize,
    accuracy: String,
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        divens_core::par::set_threads(n);
    }
    let dir = &cli.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let manifest_path = || {
        cli.manifest
            .as_deref()
            .ok_or_else(|| anyhow!("--manifest is required"))
    };
    let groups_override = cli.groups.as_deref().map(read_groups).transpose()?;
    let open = |refit: bool| -> Result<Workspace> {
        let mut ws = Workspace::open(manifest_path()?, refit)?;
        if let Some(g) = &groups_override {
            ws.manifest.class_groups = Some(g.clone());
        }
        Ok(ws)
    };

    match &cli.command {
        Command::Calibrate {
            update_manifest,
            out,
        } => {
            let path = manifest_path()?;
            let mut manifest = Manifest::load(path)?;
            let labels_path = manifest.resolve(&manifest.labels_path);
            let labels = read_labels(&labels_path)?;
            let fits = divens_core::par::map_slice(&manifest.models, |rec| {
                let z = LogitMatrix::load(manifest.resolve(&rec.logits_path))?;
                fit_temperature(&z, &labels, &CalibrationConfig::default())
            });
            let mut failures = 0;
            let mut models = BTreeMap::new();
            for (rec, fit) in manifest.models.iter().zip(fits) {
                let entry = match fit {
                    Ok(f) => CalibrationEntry {
                        category: rec.category,
                        temperature: Some(f.temperature.value()),
                        nll_before: Some(f.nll_before),
                        nll_after: Some(f.nll_after),
                        at_boundary: Some(f.at_boundary),
                        evaluations: Some(f.evaluations.len()),
                        error: None,
                    },
                    Err(e) => {
                        failures += 1;
                        CalibrationEntry {
                            category: rec.category,
                            temperature: None,
                            nll_before: None,
                            nll_after: None,
                            at_boundary: None,
                            evaluations: None,
                            error: Some(e.to_string()),
                        }
                    }
                };
                models.insert(rec.name.clone(), entry);
            }
            let report = CalibrationReport {
                labels_path: manifest.labels_path.clone(),
                labels_sha256: sha256_file(&labels_path)?,
                models,
            };
            let out_path = in_dir(dir, out.as_ref(), "temps.json");
            write_json(&out_path, &report)?;
            if *update_manifest {
                for (name, entry) in &report.models {
                    if let Some(t) = entry.temperature {
                        manifest.model_mut(name).expect("listed model").temperature = Some(t);
                    }
                }
                manifest.save(path)?;
            }
            println!("{}", out_path.display());
            Ok(outcome(failures))
        }
        Command::Pairwise { other, refit, out } => {
            let ws = open(*refit)?;
            let p = in_dir(dir, out.as_ref(), "pairwise.csv");
            let failures =
                report::write_pairwise(&ws, cli.mode, cli.expected_from, other.as_deref(), &p)?;
            println!("{}", p.display());
            Ok(outcome(failures))
        }
        Command::Ensemble {
            members,
            weights,
            probs_out,
        } => {
            let ws = open(false)?;
            let models: Vec<&CalibratedModel> = members
                .iter()
                .map(|m| ws.model(m).map(|l| &l.calibrated))
                .collect::<Result<_>>()?;
            let cfg = EnsembleConfig {
                mode: cli.mode,
                weights: weights.clone(),
            };
            let correct = ensemble_correct(&models, &ws.labels, &cfg)?;
            if let Some(p) = probs_out {
                save_tensor(&ensemble(&models, &cfg)?.values().view(), p)?;
            }
            let p = dir.join("ensemble.json");
            write_json(
                &p,
                &EnsembleReport {
                    members,
                    mode: cli.mode,
                    weights: weights.as_deref(),
                    n_examples: correct.len(),
                    n_correct: correct.count_correct(),
                    accuracy: num(correct.accuracy()),
                },
            )?;
            println!("accuracy {}", num(correct.accuracy()));
            Ok(Outcome::Success)
        }
        Command::Interpolate {
            other,
            t_grid,
            class_aware,
            out,
        } => {
            let ts = parse_t_grid(t_grid)?;
            let ws = open(false)?;
            let (m1, m2) = (&ws.base()?.calibrated, &ws.model(other)?.calibrated);
            let groups: Option<ClassGroups> =
                if *class_aware || cli.groups.is_some() {
                    Some(report::class_groups(&ws, m1.n_classes()).ok_or_else(|| {
                        anyhow!("class groups do not fit {} classes", m1.n_classes())
                    })?)
                } else {
                    None
                };
            let sweep = interpolation_sweep(m1, m2, &ws.labels, &ts, cli.mode, groups.as_ref())?;
            let p = in_dir(dir, out.as_ref(), "interpolate.csv");
            let mut out = CsvOut::create(&p, &["t", "accuracy"])?;
            for (t, acc) in sweep {
                out.row([num(t), num(acc)])?;
            }
            out.finish()?;
            println!("{}", p.display());
            Ok(Outcome::Success)
        }
        Command::Greedy {
            base,
            pool,
            k_max,
            stop_on_no_gain,
            oracle,
            out,
        } => {
            let ws = open(false)?;
            let base_name = base
                .clone()
                .unwrap_or_else(|| ws.manifest.base_model.clone());
            let names: Vec<String> = match pool {
                Some(p) => read_pool(p)?,
                None => ws
                    .manifest
                    .models
                    .iter()
                    .map(|r| r.name.clone())
                    .filter(|n| *n != base_name)
                    .collect(),
            };
            if names.contains(&base_name) {
                bail!("the pool contains the base model {base_name}");
            }
            let pool: Vec<CalibratedModel> = names
                .iter()
                .map(|n| ws.model(n).map(|m| m.calibrated.clone()))
                .collect::<Result<_>>()?;
            let cfg = GreedyConfig {
                k_max: k_max.unwrap_or(pool.len()),
                mode: cli.mode,
                stop_on_no_gain: *stop_on_no_gain,
            };
            let base = &ws.model(&base_name)?.calibrated;
            let trace = greedy_select(base, &pool, &ws.labels, &cfg)?;
            let p = in_dir(dir, out.as_ref(), "greedy.json");
            if *oracle {
                if pool.len() > MAX_BRUTE_FORCE_POOL {
                    bail!("--oracle supports pools of at most {MAX_BRUTE_FORCE_POOL}");
                }
                let best =
                    brute_force_best_subset(&pool, &ws.labels, cfg.k_max, cli.mode, Some(base))?;
                write_json(&p, &serde_json::json!({ "trace": trace, "oracle": best }))?;
            } else {
                write_json(&p, &trace)?;
            }
            println!("{}", p.display());
            Ok(Outcome::Success)
        }
        Command::Specialize {
            other,
            bins,
            categories,
            out,
        } => {
            let ws = open(false)?;
            let cats = categories
                .clone()
                .unwrap_or_else(|| JointCategory::DEFAULT_FILTER.to_vec());
            let p = in_dir(dir, out.as_ref(), "theta.csv");
            report::write_specialize(&ws, other, *bins, &cats, &p)?;
            println!("{}", p.display());
            Ok(Outcome::Success)
        }
        Command::Concat {
            pair,
            frac_a,
            out,
            spec_out,
        } => {
            let (a, b) = load_pair(pair)?;
            let (cat, spec) = fractional_concat(&a, &b, *frac_a, cli.seed)?;
            save_tensor(&cat.view(), out)?;
            if let Some(s) = spec_out {
                write_json(s, &spec)?;
            }
            println!("{} dims -> {}", cat.n_dims(), out.display());
            Ok(Outcome::Success)
        }
        Command::Rank { pair, method, out } => {
            let (a, b) = load_pair(pair)?;
            let ranking = diversity_rank(&a, &b, *method)?;
            let p = in_dir(dir, out.as_ref(), "ranking.json");
            write_json(&p, &ranking)?;
            println!("{}", p.display());
            Ok(Outcome::Success)
        }
        Command::Compress {
            pair,
            method,
            k,
            out,
        } => {
            // compress normalizes its inputs itself
            let load = |p: &Path| {
                EmbeddingMatrix::load(p).with_context(|| format!("loading {}", p.display()))
            };
            let (a, b) = (load(&pair.a)?, load(&pair.b)?);
            let (c, _) = compress(&a, &b, *method, *k)?;
            save_tensor(&c.view(), out)?;
            println!("{} dims -> {}", c.n_dims(), out.display());
            Ok(Outcome::Success)
        }
        Command::Probe {
            features,
            labels,
            probe,
        } => {
            let embs: Vec<EmbeddingMatrix> = features
                .iter()
                .map(|f| load_embedding(f, probe.raw))
                .collect::<Result<_>>()?;
            let refs: Vec<&EmbeddingMatrix> = embs.iter().collect();
            let x = concat_columns(&refs)?;
            let y = read_labels(labels)?;
            let fit = fit_probe(
                &x,
                &y,
                &probe_config(&probe.l2_grid, probe.holdout, cli.seed)?,
            )?;
            let p = in_dir(dir, probe.out.as_ref(), "probe.json");
            write_json(&p, &fit)?;
            println!(
                "holdout accuracy {} at l2 {}",
                num(fit.holdout_accuracy),
                num(fit.selected_l2)
            );
            Ok(Outcome::Success)
        }
        Command::ProbeMl {
            features,
            label_matrix,
            probe,
        } => {
            let embs: Vec<EmbeddingMatrix> = features
                .iter()
                .map(|f| load_embedding(f, probe.raw))
                .collect::<Result<_>>()?;
            let refs: Vec<&EmbeddingMatrix> = embs.iter().collect();
            let x = concat_columns(&refs)?;
            let m = read_label_matrix(label_matrix)?;
            let fit = fit_multilabel_probe(
                &x,
                &m,
                &probe_config(&probe.l2_grid, probe.holdout, cli.seed)?,
            )?;
            let p = in_dir(dir, probe.out.as_ref(), "probe_ml.json");
            write_json(&p, &fit)?;
            if !fit.model.skipped.is_empty() {
                eprintln!("skipped degenerate classes {:?}", fit.model.skipped);
            }
            println!(
                "holdout mAP {} at l2 {}",
                num(fit.holdout_map),
                num(fit.selected_l2)
            );
            Ok(outcome(fit.model.skipped.len()))
        }
        Command::Cka { pair } => {
            let (a, b) = load_pair(pair)?;
            println!("{}", num(linear_cka(&a, &b)?));
            Ok(Outcome::Success)
        }
        Command::Synth { spec, out_prefix } => {
            let text =
                fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: SynthSpec = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", spec.display()))?;
            let (z1, z2, labels, groups) = match spec {
                SynthSpec::Pair(s) => {
                    let (a, b, l) = synth_pair(&s)?;
                    (a, b, l, None)
                }
                SynthSpec::Specialists {
                    n_classes,
                    seed,
                    groups,
                } => {
                    let sp = synth_specialists(&groups, n_classes, seed)?;
                    for name in &sp.skipped {
                        eprintln!("skipped empty group {name}");
                    }
                    let cg = ClassGroups::new(groups.into_iter().map(|g| g.group).collect())?;
                    (sp.logits1, sp.logits2, sp.labels, Some(cg))
                }
            };
            let file = |s: &str| format!("{out_prefix}{s}");
            save_tensor(&z1.values().view(), dir.join(file("model_1.edt")))?;
            save_tensor(&z2.values().view(), dir.join(file("model_2.edt")))?;
            write_labels(&labels, dir.join(file("labels.csv")))?;
            let manifest = Manifest {
                base_model: "model_1".into(),
                models: vec![
                    ModelRecord::new("model_1", Category::Arch, file("model_1.edt")),
                    ModelRecord::new("model_2", Category::Arch, file("model_2.edt")),
                ],
                labels_path: file("labels.csv").into(),
                class_groups: groups,
                root: dir.clone(),
            };
            let mp = dir.join(file("manifest.json"));
            manifest.save(&mp)?;
            println!("{}", mp.display());
            Ok(Outcome::Success)
        }
        Command::Table1 { refit } => {
            let ws = open(*refit)?;
            let p = dir.join("table1.csv");
            let failures = report::write_table1(&ws, cli.mode, cli.expected_from, &p)?;
            println!("{}", p.display());
            Ok(outcome(failures))
        }
        Command::Figures {
            which,
            bins,
            categories,
            k_max,
            l2_grid,
            holdout,
            refit,
        } => {
            let figs = report::parse_figures(which)?;
            if figs.is_empty() {
                return Ok(Outcome::Empty);
            }
            let ws = open(*refit)?;
            let opts = FigureOptions {
                mode: cli.mode,
                accuracy_source: cli.expected_from,
                bins: *bins,
                categories: categories
                    .clone()
                    .unwrap_or_else(|| JointCategory::DEFAULT_FILTER.to_vec()),
                k_max: *k_max,
                probe: probe_config(l2_grid, *holdout, cli.seed)?,
                seed: cli.seed,
            };
            let (written, failures) = report::write_figures(&ws, &figs, &opts, dir)?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(outcome(failures))
        }
    }
}
