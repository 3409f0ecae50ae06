//! Table and figure data written as CSV/JSON. Every number is a library
//! result passed through [`num`]; nothing here does arithmetic beyond
//! selecting what to print.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use divens_core::data::{ClassGroups, EmbeddingMatrix, ModelRecord};
use divens_core::ensemble::{
    ensemble_correct, greedy_select, CalibratedModel, EnsembleConfig, EnsembleMode, GreedyConfig,
};
use divens_core::features::{compress, fractional_concat, normalize, RankMethod};
use divens_core::pairwise::{
    conversion_stats, error_breakdown, expected_inconsistency, ConversionStats, ErrorBreakdown,
};
use divens_core::probe::{fit_probe, ProbeConfig};
use divens_core::specialization::{
    dominance_theta, dominance_threshold, per_class_specialization, theta_histogram, theta_records,
    Grouping, JointCategory, SpecializationRow, ThetaRecord,
};
use divens_core::Error;

use crate::format::{num, opt, write_json, CsvOut};
use crate::workspace::{LoadedModel, Workspace};

/// Statistics of the base model paired with one other model.
pub struct PairStats {
    pub base_accuracy: f64,
    pub accuracy: f64,
    pub breakdown: ErrorBreakdown,
    pub expected_inconsistency: f64,
    /// `None` when kappa is undefined (chance agreement of 1).
    pub kappa: Option<f64>,
    pub conversion: ConversionStats,
    /// Ensemble accuracy minus the mean of the two member accuracies.
    pub relative_gain: f64,
}

pub fn pair_stats(
    ws: &Workspace,
    base: &CalibratedModel,
    other: &CalibratedModel,
    mode: EnsembleMode,
) -> divens_core::Result<PairStats> {
    let c1 = base.correctness(&ws.labels)?;
    let c2 = other.correctness(&ws.labels)?;
    let breakdown = error_breakdown(&c1, &c2)?;
    let (a1, a2) = (c1.accuracy(), c2.accuracy());
    let kappa = match breakdown.kappa() {
        Ok(k) => Some(k),
        Err(Error::UndefinedKappa { .. }) => None,
        Err(e) => return Err(e),
    };
    let ce = ensemble_correct(&[base, other], &ws.labels, &EnsembleConfig::with_mode(mode))?;
    let conversion = conversion_stats(&c1, &c2, &ce)?;
    Ok(PairStats {
        base_accuracy: a1,
        accuracy: a2,
        breakdown,
        expected_inconsistency: expected_inconsistency(a1, a2)?,
        kappa,
        relative_gain: conversion.ensemble_accuracy - (a1 + a2) / 2.0,
        conversion,
    })
}

/// Accuracies fed to the expected-inconsistency baseline.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum AccuracySource {
    /// Accuracies measured on the label file.
    #[default]
    Measured,
    /// `reported_accuracy` from the manifest; pairs missing it become error rows.
    Reported,
}

fn reported_expected(ws: &Workspace, other: &ModelRecord) -> std::result::Result<f64, String> {
    let acc = |r: &ModelRecord| {
        r.reported_accuracy
            .ok_or_else(|| format!("{} has no reported_accuracy", r.name))
    };
    expected_inconsistency(acc(ws.manifest.base())?, acc(other)?).map_err(|e| e.to_string())
}

/// One pair per non-base model: loaded model and stats, or an error message.
fn pairs<'w>(
    ws: &'w Workspace,
    mode: EnsembleMode,
    acc: AccuracySource,
    only: Option<&str>,
) -> Result<Vec<PairRow<'w>>> {
    let base = ws.base()?;
    let entries = ws.others();
    if let Some(name) = only {
        ws.entry(name)?;
    }
    Ok(entries
        .into_iter()
        .filter(|e| only.is_none_or(|n| n == e.record.name))
        .map(|e| {
            let stats = match &e.model {
                Ok(m) => pair_stats(ws, &base.calibrated, &m.calibrated, mode)
                    .map_err(|err| err.to_string())
                    .and_then(|mut s| {
                        if acc == AccuracySource::Reported {
                            s.expected_inconsistency = reported_expected(ws, &e.record)?;
                        }
                        Ok((m, s))
                    }),
                Err(msg) => Err(msg.clone()),
            };
            PairRow { entry: e, stats }
        })
        .collect())
}

struct PairRow<'w> {
    entry: &'w crate::workspace::ModelEntry,
    stats: std::result::Result<(&'w LoadedModel, PairStats), String>,
}

/// Error rows written.
pub type Failures = usize;

pub const TABLE1_HEADER: &[&str] = &[
    "model",
    "category",
    "base_accuracy",
    "accuracy",
    "temperature",
    "observed_inconsistency",
    "expected_inconsistency",
    "kappa",
    "ensemble_accuracy",
    "conversion_rate",
    "conversion_rate_neither",
    "reported_accuracy",
    "reported_inconsistency",
    "reported_ensemble_accuracy",
    "error",
];

/// `table1.csv`: derived columns of the model table, plus the manifest's
/// reported values alongside for comparison.
pub fn write_table1(
    ws: &Workspace,
    mode: EnsembleMode,
    acc: AccuracySource,
    path: &Path,
) -> Result<Failures> {
    let mut out = CsvOut::create(path, TABLE1_HEADER)?;
    let mut failures = 0;
    for row in pairs(ws, mode, acc, None)? {
        let r = &row.entry.record;
        let mut fields = vec![r.name.clone(), r.category.to_string()];
        match &row.stats {
            Ok((m, s)) => fields.extend([
                num(s.base_accuracy),
                num(s.accuracy),
                num(m.calibrated.temperature().value()),
                num(s.breakdown.observed_inconsistency()),
                num(s.expected_inconsistency),
                opt(s.kappa),
                num(s.conversion.ensemble_accuracy),
                num(s.conversion.conv_rate_inconsistent),
                num(s.conversion.conv_rate_neither),
            ]),
            Err(_) => {
                failures += 1;
                fields.extend(std::iter::repeat_n(String::new(), 9));
            }
        }
        fields.extend([
            opt(r.reported_accuracy),
            opt(r.reported_inconsistency),
            opt(r.reported_ensemble_accuracy),
            row.stats.as_ref().err().cloned().unwrap_or_default(),
        ]);
        out.row(&fields)?;
    }
    out.finish()?;
    Ok(failures)
}

/// `pairwise.csv`: the full four-way breakdown for each pair.
pub fn write_pairwise(
    ws: &Workspace,
    mode: EnsembleMode,
    acc: AccuracySource,
    only: Option<&str>,
    path: &Path,
) -> Result<Failures> {
    let header = [
        "base",
        "other_name",
        "category",
        "n_examples",
        "acc_base",
        "acc_other",
        "n_both",
        "n_only1",
        "n_only2",
        "n_neither",
        "frac_both",
        "frac_only1",
        "frac_only2",
        "frac_neither",
        "observed_inconsistency",
        "expected_inconsistency",
        "kappa",
        "ensemble_accuracy",
        "conv_rate",
        "conv_rate_neither",
        "n_lost_both",
        "error",
    ];
    let mut out = CsvOut::create(path, &header)?;
    let mut failures = 0;
    for row in pairs(ws, mode, acc, only)? {
        let r = &row.entry.record;
        let mut fields = vec![
            ws.manifest.base_model.clone(),
            r.name.clone(),
            r.category.to_string(),
        ];
        match &row.stats {
            Ok((_, s)) => {
                let b = &s.breakdown;
                fields.extend([
                    b.n_examples.to_string(),
                    num(s.base_accuracy),
                    num(s.accuracy),
                    b.counts.both.to_string(),
                    b.counts.only1.to_string(),
                    b.counts.only2.to_string(),
                    b.counts.neither.to_string(),
                    num(b.frac_both),
                    num(b.frac_only1),
                    num(b.frac_only2),
                    num(b.frac_neither),
                    num(b.observed_inconsistency()),
                    num(s.expected_inconsistency),
                    opt(s.kappa),
                    num(s.conversion.ensemble_accuracy),
                    num(s.conversion.conv_rate_inconsistent),
                    num(s.conversion.conv_rate_neither),
                    s.conversion.n_lost_both.to_string(),
                    String::new(),
                ]);
            }
            Err(e) => {
                failures += 1;
                fields.extend(std::iter::repeat_n(String::new(), 18));
                fields.push(e.clone());
            }
        }
        out.row(&fields)?;
    }
    out.finish()?;
    Ok(failures)
}

/// Class groups from the manifest, else the default ImageNet bins when they
/// fit the class count.
pub fn class_groups(ws: &Workspace, n_classes: usize) -> Option<ClassGroups> {
    let g = ws.manifest.class_groups_or_default();
    g.validate(n_classes).is_ok().then_some(g)
}

fn spec_row(grouping: &str, r: &SpecializationRow) -> Vec<String> {
    let mut v = vec![
        grouping.to_string(),
        r.key.clone(),
        r.id.to_string(),
        r.count.to_string(),
        opt(r.mean_theta),
    ];
    v.extend(r.mean_theta_by_category.iter().map(|m| opt(*m)));
    v.extend(
        [
            r.counts.both,
            r.counts.only1,
            r.counts.only2,
            r.counts.neither,
        ]
        .map(|c| c.to_string()),
    );
    v
}

const SPEC_HEADER: &[&str] = &[
    "grouping",
    "key",
    "id",
    "count",
    "mean_theta",
    "mean_theta_both",
    "mean_theta_only1",
    "mean_theta_only2",
    "mean_theta_neither",
    "n_both",
    "n_only1",
    "n_only2",
    "n_neither",
];

fn records_for(ws: &Workspace, other: &LoadedModel) -> Result<Vec<ThetaRecord>> {
    let base = ws.base()?;
    Ok(theta_records(
        base.calibrated.probs(),
        other.calibrated.probs(),
        &ws.labels,
    )?)
}

/// `theta.csv` for one pair: records, histogram and per-class tables as
/// `# records`, `# histogram`, `# per_class` sections.
pub fn write_specialize(
    ws: &Workspace,
    other: &str,
    bins: usize,
    cats: &[JointCategory],
    path: &Path,
) -> Result<()> {
    let m = ws.model(other)?;
    let recs = records_for(ws, m)?;
    let hist = theta_histogram(&recs, bins, Some(cats))?;
    let mut out = CsvOut::sectioned(path)?;
    out.section("records")?;
    out.header(&[
        "example_index",
        "label",
        "conf1",
        "conf2",
        "theta_deg",
        "category",
    ])?;
    for r in &recs {
        out.row([
            r.example_index.to_string(),
            ws.labels.get(r.example_index).to_string(),
            num(r.conf1),
            num(r.conf2),
            num(r.theta_deg),
            r.category.to_string(),
        ])?;
    }
    out.section("histogram")?;
    let mut header = vec!["bin_lo", "bin_hi"];
    header.extend(hist.categories.iter().map(|c| c.as_str()));
    out.header(&header)?;
    for (b, counts) in hist.counts.iter().enumerate() {
        let mut row = vec![num(hist.bin_edges[b]), num(hist.bin_edges[b + 1])];
        row.extend(counts.iter().map(|c| c.to_string()));
        out.row(&row)?;
    }
    out.section("per_class")?;
    out.header(SPEC_HEADER)?;
    for r in per_class_specialization(&recs, &ws.labels, Grouping::PerClass)? {
        out.row(spec_row("class", &r))?;
    }
    if let Some(groups) = class_groups(ws, m.logits.n_classes()) {
        for r in per_class_specialization(&recs, &ws.labels, Grouping::Groups(&groups))? {
            out.row(spec_row("group", &r))?;
        }
    }
    out.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Figure {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> divens_core::Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fig1" | "1" => Ok(Figure::Fig1),
            "fig2" | "2" => Ok(Figure::Fig2),
            "fig3" | "3" => Ok(Figure::Fig3),
            "fig4" | "4" => Ok(Figure::Fig4),
            "fig5" | "5" => Ok(Figure::Fig5),
            "fig6" | "6" => Ok(Figure::Fig6),
            other => Err(Error::Config(format!(
                "unknown figure key {other:?} (expected fig1..fig6)"
            ))),
        }
    }
}

/// Parses a comma-separated figure list; an empty string selects none.
pub fn parse_figures(list: &str) -> divens_core::Result<Vec<Figure>> {
    let mut v: Vec<Figure> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Figure::from_str)
        .collect::<divens_core::Result<_>>()?;
    v.sort();
    v.dedup();
    Ok(v)
}

#[derive(Debug, Clone)]
pub struct FigureOptions {
    pub mode: EnsembleMode,
    pub accuracy_source: AccuracySource,
    pub bins: usize,
    pub categories: Vec<JointCategory>,
    /// Greedy steps for fig5; `None` means the whole pool.
    pub k_max: Option<usize>,
    pub probe: ProbeConfig,
    /// Seeds the fractional-concatenation column draws in fig6.
    pub seed: u64,
}

/// Writes the selected figure files into `dir` and returns their paths along
/// with the number of models that could not be used.
pub fn write_figures(
    ws: &Workspace,
    which: &[Figure],
    opts: &FigureOptions,
    dir: &Path,
) -> Result<(Vec<PathBuf>, Failures)> {
    let mut written = Vec::new();
    let mut failures = 0;
    if which.is_empty() {
        return Ok((written, failures));
    }
    let rows = pairs(ws, opts.mode, opts.accuracy_source, None)?;
    let ok: Vec<(&str, &str, &LoadedModel, &PairStats)> = rows
        .iter()
        .filter_map(|r| {
            r.stats.as_ref().ok().map(|(m, s)| {
                (
                    r.entry.record.name.as_str(),
                    r.entry.record.category.as_str(),
                    *m,
                    s,
                )
            })
        })
        .collect();
    failures += rows.len() - ok.len();
    for fig in which {
        let path = match fig {
            Figure::Fig1 => {
                let p = dir.join("fig1_points.csv");
                let mut out = CsvOut::create(
                    &p,
                    &[
                        "model",
                        "category",
                        "base_accuracy",
                        "accuracy",
                        "observed_inconsistency",
                        "expected_inconsistency",
                    ],
                )?;
                for (name, cat, _, s) in &ok {
                    out.row([
                        name.to_string(),
                        cat.to_string(),
                        num(s.base_accuracy),
                        num(s.accuracy),
                        num(s.breakdown.observed_inconsistency()),
                        num(s.expected_inconsistency),
                    ])?;
                }
                out.finish()?;
                p
            }
            Figure::Fig2 => {
                let p = dir.join("fig2_points.csv");
                let mut out = CsvOut::create(
                    &p,
                    &[
                        "model",
                        "category",
                        "observed_inconsistency",
                        "ensemble_accuracy",
                        "relative_gain",
                        "conversion_rate",
                        "conversion_rate_neither",
                    ],
                )?;
                for (name, cat, _, s) in &ok {
                    out.row([
                        name.to_string(),
                        cat.to_string(),
                        num(s.breakdown.observed_inconsistency()),
                        num(s.conversion.ensemble_accuracy),
                        num(s.relative_gain),
                        num(s.conversion.conv_rate_inconsistent),
                        num(s.conversion.conv_rate_neither),
                    ])?;
                }
                out.finish()?;
                p
            }
            Figure::Fig3 => {
                let p = dir.join("fig3_theta.csv");
                let mut out = CsvOut::sectioned(&p)?;
                out.section("histogram")?;
                out.header(&["model", "bin_lo", "bin_hi", "category", "count"])?;
                for (name, _, m, _) in &ok {
                    let h =
                        theta_histogram(&records_for(ws, m)?, opts.bins, Some(&opts.categories))?;
                    for (b, counts) in h.counts.iter().enumerate() {
                        for (cat, c) in h.categories.iter().zip(counts) {
                            out.row([
                                name.to_string(),
                                num(h.bin_edges[b]),
                                num(h.bin_edges[b + 1]),
                                cat.to_string(),
                                c.to_string(),
                            ])?;
                        }
                    }
                }
                // guaranteed-win boundary for model 1
                out.section("dominance")?;
                out.header(&["conf2", "conf1_threshold", "theta_deg"])?;
                for i in 0..=20 {
                    let c2 = i as f64 / 20.0;
                    out.row([
                        num(c2),
                        num(dominance_threshold(c2)),
                        num(dominance_theta(c2)),
                    ])?;
                }
                out.finish()?;
                p
            }
            Figure::Fig4 => {
                let p = dir.join("fig4_classes.csv");
                let mut header = vec!["model"];
                header.extend_from_slice(SPEC_HEADER);
                let mut out = CsvOut::create(&p, &header)?;
                for (name, _, m, _) in &ok {
                    let recs = records_for(ws, m)?;
                    let mut tables = vec![(
                        "class",
                        per_class_specialization(&recs, &ws.labels, Grouping::PerClass)?,
                    )];
                    if let Some(g) = class_groups(ws, m.logits.n_classes()) {
                        tables.push((
                            "group",
                            per_class_specialization(&recs, &ws.labels, Grouping::Groups(&g))?,
                        ));
                    }
                    for (grouping, rows) in tables {
                        for r in rows {
                            let mut row = vec![name.to_string()];
                            row.extend(spec_row(grouping, &r));
                            out.row(&row)?;
                        }
                    }
                }
                out.finish()?;
                p
            }
            Figure::Fig5 => {
                let p = dir.join("fig5_trace.json");
                let pool: Vec<CalibratedModel> =
                    ok.iter().map(|(_, _, m, _)| m.calibrated.clone()).collect();
                if pool.is_empty() {
                    bail!("fig5 needs at least one usable non-base model");
                }
                let cfg = GreedyConfig {
                    k_max: opts.k_max.unwrap_or(pool.len()).min(pool.len()),
                    mode: opts.mode,
                    stop_on_no_gain: false,
                };
                let trace = greedy_select(&ws.base()?.calibrated, &pool, &ws.labels, &cfg)?;
                write_json(&p, &trace)?;
                p
            }
            Figure::Fig6 => {
                let (p, f) =
                    write_fig6(ws, &ok.iter().map(|o| o.0).collect::<Vec<_>>(), opts, dir)?;
                failures += f;
                p
            }
        };
        written.push(path);
    }
    Ok((written, failures))
}

/// Compression sizes: multiples of 256 up to the base dimensionality, or the
/// base dimensionality alone when it is below 256.
pub fn compression_sizes(dim_base: usize, dim_total: usize) -> Vec<usize> {
    let cap = dim_base.min(dim_total);
    if cap < 256 {
        return vec![cap];
    }
    (1..=cap / 256).map(|i| i * 256).collect()
}

pub const CONCAT_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];

fn write_fig6(
    ws: &Workspace,
    others: &[&str],
    opts: &FigureOptions,
    dir: &Path,
) -> Result<(PathBuf, Failures)> {
    let base_name = ws.manifest.base_model.as_str();
    let a = normalize(&ws.embedding(base_name).map_err(|e| anyhow!("fig6: {e}"))?)?;
    let p = dir.join("fig6_compression.csv");
    let mut out = CsvOut::create(
        &p,
        &[
            "model",
            "kind",
            "param",
            "dims",
            "holdout_accuracy",
            "selected_l2",
            "error",
        ],
    )?;
    let probe = |e: &EmbeddingMatrix| fit_probe(e, &ws.labels, &opts.probe);
    let base_fit = probe(&a)?;
    out.row([
        base_name.to_string(),
        "base_full".into(),
        String::new(),
        a.n_dims().to_string(),
        num(base_fit.holdout_accuracy),
        num(base_fit.selected_l2),
        String::new(),
    ])?;
    let mut failures = 0;
    for &name in others {
        if ws.entry(name)?.record.embedding_path.is_none() {
            continue;
        }
        let b = match ws.embedding(name).and_then(|b| Ok(normalize(&b)?)) {
            Ok(b) => b,
            Err(e) => {
                failures += 1;
                out.row([name, "", "", "", "", "", &e.to_string()])?;
                continue;
            }
        };
        let mut emit = |kind: &str, param: String, e: &EmbeddingMatrix| -> Result<()> {
            let f = probe(e)?;
            out.row([
                name.to_string(),
                kind.to_string(),
                param,
                e.n_dims().to_string(),
                num(f.holdout_accuracy),
                num(f.selected_l2),
                String::new(),
            ])
        };
        emit("other_full", String::new(), &b)?;
        for frac in CONCAT_FRACTIONS {
            let (cat, _) = fractional_concat(&a, &b, frac, opts.seed)?;
            emit("concat", num(frac), &cat)?;
        }
        for method in [RankMethod::CrossCovAsc, RankMethod::VarianceDesc] {
            for k in compression_sizes(a.n_dims(), a.n_dims() + b.n_dims()) {
                let (c, _) = compress(&a, &b, method, k)?;
                emit(&format!("compress_{method}"), k.to_string(), &c)?;
            }
        }
    }
    out.finish()?;
    Ok((p, failures))
}
