//! Synthetic model pairs with exactly known statistics, and an exhaustive
//! subset search used as the oracle for greedy selection.
//!
//! Example counts per joint-correctness cell are allocated by largest
//! remainder, so measured fractions equal the requested ones whenever they
//! are multiples of `1 / n_examples`. Each model's logits put probability
//! `conf` on its predicted class at `T = 1` and spread the rest uniformly.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64(seed)`.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ClassGroup, LabelVector, LogitMatrix};
use crate::ensemble::{count_correct_equal_weight, CalibratedModel, EnsembleMode};
use crate::error::{Error, Result};
use crate::par;

/// Largest pool [`brute_force_best_subset`] accepts.
pub const MAX_BRUTE_FORCE_POOL: usize = 12;

/// Target joint-correctness fractions and top-1 confidences for a pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSpec {
    pub frac_both: f64,
    pub frac_only1: f64,
    pub frac_only2: f64,
    pub frac_neither: f64,
    pub n_examples: usize,
    #[serde(default)]
    pub n_classes: usize,
    pub conf_correct_1: f64,
    pub conf_wrong_1: f64,
    pub conf_correct_2: f64,
    pub conf_wrong_2: f64,
    #[serde(default)]
    pub seed: u64,
}

impl JointSpec {
    /// `fracs` is `[both, only1, only2, neither]`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fracs: [f64; 4],
        n_examples: usize,
        n_classes: usize,
        conf_correct_1: f64,
        conf_wrong_1: f64,
        conf_correct_2: f64,
        conf_wrong_2: f64,
        seed: u64,
    ) -> Self {
        JointSpec {
            frac_both: fracs[0],
            frac_only1: fracs[1],
            frac_only2: fracs[2],
            frac_neither: fracs[3],
            n_examples,
            n_classes,
            conf_correct_1,
            conf_wrong_1,
            conf_correct_2,
            conf_wrong_2,
            seed,
        }
    }

    pub fn fractions(&self) -> [f64; 4] {
        [
            self.frac_both,
            self.frac_only1,
            self.frac_only2,
            self.frac_neither,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.fractions();
        if f.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("fractions {f:?} must lie in [0, 1]")));
        }
        let s: f64 = f.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("fractions sum to {s}, not 1")));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        let floor = 1.0 / self.n_classes as f64;
        for (name, c) in [
            ("conf_correct_1", self.conf_correct_1),
            ("conf_wrong_1", self.conf_wrong_1),
            ("conf_correct_2", self.conf_correct_2),
            ("conf_wrong_2", self.conf_wrong_2),
        ] {
            if !(c > floor && c <= 1.0) {
                return Err(Error::Config(format!(
                    "{name} = {c} is not achievable; must lie in (1/{}, 1]",
                    self.n_classes
                )));
            }
        }
        Ok(())
    }

    /// Example counts per cell `[both, only1, only2, neither]`.
    pub fn counts(&self) -> [usize; 4] {
        largest_remainder(&self.fractions(), self.n_examples)
    }
}

/// Apportions `n` items by `fracs`; leftover units go to the largest
/// remainders, earlier cells first on ties.
pub fn largest_remainder(fracs: &[f64; 4], n: usize) -> [usize; 4] {
    let quotas: Vec<f64> = fracs.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 4];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Cell {
    Both,
    Only1,
    Only2,
    Neither,
}

impl Cell {
    const ALL: [Cell; 4] = [Cell::Both, Cell::Only1, Cell::Only2, Cell::Neither];

    fn correct(self) -> (bool, bool) {
        match self {
            Cell::Both => (true, true),
            Cell::Only1 => (true, false),
            Cell::Only2 => (false, true),
            Cell::Neither => (false, false),
        }
    }
}

fn wrong_class(rng: &mut ChaCha8Rng, y: usize, c: usize) -> usize {
    let r = rng.random_range(0..c - 1);
    if r >= y {
        r + 1
    } else {
        r
    }
}

/// Logit row whose softmax puts exactly `conf` on `pred`.
fn fill_row(row: &mut [f64], pred: usize, conf: f64) {
    let c = row.len();
    let rest = ((1.0 - conf) / (c - 1) as f64).max(1e-30);
    row.fill(rest.ln());
    row[pred] = conf.ln();
}

struct PairBuilder {
    c: usize,
    z1: Vec<f64>,
    z2: Vec<f64>,
    labels: Vec<usize>,
}

impl PairBuilder {
    fn new(c: usize, capacity: usize) -> Self {
        PairBuilder {
            c,
            z1: Vec::with_capacity(capacity * c),
            z2: Vec::with_capacity(capacity * c),
            labels: Vec::with_capacity(capacity),
        }
    }

    /// Appends the examples of one spec, drawing labels with `draw_label`.
    fn push_spec(
        &mut self,
        spec: &JointSpec,
        rng: &mut ChaCha8Rng,
        mut draw_label: impl FnMut(&mut ChaCha8Rng) -> usize,
    ) {
        let counts = spec.counts();
        let mut cells: Vec<Cell> = Cell::ALL
            .iter()
            .zip(counts)
            .flat_map(|(cell, k)| std::iter::repeat_n(*cell, k))
            .collect();
        // Fisher-Yates so cells are interleaved
        for i in (1..cells.len()).rev() {
            let j = rng.random_range(0..=i);
            cells.swap(i, j);
        }
        let c = self.c;
        let mut row = vec![0.0; c];
        for cell in cells {
            let y = draw_label(rng);
            let (ok1, ok2) = cell.correct();
            let p1 = if ok1 { y } else { wrong_class(rng, y, c) };
            let p2 = if ok2 { y } else { wrong_class(rng, y, c) };
            let conf1 = if ok1 {
                spec.conf_correct_1
            } else {
                spec.conf_wrong_1
            };
            let conf2 = if ok2 {
                spec.conf_correct_2
            } else {
                spec.conf_wrong_2
            };
            fill_row(&mut row, p1, conf1);
            self.z1.extend_from_slice(&row);
            fill_row(&mut row, p2, conf2);
            self.z2.extend_from_slice(&row);
            self.labels.push(y);
        }
    }

    fn finish(self) -> Result<(LogitMatrix, LogitMatrix, LabelVector)> {
        let n = self.labels.len();
        let z1 = Array2::from_shape_vec((n, self.c), self.z1).expect("shape");
        let z2 = Array2::from_shape_vec((n, self.c), self.z2).expect("shape");
        Ok((
            LogitMatrix::new(z1)?,
            LogitMatrix::new(z2)?,
            LabelVector::new(self.labels),
        ))
    }
}

/// Two models and labels realizing `spec` exactly.
pub fn synth_pair(spec: &JointSpec) -> Result<(LogitMatrix, LogitMatrix, LabelVector)> {
    spec.validate()?;
    if spec.n_examples == 0 {
        return Err(Error::Config("n_examples must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = PairBuilder::new(spec.n_classes, spec.n_examples);
    let c = spec.n_classes;
    b.push_spec(spec, &mut rng, |r| r.random_range(0..c));
    b.finish()
}

/// A joint spec restricted to the classes of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group: ClassGroup,
    /// `n_classes` and `seed` of this spec are ignored; the outer call's apply.
    pub spec: JointSpec,
}

#[derive(Debug, Clone)]
pub struct SpecialistPair {
    pub logits1: LogitMatrix,
    pub logits2: LogitMatrix,
    pub labels: LabelVector,
    /// Index into the input group list for each example.
    pub group_of_example: Vec<usize>,
    /// Names of groups that were skipped (no classes or no examples).
    pub skipped: Vec<String>,
}

/// Class-correlated specialists: each group's examples take labels from that
/// group's classes and follow that group's joint spec.
pub fn synth_specialists(
    groups: &[GroupSpec],
    n_classes: usize,
    seed: u64,
) -> Result<SpecialistPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: usize = groups.iter().map(|g| g.spec.n_examples).sum();
    let mut b = PairBuilder::new(n_classes, total);
    let mut group_of_example = Vec::with_capacity(total);
    let mut skipped = Vec::new();
    for (gi, g) in groups.iter().enumerate() {
        let spec = JointSpec {
            n_classes,
            ..g.spec.clone()
        };
        spec.validate()?;
        if g.group.last >= n_classes {
            return Err(Error::Config(format!(
                "group {} exceeds {n_classes} classes",
                g.group.name
            )));
        }
        if g.group.is_empty() || spec.n_examples == 0 {
            skipped.push(g.group.name.clone());
            continue;
        }
        let (lo, hi) = (g.group.first, g.group.last);
        b.push_spec(&spec, &mut rng, |r| r.random_range(lo..=hi));
        group_of_example.extend(std::iter::repeat_n(gi, spec.n_examples));
    }
    if b.labels.is_empty() {
        return Err(Error::Config("every group was empty".into()));
    }
    let (logits1, logits2, labels) = b.finish()?;
    Ok(SpecialistPair {
        logits1,
        logits2,
        labels,
        group_of_example,
        skipped,
    })
}

/// A pool of noisy classifiers with mixed accuracy and partially shared
/// errors, plus uniform labels. Used for greedy-vs-exhaustive checks.
pub fn synth_pool(
    n_models: usize,
    n: usize,
    c: usize,
    seed: u64,
) -> Result<(Vec<LogitMatrix>, LabelVector)> {
    if c < 2 || n == 0 {
        return Err(Error::Config(
            "pool needs n >= 1 and at least 2 classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let shared: Vec<f64> = (0..n * c).map(|_| normal()).collect();
    let mut models = Vec::with_capacity(n_models);
    for _ in 0..n_models {
        let (strength, share) = {
            let r = &mut ChaCha8Rng::seed_from_u64(rng.random());
            (r.random_range(0.8..2.5), r.random_range(0.0..0.8))
        };
        let mut z = Vec::with_capacity(n * c);
        for i in 0..n {
            for k in 0..c {
                let own: f64 = StandardNormal.sample(&mut rng);
                let signal = if k == labels[i] { strength } else { 0.0 };
                z.push(signal + share * shared[i * c + k] + (1.0 - share) * own);
            }
        }
        models.push(LogitMatrix::new(
            Array2::from_shape_vec((n, c), z).expect("shape"),
        )?);
    }
    Ok((models, LabelVector::new(labels)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    /// Member names in sorted order (including any required member).
    pub members: Vec<String>,
    pub n_correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceBest {
    /// Best over all sizes.
    pub best: SubsetScore,
    /// `per_size[k - 1]` is the best subset with `k` pool members.
    pub per_size: Vec<SubsetScore>,
}

fn better(a: &SubsetScore, b: &SubsetScore) -> bool {
    a.n_correct > b.n_correct || (a.n_correct == b.n_correct && a.members < b.members)
}

/// Scores every subset of `pool` with 1..=`max_size` members (plus
/// `required`, if given) under equal-weight ensembling.
pub fn brute_force_best_subset(
    pool: &[CalibratedModel],
    labels: &LabelVector,
    max_size: usize,
    mode: EnsembleMode,
    required: Option<&CalibratedModel>,
) -> Result<BruteForceBest> {
    let p = pool.len();
    if p > MAX_BRUTE_FORCE_POOL {
        return Err(Error::PoolTooLarge {
            size: p,
            max: MAX_BRUTE_FORCE_POOL,
        });
    }
    if p == 0 || max_size == 0 {
        return Err(Error::Config(
            "need a nonempty pool and max_size >= 1".into(),
        ));
    }
    let max_size = max_size.min(p);
    let masks: Vec<u32> = (1u32..(1 << p))
        .filter(|m| m.count_ones() as usize <= max_size)
        .collect();
    let n = labels.len() as f64;
    let scored: Vec<Result<(u32, SubsetScore)>> = par::map_slice(&masks, |&mask| {
        let mut members: Vec<&CalibratedModel> = required.into_iter().collect();
        members.extend((0..p).filter(|i| mask & (1 << i) != 0).map(|i| &pool[i]));
        let mut names: Vec<String> = members.iter().map(|m| m.name().to_string()).collect();
        names.sort();
        let k = count_correct_equal_weight(members, labels, mode)?;
        Ok((
            mask,
            SubsetScore {
                members: names,
                n_correct: k,
                accuracy: k as f64 / n,
            },
        ))
    });
    let mut per_size: Vec<Option<SubsetScore>> = vec![None; max_size];
    for r in scored {
        let (mask, s) = r?;
        let slot = &mut per_size[mask.count_ones() as usize - 1];
        if slot.as_ref().is_none_or(|cur| better(&s, cur)) {
            *slot = Some(s);
        }
    }
    let per_size: Vec<SubsetScore> = per_size
        .into_iter()
        .map(|s| s.expect("every size occurs"))
        .collect();
    let best = per_size.iter().skip(1).fold(per_size[0].clone(), |b, s| {
        if better(s, &b) {
            s.clone()
        } else {
            b
        }
    });
    Ok(BruteForceBest { best, per_size })
}
