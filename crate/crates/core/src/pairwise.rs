//! Joint-correctness statistics for a pair of models.
//!
//! Every example falls in exactly one of four cells: both models correct,
//! only the first, only the second, or neither. Error inconsistency is the
//! mass of the two off-diagonal cells.

use serde::{Deserialize, Serialize};

use crate::data::CorrectnessVector;
use crate::error::{Error, Result};

fn check_len(a: &CorrectnessVector, b: &CorrectnessVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "correctness vectors have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Counts of the four joint outcomes of a model pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointCounts {
    pub both: usize,
    pub only1: usize,
    pub only2: usize,
    pub neither: usize,
}

impl JointCounts {
    pub fn total(&self) -> usize {
        self.both + self.only1 + self.only2 + self.neither
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    pub frac_both: f64,
    pub frac_only1: f64,
    pub frac_only2: f64,
    pub frac_neither: f64,
    pub n_examples: usize,
    pub counts: JointCounts,
}

impl ErrorBreakdown {
    pub fn from_counts(counts: JointCounts) -> Result<Self> {
        let n = counts.total();
        if n == 0 {
            return Err(Error::InsufficientData(
                "error breakdown of zero examples".into(),
            ));
        }
        let f = |k: usize| k as f64 / n as f64;
        Ok(ErrorBreakdown {
            frac_both: f(counts.both),
            frac_only1: f(counts.only1),
            frac_only2: f(counts.only2),
            frac_neither: f(counts.neither),
            n_examples: n,
            counts,
        })
    }

    /// Fraction of examples where exactly one model is correct.
    pub fn observed_inconsistency(&self) -> f64 {
        (self.counts.only1 + self.counts.only2) as f64 / self.n_examples as f64
    }

    pub fn accuracy1(&self) -> f64 {
        (self.counts.both + self.counts.only1) as f64 / self.n_examples as f64
    }

    pub fn accuracy2(&self) -> f64 {
        (self.counts.both + self.counts.only2) as f64 / self.n_examples as f64
    }

    /// Observed agreement in correctness, `both + neither`.
    pub fn observed_consistency(&self) -> f64 {
        (self.counts.both + self.counts.neither) as f64 / self.n_examples as f64
    }

    /// The breakdown with the two models swapped.
    pub fn swapped(&self) -> ErrorBreakdown {
        ErrorBreakdown {
            frac_only1: self.frac_only2,
            frac_only2: self.frac_only1,
            counts: JointCounts {
                only1: self.counts.only2,
                only2: self.counts.only1,
                ..self.counts
            },
            ..*self
        }
    }

    /// Error-consistency kappa from the cell fractions.
    pub fn kappa(&self) -> Result<f64> {
        kappa_from_parts(
            self.observed_consistency(),
            self.accuracy1(),
            self.accuracy2(),
        )
    }
}

pub fn joint_counts(corr1: &CorrectnessVector, corr2: &CorrectnessVector) -> Result<JointCounts> {
    check_len(corr1, corr2)?;
    let mut c = JointCounts {
        both: 0,
        only1: 0,
        only2: 0,
        neither: 0,
    };
    for (&a, &b) in corr1.as_slice().iter().zip(corr2.as_slice()) {
        match (a, b) {
            (true, true) => c.both += 1,
            (true, false) => c.only1 += 1,
            (false, true) => c.only2 += 1,
            (false, false) => c.neither += 1,
        }
    }
    Ok(c)
}

pub fn error_breakdown(
    corr1: &CorrectnessVector,
    corr2: &CorrectnessVector,
) -> Result<ErrorBreakdown> {
    ErrorBreakdown::from_counts(joint_counts(corr1, corr2)?)
}

/// Error inconsistency expected if the two models erred independently:
/// `p1 (1 - p2) + p2 (1 - p1)`.
pub fn expected_inconsistency(p1: f64, p2: f64) -> Result<f64> {
    for p in [p1, p2] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!("accuracy {p} outside [0, 1]")));
        }
    }
    Ok(p1 * (1.0 - p2) + p2 * (1.0 - p1))
}

fn kappa_from_parts(c_obs: f64, p1: f64, p2: f64) -> Result<f64> {
    let c_exp = p1 * p2 + (1.0 - p1) * (1.0 - p2);
    if (1.0 - c_exp).abs() < 1e-15 {
        return Err(Error::UndefinedKappa { p1, p2 });
    }
    Ok((c_obs - c_exp) / (1.0 - c_exp))
}

/// Error consistency: agreement in per-example correctness beyond what the
/// two accuracies imply by chance.
pub fn error_consistency_kappa(
    corr1: &CorrectnessVector,
    corr2: &CorrectnessVector,
) -> Result<f64> {
    check_len(corr1, corr2)?;
    let n = corr1.len();
    if n == 0 {
        return Err(Error::InsufficientData("kappa of zero examples".into()));
    }
    let agree = corr1
        .as_slice()
        .iter()
        .zip(corr2.as_slice())
        .filter(|(a, b)| a == b)
        .count();
    kappa_from_parts(agree as f64 / n as f64, corr1.accuracy(), corr2.accuracy())
}

/// How the ensemble resolves the inconsistent and the neither-correct cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversionStats {
    /// Ensemble-correct share of the exactly-one-correct examples (0 when there are none).
    pub conv_rate_inconsistent: f64,
    /// Ensemble-correct share of the neither-correct examples (0 when there are none).
    pub conv_rate_neither: f64,
    pub n_inconsistent: usize,
    pub n_neither: usize,
    pub n_converted_inconsistent: usize,
    pub n_converted_neither: usize,
    /// Both-correct examples the ensemble got wrong.
    pub n_lost_both: usize,
    pub ensemble_accuracy: f64,
}

pub fn conversion_stats(
    corr1: &CorrectnessVector,
    corr2: &CorrectnessVector,
    corr_ens: &CorrectnessVector,
) -> Result<ConversionStats> {
    check_len(corr1, corr2)?;
    check_len(corr1, corr_ens)?;
    let (mut n_inc, mut k_inc, mut n_nei, mut k_nei, mut lost) = (0, 0, 0, 0, 0);
    for ((&a, &b), &e) in corr1
        .as_slice()
        .iter()
        .zip(corr2.as_slice())
        .zip(corr_ens.as_slice())
    {
        match (a, b) {
            (true, true) => lost += usize::from(!e),
            (false, false) => {
                n_nei += 1;
                k_nei += usize::from(e);
            }
            _ => {
                n_inc += 1;
                k_inc += usize::from(e);
            }
        }
    }
    let rate = |k: usize, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    Ok(ConversionStats {
        conv_rate_inconsistent: rate(k_inc, n_inc),
        conv_rate_neither: rate(k_nei, n_nei),
        n_inconsistent: n_inc,
        n_neither: n_nei,
        n_converted_inconsistent: k_inc,
        n_converted_neither: k_nei,
        n_lost_both: lost,
        ensemble_accuracy: corr_ens.accuracy(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cv(bits: &[u8]) -> CorrectnessVector {
        bits.iter().map(|b| *b == 1).collect()
    }

    #[test]
    fn breakdown_of_quarters() {
        let b = error_breakdown(&cv(&[1, 1, 0, 0]), &cv(&[1, 0, 1, 0])).unwrap();
        assert_eq!(
            (b.frac_both, b.frac_only1, b.frac_only2, b.frac_neither),
            (0.25, 0.25, 0.25, 0.25)
        );
        assert_eq!(b.observed_inconsistency(), 0.5);
    }

    #[test]
    fn identical_models_are_consistent() {
        let c = cv(&[1, 0, 1, 1, 0]);
        let b = error_breakdown(&c, &c).unwrap();
        assert_eq!(b.frac_only1, 0.0);
        assert_eq!(b.frac_only2, 0.0);
        assert_eq!(error_consistency_kappa(&c, &c).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            error_breakdown(&cv(&[1]), &cv(&[1, 0])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            conversion_stats(&cv(&[1]), &cv(&[1]), &cv(&[1, 0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn expected_inconsistency_examples() {
        assert_eq!(expected_inconsistency(0.5, 0.5).unwrap(), 0.5);
        assert!((expected_inconsistency(1.0, 0.3).unwrap() - 0.7).abs() < 1e-15);
        // 0.762 * 0.245 + 0.755 * 0.238 = 0.18669 + 0.17969
        assert!((expected_inconsistency(0.762, 0.755).unwrap() - 0.36638).abs() < 1e-9);
        assert!(matches!(
            expected_inconsistency(1.2, 0.5),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kappa_examples() {
        let k = error_consistency_kappa(&cv(&[1, 1, 0, 0]), &cv(&[1, 0, 1, 0])).unwrap();
        assert_eq!(k, 0.0);
        let a = cv(&[1, 0, 1, 0]);
        assert_eq!(error_consistency_kappa(&a, &a.complement()).unwrap(), -1.0);
        let perfect = cv(&[1, 1, 1]);
        assert!(matches!(
            error_consistency_kappa(&perfect, &perfect),
            Err(Error::UndefinedKappa { .. })
        ));
    }

    #[test]
    fn conversion_when_ensemble_follows_model_one() {
        let c1 = cv(&[1, 1, 0, 0, 1, 0, 1]);
        let c2 = cv(&[1, 0, 1, 1, 0, 0, 1]);
        let s = conversion_stats(&c1, &c2, &c1).unwrap();
        let b = error_breakdown(&c1, &c2).unwrap();
        let expect = b.frac_only1 / (b.frac_only1 + b.frac_only2);
        assert!((s.conv_rate_inconsistent - expect).abs() < 1e-15);
        assert_eq!(s.n_inconsistent, 4);
    }

    #[test]
    fn no_inconsistent_examples_gives_zero_rate() {
        let c = cv(&[1, 0, 1]);
        let s = conversion_stats(&c, &c, &c).unwrap();
        assert_eq!(s.n_inconsistent, 0);
        assert_eq!(s.conv_rate_inconsistent, 0.0);
        assert!(!s.conv_rate_inconsistent.is_nan());
    }

    #[test]
    fn three_model_micro_case_by_enumeration() {
        // N = 6, C = 3. Each model's probabilities per example; the ensemble
        // is their average and correctness is read off by hand.
        let labels = [0usize, 1, 2, 0, 1, 2];
        let p1 = [
            [0.7, 0.2, 0.1],
            [0.6, 0.3, 0.1],
            [0.1, 0.1, 0.8],
            [0.2, 0.5, 0.3],
            [0.3, 0.4, 0.3],
            [0.5, 0.4, 0.1],
        ];
        let p2 = [
            [0.6, 0.3, 0.1],
            [0.1, 0.8, 0.1],
            [0.5, 0.2, 0.3],
            [0.3, 0.6, 0.1],
            [0.5, 0.1, 0.4],
            [0.2, 0.2, 0.6],
        ];
        let p3 = [
            [0.2, 0.7, 0.1],
            [0.2, 0.2, 0.6],
            [0.1, 0.6, 0.3],
            [0.4, 0.2, 0.4],
            [0.1, 0.3, 0.6],
            [0.3, 0.6, 0.1],
        ];
        let argmax = |r: [f64; 3]| {
            let mut b = 0;
            for c in 1..3 {
                if r[c] > r[b] {
                    b = c;
                }
            }
            b
        };
        let corr = |p: &[[f64; 3]; 6]| -> CorrectnessVector {
            (0..6).map(|i| argmax(p[i]) == labels[i]).collect()
        };
        let ens: Vec<[f64; 3]> = (0..6)
            .map(|i| {
                let mut r = [0.0; 3];
                for c in 0..3 {
                    r[c] = (p1[i][c] + p2[i][c] + p3[i][c]) / 3.0;
                }
                r
            })
            .collect();
        let ens_corr: CorrectnessVector = (0..6).map(|i| argmax(ens[i]) == labels[i]).collect();
        // Hand walk of the column sums:
        // (1.5,1.2,0.3) (0.9,1.3,0.8) (0.7,0.9,1.4) (0.9,1.3,0.8) (0.9,0.8,1.3) (1.0,1.2,0.8)
        // argmax = [0, 1, 2, 1, 2, 1]
        assert_eq!(ens_corr, cv(&[1, 1, 1, 0, 0, 0]));

        let (c1, c2) = (corr(&p1), corr(&p2));
        assert_eq!(c1, cv(&[1, 0, 1, 0, 1, 0]));
        assert_eq!(c2, cv(&[1, 1, 0, 0, 0, 1]));
        let s = conversion_stats(&c1, &c2, &ens_corr).unwrap();
        // inconsistent: examples 1,2,4,5 -> ensemble correct on 1,2
        assert_eq!((s.n_inconsistent, s.n_converted_inconsistent), (4, 2));
        // neither: example 3 -> ensemble wrong
        assert_eq!((s.n_neither, s.n_converted_neither), (1, 0));
        assert_eq!(s.conv_rate_inconsistent, 0.5);
        assert_eq!(s.conv_rate_neither, 0.0);
    }

    fn bits(n: usize) -> impl Strategy<Value = Vec<bool>> {
        prop::collection::vec(any::<bool>(), n)
    }

    proptest! {
        #[test]
        fn breakdown_identities((a, b, e) in (1usize..300).prop_flat_map(|n| (bits(n), bits(n), bits(n)))) {
            let (c1, c2, ce) = (CorrectnessVector::new(a), CorrectnessVector::new(b), CorrectnessVector::new(e));
            let br = error_breakdown(&c1, &c2).unwrap();
            let sum = br.frac_both + br.frac_only1 + br.frac_only2 + br.frac_neither;
            prop_assert!((sum - 1.0).abs() < 1e-9);

            let sw = error_breakdown(&c2, &c1).unwrap();
            prop_assert_eq!(sw, br.swapped());

            let identity = c1.accuracy() + c2.accuracy() - 2.0 * br.frac_both;
            prop_assert!((br.observed_inconsistency() - identity).abs() < 1e-12);

            match (br.kappa(), error_consistency_kappa(&c1, &c2)) {
                (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12),
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "kappa routes disagree: {:?}", other),
            }

            // Decomposition identity holds when no both-correct example is lost.
            let s = conversion_stats(&c1, &c2, &ce).unwrap();
            let lost = s.n_lost_both as f64 / br.n_examples as f64;
            let recon = br.frac_both - lost
                + s.conv_rate_inconsistent * (br.frac_only1 + br.frac_only2)
                + s.conv_rate_neither * br.frac_neither;
            prop_assert!((recon - s.ensemble_accuracy).abs() < 1e-9);
        }
    }
}
