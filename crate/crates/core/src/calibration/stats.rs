//! Scalar summaries `T(β)` used for rank diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatistic {
    /// `‖β‖₂`.
    L2Norm,
    /// Peak-to-total ratio `‖β‖_∞ / ‖β‖₂`, in `[D^{−1/2}, 1]`.
    PeakRatio,
    /// A single coordinate `β_k`.
    Coordinate(usize),
}

impl TestStatistic {
    pub fn name(&self) -> String {
        match self {
            TestStatistic::L2Norm => "l2_norm".into(),
            TestStatistic::PeakRatio => "peak_ratio".into(),
            TestStatistic::Coordinate(k) => format!("coordinate_{k}"),
        }
    }
}

pub fn evaluate_statistic(stat: TestStatistic, beta: &[f64]) -> Result<f64> {
    if beta.is_empty() {
        return Err(Error::DegenerateInput("statistic of an empty vector".into()));
    }
    match stat {
        TestStatistic::L2Norm => Ok(l2(beta)),
        TestStatistic::PeakRatio => {
            let norm = l2(beta);
            if norm == 0.0 {
                return Err(Error::DegenerateInput(
                    "peak ratio of the zero vector is undefined".into(),
                ));
            }
            let peak = beta.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            Ok(peak / norm)
        }
        TestStatistic::Coordinate(k) => beta.get(k).copied().ok_or(Error::Dimension {
            what: "statistic coordinate",
            expected: beta.len(),
            got: k,
        }),
    }
}

/// `‖v‖₂` with scaling so that very large or small entries do not overflow.
fn l2(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale * v.iter().map(|x| (x / scale).powi(2)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(evaluate_statistic(TestStatistic::L2Norm, &[3.0, 4.0]).unwrap(), 5.0);
        let spike = [2.5, 0.0, 0.0, 0.0];
        assert_eq!(evaluate_statistic(TestStatistic::PeakRatio, &spike).unwrap(), 1.0);
        let flat = [1.5; 16];
        let pr = evaluate_statistic(TestStatistic::PeakRatio, &flat).unwrap();
        assert!((pr - 0.25).abs() < 1e-15);
        assert_eq!(evaluate_statistic(TestStatistic::Coordinate(1), &[1.0, -7.0]).unwrap(), -7.0);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            evaluate_statistic(TestStatistic::PeakRatio, &[0.0, 0.0]),
            Err(Error::DegenerateInput(_))
        ));
        assert!(evaluate_statistic(TestStatistic::L2Norm, &[]).is_err());
        assert!(matches!(
            evaluate_statistic(TestStatistic::Coordinate(3), &[1.0]),
            Err(Error::Dimension { .. })
        ));
        assert_eq!(evaluate_statistic(TestStatistic::L2Norm, &[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn names_and_serde() {
        assert_eq!(TestStatistic::Coordinate(4).name(), "coordinate_4");
        let s = serde_json::to_string(&TestStatistic::PeakRatio).unwrap();
        assert_eq!(s, "\"peak_ratio\"");
        let back: TestStatistic = serde_json::from_str("{\"coordinate\":2}").unwrap();
        assert_eq!(back, TestStatistic::Coordinate(2));
    }

    #[test]
    fn bounds_hold_without_rounding_slack() {
        let mut r = crate::rng::stream(1, &[0]);
        for d in [2usize, 64, 4096] {
            let lower = 1.0 / (d as f64).sqrt();
            for i in 0..(if d == 4096 { 2000 } else { 20000 }) {
                let mut v = crate::rng::normal_vec(&mut r, d);
                if i % 3 == 0 {
                    v.iter_mut().for_each(|x| *x = x.signum() * 1.7);
                }
                let pr = evaluate_statistic(TestStatistic::PeakRatio, &v).unwrap();
                assert!(pr >= lower && pr <= 1.0, "d={d} pr={pr:e} lower={lower:e}");
            }
        }
    }

    proptest! {
        #[test]
        fn peak_ratio_bounds(v in prop::collection::vec(-1e6f64..1e6, 1..200)) {
            prop_assume!(v.iter().any(|x| *x != 0.0));
            let d = v.len() as f64;
            let pr = evaluate_statistic(TestStatistic::PeakRatio, &v).unwrap();
            prop_assert!(pr >= 1.0 / d.sqrt() && pr <= 1.0);
        }
    }
}
