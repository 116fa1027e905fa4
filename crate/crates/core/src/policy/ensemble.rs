use std::collections::VecDeque;

use nalgebra::{UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{quat_to_rotvec, rotvec_to_quat};
use crate::store::ACTION_DIM;

/// Buffer of recent action chunks, blended per executed step.
///
/// A step's action averages every buffered prediction for it with weights
/// `exp(-m·i)`, where `i` counts chunks from the oldest contributor (`i = 0`).
/// Rotation vectors are averaged in the tangent space at the newest prediction.
#[derive(Debug, Clone)]
pub struct TemporalEnsemble {
    m: f64,
    arms: usize,
    /// `(first step, rows)` per chunk, oldest first.
    chunks: VecDeque<(usize, Vec<Vec<f64>>)>,
}

impl TemporalEnsemble {
    pub fn new(m: f64, arms: usize) -> Result<Self> {
        if !(m >= 0.0) {
            return Err(Error::config("ensemble coefficient must be non-negative"));
        }
        Ok(Self {
            m,
            arms,
            chunks: VecDeque::new(),
        })
    }

    pub fn clear(&mut self) {
        self.chunks.clear();
    }

    /// Adds a chunk whose first row is the action for `step`.
    pub fn push(&mut self, step: usize, rows: Vec<Vec<f64>>) -> Result<()> {
        if rows.is_empty() || rows.iter().any(|r| r.len() != self.arms * ACTION_DIM) {
            return Err(Error::config(format!(
                "chunk rows must have {} values",
                self.arms * ACTION_DIM
            )));
        }
        self.chunks.push_back((step, rows));
        Ok(())
    }

    /// Blended action for `step`. Chunks that end before `step` are dropped.
    pub fn action(&mut self, step: usize) -> Result<Vec<f64>> {
        self.chunks.retain(|(s, rows)| s + rows.len() > step);
        let preds: Vec<&Vec<f64>> = self
            .chunks
            .iter()
            .filter(|(s, _)| *s <= step)
            .map(|(s, rows)| &rows[step - s])
            .collect();
        if preds.is_empty() {
            return Err(Error::config(format!("no prediction covers step {step}")));
        }
        let raw: Vec<f64> = (0..preds.len()).map(|i| (-self.m * i as f64).exp()).collect();
        let total: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
        Ok(blend(&preds, &w, self.arms))
    }
}

/// Weighted average of action vectors; rotation vectors blend on the rotation group
/// about the last prediction.
pub fn blend(preds: &[&Vec<f64>], weights: &[f64], arms: usize) -> Vec<f64> {
    let dim = arms * ACTION_DIM;
    let mut out = vec![0.0; dim];
    for (p, w) in preds.iter().zip(weights) {
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o += w * v;
        }
    }
    let newest = preds.last().expect("non-empty");
    for a in 0..arms {
        let r = a * ACTION_DIM + 3;
        let rv = |p: &Vec<f64>| rotvec_to_quat(&Vector3::new(p[r], p[r + 1], p[r + 2]));
        let base = rv(newest);
        let mut tangent = Vector3::zeros();
        for (p, w) in preds.iter().zip(weights) {
            tangent += quat_to_rotvec(&(base.inverse() * rv(p))) * *w;
        }
        let q: UnitQuaternion<f64> = base * rotvec_to_quat(&tangent);
        out[r..r + 3].copy_from_slice(quat_to_rotvec(&q).as_slice());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn filled(v: f64) -> Vec<f64> {
        let mut a = vec![v; ACTION_DIM];
        a[3..6].copy_from_slice(&[0.0, 0.0, 0.0]);
        a
    }

    #[test]
    fn identical_predictions_pass_through() {
        let mut e = TemporalEnsemble::new(0.01, 1).unwrap();
        let mut a = filled(0.3);
        a[3..6].copy_from_slice(&[0.2, -0.1, 0.4]);
        for s in 0..4 {
            e.push(s, vec![a.clone(); 5]).unwrap();
        }
        let out = e.action(3).unwrap();
        for (x, y) in out.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_weights_average_and_large_m_picks_oldest() {
        let mut e = TemporalEnsemble::new(0.0, 1).unwrap();
        e.push(0, vec![filled(0.0); 3]).unwrap();
        e.push(1, vec![filled(1.0); 3]).unwrap();
        assert!((e.action(1).unwrap()[0] - 0.5).abs() < 1e-12);

        let mut e = TemporalEnsemble::new(1e6, 1).unwrap();
        e.push(0, vec![filled(0.0); 3]).unwrap();
        e.push(1, vec![filled(1.0); 3]).unwrap();
        assert_eq!(e.action(1).unwrap()[0], 0.0);
    }

    #[test]
    fn empty_buffer_is_an_error() {
        let mut e = TemporalEnsemble::new(0.01, 1).unwrap();
        assert!(e.action(0).is_err());
        e.push(0, vec![filled(0.0); 2]).unwrap();
        assert!(e.action(2).is_err());
        assert!(TemporalEnsemble::new(-1.0, 1).is_err());
    }

    proptest! {
        #[test]
        fn output_within_hull(vals in proptest::collection::vec(-5f64..5.0, 1..6), m in 0f64..2.0) {
            let mut e = TemporalEnsemble::new(m, 1).unwrap();
            for (i, v) in vals.iter().enumerate() {
                e.push(i, vec![filled(*v); vals.len()]).unwrap();
            }
            let out = e.action(vals.len() - 1).unwrap();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            for (d, x) in out.iter().enumerate() {
                if !(3..6).contains(&d) {
                    prop_assert!(*x >= lo - 1e-12 && *x <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn weights_sum_to_one(n in 1usize..30, m in 0f64..5.0) {
            // A constant offset passes through unchanged only if the weights sum to 1.
            let preds: Vec<Vec<f64>> = (0..n).map(|_| filled(2.5)).collect();
            let refs: Vec<&Vec<f64>> = preds.iter().collect();
            let raw: Vec<f64> = (0..n).map(|i| (-m * i as f64).exp()).collect();
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((blend(&refs, &w, 1)[0] - 2.5).abs() < 1e-12);
        }
    }
}
