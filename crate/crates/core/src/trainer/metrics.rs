use alloc::vec;
use alloc::vec::Vec;

/// Classification quality with macro-averaged per-class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[actual][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    /// Classes with no samples in the evaluated slice; they count as zero
    /// precision and recall.
    pub absent_classes: Vec<usize>,
}

impl Metrics {
    /// Build from parallel prediction/target lists.
    pub fn from_predictions(predictions: &[usize], targets: &[usize], num_classes: usize) -> Self {
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&p, &t) in predictions.iter().zip(targets) {
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let k = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
        let mut precision = 0.0;
        let mut recall = 0.0;
        let mut f1 = 0.0;
        let mut absent_classes = Vec::new();
        for c in 0..k {
            let tp = confusion[c][c] as f64;
            let actual: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            if actual == 0 {
                absent_classes.push(c);
            }
            let p = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
            let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
            precision += p;
            recall += r;
            f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        }
        let kf = k.max(1) as f64;
        Self {
            accuracy: if total > 0 { trace as f64 / total as f64 } else { 0.0 },
            precision: precision / kf,
            recall: recall / kf,
            f1: f1 / kf,
            confusion,
            absent_classes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Domain};
    use rand::Rng;

    #[test]
    fn perfect() {
        let t = [0, 1, 2, 2, 1];
        let m = Metrics::from_predictions(&t, &t, 3);
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert!(m.absent_classes.is_empty());
    }

    #[test]
    fn binary_hand_case() {
        let m = Metrics::from_confusion(vec![vec![3, 1], vec![1, 3]]);
        assert_eq!(m.accuracy, 0.75);
        assert!((m.precision - 0.75).abs() < 1e-15);
        assert!((m.recall - 0.75).abs() < 1e-15);
        assert!((m.f1 - 0.75).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor() {
        let t: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let m = Metrics::from_predictions(&[2; 40], &t, 4);
        assert_eq!(m.accuracy, 0.25);
        assert_eq!(m.recall, 0.25);
    }

    #[test]
    fn absent_class_reported() {
        let m = Metrics::from_predictions(&[0, 1], &[0, 1], 3);
        assert_eq!(m.absent_classes, vec![2]);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn brute_force_recount() {
        let mut rng = substream(1, Domain::Probe, 0, 0);
        for _ in 0..200 {
            let k = rng.gen_range(1..6);
            let n = rng.gen_range(1..50);
            let t: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let m = Metrics::from_predictions(&p, &t, k);
            let correct = p.iter().zip(&t).filter(|(a, b)| a == b).count();
            assert_eq!(m.accuracy, correct as f64 / n as f64);
            let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
            for c in 0..k {
                let tp = (0..n).filter(|&i| p[i] == c && t[i] == c).count() as f64;
                let pc = p.iter().filter(|&&x| x == c).count() as f64;
                let tc = t.iter().filter(|&&x| x == c).count() as f64;
                let pr = if pc > 0.0 { tp / pc } else { 0.0 };
                let re = if tc > 0.0 { tp / tc } else { 0.0 };
                ps += pr;
                rs += re;
                fs += if pr + re > 0.0 { 2.0 * pr * re / (pr + re) } else { 0.0 };
            }
            let kf = k as f64;
            assert!((m.precision - ps / kf).abs() < 1e-12);
            assert!((m.recall - rs / kf).abs() < 1e-12);
            assert!((m.f1 - fs / kf).abs() < 1e-12);
        }
    }
}
