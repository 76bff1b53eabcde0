use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `k×k` count matrix, rows are true classes and columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    k: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[&[u64]]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::dim("confusion", "matrix must be square"));
        }
        Ok(Self {
            k,
            counts: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], k: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::dim(
                "confusion",
                format!("{} labels against {} predictions", truth.len(), predicted.len()),
            ));
        }
        let mut c = Self::new(k);
        for (&t, &p) in truth.iter().zip(predicted) {
            c.record(t, p)?;
        }
        Ok(c)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.k || predicted >= self.k {
            return Err(Error::contract(format!(
                "class pair ({truth}, {predicted}) outside {} classes",
                self.k
            )));
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }
}

/// Multi-class accuracy, `trace / total`; zero for an empty matrix.
pub fn mca(c: &Confusion) -> f64 {
    match c.total() {
        0 => 0.0,
        total => c.trace() as f64 / total as f64,
    }
}

/// Mean per-class recall. Classes absent from the evaluated set are left
/// out of the mean, with a warning.
pub fn mpca(c: &Confusion) -> f64 {
    let mut sum = 0.0;
    let mut present = 0;
    for i in 0..c.classes() {
        let row: u64 = c.row(i).iter().sum();
        if row == 0 {
            log::warn!("class {i} has no samples; left out of MPCA");
            continue;
        }
        sum += c.get(i, i) as f64 / row as f64;
        present += 1;
    }
    if present == 0 {
        0.0
    } else {
        sum / present as f64
    }
}

/// One row of the per-epoch metrics CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Absent for variants without a discriminator.
    pub d_loss: Option<f64>,
    pub g_loss: f64,
    /// Present on evaluation epochs.
    pub mca: Option<f64>,
    pub mpca: Option<f64>,
}

pub const CSV_HEADER: &str = "epoch,d_loss,g_loss,mca,mpca";

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            cell(r.d_loss),
            r.g_loss,
            cell(r.mca),
            cell(r.mpca)
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub confusion: Confusion,
    pub mca: f64,
    pub mpca: f64,
    pub history: Vec<EpochRecord>,
}

impl MetricsReport {
    pub fn new(confusion: Confusion, history: Vec<EpochRecord>) -> Self {
        Self {
            mca: mca(&confusion),
            mpca: mpca(&confusion),
            confusion,
            history,
        }
    }

    pub fn csv(&self) -> String {
        history_csv(&self.history)
    }

    /// Plain-text summary: one `key value` pair per line, then the
    /// confusion matrix rows.
    pub fn summary(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "run {title}");
        let _ = writeln!(out, "samples {}", self.confusion.total());
        let _ = writeln!(out, "mca {}", self.mca);
        let _ = writeln!(out, "mpca {}", self.mpca);
        let _ = writeln!(out, "confusion {}", self.confusion.classes());
        for i in 0..self.confusion.classes() {
            let row: Vec<String> = self.confusion.row(i).iter().map(u64::to_string).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn c(rows: &[&[u64]]) -> Confusion {
        Confusion::from_rows(rows).unwrap()
    }

    #[test]
    fn hand_computed_matrices() {
        let m = c(&[&[2, 0], &[1, 1]]);
        assert!((mca(&m) - 0.75).abs() < 1e-12);
        assert!((mpca(&m) - 0.75).abs() < 1e-12);

        let m = c(&[&[8, 2], &[0, 0]]);
        assert!((mca(&m) - 0.8).abs() < 1e-12);
        assert!((mpca(&m) - 0.8).abs() < 1e-12);

        let m = c(&[&[3, 0, 0], &[0, 3, 0], &[0, 0, 3]]);
        assert_eq!((mca(&m), mpca(&m)), (1.0, 1.0));

        let m = c(&[&[70, 0, 0, 0], &[10, 0, 0, 0], &[10, 0, 0, 0], &[10, 0, 0, 0]]);
        assert!((mca(&m) - 0.7).abs() < 1e-12);
        assert!((mpca(&m) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn empty_matrix_scores_zero() {
        let m = Confusion::new(3);
        assert_eq!((mca(&m), mpca(&m)), (0.0, 0.0));
    }

    #[test]
    fn predictions_fill_rows_by_truth() {
        let m = Confusion::from_predictions(&[0, 0, 1, 2], &[0, 1, 1, 1], 3).unwrap();
        assert_eq!(m.row(0), &[1, 1, 0]);
        assert_eq!(m.row(2), &[0, 1, 0]);
        assert_eq!(m.total(), 4);
        assert!(Confusion::from_predictions(&[3], &[0], 3).is_err());
    }

    #[test]
    fn csv_leaves_missing_cells_empty() {
        let h = vec![EpochRecord {
            epoch: 0,
            d_loss: None,
            g_loss: 0.5,
            mca: Some(1.0),
            mpca: None,
        }];
        assert_eq!(history_csv(&h), "epoch,d_loss,g_loss,mca,mpca\n0,,0.5,1,\n");
    }

    proptest! {
        #[test]
        fn metrics_invariant_under_label_permutation(
            counts in proptest::collection::vec(0u64..20, 16),
            shift in 1usize..4,
        ) {
            let k = 4;
            let mut a = Confusion::new(k);
            let mut b = Confusion::new(k);
            let perm = |i: usize| (i + shift) % k;
            for t in 0..k {
                for p in 0..k {
                    a.counts[t * k + p] = counts[t * k + p];
                    b.counts[perm(t) * k + perm(p)] = counts[t * k + p];
                }
            }
            prop_assert!((mca(&a) - mca(&b)).abs() < 1e-12);
            prop_assert!((mpca(&a) - mpca(&b)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&mca(&a)) && (0.0..=1.0).contains(&mpca(&a)));
        }
    }
}
