//! Open-set evaluation: retrieval metrics, Hungarian-matched clustering
//! accuracy and PCA/CSV export of embeddings.

mod hungarian;
mod report;
mod retrieval;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

pub use hungarian::hungarian_max;
pub use report::{EvalReport, Evaluator, DEFAULT_QUERIES_PER_CLASS};
pub use retrieval::{
    anmrr, average_precision, build_run, map_metric, ndcg_at, nn_metric, pr_curve, RankedQuery,
    RankedRetrievalRun, RetrievalItem, PR_POINTS,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("feature of item {id} has zero norm")]
    Degenerate { id: usize },
    #[error("feature dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("{0}")]
    Protocol(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One-to-one mapping from predicted cluster ids to true classes that
/// maximizes agreement.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionAssignment {
    pub mapping: BTreeMap<usize, usize>,
    pub matched: usize,
    pub total: usize,
}

impl ConfusionAssignment {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.matched as f64 / self.total as f64
        }
    }
}

/// Hungarian matching of predictions against true classes. Samples without
/// a prediction, and clusters left unmatched, count as errors.
pub fn match_clusters(predicted: &[Option<usize>], truth: &[usize]) -> Result<ConfusionAssignment, EvalError> {
    if predicted.len() != truth.len() {
        return Err(EvalError::Protocol(format!(
            "{} predictions for {} samples",
            predicted.len(),
            truth.len()
        )));
    }
    let mut pred_ids: Vec<usize> = predicted.iter().flatten().copied().collect();
    pred_ids.sort_unstable();
    pred_ids.dedup();
    let mut true_ids = truth.to_vec();
    true_ids.sort_unstable();
    true_ids.dedup();
    let pred_index: BTreeMap<usize, usize> = pred_ids.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let true_index: BTreeMap<usize, usize> = true_ids.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    let mut table = vec![vec![0.0; true_ids.len()]; pred_ids.len()];
    for (p, t) in predicted.iter().zip(truth) {
        if let Some(p) = p {
            table[pred_index[p]][true_index[t]] += 1.0;
        }
    }
    let (total, rows) = hungarian_max(&table);
    let mapping = rows
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| (pred_ids[i], true_ids[c])))
        .collect();
    Ok(ConfusionAssignment {
        mapping,
        matched: total.round() as usize,
        total: truth.len(),
    })
}

pub fn ncd_accuracy(predicted: &[Option<usize>], truth: &[usize]) -> Result<f64, EvalError> {
    Ok(match_clusters(predicted, truth)?.accuracy())
}

#[derive(Clone, Debug)]
pub struct PcaProjection {
    /// One row per sample, `dims` coordinates each.
    pub coords: Vec<Vec<f64>>,
    /// Every covariance eigenvalue, largest first.
    pub eigenvalues: Vec<f64>,
    /// Principal directions (unit vectors) actually used.
    pub components: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Set when the covariance has fewer than `dims` non-negligible
    /// directions; the missing coordinates are zero.
    pub rank_warning: Option<String>,
}

/// Projects centered rows onto the top `dims` eigenvectors of the covariance
/// `XᵀX / n`.
pub fn pca_project(features: &[Vec<f64>], dims: usize) -> Result<PcaProjection, EvalError> {
    let n = features.len();
    if dims == 0 || n < dims {
        return Err(EvalError::Protocol(format!("{n} samples cannot give {dims} components")));
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(EvalError::Dimension {
            expected: d,
            got: bad.len(),
        });
    }
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| features[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();

    let scale = eigenvalues.first().copied().unwrap_or(0.0).max(1.0);
    let tol = 1e-12 * scale;
    let usable = eigenvalues.iter().take(dims).filter(|&&v| v > tol).count();
    let rank_warning = (usable < dims).then(|| {
        format!("covariance has rank {usable} below the requested {dims} components; zero-filled")
    });
    let components: Vec<Vec<f64>> = order
        .iter()
        .take(usable)
        .map(|&i| {
            let col = eig.eigenvectors.column(i);
            // fix the sign so the largest-magnitude entry is positive
            let pivot = (0..d)
                .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
                .unwrap_or(0);
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            col.iter().map(|v| v * sign).collect()
        })
        .collect();
    let coords = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = components
                .iter()
                .map(|c| (0..d).map(|j| centered[(i, j)] * c[j]).sum())
                .collect();
            row.resize(dims, 0.0);
            row
        })
        .collect();
    Ok(PcaProjection {
        coords,
        eigenvalues,
        components,
        mean,
        rank_warning,
    })
}

/// Mean squared distance between centered rows and their reconstruction
/// from the projection.
pub fn reconstruction_error(features: &[Vec<f64>], pca: &PcaProjection) -> f64 {
    let n = features.len().max(1) as f64;
    features
        .iter()
        .zip(&pca.coords)
        .map(|(f, c)| {
            f.iter()
                .enumerate()
                .map(|(j, v)| {
                    let back: f64 = pca.components.iter().zip(c).map(|(comp, a)| comp[j] * a).sum();
                    let r = v - pca.mean[j] - back;
                    r * r
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

/// Formats with 6 significant digits, `%g` style.
pub fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// CSV of `id,c0,c1,…,label`; a missing label is written as -1.
pub fn embeddings_csv(ids: &[usize], coords: &[Vec<f64>], labels: &[Option<usize>]) -> Result<String, EvalError> {
    if ids.len() != coords.len() || ids.len() != labels.len() {
        return Err(EvalError::Protocol("ids, coordinates and labels differ in length".into()));
    }
    let dims = coords.first().map_or(0, |c| c.len());
    let mut out = String::from("id");
    for k in 0..dims {
        write!(out, ",c{k}").unwrap();
    }
    out.push_str(",label\n");
    for ((id, row), label) in ids.iter().zip(coords).zip(labels) {
        if row.len() != dims {
            return Err(EvalError::Dimension {
                expected: dims,
                got: row.len(),
            });
        }
        write!(out, "{id}").unwrap();
        for v in row {
            write!(out, ",{}", fmt_sig6(*v)).unwrap();
        }
        match label {
            Some(l) => writeln!(out, ",{l}").unwrap(),
            None => out.push_str(",-1\n"),
        }
    }
    Ok(out)
}

pub fn export_embeddings(
    path: &Path,
    ids: &[usize],
    coords: &[Vec<f64>],
    labels: &[Option<usize>],
) -> Result<(), EvalError> {
    let text = embeddings_csv(ids, coords, labels)?;
    crate::datagen::write_atomic(path, text.as_bytes())?;
    Ok(())
}

pub fn pr_curve_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("recall,precision\n");
    for (r, p) in points {
        writeln!(out, "{},{}", fmt_sig6(*r), fmt_sig6(*p)).unwrap();
    }
    out
}

/// All retrieval metrics of one run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetrievalSummary {
    pub map: f64,
    pub nn: f64,
    pub ndcg: f64,
    pub anmrr: f64,
}

pub const NDCG_CUTOFF: usize = 100;

pub fn summarize(run: &RankedRetrievalRun) -> Result<RetrievalSummary, EvalError> {
    Ok(RetrievalSummary {
        map: map_metric(run)?,
        nn: nn_metric(run)?,
        ndcg: ndcg_at(run, NDCG_CUTOFF)?,
        anmrr: anmrr(run)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: usize, class: usize, f: &[f64]) -> RetrievalItem {
        RetrievalItem {
            id,
            class,
            features: f.to_vec(),
        }
    }

    #[test]
    fn build_run_ranks_and_ties() {
        let q = [item(100, 0, &[1.0, 0.0])];
        let t = [
            item(3, 1, &[0.0, 1.0]),
            item(2, 0, &[2.0, 0.0]),
            item(1, 0, &[1.0, 1.0]),
            item(0, 1, &[1.0, -1.0]),
        ];
        let run = build_run(&q, &t).unwrap();
        assert_eq!(run.queries[0].ranked, vec![2, 0, 1, 3]);
        assert_eq!(run.queries[0].relevance, vec![true, false, true, false]);
        let z = [item(9, 0, &[0.0, 0.0])];
        assert!(matches!(build_run(&z, &t), Err(EvalError::Degenerate { id: 9 })));
        let bad = [item(9, 0, &[1.0])];
        assert!(matches!(build_run(&bad, &t), Err(EvalError::Dimension { .. })));
    }

    #[test]
    fn metric_examples() {
        let run = RankedRetrievalRun::from_relevance(&[vec![true, false, true]]);
        assert!((map_metric(&run).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        let pr = pr_curve(&run).unwrap();
        assert_eq!(pr.len(), 101);
        assert!((pr[100].1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pr[50].1, 1.0);

        let run = RankedRetrievalRun::from_relevance(&[vec![false, true]]);
        assert!((ndcg_at(&run, 2).unwrap() - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((ndcg_at(&run, 2).unwrap() - 0.630930).abs() < 1e-6);
        assert_eq!(ndcg_at(&run, 1).unwrap(), 0.0);

        let run = RankedRetrievalRun::from_relevance(&[vec![true, false], vec![false, true]]);
        assert_eq!(nn_metric(&run).unwrap(), 0.5);

        let single = RankedRetrievalRun::from_relevance(&[vec![false, false, false, true, false]]);
        assert!((map_metric(&single).unwrap() - 0.25).abs() < 1e-15);

        let none = RankedRetrievalRun::from_relevance(&[vec![false, false]]);
        assert!(map_metric(&none).is_err());
        assert!(anmrr(&none).is_err());
        assert_eq!(nn_metric(&none).unwrap(), 0.0);
    }

    #[test]
    fn anmrr_extremes() {
        let perfect = RankedRetrievalRun::from_relevance(&[vec![true, true, false, false, false]]);
        assert_eq!(anmrr(&perfect).unwrap(), 0.0);
        // NG = 1, K = min(4, 2) = 2; relevant at rank 3 is beyond K
        let worst = RankedRetrievalRun::from_relevance(&[vec![false, false, true]]);
        assert!((anmrr(&worst).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ncd_accuracy_examples() {
        assert_eq!(
            ncd_accuracy(&[Some(5), Some(5), Some(9), Some(9)], &[0, 0, 1, 1]).unwrap(),
            1.0
        );
        assert_eq!(ncd_accuracy(&[Some(0); 4], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(ncd_accuracy(&[Some(0), None, Some(1), None], &[0, 0, 1, 1]).unwrap(), 0.5);
        assert!(ncd_accuracy(&[Some(0)], &[0, 1]).is_err());
        let m = match_clusters(&[Some(7), Some(7), Some(8)], &[2, 2, 2]).unwrap();
        assert_eq!(m.mapping.len(), 1);
        assert_eq!(m.matched, 2);
    }

    #[test]
    fn pca_axis_aligned() {
        let pts = vec![
            vec![-3.0, 0.0],
            vec![3.0, 0.0],
            vec![0.0, -1.0],
            vec![0.0, 1.0],
            vec![-6.0, 0.0],
            vec![6.0, 0.0],
        ];
        let p = pca_project(&pts, 2).unwrap();
        assert!(p.rank_warning.is_none());
        for (orig, c) in pts.iter().zip(&p.coords) {
            assert!((orig[0].abs() - c[0].abs()).abs() < 1e-9);
            assert!((orig[1].abs() - c[1].abs()).abs() < 1e-9);
        }
        assert!(p.eigenvalues[0] >= p.eigenvalues[1]);
        assert!(reconstruction_error(&pts, &p) < 1e-12);

        let p1 = pca_project(&pts, 1).unwrap();
        assert!((reconstruction_error(&pts, &p1) - p1.eigenvalues[1]).abs() < 1e-8);
    }

    #[test]
    fn pca_rank_deficient() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64, 1.0]).collect();
        let p = pca_project(&pts, 2).unwrap();
        assert!(p.rank_warning.is_some());
        assert!(p.coords.iter().all(|c| c[1] == 0.0));
        assert!(pca_project(&pts[..1], 2).is_err());
    }

    #[test]
    fn sig6_format() {
        assert_eq!(fmt_sig6(0.656), "0.656");
        assert_eq!(fmt_sig6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt_sig6(123456789.0), "1.23457e8");
        assert_eq!(fmt_sig6(-2.5e-7), "-2.5e-7");
        assert_eq!(fmt_sig6(100.0), "100");
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(999999.5), "1e6");
    }

    #[test]
    fn csv_encodes_missing_label() {
        let s = embeddings_csv(&[0, 1], &[vec![1.0, 2.0], vec![0.5, 0.25]], &[Some(3), None]).unwrap();
        assert_eq!(s, "id,c0,c1,label\n0,1,2,3\n1,0.5,0.25,-1\n");
    }
}
