use crate::numkit::DEGENERATE_NORM;

use super::EvalError;

/// An item taking part in retrieval: its id, class and descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalItem {
    pub id: usize,
    pub class: usize,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedQuery {
    pub query_id: usize,
    pub query_class: usize,
    /// Every target id, most similar first.
    pub ranked: Vec<usize>,
    /// Whether the target at each rank shares the query's class.
    pub relevance: Vec<bool>,
}

impl RankedQuery {
    pub fn num_relevant(&self) -> usize {
        self.relevance.iter().filter(|&&r| r).count()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankedRetrievalRun {
    pub queries: Vec<RankedQuery>,
}

impl RankedRetrievalRun {
    /// Builds a run directly from relevance lists (target ids are the
    /// ranks). Handy for exercising the metrics.
    pub fn from_relevance(lists: &[Vec<bool>]) -> Self {
        Self {
            queries: lists
                .iter()
                .enumerate()
                .map(|(i, rel)| RankedQuery {
                    query_id: i,
                    query_class: 0,
                    ranked: (0..rel.len()).collect(),
                    relevance: rel.clone(),
                })
                .collect(),
        }
    }
}

fn unit(features: &[f64], id: usize) -> Result<Vec<f64>, EvalError> {
    let norm = features.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < DEGENERATE_NORM {
        return Err(EvalError::Degenerate { id });
    }
    Ok(features.iter().map(|v| v / norm).collect())
}

/// Ranks all targets for every query by descending cosine similarity; equal
/// similarities are ordered by ascending target id.
pub fn build_run(queries: &[RetrievalItem], targets: &[RetrievalItem]) -> Result<RankedRetrievalRun, EvalError> {
    let dim = queries
        .first()
        .or(targets.first())
        .map(|q| q.features.len())
        .unwrap_or(0);
    let check = |item: &RetrievalItem| {
        if item.features.len() != dim {
            Err(EvalError::Dimension {
                expected: dim,
                got: item.features.len(),
            })
        } else {
            Ok(())
        }
    };
    let target_units = targets
        .iter()
        .map(|t| {
            check(t)?;
            unit(&t.features, t.id)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::with_capacity(queries.len());
    for q in queries {
        check(q)?;
        let qu = unit(&q.features, q.id)?;
        let mut scored: Vec<(f64, usize, usize)> = targets
            .iter()
            .zip(&target_units)
            .map(|(t, tu)| (qu.iter().zip(tu).map(|(a, b)| a * b).sum::<f64>(), t.id, t.class))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        out.push(RankedQuery {
            query_id: q.id,
            query_class: q.class,
            ranked: scored.iter().map(|s| s.1).collect(),
            relevance: scored.iter().map(|s| s.2 == q.class).collect(),
        });
    }
    Ok(RankedRetrievalRun { queries: out })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Fraction of queries whose first-ranked target is relevant.
pub fn nn_metric(run: &RankedRetrievalRun) -> Result<f64, EvalError> {
    if let Some(q) = run.queries.iter().find(|q| q.relevance.is_empty()) {
        return Err(EvalError::Protocol(format!("query {} has no targets", q.query_id)));
    }
    Ok(mean(run.queries.iter().map(|q| if q.relevance[0] { 1.0 } else { 0.0 })))
}

pub fn average_precision(relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    (hits > 0).then(|| total / hits as f64)
}

/// Mean over queries of the average precision at the relevant ranks.
pub fn map_metric(run: &RankedRetrievalRun) -> Result<f64, EvalError> {
    let aps = run
        .queries
        .iter()
        .map(|q| {
            average_precision(&q.relevance).ok_or_else(|| {
                EvalError::Protocol(format!("query {} has no relevant target", q.query_id))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean(aps.into_iter()))
}

/// NDCG over the first `k` ranks with binary gains and a `log2(i+1)`
/// discount. A query with no relevant target scores 0.
pub fn ndcg_at(run: &RankedRetrievalRun, k: usize) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::Protocol("NDCG cutoff must be at least 1".into()));
    }
    Ok(mean(run.queries.iter().map(|q| {
        let dcg: f64 = q
            .relevance
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, &r)| r)
            .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
            .sum();
        let ideal: f64 = (0..q.num_relevant().min(k))
            .map(|i| 1.0 / ((i + 2) as f64).log2())
            .sum();
        if ideal > 0.0 {
            dcg / ideal
        } else {
            0.0
        }
    })))
}

/// Average normalized modified retrieval rank (MPEG-7). 0 is a perfect
/// ranking, 1 places every relevant target beyond the cutoff `K`.
pub fn anmrr(run: &RankedRetrievalRun) -> Result<f64, EvalError> {
    let counts: Vec<usize> = run.queries.iter().map(|q| q.num_relevant()).collect();
    if let Some(pos) = counts.iter().position(|&c| c == 0) {
        return Err(EvalError::Protocol(format!(
            "query {} has no relevant target",
            run.queries[pos].query_id
        )));
    }
    let gtm = counts.iter().copied().max().unwrap_or(0);
    Ok(mean(run.queries.iter().zip(&counts).map(|(q, &ng)| {
        let ng_f = ng as f64;
        let k = (4 * ng).min(2 * gtm) as f64;
        let rank_sum: f64 = q
            .relevance
            .iter()
            .enumerate()
            .filter(|(_, &r)| r)
            .map(|(i, _)| {
                let rank = (i + 1) as f64;
                if rank <= k {
                    rank
                } else {
                    1.25 * k
                }
            })
            .sum();
        let avr = rank_sum / ng_f;
        let mrr = avr - 0.5 - 0.5 * ng_f;
        mrr / (1.25 * k - 0.5 - 0.5 * ng_f)
    })))
}

pub const PR_POINTS: usize = 101;

/// Interpolated precision at recall levels `0, 0.01, …, 1`, averaged over
/// queries. Interpolated precision at `r` is the best precision reached at
/// any cutoff whose recall is at least `r`.
pub fn pr_curve(run: &RankedRetrievalRun) -> Result<Vec<(f64, f64)>, EvalError> {
    let mut sums = vec![0.0; PR_POINTS];
    for q in &run.queries {
        let total = q.num_relevant();
        if total == 0 {
            return Err(EvalError::Protocol(format!(
                "query {} has no relevant target",
                q.query_id
            )));
        }
        // best[h] = best precision among cutoffs with exactly h hits (h ≥ 1)
        let mut best = vec![0.0f64; total + 1];
        let mut hits = 0;
        for (k, &rel) in q.relevance.iter().enumerate() {
            if rel {
                hits += 1;
            }
            best[hits] = best[hits].max(hits as f64 / (k + 1) as f64);
        }
        // suffix max: precision achievable with at least h hits
        for h in (0..total).rev() {
            best[h] = best[h].max(best[h + 1]);
        }
        for (level, sum) in sums.iter_mut().enumerate() {
            // smallest hit count whose recall h/total reaches level/100
            let needed = (level * total).div_ceil(PR_POINTS - 1);
            *sum += best[needed];
        }
    }
    let n = run.queries.len().max(1) as f64;
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(level, s)| (level as f64 / (PR_POINTS - 1) as f64, s / n))
        .collect())
}
