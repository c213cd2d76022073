//! Bidirectional stepwise selection driven by AIC.
//!
//! Every iteration scores all single-variable additions and removals
//! against the current model and applies the one with the lowest AIC,
//! stopping once no move lowers it. Candidate scores come from rank-one
//! updates of the current QR factorization; an accepted move is then
//! refitted from scratch and recorded in the trace.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::linalg::{center_columns, column_means, pivoted_qr, DEPENDENCE_TOL};
use super::ols::{fit_ols, OlsOptions};
use super::stats::{null_fit, selection_aic, total_sum_of_squares};
use crate::error::{HvsError, Result};
use crate::model::{MoveAction, SelectionResult, Stage, TraceEntry};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepwiseStart {
    /// Intercept-only model.
    #[default]
    Null,
    /// All candidates (dependent ones excluded).
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepwiseConfig {
    pub start: StepwiseStart,
    /// Upper bound on selected variables, on top of the `n > k + 2` rule.
    pub max_terms: Option<usize>,
}

/// Terms (intercept included) a model may have for `n` rows: additions
/// must leave `n > k + 2`.
pub fn term_limit(n: usize) -> usize {
    n.saturating_sub(3)
}

struct Current {
    selected: Vec<usize>,
    rss: f64,
    aic: f64,
}

#[derive(Clone, Debug)]
struct Move {
    action: MoveAction,
    col: usize,
    aic: f64,
}

fn better(a: &Move, b: &Move, ids: &[String]) -> bool {
    match a.aic.partial_cmp(&b.aic) {
        Some(std::cmp::Ordering::Less) => true,
        Some(std::cmp::Ordering::Equal) => ids[a.col] < ids[b.col],
        _ => false,
    }
}

pub fn stepwise_aic(
    x: &DMatrix<f64>,
    ids: &[String],
    y: &DVector<f64>,
    cfg: &StepwiseConfig,
    stage: Stage,
) -> Result<SelectionResult> {
    let (n, p) = x.shape();
    if n <= 2 {
        return Err(HvsError::InsufficientObservations { rows: n, cols: 1 });
    }
    if y.len() != n || ids.len() != p {
        return Err(HvsError::DimensionMismatch(format!(
            "{n}×{p} design, {} responses, {} ids",
            y.len(),
            ids.len()
        )));
    }
    let distinct: BTreeSet<&String> = ids.iter().collect();
    if distinct.len() != ids.len() {
        return Err(HvsError::InvalidInput("candidate ids are not distinct".into()));
    }

    let tss = total_sum_of_squares(y.as_slice());
    if tss <= 0.0 {
        return Ok(SelectionResult {
            stage,
            selected: vec![],
            fit: null_fit(y.as_slice()),
            trace: vec![],
            guard_hit: false,
        });
    }

    let xc = center_columns(x, &column_means(x));
    let yc = y.add_scalar(-y.mean());
    let col_norms: Vec<f64> = xc.column_iter().map(|c| c.norm()).collect();
    let limit = term_limit(n);
    let max_vars = cfg.max_terms.unwrap_or(usize::MAX);

    let initial: Vec<usize> = match cfg.start {
        StepwiseStart::Null => vec![],
        StepwiseStart::Full => {
            if p + 1 > limit {
                return Err(HvsError::InsufficientObservations { rows: n, cols: p + 1 });
            }
            let qr = pivoted_qr(&xc);
            let mut keep = qr.independent().to_vec();
            keep.sort_unstable();
            keep
        }
    };

    let evaluate = |sel: &[usize]| -> f64 {
        if sel.is_empty() {
            return tss;
        }
        let sub = xc.select_columns(sel);
        let qr = pivoted_qr(&sub);
        let fitted = &qr.q * (qr.q.transpose() * &yc);
        (&yc - fitted).norm_squared()
    };

    let rss0 = evaluate(&initial);
    let mut cur = Current {
        aic: selection_aic(n, initial.len() + 1, rss0, tss),
        selected: initial,
        rss: rss0,
    };
    let mut trace = Vec::new();
    let mut guard_hit = false;

    loop {
        let k = cur.selected.len() + 1;
        let sub = xc.select_columns(&cur.selected);
        let qr = pivoted_qr(&sub);
        let resid = if cur.selected.is_empty() {
            yc.clone()
        } else {
            &yc - &qr.q * (qr.q.transpose() * &yc)
        };

        let mut best: Option<Move> = None;
        let mut best_blocked: Option<f64> = None;
        let add_allowed = k < limit && cur.selected.len() < max_vars;
        let in_model: BTreeSet<usize> = cur.selected.iter().copied().collect();

        for j in (0..p).filter(|j| !in_model.contains(j)) {
            if col_norms[j] == 0.0 {
                continue;
            }
            let xj = xc.column(j);
            let orth = if cur.selected.is_empty() {
                xj.clone_owned()
            } else {
                let proj = qr.q.transpose() * xj;
                xj - &qr.q * proj
            };
            let on = orth.norm();
            if on <= DEPENDENCE_TOL * col_norms[j] {
                continue;
            }
            let gain = resid.dot(&xj).powi(2) / (on * on);
            let rss = (cur.rss - gain).max(0.0);
            let aic = selection_aic(n, k + 1, rss, tss);
            if !add_allowed {
                if best_blocked.is_none_or(|b| aic < b) {
                    best_blocked = Some(aic);
                }
                continue;
            }
            let mv = Move {
                action: MoveAction::Add,
                col: j,
                aic,
            };
            if best.as_ref().is_none_or(|b| better(&mv, b, ids)) {
                best = Some(mv);
            }
        }

        if !cur.selected.is_empty() {
            let beta = qr.solve(&yc);
            let diag = qr.inverse_gram_diagonal();
            for (pos, &local) in qr.independent().iter().enumerate() {
                let col = cur.selected[local];
                let rss = cur.rss + beta[local].powi(2) / diag[pos];
                let aic = selection_aic(n, k - 1, rss, tss);
                let mv = Move {
                    action: MoveAction::Drop,
                    col,
                    aic,
                };
                if best.as_ref().is_none_or(|b| better(&mv, b, ids)) {
                    best = Some(mv);
                }
            }
        }

        let Some(mv) = best.filter(|m| m.aic < cur.aic) else {
            guard_hit = best_blocked.is_some_and(|b| b < cur.aic);
            break;
        };

        let mut next = cur.selected.clone();
        match mv.action {
            MoveAction::Add => next.push(mv.col),
            MoveAction::Drop => next.retain(|&c| c != mv.col),
        }
        let rss = evaluate(&next);
        let aic = selection_aic(n, next.len() + 1, rss, tss);
        if aic >= cur.aic {
            break;
        }
        trace.push(TraceEntry {
            action: mv.action,
            variable: ids[mv.col].clone(),
            criterion_before: cur.aic,
            criterion_after: aic,
        });
        cur = Current {
            selected: next,
            rss,
            aic,
        };
    }

    let selected_ids: Vec<String> = cur.selected.iter().map(|&j| ids[j].clone()).collect();
    let fit = if cur.selected.is_empty() {
        null_fit(y.as_slice())
    } else {
        let sub = x.select_columns(&cur.selected);
        fit_ols(&sub, y, &selected_ids, OlsOptions::default())?
    };
    Ok(SelectionResult {
        stage,
        selected: selected_ids,
        fit,
        trace,
        guard_hit,
    })
}
