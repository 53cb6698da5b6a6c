//! State ordering and state-transition-matrix extraction.

use super::{IohmmModel, InputVector, Nudge};
use crate::bomi::{slope_angle, TARGETS};

/// Directed slopes of all 12 ordered target pairs, in `(prev, cur)` row-major order.
pub fn directed_slopes() -> Vec<f64> {
    let mut out = Vec::with_capacity(12);
    for a in &TARGETS {
        for b in &TARGETS {
            if a.id != b.id {
                out.push(slope_angle(a, b).expect("distinct targets"));
            }
        }
    }
    out
}

/// Every directed slope crossed with every nudge (72 inputs).
pub fn default_input_grid() -> Vec<InputVector> {
    directed_slopes()
        .into_iter()
        .flat_map(|s| Nudge::all().map(move |n| InputVector::new(s, n)))
        .collect()
}

/// Mean over `grid` of the predicted `RE + SoT` of each state.
pub fn state_scores(model: &IohmmModel, grid: &[InputVector]) -> Vec<f64> {
    (0..model.n_states())
        .map(|i| {
            grid.iter().map(|x| model.emission_mean(i, x).iter().sum::<f64>()).sum::<f64>() / grid.len() as f64
        })
        .collect()
}

/// Ranks states best to worst; entry `r` is the original index of rank `r`.
pub fn order_states(model: &IohmmModel, grid: &[InputVector]) -> Vec<usize> {
    assert!(!grid.is_empty(), "input grid must be non-empty");
    let scores = state_scores(model, grid);
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Transition matrix under one input, rows and columns in `ordering`.
pub fn extract_stm(model: &IohmmModel, slope: f64, nudge: Nudge, ordering: &[usize]) -> Vec<Vec<f64>> {
    let x = InputVector::new(slope, nudge);
    ordering
        .iter()
        .map(|&i| {
            let p = model.transition_probs(i, &x);
            ordering.iter().map(|&j| p[j]).collect()
        })
        .collect()
}
