//! Central finite-difference gradient checking.

use super::{NamedTensor, Replay, Tensor};
use crate::error::{Error, Result};

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// Number of scalar parameter entries compared.
    pub checked: usize,
    /// Entries whose relative error reached the tolerance.
    pub failures: usize,
    pub worst_error: f64,
    /// `name[index]` of the entry with the largest relative error.
    pub worst_entry: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checked > 0
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the backward-pass gradient of the scalar `loss` with respect to
/// every entry of every tensor in `params` against
/// `(L(x + h) - L(x - h)) / 2h`.
///
/// Gradients already stored on `params` are cleared first and hold the
/// analytic gradient afterwards.
pub fn check_gradients(
    loss: &Tensor,
    params: &[NamedTensor],
    h: f64,
    tolerance: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let replay = Replay::new(loss);
    compare(loss, params, tolerance, floor, |p, values| {
        let mut numeric = Vec::with_capacity(values.len());
        for (i, &x) in values.iter().enumerate() {
            let plus = replay.eval_with(p, i, x + h)?[0];
            let minus = replay.eval_with(p, i, x - h)?[0];
            numeric.push((plus - minus) / (2.0 * h));
        }
        Ok(numeric)
    })
}

/// A graph built on `blocks` stacked copies of the batch behind the loss
/// being checked, and the loss of one copy computed from its block of
/// `output`.
pub struct Stacked<'a> {
    pub output: &'a Tensor,
    pub blocks: usize,
    pub loss: &'a dyn Fn(&[f64]) -> f64,
}

/// [`check_gradients`] with the finite differences taken on `stacked`, where
/// each pass evaluates `blocks / 2` entries at once: copy `2j` sees entry
/// `i_j` at `x + h` and copy `2j + 1` sees it at `x - h`.
///
/// Every parameter must meet the conditions of [`Replay::eval_blocks`].
pub fn check_gradients_stacked(
    loss: &Tensor,
    stacked: &Stacked,
    params: &[NamedTensor],
    h: f64,
    tolerance: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    if stacked.blocks < 2 {
        return Err(Error::InvalidConfig("stacked gradient check needs at least two copies".into()));
    }
    let replay = Replay::new(stacked.output);
    let per_pass = stacked.blocks / 2;
    compare(loss, params, tolerance, floor, |p, values| {
        let mut numeric = Vec::with_capacity(values.len());
        for start in (0..values.len()).step_by(per_pass) {
            let end = (start + per_pass).min(values.len());
            let edits: Vec<(usize, f64)> = (start..end)
                .flat_map(|i| [(i, values[i] + h), (i, values[i] - h)])
                .collect();
            let outputs = replay.eval_blocks(p, stacked.blocks, &edits)?;
            for pair in outputs.chunks(2) {
                numeric.push(((stacked.loss)(&pair[0]) - (stacked.loss)(&pair[1])) / (2.0 * h));
            }
        }
        Ok(numeric)
    })
}

fn compare(
    loss: &Tensor,
    params: &[NamedTensor],
    tolerance: f64,
    floor: f64,
    mut numeric: impl FnMut(&Tensor, &[f64]) -> Result<Vec<f64>>,
) -> Result<GradCheckReport> {
    for (_, p) in params {
        p.zero_grad();
    }
    loss.backward()?;
    let mut report = GradCheckReport::default();
    for (name, p) in params {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.numel()]);
        let numeric = numeric(p, &p.to_vec())?;
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let err = relative_error(a, n, floor);
            report.checked += 1;
            if err >= tolerance {
                report.failures += 1;
            }
            if err > report.worst_error || report.worst_entry.is_empty() {
                report.worst_error = err;
                report.worst_entry = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}
