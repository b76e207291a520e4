//! Central-finite-difference gradient verification.

use super::{Result, Tape, Tensor, TensorId};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of |analytic − numeric| / max(1, |numeric|)
    pub max_rel_err: f64,
    pub worst_param: usize,
    pub worst_coord: usize,
}

/// Check the analytic gradient of a scalar function against central finite
/// differences with step `h`.
///
/// `build` must construct the same computation every time it is called; it is
/// evaluated once with gradients and `2·numel` more times for the numeric
/// side. Kinked points (hinges at zero, pooling ties) are the caller's
/// responsibility to avoid.
pub fn grad_check<F>(build: F, params: &[Tensor], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    grad_check_configured(build, params, h, |_| {})
}

/// Like [`grad_check`], with a hook run on the analytic tape before the
/// backward pass (used to install deliberate gradient corruption in tests).
pub fn grad_check_configured<F, S>(build: F, params: &[Tensor], h: f64, setup: S) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
    S: FnOnce(&mut Tape),
{
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params
        .iter()
        .map(|p| tape.input(p.clone().with_grad()))
        .collect();
    let loss = build(&mut tape, &ids)?;
    setup(&mut tape);
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| tape.grad_or_zeros(id)).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let ids: Vec<TensorId> = ps.iter().map(|p| t.input(p.clone())).collect();
        let loss = build(&mut t, &ids)?;
        Ok(t.scalar(loss))
    };

    let mut work: Vec<Tensor> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: 0,
        worst_coord: 0,
    };
    for pi in 0..params.len() {
        for ci in 0..params[pi].numel() {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let f_plus = eval(&work)?;
            work[pi].data_mut()[ci] = orig - h;
            let f_minus = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let rel = (analytic[pi][ci] - numeric).abs() / numeric.abs().max(1.0);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_param = pi;
                report.worst_coord = ci;
            }
        }
    }
    Ok(report)
}
