use super::{AutodiffError, Tensor2};

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Relative errors are computed against `max(|analytic|, |numeric|, floor)`.
    pub floor: f64,
    /// How many times the step may be divided by ten when the stencil
    /// straddles a ReLU kink.
    pub max_refinements: u32,
    /// Combine the differences at `h` and `h / 2` as `(4 D(h/2) - D(h)) / 3`,
    /// cancelling the `h^2` truncation term.
    pub richardson: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            floor: 1e-3,
            max_refinements: 4,
            richardson: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: usize,
    pub max_rel_error: f64,
    /// `(tensor, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
    /// Entries whose stencil needed a smaller step to stay on one
    /// linear piece of every ReLU.
    pub refined: usize,
    /// Entries for which no admissible step was found; excluded from
    /// `max_rel_error`.
    pub kinked: usize,
}

/// Compares analytic gradients against central finite differences.
///
/// `eval` re-runs the forward computation from scratch at the given
/// parameter values and returns the loss together with the ReLU sign
/// pattern (see [`super::Graph::relu_pattern`]). A stencil whose
/// endpoints change the pattern crosses a non-differentiable point, so the
/// step is refined until both endpoints agree with the base pattern.
pub fn check_gradients<F>(
    params: &[Tensor2<f64>],
    analytic: &[Tensor2<f64>],
    config: &GradCheckConfig,
    mut eval: F,
) -> Result<GradCheckReport, AutodiffError>
where
    F: FnMut(&[Tensor2<f64>]) -> Result<(f64, Vec<bool>), AutodiffError>,
{
    assert_eq!(params.len(), analytic.len());
    let mut work: Vec<Tensor2<f64>> = params.to_vec();
    let (_, base_pattern) = eval(&work)?;
    let mut report = GradCheckReport::default();

    for (t, grad) in analytic.iter().enumerate() {
        assert_eq!(grad.shape(), params[t].shape());
        for i in 0..params[t].len() {
            let original = params[t].data()[i];
            let mut step = config.step;
            let mut numeric = None;
            for attempt in 0..=config.max_refinements {
                let mut central = |h: f64| -> Result<Option<f64>, AutodiffError> {
                    work[t].data_mut()[i] = original + h;
                    let (plus, plus_pattern) = eval(&work)?;
                    work[t].data_mut()[i] = original - h;
                    let (minus, minus_pattern) = eval(&work)?;
                    work[t].data_mut()[i] = original;
                    Ok((plus_pattern == base_pattern && minus_pattern == base_pattern)
                        .then(|| (plus - minus) / (2.0 * h)))
                };
                let estimate = match central(step)? {
                    Some(d) if config.richardson => central(step / 2.0)?.map(|half| (4.0 * half - d) / 3.0),
                    other => other,
                };
                if let Some(d) = estimate {
                    if attempt > 0 {
                        report.refined += 1;
                    }
                    numeric = Some(d);
                    break;
                }
                step /= 10.0;
            }
            let Some(numeric) = numeric else {
                report.kinked += 1;
                continue;
            };
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(config.floor);
            report.entries += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((t, i, a, numeric));
            }
        }
    }
    Ok(report)
}
