//! Central finite-difference checks of analytic gradients.

use crate::error::Result;
use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates skipped because a ReLU switched inside the stencil.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Magnitudes below this are compared as absolute errors.
    pub denom_floor: f64,
    /// Denominator floor as a fraction of the largest analytic component.
    pub scale_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            denom_floor: 1e-6,
            scale_floor: 1e-3,
        }
    }
}

/// Compares `analytic` against `(f(p + h e_i) - f(p - h e_i)) / 2h` for each
/// parameter `i`. Coordinates whose `signature` differs between the two
/// stencil points and the base point are skipped, since `f` is not smooth
/// there.
pub fn check_gradient<F, S>(
    params: &ModelParams,
    analytic: &[f64],
    f: F,
    signature: S,
    options: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParams) -> Result<f64>,
    S: Fn(&ModelParams) -> Result<Vec<bool>>,
{
    let all: Vec<usize> = (0..analytic.len()).collect();
    check_gradient_at(params, analytic, &all, f, signature, options)
}

/// Like [`check_gradient`], restricted to the flat indices in `coords`.
pub fn check_gradient_at<F, S>(
    params: &ModelParams,
    analytic: &[f64],
    coords: &[usize],
    f: F,
    signature: S,
    options: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&ModelParams) -> Result<f64>,
    S: Fn(&ModelParams) -> Result<Vec<bool>>,
{
    let base = params.to_flat();
    let base_sig = signature(params)?;
    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst_index: None,
    };
    let h = options.step;
    let scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let floor = options.denom_floor.max(options.scale_floor * scale);
    for &i in coords {
        flat[i] = base[i] + h;
        probe.set_flat(&flat);
        let sig_plus = signature(&probe)?;
        let plus = f(&probe)?;
        flat[i] = base[i] - h;
        probe.set_flat(&flat);
        let sig_minus = signature(&probe)?;
        let minus = f(&probe)?;
        flat[i] = base[i];
        if sig_plus != base_sig || sig_minus != base_sig {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(floor);
        let rel = (analytic[i] - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}
