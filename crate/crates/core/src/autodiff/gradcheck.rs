use super::{AutodiffError, Graph, Tensor, Var};

/// Denominator floor in the relative error, so coordinates whose true
/// gradient is zero are judged on absolute error instead.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordError {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub coords: Vec<CoordError>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.coords.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    /// Coordinates whose relative error exceeds the tolerance.
    pub fn failures(&self) -> Vec<&CoordError> {
        self.coords.iter().filter(|c| c.rel_error > self.tolerance).collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F>(f: &F, point: &[Tensor]) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Compares the backward-pass gradient of the scalar function `f` at `point`
/// with the central difference `(f(x+h) - f(x-h)) / 2h`, coordinate by coordinate.
pub fn gradcheck<F>(f: F, point: &[Tensor], step: f64, tolerance: f64) -> Result<GradcheckReport, AutodiffError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
{
    if !(step > 0.0) {
        return Err(AutodiffError::InvalidStep(step));
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut coords = Vec::new();
    let mut probe = point.to_vec();
    for (input, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for index in 0..point[input].len() {
            let x0 = point[input].data()[index];
            probe[input].data_mut()[index] = x0 + step;
            let up = evaluate(&f, &probe)?;
            probe[input].data_mut()[index] = x0 - step;
            let down = evaluate(&f, &probe)?;
            probe[input].data_mut()[index] = x0;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[index];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(AutodiffError::NonFinite { input, index });
            }
            coords.push(CoordError {
                input,
                index,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    Ok(GradcheckReport { coords, tolerance })
}
