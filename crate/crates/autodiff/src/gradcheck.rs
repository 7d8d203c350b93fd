//! Finite-difference verification of analytic gradients.

use crate::{AutodiffError, Result, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// (parameter position, flat index) of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates: usize,
}

fn evaluate<F>(f: &F, params: &[Tensor<f64>], requires_grad: bool) -> Result<(Tape<f64>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.leaf(p.shape.clone(), p.values.clone(), requires_grad))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(AutodiffError::NonScalarLoss(tape.shape(out).clone()));
    }
    Ok((tape, vars, out))
}

fn scalar<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, _, out) = evaluate(f, params, false)?;
    let v = tape.value(out)[0];
    if !v.is_finite() {
        return Err(AutodiffError::NonFinite(format!("objective evaluated to {v}")));
    }
    Ok(v)
}

/// Compares the tape's gradient of `f` against the five-point central
/// difference `(−f(θ+2ε) + 8f(θ+ε) − 8f(θ−ε) + f(θ−2ε)) / 12ε` for every
/// coordinate of every parameter.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, vars, out) = evaluate(&f, params, true)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coordinates: 0,
    };
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    for (p, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("leaf gradient").to_vec();
        for i in 0..params[p].values.len() {
            let orig = params[p].values[i];
            let mut at = |k: f64| {
                work[p].values[i] = orig + k * eps;
                scalar(&f, &work)
            };
            let (up2, up, down, down2) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
            work[p].values[i] = orig;

            let numeric = (8.0 * (up - down) - (up2 - down2)) / (12.0 * eps);
            let a = analytic[i];
            if !a.is_finite() {
                return Err(AutodiffError::NonFinite(format!("analytic gradient {a} at ({p}, {i})")));
            }
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.coordinates += 1;
            if rel > report.max_relative_error || report.coordinates == 1 {
                report.max_relative_error = rel;
                report.worst = (p, i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
