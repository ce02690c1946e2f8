use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar-valued closure with central
/// finite differences.
///
/// Returns the maximum over every input component of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step <= 1e-2) {
        return Err(Error::Contract(format!("grad_check step {step} outside (0, 1e-2]")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if !v.is_finite() {
            return Err(Error::Numeric(format!("closure returned {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if !tape.value(out).item()?.is_finite() {
        return Err(Error::Numeric("closure output is not finite".into()));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|v| tape.grad(*v).expect("leaf gradient").clone()).collect();

    let mut probe = inputs.to_vec();
    let mut worst: f64 = 0.0;
    for (t, grad) in analytic.iter().enumerate() {
        for i in 0..grad.numel() {
            let orig = probe[t].data()[i];
            probe[t].data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe[t].data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = grad.data()[i];
            if !a.is_finite() {
                return Err(Error::Numeric(format!("analytic gradient {a}")));
            }
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
