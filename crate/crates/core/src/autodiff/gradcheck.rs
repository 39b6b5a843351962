use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Central-difference gradient check at `f64`.
///
/// Returns `max |analytic − numeric| / max(1, |analytic|)` over every
/// coordinate of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_with(f, params, epsilon)
}

/// [`grad_check`] at any precision.
pub fn grad_check_with<S, F>(f: F, params: &[Tensor<S>], epsilon: f64) -> Result<f64>
where
    S: Real,
    F: Fn(&mut Tape<S>, &[Var]) -> Result<Var>,
{
    for p in params {
        if !p.is_finite() {
            return Err(Error::NonFinite("grad_check parameter".into()));
        }
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<S>> = vars.iter().map(|&v| tape.grad_or_zero(v)).collect();

    let eval = |perturbed: &[Tensor<S>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss).item().to_f64_lossy();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<S>> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for i in 0..p.len() {
            let orig = p.data()[i];
            work[pi].data_mut()[i] = orig + S::lit(epsilon);
            let plus = eval(&work)?;
            work[pi].data_mut()[i] = orig - S::lit(epsilon);
            let minus = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            // actual step after rounding to S
            let h = (orig + S::lit(epsilon)).to_f64_lossy() - (orig - S::lit(epsilon)).to_f64_lossy();
            let numeric = (plus - minus) / h;
            let a = analytic[pi][i].to_f64_lossy();
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Checks an `f32` backward pass against central differences taken at `f64`
/// on the same (f32-rounded) point. `f32_graph` and `f64_graph` must build
/// the same function.
pub fn grad_check_f32<F, G>(f32_graph: F, f64_graph: G, params: &[Tensor<f64>], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f32>, &[Var]) -> Result<Var>,
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let low: Vec<Tensor<f32>> = params.iter().map(|p| p.cast()).collect();
    let point: Vec<Tensor<f64>> = low.iter().map(|p| p.cast()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = low.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f32_graph(&mut tape, &vars)?;
    if !tape.value(loss).is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    tape.backward(loss)?;
    let analytic: Vec<Vec<f32>> = vars.iter().map(|&v| tape.grad_or_zero(v)).collect();
    let numeric = numeric_gradient(&f64_graph, &point, epsilon)?;
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().flatten().zip(numeric.iter().flatten()) {
        let a = f64::from(*a);
        worst = worst.max((a - n).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

fn numeric_gradient<G>(f: &G, params: &[Tensor<f64>], epsilon: f64) -> Result<Vec<Vec<f64>>>
where
    G: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check loss".into()));
        }
        Ok(v)
    };
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for (pi, p) in params.iter().enumerate() {
        let mut g = Vec::with_capacity(p.len());
        for i in 0..p.len() {
            let orig = p.data()[i];
            work[pi].data_mut()[i] = orig + epsilon;
            let plus = eval(&work)?;
            work[pi].data_mut()[i] = orig - epsilon;
            let minus = eval(&work)?;
            work[pi].data_mut()[i] = orig;
            g.push((plus - minus) / ((orig + epsilon) - (orig - epsilon)));
        }
        out.push(g);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ops;

    #[test]
    fn quadratic_is_exact() {
        let err = grad_check(
            |tape, p| {
                let sq = ops::mul(tape, p[0], p[0])?;
                Ok(ops::sum(tape, sq))
            },
            &[Tensor::from_vec(vec![3.0])],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let r = grad_check(
            |tape, p| Ok(ops::sum(tape, p[0])),
            &[Tensor::from_vec(vec![f64::NAN])],
            1e-6,
        );
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // an op whose adjoint is deliberately off by a factor of two
        struct Broken;
        impl crate::autodiff::Op<f64> for Broken {
            fn name(&self) -> &'static str {
                "broken"
            }
            fn backward(&self, _: &[&Tensor<f64>], _: &Tensor<f64>, g: &[f64], _: &[bool]) -> Vec<Option<Vec<f64>>> {
                vec![Some(vec![3.0 * g[0]])]
            }
        }
        let err = grad_check(
            |tape, p| {
                let v = tape.value(p[0]).clone();
                Ok(tape.push(Tensor::scalar(v.item()), &[p[0]], Broken))
            },
            &[Tensor::from_vec(vec![1.0])],
            1e-6,
        )
        .unwrap();
        assert!(err > 0.5);
    }
}
