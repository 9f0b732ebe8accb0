//! Central finite-difference checks of tape gradients.
//!
//! The error of a parameter block is `max |analytic - numeric| / max(max |numeric|, 1e-6)`:
//! the scale is the block's largest numeric gradient, so entries whose true
//! gradient is zero do not turn round-off into large relative errors. The
//! floor sits well above the round-off of a central difference at ε = 1e-5
//! (about 1e-11 for outputs of order one), so a block whose true gradient
//! vanishes is judged on absolute error.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::system::AtomicSystem;
use crate::tensor::{Tape, Var};
use crate::variants::Model;

pub const DEFAULT_EPSILON: f64 = 1e-5;
const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockError {
    pub name: String,
    pub numel: usize,
    pub max_abs_error: f64,
    pub max_numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub blocks: Vec<BlockError>,
}

impl GradientReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&BlockError> {
        self.blocks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Checks `d f / d params` for a scalar-valued `f` built on the tape.
pub fn check_fn_gradients<F>(params: &ParamStore, f: F, epsilon: f64) -> Result<GradientReport>
where
    F: Fn(&mut Tape, &Bindings) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let b = store.bind_with(&mut tape, false);
        let out = f(&mut tape, &b)?;
        let v = tape.value(out);
        if v.numel() != 1 {
            return Err(Error::NonScalarLoss(v.shape().to_vec()));
        }
        let v = v.data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite("forward value in gradient check".into()));
        }
        Ok(v)
    };
    eval(params)?;

    let mut tape = Tape::new();
    let bindings = params.bind(&mut tape);
    let out = f(&mut tape, &bindings)?;
    tape.backward(out)?;
    let analytic = params.gradients(&tape, &bindings);

    let mut work = params.clone();
    let mut blocks = Vec::new();
    for (name, grad) in &analytic {
        let n = grad.len();
        let mut max_abs: f64 = 0.0;
        let mut max_numeric: f64 = 0.0;
        for i in 0..n {
            let orig = work.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + epsilon;
            let plus = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - epsilon;
            let minus = eval(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            max_abs = max_abs.max((grad[i] - numeric).abs());
            max_numeric = max_numeric.max(numeric.abs());
        }
        blocks.push(BlockError {
            name: name.clone(),
            numel: n,
            max_abs_error: max_abs,
            max_numeric,
            rel_error: max_abs / max_numeric.max(SCALE_FLOOR),
        });
    }
    Ok(GradientReport { blocks })
}

/// Checks the gradient of the model's raw output for `system` with respect to
/// every parameter block.
pub fn check_gradients(model: &Model, system: &AtomicSystem, epsilon: f64) -> Result<GradientReport> {
    if !model.params().iter().all(|(_, t)| t.is_finite()) {
        return Err(Error::NonFinite("model parameters".into()));
    }
    let graph = model.prepare(system)?;
    check_fn_gradients(model.params(), |tape, p| model.forward(tape, p, &[&graph]), epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn linear_one_parameter() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(0.7));
        let report = check_fn_gradients(
            &store,
            |tape, p| {
                let x = tape.constant(Tensor::scalar(3.0));
                tape.mul(p.get("w")?, x)
            },
            DEFAULT_EPSILON,
        )
        .unwrap();
        assert_eq!(report.blocks.len(), 1);
        assert!(report.max_rel_error() < 1e-8, "{report:?}");
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let err = check_fn_gradients(
            &store,
            |tape, p| {
                let w = p.get("w")?;
                Ok(tape.scale(w, f64::INFINITY))
            },
            DEFAULT_EPSILON,
        );
        assert!(err.is_err());
    }
}
