use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tape, Var};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
    pub loss: f64,
}

const REL_FLOOR: f64 = 1e-8;

/// Compares tape gradients of `loss` against central finite differences
/// with step `h`, coordinate by coordinate over every parameter in `params`.
///
/// `loss` must bind parameters through [`Tape::param`] and return a
/// one-element node. Parameters are restored bit-exactly afterwards.
pub fn grad_check<P, F>(params: &mut P, mut loss: F, h: f64) -> Result<GradCheckReport>
where
    P: ParamSet + ?Sized,
    F: FnMut(&P, &mut Tape) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Domain(format!("finite-difference step {h:e} outside [1e-6, 1e-4]")));
    }
    let mut tape = Tape::new();
    let root = loss(params, &mut tape)?;
    let base = tape.scalar(root);
    if !base.is_finite() {
        return Err(Error::Instability(format!("loss is {base} at the check point")));
    }
    let grads = tape.backward(root)?;
    let analytic: HashMap<String, Vec<f64>> = grads
        .params()
        .filter_map(|(n, g)| g.map(|g| (n.to_string(), g.to_vec())))
        .collect();
    drop(tape);

    let mut layout = Vec::new();
    params.for_each_param(&mut |n, t| layout.push((n.to_string(), t.len())));

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
        loss: base,
    };
    for (name, len) in &layout {
        for idx in 0..*len {
            let original = coordinate(params, name, idx);
            set_coordinate(params, name, idx, original + h);
            let plus = eval(params, &mut loss);
            set_coordinate(params, name, idx, original - h);
            let minus = eval(params, &mut loss);
            set_coordinate(params, name, idx, original);
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Instability(format!(
                    "non-finite loss perturbing {name}[{idx}]"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(name).map_or(0.0, |g| g[idx]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), idx));
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}

fn eval<P, F>(params: &P, loss: &mut F) -> Result<f64>
where
    P: ParamSet + ?Sized,
    F: FnMut(&P, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::inference();
    let root = loss(params, &mut tape)?;
    Ok(tape.scalar(root))
}

fn coordinate<P: ParamSet + ?Sized>(params: &P, name: &str, idx: usize) -> f64 {
    let mut out = f64::NAN;
    params.for_each_param(&mut |n, t| {
        if n == name {
            out = t.values()[idx];
        }
    });
    out
}

fn set_coordinate<P: ParamSet + ?Sized>(params: &mut P, name: &str, idx: usize, value: f64) {
    params.for_each_param_mut(&mut |n, t| {
        if n == name {
            t.values_mut()[idx] = value;
        }
    });
}
