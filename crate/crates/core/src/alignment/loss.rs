use crate::error::{Error, Result};
use crate::numerics::{ops, Tape, Tensor, Var};

pub const TAU_MIN: f64 = 0.01;
pub const TAU_MAX: f64 = 1.0;
const UNIT_TOL: f64 = 1e-6;

fn check_inputs(zv: &Tensor, zt: &Tensor, c: &[f64]) -> Result<usize> {
    if zv.rank() != 2 || zv.shape() != zt.shape() {
        return Err(Error::dimension("contrastive_loss", zv.shape(), zt.shape()));
    }
    let b = zv.shape()[0];
    if c.len() != b {
        return Err(Error::dimension("contrastive_loss weights", &[c.len()], &[b]));
    }
    for (name, z) in [("vision", zv), ("text", zt)] {
        for i in 0..b {
            let n = ops::dot(z.row(i), z.row(i)).sqrt();
            if (n - 1.0).abs() > UNIT_TOL {
                return Err(Error::Contract(format!("{name} row {i} has norm {n}")));
            }
        }
    }
    if let Some(bad) = c.iter().find(|&&x| !(x > 0.0 && x <= 1.0)) {
        return Err(Error::Contract(format!("confidence {bad} outside (0, 1]")));
    }
    Ok(b)
}

/// Confidence-weighted bidirectional InfoNCE over unit rows.
pub fn contrastive_loss(zv: &Tensor, zt: &Tensor, c: &[f64], tau: f64) -> Result<f64> {
    let b = check_inputs(zv, zt, c)?;
    if !(TAU_MIN..=TAU_MAX).contains(&tau) {
        return Err(Error::Contract(format!("temperature {tau} outside [{TAU_MIN}, {TAU_MAX}]")));
    }
    let sim = ops::matmul_nt(zv, zt)?;
    let scaled: Vec<f64> = sim.values().iter().map(|s| s / tau).collect();
    let mut total = 0.0;
    for i in 0..b {
        let mut row: Vec<f64> = scaled[i * b..(i + 1) * b].to_vec();
        let mut col: Vec<f64> = (0..b).map(|j| scaled[j * b + i]).collect();
        ops::log_softmax_in_place(&mut row);
        ops::log_softmax_in_place(&mut col);
        total += -c[i] * (row[i] + col[i]);
    }
    Ok(total / (2 * b) as f64)
}

/// Tape version; `log_tau` is a one-element node, clamped after `exp`.
pub fn contrastive_loss_tape(tape: &mut Tape, zv: Var, zt: Var, c: &[f64], log_tau: Var) -> Result<Var> {
    let b = check_inputs(tape.value(zv), tape.value(zt), c)?;
    let tau = tape.exp(log_tau);
    let tau = tape.clamp(tau, TAU_MIN, TAU_MAX);
    let sim = tape.matmul_nt(zv, zt)?;
    let sim = tape.div_scalar(sim, tau)?;
    let rows = tape.log_softmax(sim)?;
    let rows = tape.diag(rows)?;
    let simt = tape.transpose(sim)?;
    let cols = tape.log_softmax(simt)?;
    let cols = tape.diag(cols)?;
    let w: Vec<f64> = c.iter().map(|ci| -ci / (2 * b) as f64).collect();
    let l_vt = tape.weighted_sum(rows, &w)?;
    let l_tv = tape.weighted_sum(cols, &w)?;
    tape.add(l_vt, l_tv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        let e = Tensor::identity(2);
        let full = contrastive_loss(&e, &e, &[1.0, 1.0], 1.0).unwrap();
        let expected = (1.0 + (-1f64).exp()).ln();
        assert!((full - expected).abs() < 1e-12);
        let half = contrastive_loss(&e, &e, &[0.5, 0.5], 1.0).unwrap();
        assert!((half - full / 2.0).abs() < 1e-15);
        let one = Tensor::matrix(1, 2, vec![0.6, 0.8]).unwrap();
        assert_eq!(contrastive_loss(&one, &one, &[1.0], 0.07).unwrap(), 0.0);
    }

    #[test]
    fn contract_violations() {
        let e = Tensor::identity(2);
        let bad = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(contrastive_loss(&bad, &e, &[1.0, 1.0], 0.5), Err(Error::Contract(_))));
        assert!(matches!(contrastive_loss(&e, &e, &[0.0, 1.0], 0.5), Err(Error::Contract(_))));
        assert!(matches!(contrastive_loss(&e, &e, &[1.0, 1.1], 0.5), Err(Error::Contract(_))));
        assert!(contrastive_loss(&e, &e, &[1.0, 1.0], 2.0).is_err());
    }

    #[test]
    fn tape_matches_plain() {
        let zv = Tensor::matrix(2, 2, vec![0.6, 0.8, 0.0, 1.0]).unwrap();
        let zt = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.8, 0.6]).unwrap();
        let c = [0.3, 0.9];
        let plain = contrastive_loss(&zv, &zt, &c, 0.2).unwrap();
        let mut tape = Tape::inference();
        let (a, b) = (tape.constant(zv), tape.constant(zt));
        let lt = tape.constant(Tensor::scalar(0.2f64.ln()));
        let l = contrastive_loss_tape(&mut tape, a, b, &c, lt).unwrap();
        assert!((tape.scalar(l) - plain).abs() < 1e-12);
    }
}
