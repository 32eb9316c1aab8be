//! Relational instance-discrimination loss.
//!
//! Student and teacher embeddings are compared against the same set of
//! mined embeddings; each similarity profile goes through a temperature
//! softmax and the loss is `KL(p_student || p_teacher)`. The teacher side is
//! a constant target.

use super::cosine;
use crate::error::{Error, Result};
use crate::numeric::{self, log_softmax};

fn check(mined: &[Vec<f64>], tau_s: f64, tau_t: f64) -> Result<()> {
    if mined.is_empty() {
        return Err(Error::invalid("at least one mined embedding is required"));
    }
    if tau_s <= 0.0 || tau_t <= 0.0 {
        return Err(Error::invalid("temperatures must be positive"));
    }
    Ok(())
}

pub fn instance_discrimination_loss(
    student: &[f64],
    teacher: &[f64],
    mined: &[Vec<f64>],
    tau_s: f64,
    tau_t: f64,
) -> Result<f64> {
    instance_discrimination_loss_with_grad(student, teacher, mined, tau_s, tau_t).map(|(l, _)| l)
}

/// Loss and gradient with respect to the raw student embedding.
pub fn instance_discrimination_loss_with_grad(
    student: &[f64],
    teacher: &[f64],
    mined: &[Vec<f64>],
    tau_s: f64,
    tau_t: f64,
) -> Result<(f64, Vec<f64>)> {
    check(mined, tau_s, tau_t)?;
    let sims_s = mined
        .iter()
        .map(|v| cosine(student, v))
        .collect::<Result<Vec<_>>>()?;
    let sims_t = mined
        .iter()
        .map(|v| cosine(teacher, v))
        .collect::<Result<Vec<_>>>()?;
    let log_ps = log_softmax(&sims_s.iter().map(|s| s / tau_s).collect::<Vec<_>>());
    let log_pt = log_softmax(&sims_t.iter().map(|s| s / tau_t).collect::<Vec<_>>());
    let kl: f64 = log_ps
        .iter()
        .zip(&log_pt)
        .map(|(ls, lt)| ls.exp() * (ls - lt))
        .sum();

    // d KL / d a_n = p_n (log p_n - log q_n - KL), with a_n = sim_n / tau_s
    let norm_w = numeric::norm(student);
    let unit_w: Vec<f64> = student.iter().map(|x| x / norm_w).collect();
    let mut grad = vec![0.0; student.len()];
    for ((v, (ls, lt)), sim) in mined.iter().zip(log_ps.iter().zip(&log_pt)).zip(&sims_s) {
        let d_sim = ls.exp() * (ls - lt - kl) / tau_s;
        let norm_v = numeric::norm(v);
        for (g, (w, x)) in grad.iter_mut().zip(unit_w.iter().zip(v)) {
            *g += d_sim * (x / norm_v - sim * w) / norm_w;
        }
    }
    Ok((kl.max(0.0), grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_give_zero() {
        let w = vec![0.3, -0.2, 0.9];
        let mined = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.5],
            vec![-1.0, 0.2, 0.1],
        ];
        assert!(
            instance_discrimination_loss(&w, &w, &mined, 0.1, 0.1)
                .unwrap()
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn single_mined_view_gives_zero() {
        let l =
            instance_discrimination_loss(&[1.0, 0.0], &[0.0, 1.0], &[vec![1.0, 1.0]], 0.1, 0.01)
                .unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn two_atom_case_matches_scalar_oracle() {
        // sims_s = (1, 0), sims_t = (0, 1)
        let mined = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let got = instance_discrimination_loss(&[1.0, 0.0], &[0.0, 1.0], &mined, 1.0, 1.0).unwrap();
        let e = std::f64::consts::E;
        let p = [e / (e + 1.0), 1.0 / (e + 1.0)];
        let q = [1.0 / (e + 1.0), e / (e + 1.0)];
        let oracle = p[0] * (p[0] / q[0]).ln() + p[1] * (p[1] / q[1]).ln();
        assert!((got - oracle).abs() < 1e-14);
        // the closed form (e - 1)/(e + 1)
        assert!((oracle - (e - 1.0) / (e + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_norm_is_rejected() {
        assert!(instance_discrimination_loss(
            &[0.0, 0.0],
            &[1.0, 0.0],
            &[vec![1.0, 0.0]],
            0.1,
            0.1
        )
        .is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let w1 = vec![0.4, -0.7, 0.2];
        let w2 = vec![0.1, 0.3, -0.9];
        let mined = vec![
            vec![1.0, 0.2, 0.0],
            vec![-0.3, 0.8, 0.4],
            vec![0.2, -0.1, 1.0],
        ];
        let (_, g) = instance_discrimination_loss_with_grad(&w1, &w2, &mined, 0.1, 0.05).unwrap();
        let h = 1e-6;
        for d in 0..3 {
            let mut up = w1.clone();
            up[d] += h;
            let mut dn = w1.clone();
            dn[d] -= h;
            let fd = (instance_discrimination_loss(&up, &w2, &mined, 0.1, 0.05).unwrap()
                - instance_discrimination_loss(&dn, &w2, &mined, 0.1, 0.05).unwrap())
                / (2.0 * h);
            assert!(
                (fd - g[d]).abs() < 1e-6 * fd.abs().max(1.0),
                "{fd} vs {}",
                g[d]
            );
        }
    }
}
