use crate::error::{Error, Result};

/// `teacher <- m * teacher + (1 - m) * student`, elementwise.
pub fn ema_update(teacher: &mut [f64], student: &[f64], momentum: f64) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::invalid(format!(
            "parameter length mismatch: teacher {}, student {}",
            teacher.len(),
            student.len()
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::invalid("momentum must lie in [0, 1)"));
    }
    for (t, s) in teacher.iter_mut().zip(student) {
        *t = momentum * *t + (1.0 - momentum) * s;
    }
    Ok(())
}
