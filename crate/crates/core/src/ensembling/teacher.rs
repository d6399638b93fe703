//! Teacher updates: fixed exponential moving average and the adaptive
//! variant with one trainable smoothing constant per parameter entry.

use crate::autodiff::{Parameter, Tensor};
use crate::error::{Error, Result};

fn check_pair(op: &'static str, a: &Parameter, b: &Parameter) -> Result<()> {
    if a.tensor.shape() != b.tensor.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.tensor.shape().to_vec(),
            rhs: b.tensor.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_sets(op: &'static str, teacher: &[Parameter], student: &[Parameter]) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::Shape {
            op,
            lhs: vec![teacher.len()],
            rhs: vec![student.len()],
        });
    }
    teacher.iter().zip(student).try_for_each(|(t, s)| check_pair(op, t, s))
}

#[inline]
fn blend(c: f64, teacher: f64, student: f64) -> f64 {
    c * teacher + (1.0 - c) * student
}

/// `φ ← α φ + (1 - α) θ` on every array.
pub fn fixed_teacher_update(teacher: &mut [Parameter], student: &[Parameter], alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("alpha", format!("{alpha} is outside [0, 1]")));
    }
    check_sets("fixed_teacher_update", teacher, student)?;
    for (t, s) in teacher.iter_mut().zip(student) {
        for (tv, &sv) in t.tensor.data_mut().iter_mut().zip(s.tensor.data()) {
            *tv = blend(alpha, *tv, sv);
        }
    }
    Ok(())
}

/// `φ ← C ⊙ φ + (1 - C) ⊙ θ` with one constant array per parameter array.
pub fn adaptive_teacher_update(teacher: &mut [Parameter], student: &[Parameter], constants: &[Tensor]) -> Result<()> {
    check_sets("adaptive_teacher_update", teacher, student)?;
    if constants.len() != teacher.len() {
        return Err(Error::Shape {
            op: "adaptive_teacher_update",
            lhs: vec![constants.len()],
            rhs: vec![teacher.len()],
        });
    }
    for ((t, s), c) in teacher.iter_mut().zip(student).zip(constants) {
        if c.shape() != t.tensor.shape() {
            return Err(Error::Shape {
                op: "adaptive_teacher_update",
                lhs: c.shape().to_vec(),
                rhs: t.tensor.shape().to_vec(),
            });
        }
        for ((tv, &sv), &cv) in t.tensor.data_mut().iter_mut().zip(s.tensor.data()).zip(c.data()) {
            *tv = blend(cv, *tv, sv);
        }
    }
    Ok(())
}

/// Per-entry smoothing constants mirroring every teacher array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    pub constants: Vec<Tensor>,
    pub names: Vec<String>,
    pub epsilon: f64,
}

impl AdaptiveState {
    pub fn new(params: &[Parameter], alpha0: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha0) {
            return Err(Error::config("alpha0", format!("{alpha0} is outside [0, 1]")));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::config("epsilon", "must be a finite non-negative number"));
        }
        Ok(Self {
            constants: params.iter().map(|p| Tensor::full(p.tensor.shape(), alpha0)).collect(),
            names: params.iter().map(|p| p.name.clone()).collect(),
            epsilon,
        })
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.constants
            .iter()
            .flat_map(|c| c.data().iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }

    /// One descent step on the constants.
    ///
    /// `teacher_grads[i]` is `∂L/∂φ'` for array `i`, where
    /// `φ' = C ⊙ φ_old + (1 - C) ⊙ θ`, so `∂L/∂C = ∂L/∂φ' ⊙ (φ_old - θ)`.
    /// Entries are clamped to `[0, 1]` afterwards.
    pub fn step(&mut self, teacher_old: &[Parameter], student: &[Parameter], teacher_grads: &[Option<&[f64]>]) -> Result<()> {
        check_sets("adaptive_constant_step", teacher_old, student)?;
        if teacher_grads.len() != self.constants.len() || teacher_old.len() != self.constants.len() {
            return Err(Error::Shape {
                op: "adaptive_constant_step",
                lhs: vec![teacher_grads.len()],
                rhs: vec![self.constants.len()],
            });
        }
        for (i, g) in teacher_grads.iter().enumerate() {
            let g = g.ok_or_else(|| Error::MissingGrad(format!("teacher {}", self.names[i])))?;
            if g.len() != self.constants[i].numel() {
                return Err(Error::Shape {
                    op: "adaptive_constant_step",
                    lhs: self.constants[i].shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
        }
        let eps = self.epsilon;
        for (((c, old), s), g) in self.constants.iter_mut().zip(teacher_old).zip(student).zip(teacher_grads) {
            let g = g.expect("checked above");
            for (((cv, &o), &sv), &gv) in c.data_mut().iter_mut().zip(old.tensor.data()).zip(s.tensor.data()).zip(g) {
                let grad_c = gv * (o - sv);
                *cv = (*cv - eps * grad_c).clamp(0.0, 1.0);
            }
        }
        Ok(())
    }

    /// `∂L/∂C` without applying it; exposed for gradient checks.
    pub fn constant_gradient(teacher_old: &[Parameter], student: &[Parameter], teacher_grads: &[&[f64]]) -> Vec<Vec<f64>> {
        teacher_old
            .iter()
            .zip(student)
            .zip(teacher_grads)
            .map(|((o, s), g)| {
                o.tensor
                    .data()
                    .iter()
                    .zip(s.tensor.data())
                    .zip(g.iter())
                    .map(|((&ov, &sv), &gv)| gv * (ov - sv))
                    .collect()
            })
            .collect()
    }
}
