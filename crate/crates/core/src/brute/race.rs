//! Sequential test deciding whether a candidate beats the record holder.

use crate::expr::{Arity, OpCode, Param, Token};
use crate::mdl::{dl_real, MdlConfig, INVALID_BITS};

/// Smallest record spread used in the test statistic, in bits.
pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RaceState {
    /// Mean loss of the record holder in bits.
    pub record_medl: f64,
    /// Sample standard deviation of the record holder's per-point loss.
    pub record_sigma: f64,
    /// Rejection threshold in standard errors.
    pub nu: f64,
}

impl RaceState {
    pub fn new(record_medl: f64, record_sigma: f64, nu: f64) -> Self {
        RaceState {
            record_medl,
            record_sigma,
            nu,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.record_sigma.max(SIGMA_FLOOR)
    }

    /// `sqrt(m) (mean - record) / sigma` after `m` points.
    pub fn z(&self, m: usize, mean: f64) -> f64 {
        (m as f64).sqrt() * (mean - self.record_medl) / self.sigma()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RaceOutcome {
    /// Beat the record on all points. Carries the new record's mean and spread.
    Accepted { medl: f64, sigma: f64 },
    Rejected { m_used: usize },
}

/// Races a candidate whose loss at shuffled point `i` is `loss(i)`. Stops
/// as soon as the candidate is significantly worse than the record or
/// invalid at a point; ties with the record are rejected.
pub fn race(n: usize, state: &RaceState, mut loss: impl FnMut(usize) -> f64) -> RaceOutcome {
    let slack = state.nu * state.sigma();
    let mut sum = 0.0;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for i in 0..n {
        let d = loss(i);
        if !d.is_finite() {
            return RaceOutcome::Rejected { m_used: i + 1 };
        }
        sum += d;
        let m = (i + 1) as f64;
        let delta = d - mean;
        mean += delta / m;
        m2 += delta * (d - mean);
        if sum - m * state.record_medl > slack * m.sqrt() {
            return RaceOutcome::Rejected { m_used: i + 1 };
        }
    }
    let medl = sum / n as f64;
    if n > 0 && medl < state.record_medl {
        let sigma = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
        RaceOutcome::Accepted { medl, sigma }
    } else {
        RaceOutcome::Rejected { m_used: n }
    }
}

/// Loss of a value prediction.
#[inline]
pub fn value_loss(target: f64, predicted: f64, mdl: &MdlConfig) -> f64 {
    if predicted.is_nan() {
        return INVALID_BITS;
    }
    dl_real(target - predicted, mdl)
}

/// Loss of a gradient direction against a unit target direction. The sign
/// is ignored; a vanishing or invalid gradient is invalid.
#[inline]
pub fn gradient_loss(unit_target: &[f64], grad: &[f64], mdl: &MdlConfig) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return INVALID_BITS;
    }
    let dot: f64 = unit_target.iter().zip(grad).map(|(a, b)| a * b).sum();
    dl_real(1.0 - (dot / norm).abs(), mdl)
}

#[derive(Clone, Copy, Debug)]
enum Instr {
    Var(u16),
    Const(f64),
    Op(OpCode),
}

/// Flat program for evaluating one candidate point by point.
pub(crate) struct Program {
    code: Vec<Instr>,
    vals: Vec<f64>,
    ders: Vec<f64>,
}

impl Program {
    pub fn new(tokens: impl Iterator<Item = Token>, literals: &[Param]) -> Program {
        let mut p = Program {
            code: Vec::new(),
            vals: Vec::new(),
            ders: Vec::new(),
        };
        p.load(tokens, literals);
        p
    }

    /// Replaces the program, keeping the buffers.
    pub fn load(&mut self, tokens: impl Iterator<Item = Token>, literals: &[Param]) {
        self.code.clear();
        self.code.extend(tokens.map(|t| match t {
            Token::Var(i) => Instr::Var(i),
            Token::Param(j) => Instr::Const(literals[j as usize].value()),
            Token::Op(op) if op.arity() == Arity::Nullary => Instr::Const(op.constant()),
            Token::Op(op) => Instr::Op(op),
        }));
    }

    pub fn value(&mut self, x: &[f64]) -> f64 {
        let s = &mut self.vals;
        s.clear();
        for ins in &self.code {
            let v = match *ins {
                Instr::Var(i) => x[i as usize],
                Instr::Const(c) => c,
                Instr::Op(op) => {
                    if op.arity() == Arity::Unary {
                        let a = s.pop().unwrap();
                        op.apply1(a)
                    } else {
                        let b = s.pop().unwrap();
                        let a = s.pop().unwrap();
                        op.apply2(a, b)
                    }
                }
            };
            if v.is_nan() {
                return f64::NAN;
            }
            s.push(v);
        }
        s[0]
    }

    /// Value and gradient with respect to the first `nv` variables, written
    /// into `grad`. NaN value when anything is invalid or non-finite.
    pub fn value_grad(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        let nv = grad.len();
        self.vals.clear();
        self.ders.clear();
        for ins in &self.code {
            match *ins {
                Instr::Var(i) => {
                    self.vals.push(x[i as usize]);
                    self.ders.extend((0..nv).map(|q| if q == i as usize { 1.0 } else { 0.0 }));
                }
                Instr::Const(c) => {
                    self.vals.push(c);
                    self.ders.extend(std::iter::repeat_n(0.0, nv));
                }
                Instr::Op(op) if op.arity() == Arity::Unary => {
                    let a = *self.vals.last().unwrap();
                    let v = op.apply1(a);
                    if v.is_nan() {
                        return f64::NAN;
                    }
                    let d = op.deriv1(a, v);
                    let at = self.ders.len() - nv;
                    for g in &mut self.ders[at..] {
                        *g *= d;
                        if !g.is_finite() {
                            return f64::NAN;
                        }
                    }
                    *self.vals.last_mut().unwrap() = v;
                }
                Instr::Op(op) => {
                    let b = self.vals.pop().unwrap();
                    let a = self.vals.pop().unwrap();
                    let v = op.apply2(a, b);
                    if v.is_nan() {
                        return f64::NAN;
                    }
                    let bt = self.ders.len() - nv;
                    let at = bt - nv;
                    for q in 0..nv {
                        let (da, db) = (self.ders[at + q], self.ders[bt + q]);
                        let g = match op {
                            OpCode::Add => da + db,
                            OpCode::Sub => da - db,
                            OpCode::Mul => a * db + b * da,
                            _ => (da - v * db) / b,
                        };
                        if !g.is_finite() {
                            return f64::NAN;
                        }
                        self.ders[at + q] = g;
                    }
                    self.ders.truncate(bt);
                    self.vals.push(v);
                }
            }
        }
        grad.copy_from_slice(&self.ders[..nv]);
        self.vals[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn z_example() {
        let s = RaceState::new(0.5, 0.2, 10.0);
        assert_relative_eq!(s.z(4, 1.0), 5.0, epsilon = 1e-12);
        // Four points at 1.0 bits stay below the threshold.
        let out = race(4, &s, |_| 1.0);
        assert_eq!(out, RaceOutcome::Rejected { m_used: 4 });
        let out = race(1000, &s, |_| 1.0);
        assert!(matches!(out, RaceOutcome::Rejected { m_used } if m_used < 1000));
    }

    #[test]
    fn ties_are_rejected() {
        let s = RaceState::new(2.0, 0.5, 10.0);
        assert_eq!(race(50, &s, |_| 2.0), RaceOutcome::Rejected { m_used: 50 });
        let s = RaceState::new(2.0, 0.5, 10.0);
        let RaceOutcome::Accepted { medl, sigma } = race(4, &s, |i| i as f64 * 0.5) else {
            panic!("better candidate rejected");
        };
        assert_relative_eq!(medl, 0.75);
        assert_relative_eq!(sigma, (5.0f64 / 12.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn invalid_point_rejects_immediately() {
        let s = RaceState::new(f64::INFINITY, 0.0, 10.0);
        let out = race(10, &s, |i| if i == 3 { INVALID_BITS } else { 0.0 });
        assert_eq!(out, RaceOutcome::Rejected { m_used: 4 });
    }

    #[test]
    fn point_losses() {
        let cfg = MdlConfig::default();
        assert_eq!(value_loss(2.0, 2.0, &cfg), 0.0);
        assert_relative_eq!(value_loss(1.0, 0.0, &cfg), 30.0, epsilon = 1e-9);
        let t = [1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
        assert!(gradient_loss(&t, &[-3.0, -3.0], &cfg) < 1.0);
        assert_eq!(gradient_loss(&t, &[0.0, 0.0], &cfg), INVALID_BITS);
    }
}
