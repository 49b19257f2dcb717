//! A single categorical choice of the log-linear simulated policy.
//!
//! The logits of a decision are the sum of one or more parameter rows
//! (each `width` wide) plus a sparse constant bias, restricted to an allowed
//! set. Everything else in the simulated policy is built from these.

use smallvec::SmallVec;

pub const MAX_WIDTH: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    /// Offsets into the parameter vector, each the start of a row.
    pub rows: SmallVec<[u32; 6]>,
    pub width: u16,
    /// Bit `j` set iff choice `j` may be taken.
    pub allowed: u128,
    /// Constant logit offsets (hints); not parameters.
    pub bias: SmallVec<[(u16, f64); 4]>,
    pub chosen: u16,
}

impl Decision {
    pub fn new(rows: &[u32], width: usize) -> Self {
        assert!(width > 0 && width <= MAX_WIDTH, "decision width {width} out of range");
        let allowed = if width == MAX_WIDTH {
            u128::MAX
        } else {
            (1u128 << width) - 1
        };
        Self {
            rows: SmallVec::from_slice(rows),
            width: width as u16,
            allowed,
            bias: SmallVec::new(),
            chosen: 0,
        }
    }

    pub fn disallow(&mut self, choice: usize) {
        self.allowed &= !(1u128 << choice);
    }

    /// Restricts choices to `0..=last`.
    pub fn allow_up_to(&mut self, last: usize) {
        if last + 1 < MAX_WIDTH {
            self.allowed &= (1u128 << (last + 1)) - 1;
        }
    }

    pub fn is_allowed(&self, choice: usize) -> bool {
        choice < self.width as usize && self.allowed & (1u128 << choice) != 0
    }

    pub fn add_bias(&mut self, choice: usize, value: f64) {
        self.bias.push((choice as u16, value));
    }

    pub fn with_choice(mut self, choice: usize) -> Self {
        self.chosen = choice as u16;
        self
    }

    /// Writes masked probabilities into `out[..width]` and returns the
    /// log-normalizer over allowed choices.
    pub fn probabilities(&self, theta: &[f64], out: &mut [f64; MAX_WIDTH]) -> f64 {
        let w = self.width as usize;
        out[..w].fill(0.0);
        for &r in &self.rows {
            let r = r as usize;
            for (o, t) in out[..w].iter_mut().zip(&theta[r..r + w]) {
                *o += t;
            }
        }
        for &(j, v) in &self.bias {
            out[j as usize] += v;
        }
        let mut max = f64::NEG_INFINITY;
        for (j, &z) in out[..w].iter().enumerate() {
            if self.allowed & (1u128 << j) != 0 && z > max {
                max = z;
            }
        }
        debug_assert!(max.is_finite(), "decision has no allowed choice");
        let mut total = 0.0;
        for (j, o) in out[..w].iter_mut().enumerate() {
            if self.allowed & (1u128 << j) != 0 {
                *o = (*o - max).exp();
                total += *o;
            } else {
                *o = 0.0;
            }
        }
        for o in &mut out[..w] {
            *o /= total;
        }
        max + total.ln()
    }

    pub fn log_prob(&self, theta: &[f64]) -> f64 {
        let mut buf = [0.0; MAX_WIDTH];
        self.log_prob_with(theta, &mut buf)
    }

    fn log_prob_with(&self, theta: &[f64], buf: &mut [f64; MAX_WIDTH]) -> f64 {
        self.probabilities(theta, buf);
        buf[self.chosen as usize].ln()
    }

    /// Adds `weight * d log pi(chosen) / d theta` into `grad`; returns log pi(chosen).
    pub fn accumulate_grad(&self, theta: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
        let mut p = [0.0; MAX_WIDTH];
        self.probabilities(theta, &mut p);
        let logp = p[self.chosen as usize].ln();
        if weight == 0.0 {
            return logp;
        }
        let w = self.width as usize;
        let c = self.chosen as usize;
        for &r in &self.rows {
            let row = &mut grad[r as usize..r as usize + w];
            for (j, g) in row.iter_mut().enumerate() {
                let indicator = if j == c { 1.0 } else { 0.0 };
                *g += weight * (indicator - p[j]);
            }
        }
        logp
    }

    /// Inverse-CDF sample with uniform `u` in [0, 1); sets `chosen` and
    /// returns its log-probability.
    pub fn sample(&mut self, theta: &[f64], u: f64) -> f64 {
        let mut p = [0.0; MAX_WIDTH];
        self.probabilities(theta, &mut p);
        let w = self.width as usize;
        let mut acc = 0.0;
        let mut pick = None;
        for (j, &pj) in p[..w].iter().enumerate() {
            if self.allowed & (1u128 << j) == 0 {
                continue;
            }
            pick = Some(j);
            acc += pj;
            if u < acc {
                break;
            }
        }
        let j = pick.expect("decision has no allowed choice");
        self.chosen = j as u16;
        p[j].ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_when_zero() {
        let theta = vec![0.0; 4];
        let d = Decision::new(&[0], 4).with_choice(2);
        assert!((d.log_prob(&theta) - (0.25f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_and_mask() {
        let theta = vec![1.0, 0.0, 0.0, 0.5, 0.0, 2.0];
        let mut d = Decision::new(&[0, 3], 3).with_choice(0);
        d.disallow(1);
        // logits: [1.5, -, 2.0]
        let expected = 1.5 - (1.5f64.exp() + 2.0f64.exp()).ln();
        assert!((d.log_prob(&theta) - expected).abs() < 1e-14);
    }

    #[test]
    fn single_choice_has_zero_logprob() {
        let theta = vec![3.0];
        let d = Decision::new(&[0], 1);
        assert_eq!(d.log_prob(&theta), 0.0);
    }

    #[test]
    fn all_mass_on_one_choice() {
        let theta = vec![0.0, 0.0, 0.0];
        let mut d = Decision::new(&[0], 3).with_choice(1);
        d.disallow(0);
        d.disallow(2);
        assert_eq!(d.log_prob(&theta), 0.0);
    }

    #[test]
    fn sampling_respects_mask() {
        let theta = vec![0.0; 5];
        let mut d = Decision::new(&[0], 5);
        d.disallow(4);
        for k in 0..100 {
            d.sample(&theta, k as f64 / 100.0);
            assert!(d.chosen < 4);
        }
    }

    #[test]
    fn bias_shifts_logits() {
        let theta = vec![0.0; 2];
        let mut d = Decision::new(&[0], 2).with_choice(1);
        d.add_bias(1, 2.0f64.ln());
        assert!((d.log_prob(&theta) - (2.0f64 / 3.0).ln()).abs() < 1e-15);
    }
}
