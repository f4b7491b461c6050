//! Double-double forward pass, the reference for finite differences.
//!
//! A `Dd` is an unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`,
//! giving roughly 32 significant digits. Only the operations the risk
//! needs are provided; errors are absolute (about 1e-31 on values of order
//! one), which is what a difference quotient needs.

use crate::model::{LdpConfig, MoEModel};
use ndarray::{ArrayView1, ArrayView2};
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    let bb = s - a;
    Dd {
        hi: s,
        lo: (a - (s - bb)) + (b - bb),
    }
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd {
        hi: s,
        lo: b - (s - a),
    }
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };
    const LN2: Dd = Dd {
        hi: std::f64::consts::LN_2,
        lo: 2.319_046_813_846_299_6e-17,
    };
    // 2 / sqrt(pi)
    const TWO_OVER_SQRT_PI: Dd = Dd {
        hi: std::f64::consts::FRAC_2_SQRT_PI,
        lo: 1.533_545_961_316_588e-17,
    };

    pub fn from_f64(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn scale_pow2(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    pub fn sqr(self) -> Dd {
        self * self
    }

    pub fn sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::ZERO;
        }
        let s = self.hi.sqrt();
        let r = self - Dd::from_f64(s).sqr();
        quick_two_sum(s, r.hi / (2.0 * s))
    }

    pub fn exp(self) -> Dd {
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / std::f64::consts::LN_2).round();
        let r = (self - Dd::LN2 * Dd::from_f64(k)).scale_pow2(-10);
        // Taylor series of exp(r) - 1 for |r| < 0.0004
        let mut term = r;
        let mut sum = r;
        for n in 2..=14 {
            term = term * r / Dd::from_f64(f64::from(n));
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        // (1 + s)^2 - 1 = s (2 + s), repeated ten times
        for _ in 0..10 {
            sum = sum * (sum + Dd::from_f64(2.0));
        }
        (sum + Dd::ONE).scale_pow2(k as i32)
    }

    pub fn tanh(self) -> Dd {
        if self.hi == 0.0 {
            return Dd::ZERO;
        }
        let t = (Dd::from_f64(-2.0 * self.hi.abs().min(400.0))
            - Dd::from_f64(2.0 * self.lo * self.hi.signum()))
        .exp();
        let mag = (Dd::ONE - t) / (Dd::ONE + t);
        if self.hi < 0.0 {
            -mag
        } else {
            mag
        }
    }

    /// `erf` from the all-positive series
    /// `2/sqrt(pi) exp(-x^2) sum_k 2^k x^(2k+1) / (1*3*...*(2k+1))`.
    pub fn erf(self) -> Dd {
        let ax = if self.hi < 0.0 { -self } else { self };
        if ax.hi > 9.0 {
            return Dd::from_f64(self.hi.signum());
        }
        let x2 = ax.sqr();
        let two_x2 = x2 * Dd::from_f64(2.0);
        let mut term = ax;
        let mut sum = ax;
        let mut k = 0.0;
        while k < 1000.0 {
            k += 1.0;
            term = term * two_x2 / Dd::from_f64(2.0 * k + 1.0);
            sum = sum + term;
            if term.hi < 1e-34 * sum.hi {
                break;
            }
        }
        let v = Dd::TWO_OVER_SQRT_PI * (-x2).exp() * sum;
        if self.hi < 0.0 {
            -v
        } else {
            v
        }
    }

    /// `P(N(0,1) > z) = (1 - erf(z / sqrt 2)) / 2`.
    pub fn normal_upper_tail(self) -> Dd {
        let half_sqrt2 = Dd::from_f64(0.5).sqrt();
        ((Dd::ONE - (self * half_sqrt2).erf()) * Dd::from_f64(0.5)).max_zero()
    }

    fn max_zero(self) -> Dd {
        if self.hi < 0.0 {
            Dd::ZERO
        } else {
            self
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, b: Dd) -> Dd {
        let s = two_sum(self.hi, b.hi);
        let t = two_sum(self.lo, b.lo);
        let u = quick_two_sum(s.hi, s.lo + t.hi);
        quick_two_sum(u.hi, u.lo + t.lo)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, b: Dd) -> Dd {
        let p = self.hi * b.hi;
        let e = self.hi.mul_add(b.hi, -p);
        quick_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from_f64(q2);
        let q3 = r.hi / b.hi;
        quick_two_sum(q1, q2) + Dd::from_f64(q3)
    }
}

fn dot(a: &[Dd], b: &[Dd]) -> Dd {
    a.iter().zip(b).fold(Dd::ZERO, |acc, (&u, &v)| acc + u * v)
}

/// Model parameters promoted to double-double, row-major.
#[derive(Clone)]
pub(crate) struct PreciseModel {
    d: usize,
    n: usize,
    h: usize,
    ldp: LdpConfig,
    pub tensors: [Vec<Dd>; 7],
}

impl PreciseModel {
    pub fn new(model: &MoEModel) -> Self {
        fn lift<'a>(values: impl Iterator<Item = &'a f64>) -> Vec<Dd> {
            values.map(|&v| Dd::from_f64(v)).collect()
        }
        let g = &model.gating;
        PreciseModel {
            d: model.d(),
            n: model.n(),
            h: model.hidden(),
            ldp: model.ldp,
            tensors: [
                lift(model.experts.weights.iter()),
                lift(g.w1.iter()),
                lift(g.b1.iter()),
                lift(g.w2.iter()),
                lift(g.b2.iter()),
                lift(g.w3.iter()),
                lift(g.b3.iter()),
            ],
        }
    }

    /// Sets one scalar to `base + offset` without rounding the sum.
    pub fn set(&mut self, tensor: usize, index: usize, base: f64, offset: f64) {
        self.tensors[tensor][index] = two_sum(base, offset);
    }

    /// Mean gate-weighted probit risk over the rows of `x`.
    pub fn risk(&self, x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> Dd {
        let (d, n, h) = (self.d, self.n, self.h);
        let [experts, w1, b1, w2, b2, w3, b3] = &self.tensors;
        let frob = w3.iter().fold(Dd::ZERO, |acc, &v| acc + v.sqr()).sqrt();
        let mut total = Dd::ZERO;
        let mut xj = vec![Dd::ZERO; d];
        let mut h1 = vec![Dd::ZERO; h];
        let mut f0 = vec![Dd::ZERO; h];
        let mut s = vec![Dd::ZERO; n];
        for (row, &label) in x.rows().into_iter().zip(y.iter()) {
            for (dst, &v) in xj.iter_mut().zip(row.iter()) {
                *dst = Dd::from_f64(v);
            }
            for k in 0..h {
                let a = dot(&w1[k * d..(k + 1) * d], &xj) + b1[k];
                h1[k] = a.max_zero();
            }
            for k in 0..h {
                f0[k] = (dot(&w2[k * h..(k + 1) * h], &h1) + b2[k]).tanh();
            }
            let r = dot(&f0, &f0).sqrt();
            let scale = match self.ldp {
                LdpConfig::Unconstrained => Some(Dd::ONE),
                LdpConfig::Constrained { epsilon } => {
                    if r.hi == 0.0 || frob.hi == 0.0 {
                        None
                    } else {
                        Some(Dd::from_f64(epsilon) / (Dd::from_f64(4.0) * r * frob))
                    }
                }
            };
            for i in 0..n {
                let logit = match scale {
                    Some(c) => c * dot(&w3[i * h..(i + 1) * h], &f0),
                    None => Dd::ZERO,
                };
                s[i] = logit + b3[i];
            }
            let top = s.iter().map(|v| v.hi).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<Dd> = s.iter().map(|&v| (v - Dd::from_f64(top)).exp()).collect();
            let norm = weights.iter().fold(Dd::ZERO, |acc, &v| acc + v);
            let x_norm = dot(&xj, &xj).sqrt();
            let yl = Dd::from_f64(label);
            let mut loss = Dd::ZERO;
            for i in 0..n {
                let z = if x_norm.hi == 0.0 {
                    Dd::ZERO
                } else {
                    yl * dot(&experts[i * d..(i + 1) * d], &xj) / x_norm
                };
                loss = loss + weights[i] * z.normal_upper_tail();
            }
            total = total + loss / norm;
        }
        total / Dd::from_f64(x.nrows() as f64)
    }
}
