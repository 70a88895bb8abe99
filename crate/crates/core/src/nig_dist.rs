//! Inverse Gaussian, normal-inverse-Gaussian and generalized inverse Gaussian
//! distributions.
//!
//! `IG(a, b)` has density proportional to `x^{-3/2} exp(−(a x + b/x)/2)` and
//! `GIG(p, a, b)` density proportional to `x^{p−1} exp(−(a x + b/x)/2)`.

use crate::error::{Error, Result};
use crate::special::ln_bessel_k1;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use std::f64::consts::PI;

/// Two-parameter inverse Gaussian law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IgParams {
    pub a: f64,
    pub b: f64,
}

impl IgParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("IG parameters must be positive, got a={a}, b={b}")));
        }
        Ok(Self { a, b })
    }

    /// The mixing law `IG(η, η h²)` with mean `h`.
    pub fn mixing(eta: f64, h: f64) -> Result<Self> {
        Self::new(eta, eta * h * h)
    }

    pub fn mean(&self) -> f64 {
        (self.b / self.a).sqrt()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        0.5 * self.b.ln() - 0.5 * (2.0 * PI).ln() - 1.5 * x.ln() - 0.5 * (self.a * x + self.b / x) + (self.a * self.b).sqrt()
    }
}

/// Draws from `IG(a, b)` by the Michael–Schucany–Haas transformation.
pub fn ig_sample<R: Rng + ?Sized>(p: &IgParams, rng: &mut R) -> f64 {
    let m = p.mean();
    let lambda = p.b;
    let z: f64 = rng.sample(StandardNormal);
    let y = z * z;
    let my = m * y;
    let x = m + m * my / (2.0 * lambda) - m / (2.0 * lambda) * (4.0 * lambda * my + my * my).sqrt();
    let u: f64 = rng.random();
    if u <= m / (m + x) {
        x
    } else {
        m * m / x
    }
}

/// Density of `γ + v μ + √v z` with `v ~ IG(η, η)` and `z ~ N(0, 1)`.
pub fn nig_density(x: f64, mu: f64, eta: f64, gamma: f64) -> f64 {
    nig_ln_density(x, mu, eta, gamma).exp()
}

pub fn nig_ln_density(x: f64, mu: f64, eta: f64, gamma: f64) -> f64 {
    let d = x - gamma;
    let q = eta + d * d;
    eta + mu * d + 0.5 * (eta * mu * mu + eta * eta).ln() - PI.ln() - 0.5 * q.ln()
        + ln_bessel_k1((q * (mu * mu + eta)).sqrt())
}

/// Draws `γ + v μ + √v z` with `v ~ IG(η, η)`.
pub fn nig_sample<R: Rng + ?Sized>(mu: f64, eta: f64, gamma: f64, rng: &mut R) -> f64 {
    let v = ig_sample(&IgParams { a: eta, b: eta }, rng);
    let z: f64 = rng.sample(StandardNormal);
    gamma + v * mu + v.sqrt() * z
}

/// Generalized inverse Gaussian law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GigParams {
    pub p: f64,
    pub a: f64,
    pub b: f64,
}

impl GigParams {
    pub fn new(p: f64, a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() && p.is_finite()) {
            return Err(Error::InvalidParameter(format!("GIG parameters invalid: p={p}, a={a}, b={b}")));
        }
        Ok(Self { p, a, b })
    }

    /// Unnormalized log density.
    pub fn ln_kernel(&self, x: f64) -> f64 {
        (self.p - 1.0) * x.ln() - 0.5 * (self.a * x + self.b / x)
    }
}

const ZTOL: f64 = 10.0 * f64::EPSILON;

fn gig_mode(lambda: f64, omega: f64) -> f64 {
    if lambda >= 1.0 {
        (((lambda - 1.0) * (lambda - 1.0) + omega * omega).sqrt() + (lambda - 1.0)) / omega
    } else {
        omega / (((1.0 - lambda) * (1.0 - lambda) + omega * omega).sqrt() + (1.0 - lambda))
    }
}

/// Ratio-of-uniforms without mode shift.
fn rou_noshift<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = gig_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    let ym = ((lambda + 1.0) + ((lambda + 1.0) * (lambda + 1.0) + omega * omega).sqrt()) / omega;
    let um = (0.5 * (lambda + 1.0) * ym.ln() - s * (ym + 1.0 / ym) - nc).exp();
    loop {
        let u = um * rng.random::<f64>();
        let v: f64 = rng.random();
        let x = u / v;
        if v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

/// Ratio-of-uniforms with mode shift; the bounding rectangle comes from the
/// roots of a cubic (trigonometric form of Cardano's formula).
fn rou_shift<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let t = 0.5 * (lambda - 1.0);
    let s = 0.25 * omega;
    let xm = gig_mode(lambda, omega);
    let nc = t * xm.ln() - s * (xm + 1.0 / xm);
    let a = -(2.0 * (lambda + 1.0) / omega + xm);
    let b = 2.0 * (lambda - 1.0) * xm / omega - 1.0;
    let c = xm;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let fi = (-q / (2.0 * (-(p * p * p) / 27.0).sqrt())).acos();
    let fak = 2.0 * (-p / 3.0).sqrt();
    let y1 = fak * (fi / 3.0).cos() - a / 3.0;
    let y2 = fak * (fi / 3.0 + 4.0 / 3.0 * PI).cos() - a / 3.0;
    let uplus = (y1 - xm) * (t * y1.ln() - s * (y1 + 1.0 / y1) - nc).exp();
    let uminus = (y2 - xm) * (t * y2.ln() - s * (y2 + 1.0 / y2) - nc).exp();
    loop {
        let u = uminus + rng.random::<f64>() * (uplus - uminus);
        let v: f64 = rng.random();
        let x = u / v + xm;
        if x > 0.0 && v.ln() <= t * x.ln() - s * (x + 1.0 / x) - nc {
            return x;
        }
    }
}

/// Three-piece hat for `0 ≤ λ < 1` and small `ω`.
fn concave_hat<R: Rng + ?Sized>(lambda: f64, omega: f64, rng: &mut R) -> f64 {
    let xm = gig_mode(lambda, omega);
    let x0 = omega / (1.0 - lambda);
    let k0 = ((lambda - 1.0) * xm.ln() - 0.5 * omega * (xm + 1.0 / xm)).exp();
    let area0 = k0 * x0;
    let (k1, area1, k2, area2);
    if x0 >= 2.0 / omega {
        k1 = 0.0;
        area1 = 0.0;
        k2 = x0.powf(lambda - 1.0);
        area2 = k2 * 2.0 * (-omega * x0 / 2.0).exp() / omega;
    } else {
        k1 = (-omega).exp();
        area1 = if lambda == 0.0 {
            k1 * (2.0 / (omega * omega)).ln()
        } else {
            k1 / lambda * ((2.0 / omega).powf(lambda) - x0.powf(lambda))
        };
        k2 = (2.0 / omega).powf(lambda - 1.0);
        area2 = k2 * 2.0 * (-1.0f64).exp() / omega;
    }
    let total = area0 + area1 + area2;
    loop {
        let mut v = total * rng.random::<f64>();
        let (x, hx);
        if v <= area0 {
            x = x0 * v / area0;
            hx = k0;
        } else {
            v -= area0;
            if v <= area1 {
                if lambda == 0.0 {
                    x = omega * (omega.exp() * v).exp();
                    hx = k1 / x;
                } else {
                    x = (x0.powf(lambda) + lambda / k1 * v).powf(1.0 / lambda);
                    hx = k1 * x.powf(lambda - 1.0);
                }
            } else {
                v -= area1;
                let a = x0.max(2.0 / omega);
                x = -2.0 / omega * ((-omega / 2.0 * a).exp() - omega / (2.0 * k2) * v).ln();
                hx = k2 * (-omega / 2.0 * x).exp();
            }
        }
        let u = rng.random::<f64>() * hx;
        if u.ln() <= (lambda - 1.0) * x.ln() - omega / 2.0 * (x + 1.0 / x) {
            return x;
        }
    }
}

/// Draws from `GIG(p, a, b)` (Hörmann–Leydold).
pub fn gig_sample<R: Rng + ?Sized>(params: &GigParams, rng: &mut R) -> f64 {
    let GigParams { p, a, b } = *params;
    let omega = (a * b).sqrt();
    let alpha = (b / a).sqrt();
    if omega < ZTOL {
        // gamma or inverse-gamma limit
        return if p > 0.0 {
            Gamma::new(p, 2.0 / a).expect("positive shape").sample(rng)
        } else {
            1.0 / Gamma::new(-p, 2.0 / b).expect("positive shape").sample(rng)
        };
    }
    let lambda = p.abs();
    let x = if lambda > 2.0 || omega > 3.0 {
        rou_shift(lambda, omega, rng)
    } else if lambda >= 1.0 - 2.25 * omega * omega || omega > 0.2 {
        rou_noshift(lambda, omega, rng)
    } else {
        concave_hat(lambda, omega, rng)
    };
    if p < 0.0 {
        alpha / x
    } else {
        alpha * x
    }
}
