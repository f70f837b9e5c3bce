//! Schedules and the end-to-end pipeline (filled in by the sweep stage).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// The power-law schedule for a given `p`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Schedule {
    pub n: usize,
    pub p: u64,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub rho: Vec<f64>,
    pub eps: Vec<f64>,
    pub eps_bar: Vec<f64>,
    pub beta: f64,
    pub gamma_p: f64,
}

/// Largest admissible collar radius for the cube (strictly below 1/2).
pub const COLLAR_MAX: f64 = 0.45;

pub fn schedule(n: usize, p: u64, alpha: f64) -> Result<Schedule> {
    let p0 = p0(n, alpha);
    if p < p0 {
        return Err(Error::BelowP0 { p, p0, n, alpha });
    }
    Ok(schedule_unchecked(n, p, alpha))
}

fn schedule_unchecked(n: usize, p: u64, alpha: f64) -> Schedule {
    let k = n - 2;
    let pf = p as f64;
    let alpha_prime = 2.0 * alpha / ((n - 1) as f64 * (n - 2) as f64);
    let base = -((n - 1) as f64) / n as f64;
    let mut rho = vec![pf.powf(base)];
    let mut eps = vec![pf.powf(base + alpha_prime / 3.0)];
    let mut eps_bar = vec![pf.powf(base + 2.0 * alpha_prime / 3.0)];
    for _ in 1..k {
        let f = pf.powf(-alpha_prime);
        rho.push(rho.last().unwrap() * f);
        eps.push(eps.last().unwrap() * f);
        eps_bar.push(eps_bar.last().unwrap() * f);
    }
    let one_plus_beta: f64 = (0..k).map(|l| 1.0 / (1.0 - eps[l] / eps_bar[l])).product();
    let beta = one_plus_beta - 1.0;
    let gamma_p =
        beta + ((n - 1) as f64 * (n - 2) as f64 / 2.0) * pf.powf(-alpha_prime / 2.0);
    Schedule { n, p, alpha, alpha_prime, rho, eps, eps_bar, beta, gamma_p }
}

/// Least p making the interleaving strict and the collar depth admissible.
pub fn p0(n: usize, alpha: f64) -> u64 {
    for p in 2..=1_000_000u64 {
        let s = schedule_unchecked(n, p, alpha);
        if s.eps_bar[0] < COLLAR_MAX && interleaved(&s) {
            return p;
        }
    }
    1_000_000
}

pub fn interleaved(s: &Schedule) -> bool {
    let mut seq = Vec::new();
    for l in 0..s.rho.len() {
        seq.push(s.eps_bar[l]);
        seq.push(s.eps[l]);
        seq.push(s.rho[l]);
    }
    seq.windows(2).all(|w| w[0] > w[1]) && *seq.last().unwrap() > 0.0
}

/// Measured per-level ratio rho_l / eps_l (reported next to gamma_p).
pub fn measured_rho_over_eps(s: &Schedule) -> Vec<f64> {
    s.rho.iter().zip(&s.eps).map(|(r, e)| r / e).collect()
}
