//! Estimators: Rabi and fringe fits, eigenbasis visibility, fidelity bound,
//! correlation values and the CHSH parameter.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{check_range, Error, Result};
use crate::montecarlo::{CountsTable, SettingsCounts};

/// Fitted `P(t) = offset + (amplitude/2)·(1 − cos(ωt)·e^{−t/τ})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RabiFit {
    /// rad/ns
    pub omega: f64,
    pub omega_err: f64,
    /// ns; infinite when no decay is resolved.
    pub decay_time: f64,
    pub amplitude: f64,
    pub offset: f64,
    /// ns
    pub pi_time: f64,
    pub pi_time_err: f64,
    /// Weighted residual norm, √χ².
    pub residual_norm: f64,
}

const RABI_MIN_POINTS: usize = 8;
const LM_MAX_ITER: usize = 200;

struct RabiData<'a> {
    t: &'a [f64],
    y: &'a [f64],
    w: Vec<f64>,
}

/// Parameters `[offset, amplitude, ω, κ]`, with κ = 1/τ.
fn rabi_model(x: &Vector4<f64>, t: f64) -> (f64, Vector4<f64>) {
    let (off, amp, omega, kappa) = (x[0], x[1], x[2], x[3]);
    let e = (-kappa * t).exp();
    let (s, c) = (omega * t).sin_cos();
    let m = off + 0.5 * amp * (1.0 - c * e);
    let grad = Vector4::new(1.0, 0.5 * (1.0 - c * e), 0.5 * amp * t * s * e, 0.5 * amp * c * t * e);
    (m, grad)
}

fn rabi_chi2(d: &RabiData, x: &Vector4<f64>) -> f64 {
    d.t.iter()
        .zip(d.y)
        .zip(&d.w)
        .map(|((&t, &y), &w)| w * (y - rabi_model(x, t).0).powi(2))
        .sum()
}

fn rabi_normal(d: &RabiData, x: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for ((&t, &y), &w) in d.t.iter().zip(d.y).zip(&d.w) {
        let (m, g) = rabi_model(x, t);
        jtj += w * g * g.transpose();
        jtr += w * (y - m) * g;
    }
    (jtj, jtr)
}

/// Best linear part for fixed (ω, κ): `P = c0 + c1·cos(ωt)e^{−κt}`.
fn rabi_linear(d: &RabiData, omega: f64, kappa: f64) -> Option<(Vector4<f64>, f64)> {
    let (mut s00, mut s01, mut s11, mut r0, mut r1) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&t, &y), &w) in d.t.iter().zip(d.y).zip(&d.w) {
        let g = (omega * t).cos() * (-kappa * t).exp();
        s00 += w;
        s01 += w * g;
        s11 += w * g * g;
        r0 += w * y;
        r1 += w * y * g;
    }
    let det = s00 * s11 - s01 * s01;
    if det.abs() < 1e-12 * s00 * s11.max(1e-300) {
        return None;
    }
    let c0 = (s11 * r0 - s01 * r1) / det;
    let c1 = (s00 * r1 - s01 * r0) / det;
    let x = Vector4::new(c0 + c1, -2.0 * c1, omega, kappa);
    Some((x, rabi_chi2(d, &x)))
}

fn levenberg_marquardt(d: &RabiData, mut x: Vector4<f64>) -> Vector4<f64> {
    let mut chi2 = rabi_chi2(d, &x);
    let mut lambda = 1e-3;
    for _ in 0..LM_MAX_ITER {
        let (jtj, jtr) = rabi_normal(d, &x);
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for i in 0..4 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = x + step;
            trial[3] = trial[3].max(0.0);
            let trial_chi2 = rabi_chi2(d, &trial);
            if trial_chi2 <= chi2 {
                let done = chi2 - trial_chi2 <= 1e-14 * chi2.max(1e-300);
                x = trial;
                chi2 = trial_chi2;
                lambda = (lambda / 10.0).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    x
}

fn binomial_weights(p: impl Iterator<Item = f64>, shots: f64) -> Vec<f64> {
    let floor = 1.0 / shots;
    p.map(|p| shots / (p.clamp(0.0, 1.0) * (1.0 - p.clamp(0.0, 1.0))).max(floor)).collect()
}

/// Coarse (ω, κ) grid with the linear part solved exactly at each node,
/// then Levenberg–Marquardt refinement and one reweighting pass with
/// model-based binomial variances.
pub fn fit_rabi(series: &[(f64, f64)], shots_per_point: u64) -> Result<RabiFit> {
    if series.len() < RABI_MIN_POINTS {
        return Err(Error::Fit(format!(
            "Rabi fit needs at least {RABI_MIN_POINTS} points, got {}",
            series.len()
        )));
    }
    if shots_per_point == 0 {
        return Err(Error::Fit("shots per point must be positive".into()));
    }
    if series.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
        return Err(Error::Fit("series contains non-finite values".into()));
    }
    let mut pts = series.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let t: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let span = t[t.len() - 1] - t[0];
    let (ymin, ymax) = y.iter().fold((f64::MAX, f64::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if ymax - ymin < 1e-12 {
        return Err(Error::Fit(format!("constant series (value {ymin})")));
    }
    let dt = t.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::MAX, f64::min);
    if span <= 0.0 || dt == f64::MAX {
        return Err(Error::Fit("durations span no interval".into()));
    }

    let shots = shots_per_point as f64;
    let mut data = RabiData { t: &t, y: &y, w: binomial_weights(y.iter().copied(), shots) };

    let omega_min = PI / span;
    let omega_max = PI / dt;
    let n_omega = (20 * t.len()).max(2000);
    let kappas = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0].map(|k| k / span);
    let mut best: Option<(Vector4<f64>, f64)> = None;
    for i in 0..=n_omega {
        let omega = omega_min + (omega_max - omega_min) * i as f64 / n_omega as f64;
        for &kappa in &kappas {
            if let Some((x, chi2)) = rabi_linear(&data, omega, kappa) {
                if best.is_none_or(|(_, b)| chi2 < b) {
                    best = Some((x, chi2));
                }
            }
        }
    }
    let (x0, _) = best.ok_or_else(|| Error::Fit("no grid point admits a linear solution".into()))?;
    let mut x = levenberg_marquardt(&data, x0);
    data.w = binomial_weights(t.iter().map(|&ti| rabi_model(&x, ti).0), shots);
    x = levenberg_marquardt(&data, x);

    let (off, amp, omega, kappa) = (x[0], x[1], x[2].abs(), x[3]);
    if !(omega.is_finite() && amp.is_finite()) || amp.abs() < 1e-9 {
        return Err(Error::Fit(format!("degenerate fit: amplitude {amp}, omega {omega}")));
    }
    if omega * span < TAU * (1.0 - 1e-9) {
        return Err(Error::Fit(format!(
            "series spans {span} ns, less than one fitted period {} ns",
            TAU / omega
        )));
    }
    let (jtj, _) = rabi_normal(&data, &x);
    let cov = jtj
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular normal matrix at the optimum".into()))?;
    let omega_err = cov[(2, 2)].max(0.0).sqrt();
    Ok(RabiFit {
        omega,
        omega_err,
        decay_time: if kappa > 0.0 { 1.0 / kappa } else { f64::INFINITY },
        amplitude: amp,
        offset: off,
        pi_time: PI / omega,
        pi_time_err: PI * omega_err / (omega * omega),
        residual_norm: rabi_chi2(&data, &x).sqrt(),
    })
}

/// Fitted `C(φ) = C0·(1 + V cos(φ − φ0))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFit {
    pub visibility: f64,
    pub visibility_err: f64,
    pub phase_offset: f64,
    pub mean: f64,
    /// Visibility of the complementary series, fitted independently.
    pub complement_visibility: f64,
    pub complement_visibility_err: f64,
    /// Complementary series agrees in V within 3σ and is shifted by π.
    pub complement_consistent: bool,
}

struct Sinusoid {
    v: f64,
    v_err: f64,
    phase: f64,
    mean: f64,
}

/// Linear least squares on `a + b cos φ + c sin φ` with Poisson weights,
/// iterated so the weights come from the model rather than the data.
fn fit_sinusoid(phases: &[f64], counts: &[f64]) -> Result<Sinusoid> {
    let design = |p: f64| Vector3::new(1.0, p.cos(), p.sin());
    let mut coef = Vector3::zeros();
    let mut cov = Matrix3::zeros();
    let mut var: Vec<f64> = counts.iter().map(|&c| c.max(1.0)).collect();
    for _ in 0..3 {
        let mut xtx = Matrix3::zeros();
        let mut xty = Vector3::zeros();
        for ((&p, &c), &v) in phases.iter().zip(counts).zip(&var) {
            let d = design(p);
            xtx += d * d.transpose() / v;
            xty += d * c / v;
        }
        cov = xtx.try_inverse().ok_or_else(|| Error::Fit("degenerate phase grid".into()))?;
        coef = cov * xty;
        var = phases.iter().map(|&p| design(p).dot(&coef).max(1.0)).collect();
    }
    let (a, b, c) = (coef[0], coef[1], coef[2]);
    if a.is_nan() || a <= 0.0 {
        return Err(Error::Fit(format!("nonpositive mean level {a}")));
    }
    let r = b.hypot(c);
    let v_err = if r > 0.0 {
        let g = Vector3::new(-r / (a * a), b / (r * a), c / (r * a));
        (g.transpose() * cov * g)[(0, 0)].max(0.0).sqrt()
    } else {
        ((cov[(1, 1)] + cov[(2, 2)]) / 2.0).max(0.0).sqrt() / a
    };
    Ok(Sinusoid { v: (r / a).clamp(0.0, 1.0), v_err, phase: c.atan2(b).rem_euclid(TAU), mean: a })
}

/// Fits the first count series; the second is the complementary port.
pub fn fit_fringe(series: &[(f64, u64, u64)]) -> Result<FringeFit> {
    let n = series.len();
    if n < 5 {
        return Err(Error::Fit(format!("fringe fit needs at least 5 phases, got {n}")));
    }
    let phases: Vec<f64> = series.iter().map(|s| s.0).collect();
    let lo = phases.iter().copied().fold(f64::MAX, f64::min);
    let hi = phases.iter().copied().fold(f64::MIN, f64::max);
    // Evenly spaced grids stop one step short of 2π.
    if (hi - lo) * (n as f64) / ((n - 1) as f64) < TAU - 1e-9 {
        return Err(Error::Fit(format!("phase grid covers {:.3} rad, less than 2π", hi - lo)));
    }
    let plus: Vec<f64> = series.iter().map(|s| s.1 as f64).collect();
    let minus: Vec<f64> = series.iter().map(|s| s.2 as f64).collect();
    if plus.iter().all(|&c| c == 0.0) {
        return Err(Error::Fit("fringe series has no counts".into()));
    }
    let p = fit_sinusoid(&phases, &plus)?;
    let (cv, cv_err, consistent) = match fit_sinusoid(&phases, &minus) {
        Ok(m) => {
            let tol = 3.0 * p.v_err.hypot(m.v_err);
            let shift = (m.phase - p.phase - PI).rem_euclid(TAU);
            let shift = shift.min(TAU - shift);
            let phase_ok = p.v < tol || shift < 3.0 * (p.v_err / p.v.max(1e-12) + m.v_err / m.v.max(1e-12)) + 1e-9;
            (m.v, m.v_err, (p.v - m.v).abs() <= tol + 1e-12 && phase_ok)
        }
        Err(_) => (0.0, 0.0, false),
    };
    Ok(FringeFit {
        visibility: p.v,
        visibility_err: p.v_err,
        phase_offset: p.phase,
        mean: p.mean,
        complement_visibility: cv,
        complement_visibility_err: cv_err,
        complement_consistent: consistent,
    })
}

/// Eigenbasis visibility, from pooled counts and from a constant-level fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenVisibility {
    pub direct: f64,
    pub direct_err: f64,
    pub fit: f64,
    pub fit_err: f64,
}

/// `|(par − cross)/(par + cross)|` over a flat series of (parallel, cross)
/// coincidence counts.
pub fn eigenbasis_visibility(series: &[(u64, u64)]) -> Result<EigenVisibility> {
    let par: u64 = series.iter().map(|s| s.0).sum();
    let cross: u64 = series.iter().map(|s| s.1).sum();
    let n = (par + cross) as f64;
    if n == 0.0 {
        return Err(Error::Estimator("no eigenbasis coincidences".into()));
    }
    let direct = (par as f64 - cross as f64) / n;
    let direct_err = ((1.0 - direct * direct) / n).max(0.0).sqrt();

    // Inverse-variance (Poisson) weighted level of each series.
    let level = |f: fn(&(u64, u64)) -> u64| -> (f64, f64) {
        let (mut sw, mut swy) = (0.0, 0.0);
        for s in series {
            let y = f(s) as f64;
            let w = 1.0 / y.max(1.0);
            sw += w;
            swy += w * y;
        }
        (swy / sw, (1.0 / sw).sqrt())
    };
    let (p, sp) = level(|s| s.0);
    let (c, sc) = level(|s| s.1);
    let fit = (p - c) / (p + c);
    let fit_err = 2.0 * (c * sp).hypot(p * sc) / (p + c).powi(2);
    Ok(EigenVisibility { direct: direct.abs(), direct_err, fit: fit.abs(), fit_err })
}

/// `(1 + V1 + 2·V2)/4`.
pub fn fidelity_bound(v1: f64, v2: f64) -> Result<f64> {
    check_range("V1", v1, 0.0, 1.0)?;
    check_range("V2", v2, 0.0, 1.0)?;
    Ok((1.0 + v1 + 2.0 * v2) / 4.0)
}

/// Fidelity bound with `σ_F = √(σ_V1² + 4σ_V2²)/4`.
pub fn fidelity_bound_with_errors(v1: f64, s1: f64, v2: f64, s2: f64) -> Result<(f64, f64)> {
    Ok((fidelity_bound(v1, v2)?, (s1 * s1 + 4.0 * s2 * s2).sqrt() / 4.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub e: f64,
    pub sigma: f64,
    pub coincidences: u64,
}

/// `(N_par − N_cross)/(N_par + N_cross)` over click-click events, with
/// binomial `σ_E = √((1 − E²)/N)`.
pub fn correlation_e(counts: &SettingsCounts) -> Result<(f64, f64)> {
    let (par, cross) = (counts.parallel() as f64, counts.cross() as f64);
    let n = par + cross;
    if n == 0.0 {
        return Err(Error::Estimator("no coincidences for this settings pair".into()));
    }
    let e = (par - cross) / n;
    Ok((e, ((1.0 - e * e) / n).max(0.0).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellResult {
    /// In the order (α,β), (α*,β), (α,β*), (α*,β*).
    pub correlations: Vec<Correlation>,
    pub s: f64,
    pub sigma_s: f64,
    pub violation_sigmas: f64,
}

/// `S = |E(α,β) + E(α*,β) + E(α,β*) − E(α*,β*)|`, `σ_S = √Σσ_E²`.
pub fn chsh_s(e: &[(f64, f64)]) -> Result<BellResult> {
    let e: &[(f64, f64); 4] = e
        .try_into()
        .map_err(|_| Error::Estimator(format!("CHSH needs four correlations, got {}", e.len())))?;
    let s = (e[0].0 + e[1].0 + e[2].0 - e[3].0).abs();
    let sigma_s = e.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
    let violation_sigmas = if sigma_s > 0.0 { (s - 2.0) / sigma_s } else { f64::NAN };
    let correlations = e
        .iter()
        .map(|&(e, sigma)| Correlation { alpha_deg: f64::NAN, beta_deg: f64::NAN, e, sigma, coincidences: 0 })
        .collect();
    Ok(BellResult { correlations, s, sigma_s, violation_sigmas })
}

/// Angles of a CHSH measurement, degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChshAngles {
    pub alpha: f64,
    pub alpha_star: f64,
    pub beta: f64,
    pub beta_star: f64,
}

impl ChshAngles {
    pub const CANONICAL: ChshAngles = ChshAngles { alpha: 22.5, alpha_star: 67.5, beta: 45.0, beta_star: 0.0 };

    /// (α,β), (α*,β), (α,β*), (α*,β*).
    pub fn pairs(&self) -> [(f64, f64); 4] {
        [
            (self.alpha, self.beta),
            (self.alpha_star, self.beta),
            (self.alpha, self.beta_star),
            (self.alpha_star, self.beta_star),
        ]
    }
}

/// Looks up the four settings pairs in `table` by angle and evaluates S.
pub fn chsh_from_counts(table: &CountsTable, angles: &ChshAngles) -> Result<BellResult> {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let mut correlations = Vec::with_capacity(4);
    for (alpha, beta) in angles.pairs() {
        let entry = table
            .entries
            .iter()
            .find(|e| close(e.settings.0.theta, alpha.to_radians()) && close(e.settings.1.theta, beta.to_radians()))
            .ok_or_else(|| Error::Estimator(format!("missing CHSH setting ({alpha}°, {beta}°)")))?;
        let (e, sigma) = correlation_e(entry)?;
        correlations.push(Correlation {
            alpha_deg: alpha,
            beta_deg: beta,
            e,
            sigma,
            coincidences: entry.parallel() + entry.cross(),
        });
    }
    let es: Vec<(f64, f64)> = correlations.iter().map(|c| (c.e, c.sigma)).collect();
    let mut result = chsh_s(&es)?;
    result.correlations = correlations;
    Ok(result)
}
