//! Scaling-law fitting over (tokens, error-rate) observations.
//!
//! Three forms are supported:
//!
//! * rectified: `L(D) = B / (D_l + D^β) + E`
//! * marginal:  `L(D) = B / D^β + E`
//! * power law: `L(N, D) = A / N^α + B / D^β + E`
//!
//! All fits minimise the sum of squared residuals of `ln L` with a
//! multi-start Nelder–Mead search over box-constrained parameters. The start
//! grid is fixed, so a fit is a pure function of its input points.

pub mod simplex;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use simplex::{minimize, SimplexOptions};

const BETA_GRID: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
const BETA_MIN: f64 = 1e-9;
const BETA_MAX: f64 = 2.0;
const E_CAP: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub tokens: f64,
    pub error_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<f64>,
}

impl DataPoint {
    pub fn new(tokens: f64, error_rate: f64) -> Self {
        DataPoint { tokens, error_rate, params: None }
    }

    pub fn with_params(tokens: f64, error_rate: f64, params: f64) -> Self {
        DataPoint { tokens, error_rate, params: Some(params) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tokens > 0.0 && self.tokens.is_finite()) {
            return Err(Error::Argument(format!("tokens must be positive, got {}", self.tokens)));
        }
        if !(self.error_rate > 0.0 && self.error_rate < 1.0) {
            return Err(Error::Argument(format!("error_rate must be in (0, 1), got {}", self.error_rate)));
        }
        if let Some(n) = self.params {
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Argument(format!("params must be positive, got {n}")));
            }
        }
        Ok(())
    }
}

/// How the second column of a points file is expressed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PointUnits {
    /// Values are percentages rather than fractions.
    pub percent: bool,
    /// Values are accuracies; error = 1 − accuracy.
    pub accuracy: bool,
}

impl PointUnits {
    pub fn to_error(self, v: f64) -> f64 {
        let v = if self.percent { v / 100.0 } else { v };
        if self.accuracy {
            1.0 - v
        } else {
            v
        }
    }
}

/// Reads points from JSONL (`{"tokens", "error_rate", "params"?}` per line)
/// or CSV with a `tokens,error_rate[,params]` header. The format is chosen by
/// the first non-blank character.
pub fn load_points(path: impl AsRef<Path>, units: PointUnits) -> Result<Vec<DataPoint>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let mut points: Vec<DataPoint> = if text.trim_start().starts_with('{') {
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?);
        }
        out
    } else {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut out = Vec::new();
        for (i, rec) in rdr.deserialize().enumerate() {
            out.push(rec.map_err(|e: csv::Error| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                msg: e.to_string(),
            })?);
        }
        out
    };
    for p in &mut points {
        p.error_rate = units.to_error(p.error_rate);
        p.validate()?;
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectifiedFit {
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "D_l")]
    pub d_l: f64,
    pub beta: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub rmse_log: f64,
    pub n_points: usize,
}

impl RectifiedFit {
    pub fn predict(&self, tokens: f64) -> f64 {
        self.b / (self.d_l + tokens.powf(self.beta)) + self.e
    }

    /// Largest error the curve reaches, approached as tokens → 0.
    pub fn ceiling(&self) -> f64 {
        if self.d_l > 0.0 {
            self.b / self.d_l + self.e
        } else {
            f64::INFINITY
        }
    }

    /// Tokens needed to reach `target_error`:
    /// `D = (B / (target − E) − D_l)^(1/β)`.
    pub fn tokens_for_target(&self, target_error: f64) -> Result<f64> {
        if target_error <= self.e {
            return Err(Error::UnreachableTarget { target: target_error, floor: self.e });
        }
        let max = self.ceiling();
        if target_error >= max {
            return Err(Error::TargetOutOfRange { target: target_error, max });
        }
        Ok((self.b / (target_error - self.e) - self.d_l).powf(1.0 / self.beta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginalFit {
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub rmse_log: f64,
    pub n_points: usize,
}

impl MarginalFit {
    pub fn as_rectified(&self) -> RectifiedFit {
        RectifiedFit {
            b: self.b,
            d_l: 0.0,
            beta: self.beta,
            e: self.e,
            rmse_log: self.rmse_log,
            n_points: self.n_points,
        }
    }

    pub fn predict(&self, tokens: f64) -> f64 {
        self.as_rectified().predict(tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub rmse_log: f64,
    pub n_points: usize,
}

impl PowerLawFit {
    pub fn predict(&self, params: f64, tokens: f64) -> f64 {
        self.a / params.powf(self.alpha) + self.b / tokens.powf(self.beta) + self.e
    }

    /// Tokens needed at model size `params` to reach `target_error`.
    pub fn tokens_for_target(&self, params: f64, target_error: f64) -> Result<f64> {
        let floor = self.e + self.a / params.powf(self.alpha);
        if target_error <= floor {
            return Err(Error::UnreachableTarget { target: target_error, floor });
        }
        Ok((self.b / (target_error - floor)).powf(1.0 / self.beta))
    }
}

fn sq_log_residuals(points: &[DataPoint], f: impl Fn(&DataPoint) -> f64) -> f64 {
    points
        .iter()
        .map(|p| {
            let pred = f(p);
            if pred > 0.0 {
                (p.error_rate.ln() - pred.ln()).powi(2)
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Sum of squared log residuals of a rectified curve.
pub fn rectified_objective(points: &[DataPoint], fit: &RectifiedFit) -> f64 {
    sq_log_residuals(points, |p| fit.predict(p.tokens))
}

fn check_points(points: &[DataPoint], min: usize, what: &str) -> Result<(f64, f64)> {
    if points.len() < min {
        return Err(Error::Argument(format!("{what} fit needs at least {min} points, got {}", points.len())));
    }
    for p in points {
        p.validate()?;
    }
    let first = points[0].tokens;
    if points.iter().all(|p| p.tokens == first) {
        return Err(Error::Argument("token values are all equal".into()));
    }
    let min_l = points.iter().map(|p| p.error_rate).fold(f64::INFINITY, f64::min);
    let min_d = points.iter().map(|p| p.tokens).fold(f64::INFINITY, f64::min);
    Ok((min_l, min_d))
}

fn e_grid(min_l: f64) -> [f64; 3] {
    [0.0, 0.5 * min_l, 0.9 * min_l]
}

struct Bounds {
    e_max: f64,
}

impl Bounds {
    fn beta(&self, x: f64) -> f64 {
        x.clamp(BETA_MIN, BETA_MAX)
    }
    fn e(&self, x: f64) -> f64 {
        x.clamp(0.0, self.e_max)
    }
}

/// Starting parameters for the rectified search, in grid order.
pub fn rectified_starts(points: &[DataPoint]) -> Result<Vec<RectifiedFit>> {
    let (min_l, min_d) = check_points(points, 4, "rectified")?;
    let p0 = points[0];
    let mut out = Vec::new();
    for beta in BETA_GRID {
        for e in e_grid(min_l) {
            for d_l in [0.0, min_d, 10.0 * min_d] {
                let b = (p0.error_rate - e) * (d_l + p0.tokens.powf(beta));
                let mut f = RectifiedFit { b, d_l, beta, e, rmse_log: 0.0, n_points: points.len() };
                f.rmse_log = (rectified_objective(points, &f) / points.len() as f64).sqrt();
                out.push(f);
            }
        }
    }
    Ok(out)
}

/// Runs every start and keeps the lowest objective; earlier starts win ties.
fn best_of<T: Copy>(
    starts: &[Vec<f64>],
    steps: impl Fn(&[f64]) -> Vec<f64>,
    objective: impl Fn(&[f64]) -> f64,
    decode: impl Fn(&[f64]) -> T,
    what: &str,
) -> Result<(T, f64)> {
    let opts = SimplexOptions::default();
    let mut best: Option<(T, f64)> = None;
    let mut any_improved = false;
    for x0 in starts {
        let f0 = objective(x0);
        let r = minimize(&objective, x0, &steps(x0), &opts);
        if r.f < f0 || (f0.is_finite() && r.f <= f0 && r.f == 0.0) {
            any_improved = true;
        }
        if best.as_ref().is_none_or(|(_, bf)| r.f < *bf) {
            best = Some((decode(&r.x), r.f));
        }
    }
    match best {
        Some(b) if any_improved && b.1.is_finite() => Ok(b),
        _ => Err(Error::Fit(format!("{what} fit did not improve on any starting point"))),
    }
}

/// Fits `L(D) = B / (D_l + D^β) + E`.
///
/// The seed is recorded by callers for provenance; the start grid is fixed
/// and the search uses no randomness.
pub fn fit_rectified(points: &[DataPoint]) -> Result<RectifiedFit> {
    let starts = rectified_starts(points)?;
    let (min_l, _) = check_points(points, 4, "rectified")?;
    let bounds = Bounds { e_max: E_CAP * min_l };
    let decode = |x: &[f64]| RectifiedFit {
        b: x[0].exp(),
        d_l: x[1].max(0.0).exp_m1(),
        beta: bounds.beta(x[2]),
        e: bounds.e(x[3]),
        rmse_log: 0.0,
        n_points: points.len(),
    };
    let objective = |x: &[f64]| rectified_objective(points, &decode(x));
    let xs: Vec<Vec<f64>> = starts.iter().map(|s| vec![s.b.ln(), s.d_l.ln_1p(), s.beta, s.e]).collect();
    let steps = |x: &[f64]| vec![1.0, (0.25 * x[1]).max(2.0), 0.05, 0.05 * min_l];
    let (mut fit, obj) = best_of(&xs, steps, objective, decode, "rectified")?;
    fit.rmse_log = (obj / points.len() as f64).sqrt();
    Ok(fit)
}

/// Fits `L(D) = B / D^β + E`.
pub fn fit_marginal(points: &[DataPoint]) -> Result<MarginalFit> {
    let (min_l, _) = check_points(points, 3, "marginal")?;
    let bounds = Bounds { e_max: E_CAP * min_l };
    let p0 = points[0];
    let mut xs = Vec::new();
    for beta in BETA_GRID {
        for e in e_grid(min_l) {
            let b = (p0.error_rate - e) * p0.tokens.powf(beta);
            xs.push(vec![b.ln(), beta, e]);
        }
    }
    let decode = |x: &[f64]| MarginalFit {
        b: x[0].exp(),
        beta: bounds.beta(x[1]),
        e: bounds.e(x[2]),
        rmse_log: 0.0,
        n_points: points.len(),
    };
    let objective = |x: &[f64]| {
        let m = decode(x);
        sq_log_residuals(points, |p| m.predict(p.tokens))
    };
    let steps = |_: &[f64]| vec![1.0, 0.05, 0.05 * min_l];
    let (mut fit, obj) = best_of(&xs, steps, objective, decode, "marginal")?;
    fit.rmse_log = (obj / points.len() as f64).sqrt();
    Ok(fit)
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Fits `L(N, D) = A / N^α + B / D^β + E`. Every point needs `params`.
pub fn fit_powerlaw(points: &[DataPoint]) -> Result<PowerLawFit> {
    let (min_l, _) = check_points(points, 6, "power-law")?;
    if points.iter().any(|p| p.params.is_none()) {
        return Err(Error::Argument("power-law fit needs params on every point".into()));
    }
    let n_of = |p: &DataPoint| p.params.unwrap_or(1.0);
    if distinct(points.iter().map(n_of)) < 2 {
        return Err(Error::Argument("power-law fit needs at least 2 distinct params values".into()));
    }
    if distinct(points.iter().map(|p| p.tokens)) < 3 {
        return Err(Error::Argument("power-law fit needs at least 3 distinct token values".into()));
    }
    let bounds = Bounds { e_max: E_CAP * min_l };
    let p0 = points[0];
    let mut xs = Vec::new();
    for alpha in BETA_GRID {
        for beta in BETA_GRID {
            for e in e_grid(min_l) {
                // split the first point's reducible error evenly between terms
                let half = 0.5 * (p0.error_rate - e);
                let a = half * n_of(&p0).powf(alpha);
                let b = half * p0.tokens.powf(beta);
                xs.push(vec![a.ln(), alpha, b.ln(), beta, e]);
            }
        }
    }
    let decode = |x: &[f64]| PowerLawFit {
        a: x[0].exp(),
        alpha: bounds.beta(x[1]),
        b: x[2].exp(),
        beta: bounds.beta(x[3]),
        e: bounds.e(x[4]),
        rmse_log: 0.0,
        n_points: points.len(),
    };
    let objective = |x: &[f64]| {
        let m = decode(x);
        sq_log_residuals(points, |p| m.predict(n_of(p), p.tokens))
    };
    let steps = |_: &[f64]| vec![1.0, 0.05, 1.0, 0.05, 0.05 * min_l];
    let (mut fit, obj) = best_of(&xs, steps, objective, decode, "power-law")?;
    fit.rmse_log = (obj / points.len() as f64).sqrt();
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fit {
    Rectified(RectifiedFit),
    Marginal(MarginalFit),
    Power(PowerLawFit),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Rectified,
    Marginal,
    Power,
}

/// On-disk representation of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub form: Form,
    pub params: serde_json::Map<String, serde_json::Value>,
    pub rmse_log: f64,
    pub n_points: usize,
    pub seed: u64,
}

fn split_params<T: Serialize>(v: &T) -> Result<(serde_json::Map<String, serde_json::Value>, f64, usize)> {
    let serde_json::Value::Object(mut m) = serde_json::to_value(v)? else {
        unreachable!("fits serialize to objects")
    };
    let rmse = m.remove("rmse_log").and_then(|v| v.as_f64()).unwrap_or(0.0);
    let n = m.remove("n_points").and_then(|v| v.as_u64()).unwrap_or(0) as usize;
    Ok((m, rmse, n))
}

impl Fit {
    pub fn fit(form: Form, points: &[DataPoint]) -> Result<Fit> {
        Ok(match form {
            Form::Rectified => Fit::Rectified(fit_rectified(points)?),
            Form::Marginal => Fit::Marginal(fit_marginal(points)?),
            Form::Power => Fit::Power(fit_powerlaw(points)?),
        })
    }

    pub fn form(&self) -> Form {
        match self {
            Fit::Rectified(_) => Form::Rectified,
            Fit::Marginal(_) => Form::Marginal,
            Fit::Power(_) => Form::Power,
        }
    }

    pub fn rmse_log(&self) -> f64 {
        match self {
            Fit::Rectified(f) => f.rmse_log,
            Fit::Marginal(f) => f.rmse_log,
            Fit::Power(f) => f.rmse_log,
        }
    }

    pub fn to_file(&self, seed: u64) -> Result<FitFile> {
        let (params, rmse_log, n_points) = match self {
            Fit::Rectified(f) => split_params(f)?,
            Fit::Marginal(f) => split_params(f)?,
            Fit::Power(f) => split_params(f)?,
        };
        Ok(FitFile { form: self.form(), params, rmse_log, n_points, seed })
    }

    pub fn from_file(file: &FitFile) -> Result<Fit> {
        let mut m = file.params.clone();
        m.insert("rmse_log".into(), file.rmse_log.into());
        m.insert("n_points".into(), file.n_points.into());
        let v = serde_json::Value::Object(m);
        Ok(match file.form {
            Form::Rectified => Fit::Rectified(serde_json::from_value(v)?),
            Form::Marginal => Fit::Marginal(serde_json::from_value(v)?),
            Form::Power => Fit::Power(serde_json::from_value(v)?),
        })
    }

    /// Predicted error rate. `params` is required for power-law fits.
    pub fn predict(&self, tokens: f64, params: Option<f64>) -> Result<f64> {
        if !(tokens > 0.0) {
            return Err(Error::Argument(format!("tokens must be positive, got {tokens}")));
        }
        match self {
            Fit::Rectified(f) => Ok(f.predict(tokens)),
            Fit::Marginal(f) => Ok(f.predict(tokens)),
            Fit::Power(f) => {
                let n = params.ok_or_else(|| Error::Argument("power-law prediction needs params".into()))?;
                Ok(f.predict(n, tokens))
            }
        }
    }

    pub fn tokens_for_target(&self, target_error: f64, params: Option<f64>) -> Result<f64> {
        match self {
            Fit::Rectified(f) => f.tokens_for_target(target_error),
            Fit::Marginal(f) => f.as_rectified().tokens_for_target(target_error),
            Fit::Power(f) => {
                let n = params.ok_or_else(|| Error::Argument("power-law inversion needs params".into()))?;
                f.tokens_for_target(n, target_error)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOKENS: [f64; 6] = [1e10, 5e10, 2.5e11, 3e11, 1e12, 4e12];
    const ACC_3B: [f64; 6] = [64.6, 74.7, 80.5, 80.9, 83.1, 84.4];

    fn projected_3b() -> Vec<DataPoint> {
        TOKENS.iter().zip(ACC_3B).map(|(&d, a)| DataPoint::new(d, 1.0 - a / 100.0)).collect()
    }

    fn generated(b: f64, d_l: f64, beta: f64, e: f64) -> Vec<DataPoint> {
        (0..7)
            .map(|i| {
                let d = 10f64.powf(9.0 + i as f64 * 4.0 / 6.0);
                DataPoint::new(d, b / (d_l + d.powf(beta)) + e)
            })
            .collect()
    }

    #[test]
    fn projected_3b_reproduced() {
        let pts = projected_3b();
        let fit = fit_rectified(&pts).unwrap();
        for p in &pts {
            assert!((fit.predict(p.tokens) - p.error_rate).abs() <= 0.005, "{fit:?}");
        }
        assert!((fit.predict(1e12) - 0.169).abs() <= 0.005);
        let marginal = fit_marginal(&pts).unwrap();
        assert!(marginal.rmse_log > fit.rmse_log);
        let d = fit.tokens_for_target(0.156).unwrap();
        assert!(d / 4e12 <= 1.25 && 4e12 / d <= 1.25, "{d:e}");
    }

    #[test]
    fn noise_free_rectified_is_reproduced() {
        let pts = generated(60.0, 2e9, 0.4, 0.15);
        let fit = fit_rectified(&pts).unwrap();
        for p in &pts {
            assert!((fit.predict(p.tokens) - p.error_rate).abs() < 1e-5);
        }
    }

    #[test]
    fn marginal_recovery() {
        let pts: Vec<DataPoint> = (0..6)
            .map(|i| {
                let d = 10f64.powf(9.0 + i as f64 * 0.7);
                DataPoint::new(d, 300.0 / d.powf(0.3) + 0.12)
            })
            .collect();
        let fit = fit_marginal(&pts).unwrap();
        for p in &pts {
            assert!((fit.predict(p.tokens) - p.error_rate).abs() < 1e-5, "{fit:?}");
        }
        assert!(matches!(fit_marginal(&pts[..2]), Err(Error::Argument(_))));
    }

    fn power_grid(e: f64) -> Vec<DataPoint> {
        let mut pts = Vec::new();
        for n in [1e9, 3e9, 1e10, 3e10] {
            for d in [1e11, 1e12, 1e13, 1e14] {
                let l = 400.0 / f64::powf(n, 0.34) + 410.0 / f64::powf(d, 0.28) + e;
                pts.push(DataPoint::with_params(d, l, n));
            }
        }
        pts
    }

    #[test]
    fn power_law_recovery() {
        let fit = fit_powerlaw(&power_grid(0.1)).unwrap();
        assert!((fit.alpha - 0.34).abs() <= 0.02 && (fit.beta - 0.28).abs() <= 0.02, "{fit:?}");
        let fit0 = fit_powerlaw(&power_grid(0.0)).unwrap();
        assert!(fit0.e.abs() <= 0.01, "{fit0:?}");
        let single: Vec<DataPoint> = power_grid(0.1).into_iter().map(|p| DataPoint { params: Some(1e9), ..p }).collect();
        assert!(matches!(fit_powerlaw(&single), Err(Error::Argument(_))));
    }

    #[test]
    fn inverse_boundaries() {
        let f = RectifiedFit { b: 60.0, d_l: 2e9, beta: 0.4, e: 0.15, rmse_log: 0.0, n_points: 7 };
        assert!(matches!(f.tokens_for_target(0.15), Err(Error::UnreachableTarget { .. })));
        assert!(matches!(f.tokens_for_target(0.9), Err(Error::TargetOutOfRange { .. })));
        assert!((f.predict(1e30) - f.e).abs() < 1e-4);
        for d in [1e9, 1e11, 1e13] {
            let back = f.tokens_for_target(f.predict(d)).unwrap();
            assert!((back / d - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(fit_rectified(&projected_3b()[..3]), Err(Error::Argument(_))));
        let same: Vec<DataPoint> = (0..5).map(|_| DataPoint::new(1e10, 0.3)).collect();
        assert!(matches!(fit_rectified(&same), Err(Error::Argument(_))));
    }

    #[test]
    fn fit_beats_every_start() {
        let pts = projected_3b();
        let fit = fit_rectified(&pts).unwrap();
        let obj = rectified_objective(&pts, &fit);
        for s in rectified_starts(&pts).unwrap() {
            assert!(obj <= rectified_objective(&pts, &s));
        }
    }

    #[test]
    fn fit_file_round_trip() {
        let fit = Fit::Rectified(fit_rectified(&projected_3b()).unwrap());
        let file = fit.to_file(7).unwrap();
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.starts_with(r#"{"form":"rectified","params":{"B":"#), "{text}");
        let back = Fit::from_file(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn points_files() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("p.csv");
        std::fs::write(&csv_path, "tokens,error_rate\n1e10,64.6\n5e10, 74.7\n").unwrap();
        let pts = load_points(&csv_path, PointUnits { percent: true, accuracy: true }).unwrap();
        assert!((pts[0].error_rate - 0.354).abs() < 1e-12);
        let jsonl = dir.path().join("p.jsonl");
        std::fs::write(&jsonl, "{\"tokens\": 1e9, \"error_rate\": 0.4, \"params\": 3e9}\n").unwrap();
        let pts = load_points(&jsonl, PointUnits::default()).unwrap();
        assert_eq!(pts, [DataPoint::with_params(1e9, 0.4, 3e9)]);
        std::fs::write(&jsonl, "{\"tokens\": 1e9, \"error_rate\": 1.4}\n").unwrap();
        assert!(load_points(&jsonl, PointUnits::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn predict_is_monotone_and_bounded(b in 1.0f64..1e4, d_l in 0.0f64..1e10, beta in 0.05f64..1.5, e in 0.0f64..0.5) {
            let f = RectifiedFit { b, d_l, beta, e, rmse_log: 0.0, n_points: 0 };
            let mut prev = f64::INFINITY;
            for i in 0..40 {
                let d = 10f64.powf(6.0 + i as f64 * 0.25);
                let l = f.predict(d);
                prop_assert!(l < prev || (prev - l).abs() <= prev * 1e-15);
                prop_assert!(l >= e);
                prev = l;
            }
        }

        #[test]
        fn refit_reproduces_predictions(b in 10.0f64..500.0, ld in 8.0f64..10.0, beta in 0.25f64..0.7, e in 0.05f64..0.2) {
            let pts = generated(b, 10f64.powf(ld), beta, e);
            let fit = fit_rectified(&pts).unwrap();
            for p in &pts {
                prop_assert!((fit.predict(p.tokens) - p.error_rate).abs() < 1e-5);
            }
        }
    }
}
