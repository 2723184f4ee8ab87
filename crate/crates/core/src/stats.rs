//! Ensemble statistics: displacement moments, empirical crossing-time CDFs,
//! leg decompositions, regime fits and constant fits.
//!
//! Standard errors come from [`BATCHES`] path batches; a path's batch is its
//! stream index modulo that count.

use libm::erfc;
use serde::{Deserialize, Serialize};

use crate::bounds::{erf_upper_cdf, log_lower_cdf};
use crate::crossing::{CrossingLog, EventKind};
use crate::ensemble::{PathRecord, BATCHES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("time grid must be nonnegative and strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// `n` evenly spaced times from `t0` to `t1` inclusive.
    pub fn linspace(t0: f64, t1: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Self::new(vec![t1]);
        }
        let h = (t1 - t0) / (n - 1) as f64;
        Self::new((0..n).map(|k| if k + 1 == n { t1 } else { t0 + k as f64 * h }).collect())
    }

    /// `n` log-spaced times from `t0 > 0` to `t1`.
    pub fn logspace(t0: f64, t1: f64, n: usize) -> Result<Self> {
        if !(t0 > 0.0) {
            return Err(Error::InvalidParameter("log grid needs t0 > 0".into()));
        }
        if n < 2 {
            return Self::new(vec![t1]);
        }
        let r = (t1 / t0).ln() / (n - 1) as f64;
        Self::new((0..n).map(|k| if k + 1 == n { t1 } else { t0 * (r * k as f64).exp() }).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    /// `|mean - target| <= k * se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// Sample mean with a batch-means standard error.
pub fn batch_mean_se(values: &[f64], batches: &[usize]) -> MeanSe {
    let n = values.len();
    if n == 0 {
        return MeanSe { mean: f64::NAN, se: f64::NAN };
    }
    let mut sum = [0.0; BATCHES];
    let mut cnt = [0usize; BATCHES];
    for (&v, &b) in values.iter().zip(batches) {
        sum[b % BATCHES] += v;
        cnt[b % BATCHES] += 1;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let means: Vec<f64> = (0..BATCHES).filter(|&b| cnt[b] > 0).map(|b| sum[b] / cnt[b] as f64).collect();
    let k = means.len();
    if k < 2 {
        return MeanSe { mean, se: f64::INFINITY };
    }
    let mm = means.iter().sum::<f64>() / k as f64;
    let var = means.iter().map(|m| (m - mm) * (m - mm)).sum::<f64>() / (k - 1) as f64;
    MeanSe {
        mean,
        se: (var / k as f64).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    pub t: f64,
    /// `E|X_t - x|^2`.
    pub msd: MeanSe,
    pub var1: MeanSe,
    pub var2: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurve {
    pub points: Vec<VariancePoint>,
}

impl VarianceCurve {
    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn msd(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.msd.mean).collect()
    }
}

/// Mean squared displacement from the start point, overall and per
/// coordinate, at each sample time.
pub fn variance_curve(records: &[PathRecord], times: &[f64]) -> Result<VarianceCurve> {
    if records.len() < 2 {
        return Err(Error::InsufficientData(format!("{} paths; need at least 2", records.len())));
    }
    let batches: Vec<usize> = records.iter().map(|r| r.batch()).collect();
    let mut points = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let d1: Vec<f64> = records.iter().map(|r| (r.samples[k].x1 - r.x0.x1).powi(2)).collect();
        let d2: Vec<f64> = records.iter().map(|r| (r.samples[k].x2 - r.x0.x2).powi(2)).collect();
        let d: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| a + b).collect();
        points.push(VariancePoint {
            t,
            msd: batch_mean_se(&d, &batches),
            var1: batch_mean_se(&d1, &batches),
            var2: batch_mean_se(&d2, &batches),
        });
    }
    Ok(VarianceCurve { points })
}

/// Half-width of the two-sided DKW band at confidence `1 - alpha`.
pub fn dkw_epsilon(paths: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * paths as f64)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    pub coord: u8,
    pub n: usize,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// DKW half-width.
    pub band: f64,
    pub paths: usize,
}

/// Empirical `P(tau^i_n <= t)` on `times`, `n >= 1`.
pub fn crossing_cdf(logs: &[&CrossingLog], i: u8, n: usize, times: &[f64], alpha: f64) -> Result<EmpiricalCdf> {
    if n == 0 {
        return Err(Error::InvalidParameter("crossing index n must be >= 1".into()));
    }
    if logs.is_empty() {
        return Err(Error::InsufficientData("no crossing logs".into()));
    }
    let mut hits: Vec<f64> = logs
        .iter()
        .map(|l| l.tau_i(i).get(n - 1).copied().unwrap_or(f64::INFINITY))
        .collect();
    hits.sort_by(f64::total_cmp);
    let m = hits.len() as f64;
    let values = times
        .iter()
        .map(|&t| hits.partition_point(|&h| h <= t) as f64 / m)
        .collect();
    Ok(EmpiricalCdf {
        coord: i,
        n,
        times: times.to_vec(),
        values,
        band: dkw_epsilon(logs.len(), alpha),
        paths: logs.len(),
    })
}

fn erfc_inverse(p: f64) -> f64 {
    // erfc is decreasing on [0, inf); p in (0, 1)
    let (mut lo, mut hi) = (0.0f64, 30.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if erfc(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest `c` with `F(t) - slack <= erf_upper_cdf(n, delta, c, t)` at every
/// grid point of every curve. Infinite if some point needs the bound to reach 1.
pub fn fit_upper_scale(cdfs: &[&EmpiricalCdf], delta: f64, slack: f64) -> f64 {
    let mut c: f64 = 0.0;
    for cdf in cdfs {
        for (&t, &f) in cdf.times.iter().zip(&cdf.values) {
            let target = f - slack;
            if target <= 0.0 || t <= 0.0 {
                continue;
            }
            if target >= 1.0 {
                return f64::INFINITY;
            }
            let x = erfc_inverse(target);
            c = c.max(cdf.n as f64 * delta / (t.sqrt() * x));
        }
    }
    c
}

/// Smallest `c` with `log_lower_cdf(n, delta, c, t) <= F(t) + slack` at every
/// grid point of every curve.
pub fn fit_lower_scale(cdfs: &[&EmpiricalCdf], delta: f64, slack: f64) -> f64 {
    let mut c: f64 = 0.0;
    let ld = delta * delta.ln().abs();
    for cdf in cdfs {
        for (&t, &f) in cdf.times.iter().zip(&cdf.values) {
            let target = f + slack;
            if target >= 1.0 || t <= 0.0 {
                continue;
            }
            c = c.max((1.0 - target) * t.sqrt() / (cdf.n as f64 * ld));
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandCheck {
    /// Largest `F - band - upper` (nonpositive when the upper bound holds).
    pub upper_violation: f64,
    /// Largest `lower - F - band` (nonpositive when the lower bound holds).
    pub lower_violation: f64,
}

impl BandCheck {
    pub fn holds(&self) -> bool {
        self.upper_violation <= 0.0 && self.lower_violation <= 0.0
    }
}

/// Check a CDF against both bounds with the DKW band as tolerance.
pub fn check_cdf_bounds(cdf: &EmpiricalCdf, delta: f64, c_upper: f64, c_lower: f64) -> BandCheck {
    let mut up = f64::NEG_INFINITY;
    let mut lo = f64::NEG_INFINITY;
    let n = cdf.n as u32;
    for (&t, &f) in cdf.times.iter().zip(&cdf.values) {
        if t <= 0.0 {
            continue;
        }
        up = up.max(f - cdf.band - erf_upper_cdf(n, delta, c_upper, t));
        lo = lo.max(log_lower_cdf(n, delta, c_lower, t) - f - cdf.band);
    }
    BandCheck {
        upper_violation: up,
        lower_violation: lo,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossMoment {
    pub n: usize,
    pub m: usize,
    pub value: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelescopingReport {
    pub coord: u8,
    pub t: f64,
    /// `E|X_i(t) - x_i|^2`.
    pub var: MeanSe,
    /// `sum_n E[leg_n^2]`.
    pub sum_leg_sq: f64,
    /// `Var - sum_n E[leg_n^2]`, equal to twice the summed cross moments.
    pub gap: MeanSe,
    pub cross: Vec<CrossMoment>,
}

impl TelescopingReport {
    /// Every cross moment lies within `k` standard errors of zero.
    pub fn cross_within(&self, k: f64) -> bool {
        self.cross.iter().all(|c| c.value.within(0.0, k))
    }
}

/// Increments of `X_i` between successive coordinate-`i` hits, stopped at
/// the sample time with index `k`. The legs sum to `X_i(t) - x_i`.
pub fn legs(record: &PathRecord, i: u8, k: usize, t: f64) -> Vec<f64> {
    let coord = |p: crate::flowfield::Point| if i == 1 { p.x1 } else { p.x2 };
    let mut out = Vec::new();
    let mut prev = coord(record.x0);
    if let Some(log) = &record.log {
        for e in log.hit_events() {
            if e.t > t {
                break;
            }
            if e.coord == Some(i) {
                let x = coord(e.pos);
                out.push(x - prev);
                prev = x;
            }
        }
    }
    out.push(coord(record.samples[k]) - prev);
    out
}

/// Leg decomposition of the coordinate-`i` variance at sample index `k`,
/// with cross moments `E[leg_n leg_m]` for `1 <= n < m <= max_leg`.
pub fn telescoping_check(
    records: &[PathRecord],
    times: &[f64],
    i: u8,
    k: usize,
    max_leg: usize,
) -> Result<TelescopingReport> {
    if records.len() < 2 {
        return Err(Error::InsufficientData("telescoping check needs at least 2 paths".into()));
    }
    let t = times[k];
    let batches: Vec<usize> = records.iter().map(|r| r.batch()).collect();
    let all: Vec<Vec<f64>> = records.iter().map(|r| legs(r, i, k, t)).collect();
    let leg = |v: &Vec<f64>, n: usize| v.get(n - 1).copied().unwrap_or(0.0);
    let total: Vec<f64> = all.iter().map(|v| v.iter().sum::<f64>().powi(2)).collect();
    let sq: Vec<f64> = all.iter().map(|v| v.iter().map(|d| d * d).sum()).collect();
    let gap: Vec<f64> = total.iter().zip(&sq).map(|(a, b)| a - b).collect();
    let mut cross = Vec::new();
    for n in 1..max_leg {
        for m in (n + 1)..=max_leg {
            let prod: Vec<f64> = all.iter().map(|v| leg(v, n) * leg(v, m)).collect();
            cross.push(CrossMoment {
                n,
                m,
                value: batch_mean_se(&prod, &batches),
            });
        }
    }
    Ok(TelescopingReport {
        coord: i,
        t,
        var: batch_mean_se(&total, &batches),
        sum_leg_sq: sq.iter().sum::<f64>() / sq.len() as f64,
        gap: batch_mean_se(&gap, &batches),
        cross,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReentryEstimate {
    /// Largest re-entry frequency over the start points.
    pub p_hat: f64,
    /// Binomial standard error at the worst start point.
    pub se: f64,
    pub trials: usize,
    pub worst_start: usize,
}

impl ReentryEstimate {
    pub fn upper(&self, k: f64) -> f64 {
        self.p_hat + k * self.se
    }
}

/// Worst-case corner re-entry frequency from `(re-entries, trials)` per start.
pub fn corner_reentry_estimate(counts: &[(usize, usize)]) -> Result<ReentryEstimate> {
    let mut best: Option<ReentryEstimate> = None;
    for (k, &(hits, trials)) in counts.iter().enumerate() {
        if trials == 0 {
            continue;
        }
        let p = hits as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        let cand = ReentryEstimate {
            p_hat: p,
            se,
            trials,
            worst_start: k,
        };
        if best.is_none_or(|b| cand.upper(3.0) > b.upper(3.0)) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| Error::InsufficientData("no probe trials".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateBalance {
    pub p1: f64,
    pub p2: f64,
    pub ambiguous: f64,
    pub events: usize,
    /// Binomial standard error of `p1`.
    pub se: f64,
}

/// Share of first separatrix hits assigned to each coordinate.
pub fn coordinate_balance(logs: &[&CrossingLog]) -> Result<CoordinateBalance> {
    let mut c = [0usize; 3];
    for l in logs {
        if let Some(e) = l.events().iter().find(|e| e.kind == EventKind::SeparatrixHit) {
            match e.coord {
                Some(1) => c[1] += 1,
                Some(2) => c[2] += 1,
                _ => c[0] += 1,
            }
        }
    }
    let n = c.iter().sum::<usize>();
    if n == 0 {
        return Err(Error::InsufficientData("no separatrix hits".into()));
    }
    let nf = n as f64;
    let p1 = c[1] as f64 / nf;
    Ok(CoordinateBalance {
        p1,
        p2: c[2] as f64 / nf,
        ambiguous: c[0] as f64 / nf,
        events: n,
        se: (p1 * (1.0 - p1) / nf).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
    pub points: usize,
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::InsufficientData(format!("{n} points for a line fit")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    let slope_se = if n > 2 { (sse / (nf - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok(LinearFit {
        slope,
        intercept,
        r2,
        slope_se,
        points: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub t_lo: f64,
    pub t_hi: f64,
    pub fit: LinearFit,
}

fn window(times: &[f64], values: &[f64], keep: impl Fn(f64) -> bool) -> (Vec<f64>, Vec<f64>) {
    times
        .iter()
        .zip(values)
        .filter(|(t, _)| keep(**t))
        .map(|(t, v)| (*t, *v))
        .unzip()
}

/// Early window `0 < t < split`: `(Var)^2` against `t`. Late window
/// `split <= t <= t_end`: `Var` against `t`.
pub fn fit_regimes(times: &[f64], var: &[f64], split: f64, t_end: f64) -> Result<(ScalingFit, ScalingFit)> {
    let (te, ve) = window(times, var, |t| t > 0.0 && t < split);
    let (tl, vl) = window(times, var, |t| t >= split && t <= t_end);
    for (name, w) in [("early", &te), ("late", &tl)] {
        if w.len() < 4 {
            return Err(Error::InsufficientData(format!("{name} window has {} grid points; need 4", w.len())));
        }
    }
    let sq: Vec<f64> = ve.iter().map(|v| v * v).collect();
    let early = ScalingFit {
        t_lo: te[0],
        t_hi: *te.last().unwrap_or(&split),
        fit: linear_fit(&te, &sq)?,
    };
    let late = ScalingFit {
        t_lo: tl[0],
        t_hi: *tl.last().unwrap_or(&t_end),
        fit: linear_fit(&tl, &vl)?,
    };
    Ok((early, late))
}

/// Slope of `log Var` against `log t` on `[t_lo, t_hi]`.
pub fn loglog_slope(times: &[f64], var: &[f64], t_lo: f64, t_hi: f64) -> Result<ScalingFit> {
    let (t, v) = window(times, var, |t| t >= t_lo && t <= t_hi);
    if t.len() < 4 || v.iter().any(|x| *x <= 0.0) {
        return Err(Error::InsufficientData("log-log window needs 4 positive points".into()));
    }
    let lt: Vec<f64> = t.iter().map(|x| x.ln()).collect();
    let lv: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    Ok(ScalingFit {
        t_lo,
        t_hi,
        fit: linear_fit(&lt, &lv)?,
    })
}

/// Smallest `c` with `1 / (c |ln delta|) <= q <= c` for every `(delta, q)`.
pub fn fit_two_sided_constant(samples: &[(f64, f64)]) -> f64 {
    samples
        .iter()
        .map(|&(delta, q)| q.max(1.0 / (q * delta.ln().abs())))
        .fold(0.0, f64::max)
}

/// Smallest `c` with `q <= c` for every sample.
pub fn fit_upper_constant(q: &[f64]) -> f64 {
    q.iter().copied().fold(0.0, f64::max)
}

/// Mean number of separatrix hits by each sample time.
pub fn mean_hit_count(records: &[PathRecord], times: &[f64]) -> Vec<MeanSe> {
    let batches: Vec<usize> = records.iter().map(|r| r.batch()).collect();
    times
        .iter()
        .map(|&t| {
            let c: Vec<f64> = records
                .iter()
                .map(|r| r.log.as_ref().map_or(0, |l| l.hit_events().filter(|e| e.t <= t).count()) as f64)
                .collect();
            batch_mean_se(&c, &batches)
        })
        .collect()
}

/// Flat `(time, statistic, value, stderr)` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub time: f64,
    pub statistic: String,
    pub value: f64,
    pub stderr: f64,
}

impl VarianceCurve {
    pub fn rows(&self) -> Vec<SummaryRow> {
        let mut out = Vec::with_capacity(3 * self.points.len());
        for p in &self.points {
            for (name, m) in [("msd", p.msd), ("var1", p.var1), ("var2", p.var2)] {
                out.push(SummaryRow {
                    time: p.t,
                    statistic: name.into(),
                    value: m.mean,
                    stderr: m.se,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regimes_on_synthetic_curves() {
        let times: Vec<f64> = (1..=40).map(|k| k as f64 * 0.001).collect();
        let root: Vec<f64> = times.iter().map(|t| t.sqrt()).collect();
        let (early, _) = fit_regimes(&times, &root, 0.015, 0.04).unwrap();
        assert!((early.fit.r2 - 1.0).abs() < 1e-12);
        assert!((early.fit.slope - 1.0).abs() < 1e-12);
        let lin: Vec<f64> = times.iter().map(|t| 3.0 * t).collect();
        let (_, late) = fit_regimes(&times, &lin, 0.015, 0.04).unwrap();
        assert!((late.fit.r2 - 1.0).abs() < 1e-12);
        assert!((late.fit.slope - 3.0).abs() < 1e-12);
    }

    #[test]
    fn regimes_need_four_points() {
        let times = [0.001, 0.002, 0.003, 0.02, 0.03, 0.035, 0.04];
        let v = [1.0; 7];
        assert!(fit_regimes(&times, &v, 0.015, 0.04).is_err());
    }

    #[test]
    fn batch_se_of_constant_is_zero() {
        let v = vec![2.5; 320];
        let b: Vec<usize> = (0..320).collect();
        let m = batch_mean_se(&v, &b);
        assert_eq!(m.mean, 2.5);
        assert_eq!(m.se, 0.0);
    }

    #[test]
    fn dkw_width() {
        assert!((dkw_epsilon(10_000, 0.05) - ((40f64).ln() / 20_000.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn erfc_inverse_round_trip() {
        for p in [1e-6, 0.01, 0.3, 0.9] {
            assert!((erfc(erfc_inverse(p)) - p).abs() < 1e-12 * p.max(1e-3));
        }
    }

    #[test]
    fn upper_fit_is_tight() {
        let cdf = EmpiricalCdf {
            coord: 1,
            n: 1,
            times: vec![0.01, 0.02, 0.04],
            values: vec![0.1, 0.3, 0.5],
            band: 0.0,
            paths: 100,
        };
        let c = fit_upper_scale(&[&cdf], 0.05, 0.0);
        let chk = check_cdf_bounds(&cdf, 0.05, c, 0.0);
        assert!(chk.upper_violation <= 1e-12);
        assert!(chk.upper_violation > -1e-9);
        let cl = fit_lower_scale(&[&cdf], 0.05, 0.0);
        assert!(check_cdf_bounds(&cdf, 0.05, c, cl).lower_violation <= 1e-12);
    }

    #[test]
    fn two_sided_constant() {
        let d = (-2f64).exp();
        // |ln d| = 2: q = 0.25 needs c >= 2
        assert!((fit_two_sided_constant(&[(d, 0.25), (d, 1.5)]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn reentry_picks_worst_start() {
        let r = corner_reentry_estimate(&[(10, 100), (30, 100), (5, 100)]).unwrap();
        assert_eq!(r.worst_start, 1);
        assert!((r.p_hat - 0.3).abs() < 1e-15);
        assert!(corner_reentry_estimate(&[]).is_err());
    }
}
