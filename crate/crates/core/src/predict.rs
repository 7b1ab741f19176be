//! Path-loss prediction from pool knowledge, reference baselines and
//! error-CDF reports.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, RekpError, Result};
use crate::features::extract_features;
use crate::geometry::{Scene, Vec3, GEOM_EPS};
use crate::pool::{Context, Pool};
use crate::propagation::OUTAGE_CAP_DB;

pub const DEFAULT_TAU: f64 = 0.9;
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rekp,
    LogDistance,
    Knn,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Rekp, Method::LogDistance, Method::Knn];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Rekp => "rekp",
            Method::LogDistance => "log_distance",
            Method::Knn => "knn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub position_id: u32,
    pub method: Method,
    pub predicted_db: f64,
    pub truth_db: f64,
    pub abs_error_db: f64,
    /// Pool had nothing usable; the log-distance value stands in.
    pub fallback: bool,
    /// Truth sits at the outage cap; excluded from error statistics.
    pub capped: bool,
}

impl Prediction {
    pub fn new(position_id: u32, method: Method, predicted_db: f64, truth_db: f64, fallback: bool) -> Self {
        Self {
            position_id,
            method,
            predicted_db,
            truth_db,
            abs_error_db: (predicted_db - truth_db).abs(),
            fallback,
            capped: truth_db >= OUTAGE_CAP_DB,
        }
    }
}

/// PL(d) = pl0_db + 10 n log10(d / 1 m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogDistanceModel {
    pub pl0_db: f64,
    pub exponent: f64,
}

impl LogDistanceModel {
    pub fn predict(&self, distance_m: f64) -> Result<f64> {
        if !(distance_m > 0.0 && distance_m.is_finite()) {
            return invalid("distance must be positive and finite");
        }
        Ok(self.pl0_db + 10.0 * self.exponent * distance_m.log10())
    }
}

/// Ordinary least squares on (10 log10 d, PL).
pub fn fit_logdistance(samples: &[(f64, f64)]) -> Result<LogDistanceModel> {
    if samples.iter().any(|(d, pl)| !(*d > 0.0 && d.is_finite() && pl.is_finite())) {
        return invalid("samples need positive distances and finite losses");
    }
    if samples.len() < 2 {
        return Err(RekpError::DegenerateFit("need at least two samples".into()));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|(d, _)| 10.0 * d.log10()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(samples).map(|(x, s)| (x - mx) * (s.1 - my)).sum();
    if sxx <= 0.0 || samples.iter().all(|s| s.0 == samples[0].0) {
        return Err(RekpError::DegenerateFit("all distances are equal".into()));
    }
    let exponent = sxy / sxx;
    Ok(LogDistanceModel { pl0_db: my - exponent * mx, exponent })
}

pub fn predict_logdistance(model: &LogDistanceModel, distance_m: f64) -> Result<f64> {
    model.predict(distance_m)
}

/// Inverse-distance-weighted mean of the `k` nearest samples; an exact
/// position match returns that sample.
pub fn predict_knn(train: &[(Vec3, f64)], rx: Vec3, k: usize) -> Result<f64> {
    if train.is_empty() {
        return invalid("kNN needs at least one training sample");
    }
    if k == 0 {
        return invalid("k must be >= 1");
    }
    let mut by_dist: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, (p, _))| (p.distance(rx), i)).collect();
    by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if by_dist[0].0 <= GEOM_EPS {
        return Ok(train[by_dist[0].1].1);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (d, i) in by_dist.into_iter().take(k) {
        num += train[i].1 / d;
        den += 1.0 / d;
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RekpPrediction {
    pub predicted_db: f64,
    pub entry_id: Option<u64>,
    pub similarity: Option<f64>,
    pub fallback: bool,
}

/// Predicts with the most similar usable pool entry, keeping only the
/// top-weight groups that reach `tau`; the other members are zeroed in the
/// entry's centered feature space. Without a usable entry the
/// `fallback` model answers, or the call fails when there is none.
pub fn predict_rekp(
    pool: &mut Pool,
    scene: &Scene,
    position_id: u32,
    rx: Vec3,
    tau: f64,
    fallback: Option<&LogDistanceModel>,
    filter: impl Fn(&crate::pool::KnowledgeEntry) -> bool,
) -> Result<RekpPrediction> {
    if tau.is_nan() || tau <= 0.0 {
        return invalid("tau must be positive");
    }
    let ctx = Context::new(scene, position_id, rx)?;
    match pool.query_where(&ctx, |e| !e.is_degenerate() && filter(e)) {
        Some((id, sim)) => {
            let entry = pool.get(id).expect("query returns live entries");
            let features = extract_features(scene, rx)?;
            let keep = entry.weights.top_groups(tau);
            let predicted_db = entry.model.predict(entry.mask(&features, &keep).as_slice())?;
            Ok(RekpPrediction { predicted_db, entry_id: Some(id), similarity: Some(sim), fallback: false })
        }
        None => match fallback {
            Some(model) => Ok(RekpPrediction {
                predicted_db: model.predict(scene.tx.distance(rx))?,
                entry_id: None,
                similarity: None,
                fallback: true,
            }),
            None => Err(RekpError::NoKnowledge(format!("no usable pool entry for position {position_id}"))),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    /// Uncapped absolute errors, ascending.
    pub errors: Vec<f64>,
    pub n_capped: usize,
}

impl MethodReport {
    pub fn n(&self) -> usize {
        self.errors.len()
    }

    /// Cumulative fraction at each sorted error.
    pub fn cdf(&self) -> Vec<(f64, f64)> {
        let n = self.errors.len() as f64;
        self.errors.iter().enumerate().map(|(i, e)| (*e, (i + 1) as f64 / n)).collect()
    }

    /// Smallest error whose empirical CDF reaches `level`.
    pub fn percentile(&self, level: f64) -> f64 {
        let n = self.errors.len();
        let rank = (level.clamp(0.0, 1.0) * n as f64 - 1e-9).ceil() as usize;
        self.errors[rank.clamp(1, n) - 1]
    }

    pub fn p80(&self) -> f64 {
        self.percentile(0.8)
    }

    pub fn mean(&self) -> f64 {
        self.errors.iter().sum::<f64>() / self.errors.len() as f64
    }

    pub fn rmse(&self) -> f64 {
        (self.errors.iter().map(|e| e * e).sum::<f64>() / self.errors.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// One report per method present, in [`Method::ALL`] order.
    pub methods: Vec<MethodReport>,
}

impl ErrorReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    pub fn write_cdf_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "error_db", "cum_fraction"])?;
        for r in &self.methods {
            for (e, c) in r.cdf() {
                out.write_record([r.method.as_str().to_string(), e.to_string(), c.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "mean", "rmse", "p80", "n", "n_capped"])?;
        for r in &self.methods {
            out.write_record([
                r.method.as_str().to_string(),
                r.mean().to_string(),
                r.rmse().to_string(),
                r.p80().to_string(),
                r.n().to_string(),
                r.n_capped.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn evaluate(predictions: &[Prediction]) -> Result<ErrorReport> {
    if predictions.is_empty() {
        return invalid("no predictions to evaluate");
    }
    let mut methods = Vec::new();
    for m in Method::ALL {
        let rows: Vec<&Prediction> = predictions.iter().filter(|p| p.method == m).collect();
        if rows.is_empty() {
            continue;
        }
        if rows.iter().any(|p| !p.abs_error_db.is_finite()) {
            return invalid(format!("non-finite error for method {m}"));
        }
        let mut errors: Vec<f64> = rows.iter().filter(|p| !p.capped).map(|p| p.abs_error_db).collect();
        if errors.is_empty() {
            return invalid(format!("method {m} has no uncapped predictions"));
        }
        errors.sort_by(f64::total_cmp);
        methods.push(MethodReport { method: m, errors, n_capped: rows.iter().filter(|p| p.capped).count() });
    }
    Ok(ErrorReport { methods })
}
