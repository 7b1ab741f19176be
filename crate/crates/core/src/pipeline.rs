//! End-to-end stages shared by the command line and the bindings:
//! simulate realizations, learn spectra and pool knowledge, and evaluate
//! leave-one-position-out predictions.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::features::{feature_names, realize, Dataset, DatasetRow, RealizationConfig, FEATURE_GROUPS};
use crate::forest::{fit, permutation_importance, ForestParams};
use crate::geometry::{Scene, Trajectory};
use crate::pool::{Context, IngestReport, Pool};
use crate::predict::{fit_logdistance, predict_knn, predict_rekp, Method, Prediction};
use crate::propagation::{path_loss, OUTAGE_CAP_DB};
use crate::rng::derive_seed;
use crate::spectrum::{group_weights, spectrum, GroupWeights, SpectrumRow};

/// Realizations for every trajectory position; position `k` (1-based) is
/// stamped with logical time `k`.
pub fn simulate(scene: &Scene, trajectory: &Trajectory, cfg: &RealizationConfig) -> Result<Dataset> {
    let mut rows = Vec::new();
    for (k, rx) in trajectory.positions.iter().enumerate() {
        let id = k as u32 + 1;
        rows.extend(realize(scene, *rx, id, id as f64, cfg)?);
    }
    Dataset::new(rows)
}

/// Group weights learned from one position's realizations alone.
pub fn position_weights(rows: &[DatasetRow], forest: &ForestParams, repeats: usize) -> Result<GroupWeights> {
    let Some(first) = rows.first() else {
        return invalid("no rows for position");
    };
    let id = first.position_id as u64;
    let x: Vec<Vec<f64>> = rows.iter().map(|r| r.features.0.to_vec()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.path_loss_db).collect();
    let params = ForestParams { seed: derive_seed(forest.seed, &[id]), ..forest.clone() };
    let model = fit(&x, &y, feature_names(), &params)?;
    let imp = permutation_importance(&model, &x, &y, derive_seed(forest.seed, &[id, 1]), repeats)?;
    group_weights(&imp, &FEATURE_GROUPS)
}

#[derive(Debug, Clone)]
pub struct LearnOutput {
    /// One row per position, in trajectory order.
    pub spectra: Vec<SpectrumRow>,
    pub reports: Vec<(u32, IngestReport)>,
}

/// Learns per-position spectra and ingests every position into `pool`,
/// in trajectory order, at logical time = position id.
pub fn learn(scene: &Scene, trajectory: &Trajectory, dataset: &Dataset, pool: &mut Pool) -> Result<LearnOutput> {
    let forest = pool.params().forest.clone();
    let repeats = pool.params().importance_repeats;
    let ids: Vec<u32> = (1..=trajectory.positions.len() as u32).collect();
    for id in &ids {
        if dataset.position(*id).is_empty() {
            return invalid(format!("dataset has no rows for position {id}"));
        }
    }
    let contexts: Vec<Context> = trajectory
        .positions
        .iter()
        .zip(&ids)
        .map(|(rx, id)| Context::new(scene, *id, *rx))
        .collect::<Result<_>>()?;
    let weights: Vec<GroupWeights> =
        ids.par_iter().map(|id| position_weights(dataset.position(*id), &forest, repeats)).collect::<Result<_>>()?;
    let mut spectra = Vec::new();
    for ((id, ctx), w) in ids.iter().zip(&contexts).zip(weights) {
        let spec = if w.degenerate { None } else { Some(spectrum(&w, *id, ctx.los)?) };
        spectra.push(SpectrumRow { position_id: *id, los: ctx.los, weights: w, spectrum: spec });
    }
    let mut reports = Vec::new();
    for (id, ctx) in ids.iter().zip(&contexts) {
        reports.push((*id, pool.ingest(ctx, dataset.position(*id), *id as f64, false)?));
    }
    Ok(LearnOutput { spectra, reports })
}

/// Leave-one-position-out predictions for REKP and both baselines.
///
/// Truth is the unperturbed oracle loss. For each held-out position the
/// baselines see only the other positions' truths and REKP only pool entries
/// with no tree or row from the held-out position. Queries run against a
/// private copy of `pool`.
pub fn leave_one_out(scene: &Scene, trajectory: &Trajectory, pool: &Pool, tau: f64, k: usize) -> Result<Vec<Prediction>> {
    let samples = trajectory
        .positions
        .iter()
        .enumerate()
        .map(|(i, rx)| Ok((i as u32 + 1, *rx, path_loss(scene, *rx)?.path_loss_db)))
        .collect::<Result<Vec<_>>>()?;
    let mut scratch = pool.clone();
    let mut out = Vec::new();
    for &(id, rx, truth) in &samples {
        let others: Vec<_> = samples.iter().filter(|s| s.0 != id && s.2 < OUTAGE_CAP_DB).collect();
        let ld_samples: Vec<(f64, f64)> = others.iter().map(|s| (scene.tx.distance(s.1), s.2)).collect();
        let ld = fit_logdistance(&ld_samples)?;
        let knn_train: Vec<_> = others.iter().map(|s| (s.1, s.2)).collect();

        let rekp = predict_rekp(&mut scratch, scene, id, rx, tau, Some(&ld), |e| !e.depends_on(id))?;
        out.push(Prediction::new(id, Method::Rekp, rekp.predicted_db, truth, rekp.fallback));
        out.push(Prediction::new(id, Method::LogDistance, ld.predict(scene.tx.distance(rx))?, truth, false));
        out.push(Prediction::new(id, Method::Knn, predict_knn(&knn_train, rx, k)?, truth, false));
    }
    Ok(out)
}
