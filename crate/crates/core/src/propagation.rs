//! Deterministic channel oracle: line-of-sight plus single-bounce image-method
//! reflections off scatterer faces, strongest path wins.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{mirror_point, occlusion, Scene, Vec3, GEOM_EPS};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Reported loss when no valid path exists.
pub const OUTAGE_CAP_DB: f64 = 250.0;

pub fn fspl_db(distance_m: f64, frequency_hz: f64) -> Result<f64> {
    if !(distance_m.is_finite() && distance_m > 0.0) {
        return invalid("distance must be finite and positive");
    }
    if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
        return invalid("frequency must be finite and positive");
    }
    Ok(fspl_unchecked(distance_m, frequency_hz))
}

fn fspl_unchecked(d: f64, f: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * d * f / SPEED_OF_LIGHT).log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PathKind {
    Los,
    Reflection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub kind: PathKind,
    pub length_m: f64,
    pub loss_db: f64,
    pub via_scatterer: Option<u32>,
    pub reflection_point: Option<Vec3>,
    /// Face index within the scatterer (-x, +x, -y, +y, -z, +z).
    pub via_face: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSample {
    pub position_id: u32,
    pub rx: Vec3,
    pub path_loss_db: f64,
    pub los: bool,
    pub n_paths: usize,
    pub timestamp: f64,
}

fn check_rx(scene: &Scene, rx: Vec3) -> Result<()> {
    if !rx.is_finite() {
        return invalid("receiver position must be finite");
    }
    if let Some(id) = scene.enclosing(rx) {
        return invalid(format!("receiver lies inside scatterer {id}"));
    }
    if rx.distance(scene.tx) <= GEOM_EPS {
        return invalid("receiver coincides with the transmitter");
    }
    Ok(())
}

/// All valid LOS and single-bounce paths, sorted by loss, then kind, then
/// scatterer id and face.
pub fn trace_paths(scene: &Scene, rx: Vec3) -> Result<Vec<Path>> {
    check_rx(scene, rx)?;
    let tx = scene.tx;
    let f = scene.frequency_hz;
    let mut paths = Vec::new();

    if !occlusion(tx, rx, scene, None).blocked {
        let d = tx.distance(rx);
        paths.push(Path {
            kind: PathKind::Los,
            length_m: d,
            loss_db: fspl_unchecked(d, f),
            via_scatterer: None,
            reflection_point: None,
            via_face: None,
        });
    }

    for s in &scene.scatterers {
        for face in s.faces() {
            let (dt, dr) = (face.outward_distance(tx), face.outward_distance(rx));
            if dt <= GEOM_EPS || dr <= GEOM_EPS {
                continue;
            }
            let image = mirror_point(tx, face.plane);
            let axis = face.plane.axis;
            let t = (face.plane.coord - image.axis(axis)) / (rx.axis(axis) - image.axis(axis));
            let point = (image + (rx - image) * t).with_axis(axis, face.plane.coord);
            if !face.covers(point) {
                continue;
            }
            if occlusion(tx, point, scene, Some(s.id)).blocked || occlusion(point, rx, scene, Some(s.id)).blocked {
                continue;
            }
            let length = image.distance(rx);
            paths.push(Path {
                kind: PathKind::Reflection,
                length_m: length,
                loss_db: fspl_unchecked(length, f) + s.reflection_loss_db,
                via_scatterer: Some(s.id),
                reflection_point: Some(point),
                via_face: Some(face.index),
            });
        }
    }

    paths.sort_by(|a, b| {
        a.loss_db
            .total_cmp(&b.loss_db)
            .then(a.kind.cmp(&b.kind))
            .then(a.via_scatterer.cmp(&b.via_scatterer))
            .then(a.via_face.cmp(&b.via_face))
    });
    Ok(paths)
}

pub fn path_loss(scene: &Scene, rx: Vec3) -> Result<ChannelSample> {
    let paths = trace_paths(scene, rx)?;
    let los = !occlusion(scene.tx, rx, scene, None).blocked;
    Ok(sample_from_paths(&paths, rx, los))
}

pub(crate) fn sample_from_paths(paths: &[Path], rx: Vec3, los: bool) -> ChannelSample {
    ChannelSample {
        position_id: 0,
        rx,
        path_loss_db: paths.first().map_or(OUTAGE_CAP_DB, |p| p.loss_db.min(OUTAGE_CAP_DB)),
        los,
        n_paths: paths.len(),
        timestamp: 0.0,
    }
}

/// Scatterers that produce a valid path or occlude the direct segment, ascending.
pub fn effective_scatterers(scene: &Scene, rx: Vec3) -> Result<Vec<u32>> {
    let paths = trace_paths(scene, rx)?;
    let blockage = occlusion(scene.tx, rx, scene, None);
    Ok(effective_from(&paths, &blockage.blocker_ids))
}

pub(crate) fn effective_from(paths: &[Path], blockers: &[u32]) -> Vec<u32> {
    let mut ids: Vec<u32> = paths.iter().filter_map(|p| p.via_scatterer).chain(blockers.iter().copied()).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{AxisPlane, Axis, Scatterer};

    const F28: f64 = 28e9;

    #[test]
    fn fspl_reference_values() {
        assert!((fspl_db(1.0, F28).unwrap() - 61.39).abs() < 5e-3);
        assert!((fspl_db(100.0, F28).unwrap() - 101.39).abs() < 5e-3);
        let d = fspl_db(20.0, F28).unwrap() - fspl_db(10.0, F28).unwrap();
        assert!((d - 20.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn fspl_rejects_nonpositive() {
        assert!(fspl_db(0.0, F28).is_err());
        assert!(fspl_db(1.0, -1.0).is_err());
        assert!(fspl_db(f64::NAN, F28).is_err());
    }

    #[test]
    fn empty_scene_single_los_path() {
        let scene = Scene::new(Vec3::ZERO, F28, vec![]).unwrap();
        let rx = Vec3::new(100.0, 0.0, 0.0);
        let paths = trace_paths(&scene, rx).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].kind, PathKind::Los);
        assert_eq!(paths[0].length_m, 100.0);
        let s = path_loss(&scene, rx).unwrap();
        assert!(s.los);
        assert!((s.path_loss_db - 101.39).abs() < 5e-3);
        assert!(effective_scatterers(&scene, rx).unwrap().is_empty());
    }

    #[test]
    fn single_wall_reflection_matches_image() {
        // Wall face at y = 5 facing -y; TX and RX on the street side.
        let wall = Scatterer::new(4, Vec3::new(10.0, 6.0, 5.0), [40.0, 2.0, 10.0]);
        let tx = Vec3::new(0.0, 0.0, 2.0);
        let rx = Vec3::new(12.0, 1.0, 1.5);
        let scene = Scene::new(tx, F28, vec![wall]).unwrap();
        let paths = trace_paths(&scene, rx).unwrap();
        assert_eq!(paths.len(), 2);
        assert_eq!(paths[0].kind, PathKind::Los);
        let refl = &paths[1];
        assert_eq!(refl.via_scatterer, Some(4));
        // Hand image: TX mirrored across y = 5 is (0, 10, 2).
        let expected = ((12.0f64).powi(2) + 9.0f64.powi(2) + 0.5f64.powi(2)).sqrt();
        assert!((refl.length_m - expected).abs() < 1e-9);
        let rp = refl.reflection_point.unwrap();
        assert!((rp.y - 5.0).abs() < 1e-12);
        assert!((refl.loss_db - (fspl_db(expected, F28).unwrap() + 10.0)).abs() < 1e-9);
        assert_eq!(effective_scatterers(&scene, rx).unwrap(), vec![4]);
    }

    #[test]
    fn blocked_without_reflector_is_outage() {
        let wall = Scatterer::new(1, Vec3::new(5.0, 0.0, 5.0), [1.0, 40.0, 40.0]);
        let scene = Scene::new(Vec3::new(0.0, 0.0, 2.0), F28, vec![wall]).unwrap();
        let rx = Vec3::new(10.0, 0.0, 2.0);
        assert!(trace_paths(&scene, rx).unwrap().is_empty());
        let s = path_loss(&scene, rx).unwrap();
        assert_eq!(s.path_loss_db, OUTAGE_CAP_DB);
        assert_eq!(s.n_paths, 0);
        assert!(!s.los);
        assert_eq!(effective_scatterers(&scene, rx).unwrap(), vec![1]);
    }

    #[test]
    fn enclosed_receiver_is_capped() {
        // Four walls around the receiver, TX outside.
        let walls = vec![
            Scatterer::new(1, Vec3::new(-3.0, 0.0, 5.0), [1.0, 8.0, 10.0]),
            Scatterer::new(2, Vec3::new(3.0, 0.0, 5.0), [1.0, 8.0, 10.0]),
            Scatterer::new(3, Vec3::new(0.0, -3.0, 5.0), [8.0, 1.0, 10.0]),
            Scatterer::new(4, Vec3::new(0.0, 3.0, 5.0), [8.0, 1.0, 10.0]),
            Scatterer::new(5, Vec3::new(0.0, 0.0, 10.5), [8.0, 8.0, 1.0]),
        ];
        let scene = Scene::new(Vec3::new(30.0, 0.0, 5.0), F28, walls).unwrap();
        let s = path_loss(&scene, Vec3::new(0.0, 0.0, 1.5)).unwrap();
        assert_eq!(s.path_loss_db, OUTAGE_CAP_DB);
    }

    #[test]
    fn los_beats_reflection() {
        let wall = Scatterer { reflection_loss_db: 3.0, ..Scatterer::new(1, Vec3::new(5.0, 6.0, 5.0), [30.0, 2.0, 10.0]) };
        let scene = Scene::new(Vec3::new(0.0, 0.0, 2.0), F28, vec![wall]).unwrap();
        let rx = Vec3::new(10.0, 0.0, 2.0);
        let s = path_loss(&scene, rx).unwrap();
        assert!(s.los);
        assert_eq!(s.path_loss_db, fspl_db(10.0, F28).unwrap());
    }

    #[test]
    fn blocked_direct_plus_side_reflector() {
        let blocker = Scatterer::new(2, Vec3::new(5.0, 0.0, 5.0), [1.0, 2.0, 20.0]);
        let reflector = Scatterer::new(1, Vec3::new(5.0, 6.0, 5.0), [30.0, 2.0, 10.0]);
        let scene = Scene::new(Vec3::new(0.0, 0.0, 2.0), F28, vec![blocker, reflector]).unwrap();
        let rx = Vec3::new(10.0, 0.0, 2.0);
        let paths = trace_paths(&scene, rx).unwrap();
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].via_scatterer, Some(1));
        let image = mirror_point(scene.tx, AxisPlane { axis: Axis::Y, coord: 5.0 });
        assert!((paths[0].length_m - image.distance(rx)).abs() < 1e-9);
        assert_eq!(effective_scatterers(&scene, rx).unwrap(), vec![1, 2]);
    }

    #[test]
    fn receiver_inside_scatterer_rejected() {
        let bx = Scatterer::new(1, Vec3::new(5.0, 0.0, 0.0), [2.0, 2.0, 2.0]);
        let scene = Scene::new(Vec3::new(0.0, 0.0, 2.0), F28, vec![bx]).unwrap();
        assert!(trace_paths(&scene, Vec3::new(5.0, 0.0, 0.0)).is_err());
    }
}
