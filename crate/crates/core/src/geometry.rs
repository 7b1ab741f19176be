//! Scene model and exact geometric predicates.
//!
//! Scatterers are axis-aligned boxes. Everything the propagation oracle needs
//! (slab ray casting, segment occlusion, planar mirroring) lives here.

use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, RekpError, Result};

/// Tolerance for exact geometric predicates, meters.
pub const GEOM_EPS: f64 = 1e-9;
/// Tolerance used when cross-checking against sampled geometry, meters.
pub const SAMPLE_TOL: f64 = 1e-6;

pub const SCENE_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn axis(self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn with_axis(mut self, axis: Axis, v: f64) -> Self {
        match axis {
            Axis::X => self.x = v,
            Axis::Y => self.y = v,
            Axis::Z => self.z = v,
        }
        self
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    /// The two axes spanning a plane normal to `self`.
    pub fn others(self) -> [Axis; 2] {
        match self {
            Axis::X => [Axis::Y, Axis::Z],
            Axis::Y => [Axis::X, Axis::Z],
            Axis::Z => [Axis::X, Axis::Y],
        }
    }
}

/// Plane `axis = coord`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisPlane {
    pub axis: Axis,
    pub coord: f64,
}

pub fn mirror_point(p: Vec3, plane: AxisPlane) -> Vec3 {
    p.with_axis(plane.axis, 2.0 * plane.coord - p.axis(plane.axis))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_point(p: Vec3) -> Self {
        Self { min: p, max: p }
    }

    pub fn include(&mut self, p: Vec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    pub fn union(mut self, o: &Aabb) -> Aabb {
        self.include(o.min);
        self.include(o.max);
        self
    }

    pub fn diagonal(&self) -> f64 {
        self.max.distance(self.min)
    }

    /// Strict interior test, shrunk by [`GEOM_EPS`]; points on the surface are outside.
    pub fn contains_strict(&self, p: Vec3) -> bool {
        Axis::ALL.iter().all(|&a| {
            p.axis(a) > self.min.axis(a) + GEOM_EPS && p.axis(a) < self.max.axis(a) - GEOM_EPS
        })
    }

    pub fn contains_closed(&self, p: Vec3) -> bool {
        Axis::ALL
            .iter()
            .all(|&a| p.axis(a) >= self.min.axis(a) && p.axis(a) <= self.max.axis(a))
    }

    /// Euclidean distance from `p` to the box (0 inside).
    pub fn distance_to(&self, p: Vec3) -> f64 {
        let d = Vec3::new(
            (self.min.x - p.x).max(0.0).max(p.x - self.max.x),
            (self.min.y - p.y).max(0.0).max(p.y - self.max.y),
            (self.min.z - p.z).max(0.0).max(p.z - self.max.z),
        );
        d.norm()
    }
}

/// Axis-aligned box scatterer. `dims` are (length along x, width along y, height along z).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub id: u32,
    pub center: Vec3,
    pub dims: [f64; 3],
    pub reflection_loss_db: f64,
}

/// One face of a scatterer, with its outward normal direction along `plane.axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub scatterer_id: u32,
    pub index: u8,
    pub plane: AxisPlane,
    /// +1.0 when the outward normal points toward increasing coordinate.
    pub outward: f64,
    pub rect_min: Vec3,
    pub rect_max: Vec3,
}

impl Face {
    /// Signed distance of `p` from the face plane, positive on the outward side.
    pub fn outward_distance(&self, p: Vec3) -> f64 {
        (p.axis(self.plane.axis) - self.plane.coord) * self.outward
    }

    /// Whether an in-plane point lies on the face rectangle.
    pub fn covers(&self, p: Vec3) -> bool {
        self.plane.axis.others().iter().all(|&a| {
            p.axis(a) >= self.rect_min.axis(a) - GEOM_EPS && p.axis(a) <= self.rect_max.axis(a) + GEOM_EPS
        })
    }
}

pub const DEFAULT_REFLECTION_LOSS_DB: f64 = 10.0;

impl Scatterer {
    pub fn new(id: u32, center: Vec3, dims: [f64; 3]) -> Self {
        Self { id, center, dims, reflection_loss_db: DEFAULT_REFLECTION_LOSS_DB }
    }

    pub fn aabb(&self) -> Aabb {
        let half = Vec3::new(self.dims[0], self.dims[1], self.dims[2]) * 0.5;
        Aabb { min: self.center - half, max: self.center + half }
    }

    pub fn volume(&self) -> f64 {
        self.dims.iter().product()
    }

    pub fn height(&self) -> f64 {
        self.dims[2]
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.aabb().contains_strict(p)
    }

    /// The six faces in order -x, +x, -y, +y, -z, +z.
    pub fn faces(&self) -> [Face; 6] {
        let bb = self.aabb();
        let mut out = [Face {
            scatterer_id: self.id,
            index: 0,
            plane: AxisPlane { axis: Axis::X, coord: 0.0 },
            outward: 0.0,
            rect_min: bb.min,
            rect_max: bb.max,
        }; 6];
        for (k, face) in out.iter_mut().enumerate() {
            let axis = Axis::ALL[k / 2];
            let (coord, outward) =
                if k % 2 == 0 { (bb.min.axis(axis), -1.0) } else { (bb.max.axis(axis), 1.0) };
            face.index = k as u8;
            face.plane = AxisPlane { axis, coord };
            face.outward = outward;
            face.rect_min = bb.min.with_axis(axis, coord);
            face.rect_max = bb.max.with_axis(axis, coord);
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if !self.center.is_finite() {
            return invalid(format!("scatterer {} has a non-finite center", self.id));
        }
        if !self.dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            return invalid(format!("scatterer {} dims must be positive", self.id));
        }
        if !(self.reflection_loss_db.is_finite() && self.reflection_loss_db >= 0.0) {
            return invalid(format!("scatterer {} reflection loss must be >= 0 dB", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub tx: Vec3,
    pub frequency_hz: f64,
    /// Sorted by id.
    pub scatterers: Vec<Scatterer>,
    pub bounds: Aabb,
}

impl Scene {
    pub fn new(tx: Vec3, frequency_hz: f64, mut scatterers: Vec<Scatterer>) -> Result<Self> {
        if !tx.is_finite() {
            return invalid("transmitter position must be finite");
        }
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return invalid("frequency must be finite and positive");
        }
        scatterers.sort_by_key(|s| s.id);
        let mut bounds = Aabb::from_point(tx);
        for (i, s) in scatterers.iter().enumerate() {
            s.validate()?;
            if i > 0 && scatterers[i - 1].id == s.id {
                return invalid(format!("duplicate scatterer id {}", s.id));
            }
            if s.contains(tx) {
                return invalid(format!("transmitter lies inside scatterer {}", s.id));
            }
            bounds = bounds.union(&s.aabb());
        }
        Ok(Self { tx, frequency_hz, scatterers, bounds })
    }

    /// Grows the scene bounds to cover `points` (e.g. a receiver trajectory).
    pub fn extend_bounds(&mut self, points: &[Vec3]) {
        for &p in points {
            self.bounds.include(p);
        }
    }

    pub fn scatterer(&self, id: u32) -> Option<&Scatterer> {
        self.scatterers.binary_search_by_key(&id, |s| s.id).ok().map(|i| &self.scatterers[i])
    }

    /// Id of the first scatterer (in id order) strictly containing `p`.
    pub fn enclosing(&self, p: Vec3) -> Option<u32> {
        self.scatterers.iter().find(|s| s.contains(p)).map(|s| s.id)
    }

    pub fn without_scatterer(&self, id: u32) -> Scene {
        let mut s = self.clone();
        s.scatterers.retain(|sc| sc.id != id);
        s
    }

    /// Canonical JSON of the scene alone (no trajectory), used for fingerprinting.
    pub fn canonical_json(&self) -> String {
        let doc = SceneDocument::from_parts(self, &[]);
        serde_json::to_string(&doc).expect("scene serialization is infallible")
    }

    /// 64-bit FNV-1a of [`Scene::canonical_json`].
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.canonical_json().as_bytes())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<Vec3>,
    pub spacing_m: f64,
}

impl Trajectory {
    pub fn new(positions: Vec<Vec3>, scene: &Scene) -> Result<Self> {
        if positions.is_empty() {
            return invalid("trajectory must contain at least one position");
        }
        for (i, p) in positions.iter().enumerate() {
            if !p.is_finite() {
                return invalid(format!("trajectory position {} is not finite", i + 1));
            }
            if let Some(id) = scene.enclosing(*p) {
                return invalid(format!("trajectory position {} lies inside scatterer {id}", i + 1));
            }
        }
        let spacing_m = if positions.len() > 1 { positions[0].distance(positions[1]) } else { 0.0 };
        Ok(Self { positions, spacing_m })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Slab-method ray/box test.
///
/// Returns the parameter interval `(t_enter, t_exit)` of `origin + t * direction`
/// inside the box, restricted to `t >= 0`. A ray starting inside reports
/// `t_enter = 0`. The box is closed: rays touching the surface hit.
pub fn ray_box_intersect(origin: Vec3, direction: Vec3, bx: &Scatterer) -> Result<Option<(f64, f64)>> {
    if !(direction.is_finite() && direction.norm() > 0.0) {
        return invalid("ray direction must be nonzero");
    }
    Ok(slab_interval(origin, direction, &bx.aabb(), false).and_then(|(t0, t1)| {
        if t1 < 0.0 {
            None
        } else {
            Some((t0.max(0.0), t1))
        }
    }))
}

/// Unclipped line/box interval. With `strict`, a line parallel to a slab and
/// lying on its boundary misses.
fn slab_interval(origin: Vec3, direction: Vec3, bb: &Aabb, strict: bool) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in Axis::ALL {
        let o = origin.axis(a);
        let d = direction.axis(a);
        let (lo, hi) = (bb.min.axis(a), bb.max.axis(a));
        if d == 0.0 {
            let outside = if strict { o <= lo + GEOM_EPS || o >= hi - GEOM_EPS } else { o < lo || o > hi };
            if outside {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let (mut ta, mut tb) = ((lo - o) * inv, (hi - o) * inv);
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Blockage {
    pub blocked: bool,
    /// Ascending.
    pub blocker_ids: Vec<u32>,
    /// Fraction of the segment covered by the union of scatterer intervals.
    pub blocked_fraction: f64,
}

/// Occlusion test of the segment `p -> q` against every scatterer.
pub fn segment_blocked(p: Vec3, q: Vec3, scene: &Scene) -> Result<Blockage> {
    if p.distance(q) <= GEOM_EPS {
        return invalid("segment endpoints coincide");
    }
    Ok(occlusion(p, q, scene, None))
}

/// Segment occlusion skipping scatterer `skip`. A scatterer blocks only when the
/// segment spends more than [`GEOM_EPS`] meters inside it, so grazing contact and
/// endpoint touches do not count.
pub(crate) fn occlusion(p: Vec3, q: Vec3, scene: &Scene, skip: Option<u32>) -> Blockage {
    let dir = q - p;
    let len = dir.norm();
    let mut intervals = Vec::new();
    let mut ids = Vec::new();
    for s in &scene.scatterers {
        if Some(s.id) == skip {
            continue;
        }
        if let Some((t0, t1)) = slab_interval(p, dir, &s.aabb(), true) {
            let (a, b) = (t0.max(0.0), t1.min(1.0));
            if (b - a) * len > GEOM_EPS {
                intervals.push((a, b));
                ids.push(s.id);
            }
        }
    }
    intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut covered = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (a, b) in intervals {
        cur = match cur {
            Some((ca, cb)) if a <= cb => Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                covered += cb - ca;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    if let Some((ca, cb)) = cur {
        covered += cb - ca;
    }
    Blockage { blocked: !ids.is_empty(), blocker_ids: ids, blocked_fraction: covered.clamp(0.0, 1.0) }
}

/// Parameters of the canonical street-canyon scene.
///
/// The street runs along +x between two rows of buildings. The transmitter is
/// mounted on the north side; the receiver walks along the south sidewalk.
/// A low wall in the street shadows the first positions, which then reach the
/// transmitter through a bounce off the south row behind the receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreetParams {
    pub spacing_m: f64,
    pub n_positions: usize,
    pub frequency_hz: f64,
    pub tx_height_m: f64,
    pub rx_height_m: f64,
    /// Transmitter y coordinate (north side of the street).
    pub tx_y: f64,
    /// Receiver walk line y coordinate.
    pub rx_y: f64,
    /// x of the first receiver position.
    pub start_x: f64,
    pub street_half_width: f64,
    pub row_depth: f64,
    pub block_length: f64,
    pub block_gap: f64,
    /// Range of row building heights drawn from the seed.
    pub min_height: f64,
    pub max_height: f64,
    pub end_x: f64,
    /// x where the south row of buildings begins.
    pub south_start_x: f64,
    pub blocker: Option<BlockerParams>,
    pub reflection_loss_db: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockerParams {
    /// x of the blocker's east (trajectory-side) end.
    pub east_x: f64,
    pub length: f64,
    /// y of the blocker's transmitter-facing side.
    pub face_y: f64,
    pub thickness: f64,
    /// Slightly above the direct ray at `face_y`.
    pub height: f64,
}

impl Default for BlockerParams {
    fn default() -> Self {
        Self { east_x: 34.0, length: 12.0, face_y: -4.0, thickness: 1.0, height: 4.1 }
    }
}

impl Default for StreetParams {
    fn default() -> Self {
        Self {
            spacing_m: 3.5,
            n_positions: 15,
            frequency_hz: 28e9,
            tx_height_m: 10.0,
            rx_height_m: 1.5,
            tx_y: 12.0,
            rx_y: -10.0,
            start_x: 34.5,
            street_half_width: 15.0,
            row_depth: 15.0,
            block_length: 24.0,
            block_gap: 6.0,
            min_height: 12.0,
            max_height: 30.0,
            end_x: 120.0,
            south_start_x: 20.0,
            blocker: Some(BlockerParams::default()),
            reflection_loss_db: DEFAULT_REFLECTION_LOSS_DB,
            seed: 0,
        }
    }
}

fn box_from_extent(id: u32, min: Vec3, max: Vec3, loss: f64) -> Scatterer {
    Scatterer {
        id,
        center: (min + max) * 0.5,
        dims: [max.x - min.x, max.y - min.y, max.z - min.z],
        reflection_loss_db: loss,
    }
}

/// Deterministic street-canyon scene and receiver trajectory.
///
/// The seed only varies row building heights, which never touch the direct
/// transmitter/receiver segments, so the LOS/NLOS split depends on the
/// blocker geometry alone.
pub fn canonical_street_scene(params: &StreetParams) -> Result<(Scene, Trajectory)> {
    let p = params;
    let finite = [
        p.spacing_m, p.frequency_hz, p.tx_height_m, p.rx_height_m, p.tx_y, p.rx_y, p.start_x,
        p.street_half_width, p.row_depth, p.block_length, p.block_gap, p.min_height, p.max_height, p.end_x,
        p.south_start_x, p.reflection_loss_db,
    ];
    if finite.iter().any(|v| !v.is_finite()) {
        return invalid("street parameters must be finite");
    }
    if p.n_positions == 0 || p.spacing_m <= 0.0 {
        return invalid("need at least one position and positive spacing");
    }
    if p.street_half_width <= 0.0 || p.row_depth <= 0.0 || p.block_length <= 0.0 || p.block_gap < 0.0 {
        return invalid("street and block dimensions must be positive");
    }
    if !(p.min_height > 0.0 && p.max_height >= p.min_height) {
        return invalid("building height range must be positive and ordered");
    }
    if p.tx_height_m <= 0.0 || p.rx_height_m <= 0.0 {
        return invalid("antenna heights must be positive");
    }
    let hw = p.street_half_width;
    let mut rng = crate::rng::stream(p.seed, &[0x5ce4e]);
    let mut scatterers = Vec::new();
    let mut next_id = 1u32;
    let loss = p.reflection_loss_db;

    let mut push = |scatterers: &mut Vec<Scatterer>, min: Vec3, max: Vec3| {
        scatterers.push(box_from_extent(next_id, min, max, loss));
        next_id += 1;
    };

    // Blocker is id 1: a low wall standing in the street.
    if let Some(b) = &p.blocker {
        if !(b.length > 0.0 && b.height > 0.0 && b.thickness > 0.0) || !(b.east_x.is_finite() && b.face_y.is_finite()) {
            return invalid("blocker dimensions must be positive");
        }
        if b.face_y - b.thickness <= -hw || b.face_y >= hw {
            return invalid("blocker must stand inside the street");
        }
        push(
            &mut scatterers,
            Vec3::new(b.east_x - b.length, b.face_y - b.thickness, 0.0),
            Vec3::new(b.east_x, b.face_y, b.height),
        );
    }

    let mut row = |scatterers: &mut Vec<Scatterer>, from: f64, y0: f64, y1: f64| {
        let mut x = from;
        while x + GEOM_EPS < p.end_x {
            let x1 = (x + p.block_length).min(p.end_x);
            let h = rng.random_range(p.min_height..=p.max_height);
            push(scatterers, Vec3::new(x, y0, 0.0), Vec3::new(x1, y1, h));
            x = x1 + p.block_gap;
        }
    };
    row(&mut scatterers, -20.0, hw, hw + p.row_depth);
    row(&mut scatterers, p.south_start_x, -hw - p.row_depth, -hw);
    // Building closing the far end of the street.
    let end_h = p.max_height;
    let end_min = Vec3::new(p.end_x + p.block_gap, -hw - p.row_depth, 0.0);
    let end_max = Vec3::new(p.end_x + p.block_gap + p.row_depth, hw + p.row_depth, end_h);
    scatterers.push(box_from_extent(next_id, end_min, end_max, loss));

    let tx = Vec3::new(0.0, p.tx_y, p.tx_height_m);
    let mut scene = Scene::new(tx, p.frequency_hz, scatterers)?;
    let positions: Vec<Vec3> = (0..p.n_positions)
        .map(|i| Vec3::new(p.start_x + p.spacing_m * i as f64, p.rx_y, p.rx_height_m))
        .collect();
    for (i, rx) in positions.iter().enumerate() {
        if scene.enclosing(*rx).is_some() || rx.y.abs() >= hw || rx.x >= p.end_x + p.block_gap {
            return invalid(format!("receiver position {} falls inside scene geometry", i + 1));
        }
    }
    let trajectory = Trajectory::new(positions, &scene)?;
    scene.extend_bounds(&trajectory.positions);
    Ok((scene, trajectory))
}

/// On-disk scene + trajectory document. Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDocument {
    pub version: u64,
    pub frequency_hz: f64,
    pub tx: Vec3,
    pub scatterers: Vec<Scatterer>,
    pub trajectory: Vec<Vec3>,
}

impl SceneDocument {
    pub fn from_parts(scene: &Scene, trajectory: &[Vec3]) -> Self {
        Self {
            version: SCENE_FORMAT_VERSION,
            frequency_hz: scene.frequency_hz,
            tx: scene.tx,
            scatterers: scene.scatterers.clone(),
            trajectory: trajectory.to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scene serialization is infallible");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| RekpError::Malformed(format!("scene document: {e}")))?;
        check_version(&value, SCENE_FORMAT_VERSION)?;
        serde_json::from_value(value).map_err(|e| RekpError::Malformed(format!("scene document: {e}")))
    }

    /// Validated scene (bounds include the trajectory) and trajectory.
    pub fn into_scene(self) -> Result<(Scene, Trajectory)> {
        let mut scene = Scene::new(self.tx, self.frequency_hz, self.scatterers)?;
        let traj = Trajectory::new(self.trajectory, &scene)?;
        scene.extend_bounds(&traj.positions);
        Ok((scene, traj))
    }
}

pub(crate) fn check_version(value: &serde_json::Value, expected: u64) -> Result<()> {
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == expected => Ok(()),
        Some(v) => Err(RekpError::VersionMismatch { found: v, expected }),
        None => Err(RekpError::Malformed("missing or non-integer version field".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> Scatterer {
        Scatterer::new(1, Vec3::ZERO, [1.0, 1.0, 1.0])
    }

    #[test]
    fn slab_axis_aligned_hit() {
        let (t0, t1) = ray_box_intersect(Vec3::new(-5.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), &unit_cube())
            .unwrap()
            .unwrap();
        assert_eq!((t0, t1), (4.5, 5.5));
    }

    #[test]
    fn slab_ray_pointing_away() {
        let r = ray_box_intersect(Vec3::new(-5.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), &unit_cube()).unwrap();
        assert!(r.is_none());
    }

    #[test]
    fn slab_zero_direction_is_rejected() {
        let r = ray_box_intersect(Vec3::ZERO, Vec3::ZERO, &unit_cube());
        assert!(matches!(r, Err(RekpError::InvalidArgument(_))));
    }

    #[test]
    fn slab_ray_from_inside_starts_at_zero() {
        let (t0, t1) = ray_box_intersect(Vec3::ZERO, Vec3::new(0.0, 0.0, 2.0), &unit_cube()).unwrap().unwrap();
        assert_eq!(t0, 0.0);
        assert!((t1 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn diagonal_ray_matches_point_sampling() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let origin = Vec3::new(-2.0, -2.0, 0.5);
        let dir = Vec3::new(s, s, 0.0);
        let bx = unit_cube();
        let (t0, t1) = ray_box_intersect(origin, dir, &bx).unwrap().unwrap();
        // Brute force: walk the ray in 1e-4 m steps and record first/last inside sample.
        let bb = bx.aabb();
        let step = 1e-4;
        let (mut first, mut last) = (None, None);
        for k in 0..60_000 {
            let t = k as f64 * step;
            if bb.contains_closed(origin + dir * t) {
                first.get_or_insert(t);
                last = Some(t);
            }
        }
        assert!((t0 - first.unwrap()).abs() <= step);
        assert!((t1 - last.unwrap()).abs() <= step);
    }

    #[test]
    fn empty_scene_never_blocks() {
        let scene = Scene::new(Vec3::ZERO, 28e9, vec![]).unwrap();
        let b = segment_blocked(Vec3::ZERO, Vec3::new(10.0, 0.0, 0.0), &scene).unwrap();
        assert_eq!(b, Blockage { blocked: false, blocker_ids: vec![], blocked_fraction: 0.0 });
    }

    #[test]
    fn wall_blocks_segment() {
        let wall = Scatterer::new(3, Vec3::new(5.0, 0.0, 0.0), [1.0, 10.0, 10.0]);
        let scene = Scene::new(Vec3::ZERO, 28e9, vec![wall]).unwrap();
        let b = segment_blocked(Vec3::ZERO, Vec3::new(10.0, 0.0, 0.0), &scene).unwrap();
        assert!(b.blocked);
        assert_eq!(b.blocker_ids, vec![3]);
        assert!((b.blocked_fraction - 0.1).abs() < 1e-12);
    }

    #[test]
    fn two_disjoint_blockers_add_up() {
        let a = Scatterer::new(1, Vec3::new(2.5, 0.0, 0.0), [1.0, 4.0, 4.0]);
        let b = Scatterer::new(2, Vec3::new(7.5, 0.0, 0.0), [1.0, 4.0, 4.0]);
        let scene = Scene::new(Vec3::ZERO, 28e9, vec![b, a]).unwrap();
        let p = Vec3::ZERO;
        let q = Vec3::new(10.0, 0.0, 0.0);
        let blk = segment_blocked(p, q, &scene).unwrap();
        assert_eq!(blk.blocker_ids, vec![1, 2]);
        // Sampling cross-check of the interval union.
        let n = 1_000_000;
        let inside = (0..n)
            .filter(|&k| {
                let t = (k as f64 + 0.5) / n as f64;
                scene.scatterers.iter().any(|s| s.aabb().contains_closed(p + (q - p) * t))
            })
            .count();
        let sampled = inside as f64 / n as f64;
        assert!((sampled - 0.2).abs() < 1e-5);
        assert!((blk.blocked_fraction - 0.2).abs() < 1e-12);
    }

    #[test]
    fn coincident_endpoints_rejected() {
        let scene = Scene::new(Vec3::ZERO, 28e9, vec![]).unwrap();
        assert!(segment_blocked(Vec3::ZERO, Vec3::ZERO, &scene).is_err());
    }

    #[test]
    fn grazing_contact_does_not_block() {
        let bx = Scatterer::new(1, Vec3::new(5.0, 1.0, 0.0), [2.0, 2.0, 2.0]);
        let scene = Scene::new(Vec3::ZERO, 28e9, vec![bx]).unwrap();
        let b = segment_blocked(Vec3::ZERO, Vec3::new(10.0, 0.0, 0.0), &scene).unwrap();
        assert!(!b.blocked);
    }

    #[test]
    fn mirror_across_plane() {
        let plane = AxisPlane { axis: Axis::Z, coord: 0.0 };
        assert_eq!(mirror_point(Vec3::new(1.0, 2.0, 3.0), plane), Vec3::new(1.0, 2.0, -3.0));
        let on = Vec3::new(4.0, -1.0, 0.0);
        assert_eq!(mirror_point(on, plane), on);
        let p = Vec3::new(0.3, 1.7, -2.9);
        let plane = AxisPlane { axis: Axis::X, coord: 1.234 };
        let back = mirror_point(mirror_point(p, plane), plane);
        assert!(back.distance(p) < 1e-12);
    }

    #[test]
    fn tx_inside_scatterer_rejected() {
        let r = Scene::new(Vec3::ZERO, 28e9, vec![unit_cube()]);
        assert!(r.is_err());
    }

    #[test]
    fn faces_are_outward() {
        let s = Scatterer::new(1, Vec3::new(1.0, 2.0, 3.0), [2.0, 4.0, 6.0]);
        let faces = s.faces();
        assert_eq!(faces[0].plane.coord, 0.0);
        assert_eq!(faces[1].plane.coord, 2.0);
        assert_eq!(faces[5].plane, AxisPlane { axis: Axis::Z, coord: 6.0 });
        assert!(faces[5].outward_distance(Vec3::new(1.0, 2.0, 10.0)) > 0.0);
        assert!(faces[4].outward_distance(Vec3::new(1.0, 2.0, 3.0)) < 0.0);
    }

    #[test]
    fn canonical_scene_is_deterministic() {
        let p = StreetParams { seed: 7, ..Default::default() };
        let a = canonical_street_scene(&p).unwrap();
        let b = canonical_street_scene(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.1.len(), 15);
    }

    #[test]
    fn receiver_inside_geometry_rejected() {
        let p = StreetParams { rx_y: -20.0, ..Default::default() };
        assert!(matches!(canonical_street_scene(&p), Err(RekpError::InvalidArgument(_))));
    }

    #[test]
    fn scene_document_version_checked() {
        let (scene, traj) = canonical_street_scene(&StreetParams::default()).unwrap();
        let text = SceneDocument::from_parts(&scene, &traj.positions).to_json();
        let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
        assert!(matches!(SceneDocument::from_json(&bumped), Err(RekpError::VersionMismatch { found: 2, .. })));
        assert!(matches!(SceneDocument::from_json(&text[..text.len() / 2]), Err(RekpError::Malformed(_))));
    }
}
