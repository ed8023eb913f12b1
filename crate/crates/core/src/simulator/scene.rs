//! Room, array and trajectory sampling.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

pub const MAX_REJECTIONS: usize = 10_000;

/// Inclusive sampling range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..=self.max)
        } else {
            self.min
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(Error::Config(format!(
                "{name}: invalid range [{}, {}]",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Sampling ranges of the scene parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRanges {
    pub room_length: Range,
    pub room_width: Range,
    pub room_height: Range,
    pub rt60: Range,
    pub array_height: Range,
    pub source_height: Range,
    pub speed: Range,
    pub snr_db: Range,
    pub duration_s: Range,
    /// Minimum distance of every microphone and source position from the
    /// walls and floor.
    pub wall_clearance: f64,
    pub min_source_distance: f64,
    /// Number of reusable trajectory shapes.
    pub num_templates: usize,
    pub template_seed: u64,
    /// Fixed waypoint count per trajectory; by default one waypoint every
    /// 250 ms (at least two).
    pub waypoints: Option<usize>,
}

impl Default for SceneRanges {
    fn default() -> Self {
        Self {
            room_length: Range::new(4.0, 8.0),
            room_width: Range::new(4.0, 8.0),
            room_height: Range::new(3.0, 4.0),
            rt60: Range::new(0.3, 0.6),
            array_height: Range::new(1.0, 1.5),
            source_height: Range::new(1.5, 2.0),
            speed: Range::new(1.0, 1.5),
            snr_db: Range::new(0.0, 10.0),
            duration_s: Range::new(1.0, 15.0),
            wall_clearance: 0.5,
            min_source_distance: 0.2,
            num_templates: 50,
            template_seed: 0x5eed_7a11,
            waypoints: None,
        }
    }
}

impl SceneRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("room_length", self.room_length),
            ("room_width", self.room_width),
            ("room_height", self.room_height),
            ("rt60", self.rt60),
            ("array_height", self.array_height),
            ("source_height", self.source_height),
            ("speed", self.speed),
            ("snr_db", self.snr_db),
            ("duration_s", self.duration_s),
        ] {
            r.validate(name)?;
        }
        if self.rt60.min <= 0.0 || self.duration_s.min <= 0.0 || self.room_height.min <= 0.0 {
            return Err(Error::Config(
                "rt60, duration and room size must be positive".into(),
            ));
        }
        if self.num_templates == 0 {
            return Err(Error::Config("num_templates must be at least 1".into()));
        }
        if self.waypoints == Some(0) {
            return Err(Error::Config("waypoints must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub rt60: f64,
}

impl RoomSpec {
    pub fn dims(&self) -> Point {
        [self.length, self.width, self.height]
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn surface(&self) -> f64 {
        2.0 * (self.length * self.width + self.length * self.height + self.width * self.height)
    }

    pub fn contains(&self, p: Point) -> bool {
        p.iter().zip(self.dims()).all(|(v, d)| *v > 0.0 && *v < d)
    }

    /// Distance to the nearest wall, floor or ceiling.
    pub fn clearance(&self, p: Point) -> f64 {
        p.iter()
            .zip(self.dims())
            .map(|(v, d)| v.min(d - v))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Five-microphone planar array: a 20 cm x 19 cm rectangle with corner
/// microphones plus the bottom-edge centre microphone (the top-edge centre
/// position is unused). The array lies in the horizontal plane.
pub const ARRAY_OFFSETS: [Point; 5] = [
    [-0.10, 0.095, 0.0],
    [0.10, 0.095, 0.0],
    [-0.10, -0.095, 0.0],
    [0.0, -0.095, 0.0],
    [0.10, -0.095, 0.0],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub center: Point,
    pub offsets: Vec<Point>,
}

impl ArraySpec {
    pub fn new(center: Point) -> Self {
        Self {
            center,
            offsets: ARRAY_OFFSETS.to_vec(),
        }
    }

    pub fn num_mics(&self) -> usize {
        self.offsets.len()
    }

    pub fn mic_positions(&self) -> Vec<Point> {
        self.offsets
            .iter()
            .map(|o| {
                [
                    self.center[0] + o[0],
                    self.center[1] + o[1],
                    self.center[2] + o[2],
                ]
            })
            .collect()
    }

    /// Half extents of the array around its centre.
    fn half_extent(&self) -> [f64; 3] {
        let mut e = [0.0; 3];
        for o in &self.offsets {
            for k in 0..3 {
                e[k] = f64::max(e[k], o[k].abs());
            }
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Point>,
    pub timestamps: Vec<f64>,
    pub speed: f64,
    pub template: usize,
}

impl Trajectory {
    pub fn is_static(&self) -> bool {
        self.waypoints.len() == 1
    }

    /// Linearly interpolated position at time `t` seconds.
    pub fn position_at(&self, t: f64) -> Point {
        let n = self.waypoints.len();
        if n == 1 || t <= self.timestamps[0] {
            return self.waypoints[0];
        }
        if t >= self.timestamps[n - 1] {
            return self.waypoints[n - 1];
        }
        let k = self.timestamps.partition_point(|&s| s <= t).max(1) - 1;
        let (t0, t1) = (self.timestamps[k], self.timestamps[k + 1]);
        let a = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        let (p, q) = (self.waypoints[k], self.waypoints[k + 1]);
        [
            p[0] + a * (q[0] - p[0]),
            p[1] + a * (q[1] - p[1]),
            p[2] + a * (q[2] - p[2]),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub room: RoomSpec,
    pub array: ArraySpec,
    pub trajectory: Trajectory,
    pub snr_db: f64,
    pub duration_s: f64,
    pub seed: u64,
}

/// A reusable path shape: start point in normalized floor coordinates,
/// initial heading and a constant turn rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryTemplate {
    pub start: [f64; 2],
    pub heading: f64,
    pub turn_rate: f64,
}

pub fn trajectory_templates(count: usize, seed: u64) -> Vec<TrajectoryTemplate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| TrajectoryTemplate {
            start: [rng.random::<f64>(), rng.random::<f64>()],
            heading: rng.random_range(0.0..2.0 * PI),
            turn_rate: rng.random_range(-0.6..=0.6),
        })
        .collect()
}

/// Reflects `v` into `[lo, hi]`, returning whether the direction flipped.
fn reflect(v: f64, lo: f64, hi: f64) -> (f64, bool) {
    let span = hi - lo;
    if span <= 0.0 {
        return (lo, false);
    }
    let mut u = (v - lo).rem_euclid(2.0 * span);
    let flipped = u > span;
    if flipped {
        u = 2.0 * span - u;
    }
    (lo + u, flipped)
}

/// Walks a template inside the horizontal box `[lo, hi]` at `speed`.
fn walk(
    template: &TrajectoryTemplate,
    lo: [f64; 2],
    hi: [f64; 2],
    height: f64,
    speed: f64,
    times: &[f64],
) -> Vec<Point> {
    const SUBSTEPS: usize = 16;
    let mut pos = [
        lo[0] + template.start[0] * (hi[0] - lo[0]),
        lo[1] + template.start[1] * (hi[1] - lo[1]),
    ];
    let mut heading = template.heading;
    let mut out = Vec::with_capacity(times.len());
    let mut now = 0.0;
    for &t in times {
        let dt = (t - now) / SUBSTEPS as f64;
        for _ in 0..SUBSTEPS {
            let mut dir = [heading.cos(), heading.sin()];
            for k in 0..2 {
                let (v, flipped) = reflect(pos[k] + speed * dt * dir[k], lo[k], hi[k]);
                pos[k] = v;
                if flipped {
                    dir[k] = -dir[k];
                }
            }
            heading = dir[1].atan2(dir[0]) + template.turn_rate * dt;
        }
        now = t;
        out.push([pos[0], pos[1], height]);
    }
    out
}

fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Number of trajectory waypoints for an utterance of `duration_s`.
pub fn waypoint_count(duration_s: f64, fixed: Option<usize>) -> usize {
    fixed.unwrap_or_else(|| ((duration_s * 4.0).ceil() as usize).max(2))
}

/// Samples a scene from `seed`.
///
/// The static scene of a seed is the dynamic scene of the same seed cut to
/// its first waypoint.
pub fn sample_scenario(seed: u64, dynamic: bool, ranges: &SceneRanges) -> Result<Scenario> {
    ranges.validate()?;
    let templates = trajectory_templates(ranges.num_templates, ranges.template_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = ranges.wall_clearance;
    for _ in 0..MAX_REJECTIONS {
        let room = RoomSpec {
            length: ranges.room_length.sample(&mut rng),
            width: ranges.room_width.sample(&mut rng),
            height: ranges.room_height.sample(&mut rng),
            rt60: ranges.rt60.sample(&mut rng),
        };
        let duration_s = ranges.duration_s.sample(&mut rng);
        let snr_db = ranges.snr_db.sample(&mut rng);
        let speed = ranges.speed.sample(&mut rng);
        let template = rng.random_range(0..templates.len());
        let source_height = ranges.source_height.sample(&mut rng);
        let mut array = ArraySpec::new([0.0, 0.0, 0.0]);
        let ext = array.half_extent();
        let lo = [c + ext[0], c + ext[1]];
        let hi = [room.length - c - ext[0], room.width - c - ext[1]];
        let ax = rng.random_range(0.0..=1.0);
        let ay = rng.random_range(0.0..=1.0);
        let az = ranges.array_height.sample(&mut rng);
        if hi[0] < lo[0] || hi[1] < lo[1] {
            continue;
        }
        array.center = [
            lo[0] + ax * (hi[0] - lo[0]),
            lo[1] + ay * (hi[1] - lo[1]),
            az,
        ];

        let count = waypoint_count(duration_s, ranges.waypoints);
        let times: Vec<f64> = if count == 1 {
            vec![0.0]
        } else {
            (0..count)
                .map(|k| duration_s * k as f64 / (count - 1) as f64)
                .collect()
        };
        let box_lo = [c, c];
        let box_hi = [room.length - c, room.width - c];
        let waypoints = walk(
            &templates[template],
            box_lo,
            box_hi,
            source_height,
            speed,
            &times,
        );

        let mics = array.mic_positions();
        let mics_ok = mics
            .iter()
            .all(|&m| room.clearance(m) >= c - 1e-12 && room.contains(m));
        let src_ok = waypoints.iter().all(|&p| {
            room.clearance(p) >= c - 1e-12
                && mics
                    .iter()
                    .all(|&m| distance(p, m) >= ranges.min_source_distance)
        });
        if !(mics_ok && src_ok) {
            continue;
        }
        let (waypoints, timestamps) = if dynamic {
            (waypoints, times)
        } else {
            (vec![waypoints[0]], vec![0.0])
        };
        return Ok(Scenario {
            room,
            array,
            trajectory: Trajectory {
                waypoints,
                timestamps,
                speed,
                template,
            },
            snr_db,
            duration_s,
            seed,
        });
    }
    Err(Error::Geometry(format!(
        "no valid scene after {MAX_REJECTIONS} draws for seed {seed}"
    )))
}
