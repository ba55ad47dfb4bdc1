//! Scenario descriptions, their TOML schema, randomization and the curriculum.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::track::{Segment, Track};
use crate::{Error, Result};

/// Schema version written into every scenario file.
pub const SCENARIO_VERSION: u32 = 1;

/// Static obstacle placed in track coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    /// Arc length of the centre (m).
    pub s: f64,
    /// Lateral offset of the centre, positive left (m).
    pub lateral: f64,
    pub radius: f64,
}

/// Scripted agent shuttling back and forth along a polyline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentScript {
    /// Waypoints as `[s, lateral]` pairs in track coordinates.
    pub waypoints: Vec<[f64; 2]>,
    pub speed: f64,
    pub radius: f64,
}

/// Region that costs but does not collide, used to make a shortcut unsafe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hazard {
    pub s: f64,
    pub lateral: f64,
    pub radius: f64,
}

/// Ranges sampled by [`domain_randomize`]. Zero everywhere means no
/// randomization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Randomization {
    /// Obstacles move by at most this distance (m).
    pub obstacle_jitter: f64,
    /// Friction factor is drawn from `friction ± friction_spread`.
    pub friction_spread: f64,
    /// Sensor noise std is drawn from `[sensor_noise, sensor_noise + spread]`.
    pub sensor_noise_spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    /// Multiplies the drag coefficient.
    pub friction: f64,
    /// Std of additive Gaussian noise on each ray (m).
    pub sensor_noise: f64,
    pub dt: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self {
            friction: 1.0,
            sensor_noise: 0.0,
            dt: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Vehicle {
    pub wheelbase: f64,
    pub max_steer: f64,
    pub max_accel: f64,
    pub max_speed: f64,
    /// Linear drag coefficient (1/s).
    pub drag: f64,
    /// Collision radius of the ego vehicle (m).
    pub radius: f64,
}

impl Default for Vehicle {
    fn default() -> Self {
        Self {
            wheelbase: 2.5,
            max_steer: 0.5,
            max_accel: 2.0,
            max_speed: 8.0,
            drag: 0.1,
            radius: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sensor {
    pub rays: usize,
    /// Total field of view centred on the heading (rad).
    pub fov: f64,
    pub range: f64,
}

impl Default for Sensor {
    fn default() -> Self {
        Self {
            rays: 16,
            fov: std::f64::consts::PI,
            range: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Shaping {
    pub lateral: f64,
    pub action: f64,
}

impl Default for Shaping {
    fn default() -> Self {
        Self {
            lateral: 0.05,
            action: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionRule {
    /// Minimum admissible time to collision (s).
    pub ttc: f64,
    /// Offset limit as a multiple of the lane half-width.
    pub offset_factor: f64,
}

impl Default for InterventionRule {
    fn default() -> Self {
        Self {
            ttc: 0.5,
            offset_factor: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub version: u32,
    pub name: String,
    pub segments: Vec<Segment>,
    pub half_width: f64,
    pub goal: f64,
    pub horizon: usize,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub agents: Vec<AgentScript>,
    #[serde(default)]
    pub hazards: Vec<Hazard>,
    #[serde(default)]
    pub randomization: Randomization,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub vehicle: Vehicle,
    #[serde(default)]
    pub sensor: Sensor,
    #[serde(default)]
    pub shaping: Shaping,
    #[serde(default)]
    pub intervention: InterventionRule,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidScenario(msg()))
    }
}

fn finite_pos(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

fn finite_nonneg(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

impl ScenarioSpec {
    pub fn track(&self) -> Track {
        Track::new(&self.segments)
    }

    /// Observation length: one entry per ray plus four ego features.
    pub fn observation_dim(&self) -> usize {
        self.sensor.rays + 4
    }

    pub fn has_curves(&self) -> bool {
        self.segments.iter().any(|s| matches!(s, Segment::Arc { .. }))
    }

    pub fn validate(&self) -> Result<()> {
        let name = &self.name;
        check(self.version == SCENARIO_VERSION, || {
            format!("{name}: unsupported version {} (expected {SCENARIO_VERSION})", self.version)
        })?;
        check(!self.segments.is_empty(), || format!("{name}: no track segments"))?;
        for seg in &self.segments {
            let ok = match *seg {
                Segment::Straight { length } => finite_pos(length),
                Segment::Arc { radius, angle } => {
                    finite_pos(radius) && angle.is_finite() && angle != 0.0 && radius > self.half_width
                }
            };
            check(ok, || format!("{name}: bad segment {seg:?}"))?;
        }
        let length = self.segments.iter().map(Segment::length).sum::<f64>();
        check(finite_pos(self.half_width), || format!("{name}: half_width must be positive"))?;
        check(finite_pos(self.goal) && self.goal <= length, || {
            format!("{name}: goal {} outside track of length {length}", self.goal)
        })?;
        check(self.horizon >= 1, || format!("{name}: horizon must be at least 1"))?;
        let in_bounds = |s: f64, lat: f64| (0.0..=length).contains(&s) && lat.abs() <= self.half_width;
        for o in &self.obstacles {
            check(in_bounds(o.s, o.lateral) && finite_pos(o.radius), || {
                format!("{name}: obstacle {o:?} outside the track or with bad radius")
            })?;
        }
        for a in &self.agents {
            check(!a.waypoints.is_empty() && finite_nonneg(a.speed) && finite_pos(a.radius), || {
                format!("{name}: bad agent {a:?}")
            })?;
            for w in &a.waypoints {
                check(in_bounds(w[0], w[1]), || format!("{name}: agent waypoint {w:?} off the track"))?;
            }
        }
        for h in &self.hazards {
            check(h.s.is_finite() && h.lateral.is_finite() && finite_pos(h.radius), || {
                format!("{name}: bad hazard {h:?}")
            })?;
        }
        let r = &self.randomization;
        check(
            finite_nonneg(r.obstacle_jitter) && finite_nonneg(r.friction_spread) && finite_nonneg(r.sensor_noise_spread),
            || format!("{name}: randomization ranges must be non-negative"),
        )?;
        let p = &self.physics;
        check(finite_pos(p.dt), || format!("{name}: dt must be positive"))?;
        check(finite_nonneg(p.sensor_noise), || format!("{name}: negative sensor noise"))?;
        check(p.friction.is_finite() && p.friction - r.friction_spread >= 0.0, || {
            format!("{name}: friction range reaches below zero")
        })?;
        let v = &self.vehicle;
        check(
            [v.wheelbase, v.max_steer, v.max_accel, v.max_speed, v.radius].into_iter().all(finite_pos)
                && finite_nonneg(v.drag),
            || format!("{name}: vehicle parameters must be positive"),
        )?;
        let s = &self.sensor;
        check(s.rays >= 1 && finite_pos(s.range) && finite_nonneg(s.fov), || {
            format!("{name}: bad sensor")
        })?;
        check(finite_nonneg(self.shaping.lateral) && finite_nonneg(self.shaping.action), || {
            format!("{name}: shaping weights must be non-negative")
        })?;
        check(
            finite_nonneg(self.intervention.ttc) && finite_pos(self.intervention.offset_factor),
            || format!("{name}: bad intervention rule"),
        )?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidScenario(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::InvalidScenario(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }
}

/// Samples a concrete scenario from `spec`'s ranges. The result carries
/// zero ranges, so randomizing it again changes nothing.
pub fn domain_randomize(spec: &ScenarioSpec, seed: u64) -> ScenarioSpec {
    let mut out = spec.clone();
    let r = &spec.randomization;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if r.obstacle_jitter > 0.0 {
        let track = spec.track();
        for o in &mut out.obstacles {
            // Uniform in the disc of radius `jitter` around the nominal centre,
            // mapped back to track coordinates.
            let (x, y) = track.point_at(o.s, o.lateral);
            let rho = r.obstacle_jitter * rng.random::<f64>().sqrt();
            let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let p = track.project(x + rho * theta.cos(), y + rho * theta.sin());
            o.s = p.s.clamp(0.0, track.length());
            o.lateral = p.lateral.clamp(-spec.half_width, spec.half_width);
        }
    }
    if r.friction_spread > 0.0 {
        let f = spec.physics.friction;
        out.physics.friction = rng.random_range(f - r.friction_spread..=f + r.friction_spread);
    }
    if r.sensor_noise_spread > 0.0 {
        let n = spec.physics.sensor_noise;
        out.physics.sensor_noise = rng.random_range(n..=n + r.sensor_noise_spread);
    }
    out.randomization = Randomization::default();
    out
}

fn base(name: &str, segments: Vec<Segment>, goal: f64, horizon: usize) -> ScenarioSpec {
    ScenarioSpec {
        version: SCENARIO_VERSION,
        name: name.to_owned(),
        segments,
        half_width: 2.0,
        goal,
        horizon,
        obstacles: Vec::new(),
        agents: Vec::new(),
        hazards: Vec::new(),
        randomization: Randomization {
            obstacle_jitter: 0.2,
            friction_spread: 0.2,
            sensor_noise_spread: 0.05,
        },
        physics: Physics::default(),
        vehicle: Vehicle::default(),
        sensor: Sensor::default(),
        shaping: Shaping::default(),
        intervention: InterventionRule::default(),
    }
}

fn obstacles(at: &[(f64, f64)]) -> Vec<Obstacle> {
    at.iter()
        .map(|&(s, lateral)| Obstacle { s, lateral, radius: 0.3 })
        .collect()
}

fn curved() -> Vec<Segment> {
    vec![
        Segment::Straight { length: 15.0 },
        Segment::Arc { radius: 40.0, angle: 0.5 },
        Segment::Straight { length: 10.0 },
        Segment::Arc { radius: 40.0, angle: -0.5 },
        Segment::Straight { length: 25.0 },
    ]
}

/// Scenarios for a curriculum stage. Stage 1 is a straight corridor with
/// parked obstacles near the lane edges, stage 2 adds curves and stage 3
/// adds scripted vehicles driving along the lane.
pub fn curriculum(stage: u32) -> Result<Vec<ScenarioSpec>> {
    let straight = vec![Segment::Straight { length: 70.0 }];
    let layout_a = obstacles(&[(15.0, 1.5), (30.0, -1.5), (45.0, 1.5)]);
    let layout_b = obstacles(&[(20.0, -1.5), (35.0, 1.5), (50.0, -1.5)]);
    let specs = match stage {
        1 => vec![
            ScenarioSpec {
                obstacles: layout_a,
                ..base("corridor-a", straight.clone(), 60.0, 200)
            },
            ScenarioSpec {
                obstacles: layout_b,
                ..base("corridor-b", straight, 60.0, 200)
            },
        ],
        2 => vec![
            ScenarioSpec {
                obstacles: layout_a,
                ..base("bends-a", curved(), 80.0, 250)
            },
            ScenarioSpec {
                obstacles: layout_b,
                ..base("bends-b", curved(), 80.0, 250)
            },
        ],
        3 => {
            let follower = |lateral: f64| AgentScript {
                waypoints: vec![[25.0, lateral], [75.0, lateral]],
                speed: 2.0,
                radius: 0.3,
            };
            vec![
                ScenarioSpec {
                    obstacles: layout_a,
                    agents: vec![follower(-1.3)],
                    ..base("traffic-a", curved(), 80.0, 250)
                },
                ScenarioSpec {
                    obstacles: layout_b,
                    agents: vec![follower(1.3)],
                    ..base("traffic-b", curved(), 80.0, 250)
                },
            ]
        }
        s => return Err(Error::InvalidStage(s)),
    };
    Ok(specs)
}

/// A straight lane cut by a cost region wider than the lane: the only way
/// to the goal crosses it, so staying safe means stopping short.
pub fn shortcut() -> ScenarioSpec {
    ScenarioSpec {
        half_width: 2.5,
        hazards: vec![Hazard {
            s: 30.0,
            lateral: 0.0,
            radius: 4.0,
        }],
        randomization: Randomization {
            obstacle_jitter: 0.0,
            friction_spread: 0.1,
            sensor_noise_spread: 0.0,
        },
        ..base("shortcut", vec![Segment::Straight { length: 70.0 }], 55.0, 200)
    }
}

/// Every built-in scenario: the three curriculum stages then the shortcut.
pub fn builtin() -> Vec<(String, ScenarioSpec)> {
    let mut out = Vec::new();
    for stage in 1..=3 {
        for spec in curriculum(stage).expect("valid stage") {
            out.push((format!("stage{stage}"), spec));
        }
    }
    out.push(("shortcut".to_owned(), shortcut()));
    out
}
