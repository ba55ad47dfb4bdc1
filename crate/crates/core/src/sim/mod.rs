//! Deterministic 2D kinematic driving simulator.
//!
//! A kinematic bicycle drives along a track built from straights and arcs.
//! Observations are ray casts plus ego features; cost marks geometric
//! unsafety; an intervention oracle stands in for a safety driver.

mod scenario;
mod track;
mod trajectory;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use scenario::{
    builtin, curriculum, domain_randomize, shortcut, AgentScript, Hazard, InterventionRule, Obstacle, Physics,
    Randomization, ScenarioSpec, Sensor, Shaping, Vehicle, SCENARIO_VERSION,
};
pub use track::{wrap_angle, Pose, Projection, Segment, Track};
pub use trajectory::{read_trajectory, write_trajectory, StepRecord};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Wrapped to `(−π, π]`.
    pub heading: f64,
    /// Within `[0, v_max]`.
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// Distance along each ray, clamped to the sensor range (m).
    pub rays: Vec<f64>,
    pub speed: f64,
    /// Vehicle heading minus centerline heading, wrapped.
    pub heading_error: f64,
    pub lateral: f64,
    /// Arc-length progress as a fraction of the goal, in `[0, 1]`.
    pub progress: f64,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.rays.len() + 4
    }

    /// Raw values in the documented units.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.rays.clone();
        v.extend([self.speed, self.heading_error, self.lateral, self.progress]);
        v
    }

    /// Values rescaled to roughly unit range, as fed to the world model.
    pub fn features(&self, spec: &ScenarioSpec) -> Vec<f64> {
        let mut v: Vec<f64> = self.rays.iter().map(|r| r / spec.sensor.range).collect();
        v.extend([
            self.speed / spec.vehicle.max_speed,
            self.heading_error / std::f64::consts::PI,
            self.lateral / spec.half_width,
            self.progress,
        ]);
        v
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepInfo {
    pub collision: bool,
    pub goal: bool,
    /// Horizon reached without collision or goal.
    pub timeout: bool,
    /// Straight-line distance covered during the step (m).
    pub distance: f64,
    /// Arc length after the step.
    pub s: f64,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: VehicleState,
    pub observation: Observation,
    pub reward: f64,
    pub cost: f64,
    /// Collision, goal or horizon.
    pub terminated: bool,
    pub info: StepInfo,
}

impl StepOutcome {
    /// True when the episode ended only because time ran out, which a
    /// value function should bootstrap through.
    pub fn truncated(&self) -> bool {
        self.info.timeout && !self.info.collision && !self.info.goal
    }
}

/// Position and velocity of a circular body at the current time.
#[derive(Clone, Copy, Debug)]
struct Body {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    radius: f64,
}

#[derive(Clone, Debug)]
struct ScriptedAgent {
    points: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
    speed: f64,
    radius: f64,
}

impl ScriptedAgent {
    fn new(script: &AgentScript, track: &Track) -> Self {
        let points: Vec<_> = script.waypoints.iter().map(|w| track.point_at(w[0], w[1])).collect();
        let mut cumulative = vec![0.0];
        for w in points.windows(2) {
            let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            cumulative.push(cumulative.last().unwrap() + d);
        }
        Self {
            points,
            cumulative,
            speed: script.speed,
            radius: script.radius,
        }
    }

    /// Ping-pong along the polyline: out to the last waypoint, then back.
    fn body_at(&self, time: f64) -> Body {
        let total = *self.cumulative.last().unwrap();
        if total == 0.0 || self.speed == 0.0 {
            let (x, y) = self.points[0];
            return Body {
                x,
                y,
                vx: 0.0,
                vy: 0.0,
                radius: self.radius,
            };
        }
        let phase = (self.speed * time).rem_euclid(2.0 * total);
        let (d, dir) = if phase <= total {
            (phase, 1.0)
        } else {
            (2.0 * total - phase, -1.0)
        };
        let i = self.cumulative.partition_point(|&c| c <= d).clamp(1, self.points.len() - 1);
        let (a, b) = (self.points[i - 1], self.points[i]);
        let len = self.cumulative[i] - self.cumulative[i - 1];
        let u = if len > 0.0 { (d - self.cumulative[i - 1]) / len } else { 0.0 };
        let (ux, uy) = if len > 0.0 {
            ((b.0 - a.0) / len, (b.1 - a.1) / len)
        } else {
            (0.0, 0.0)
        };
        Body {
            x: a.0 + u * (b.0 - a.0),
            y: a.1 + u * (b.1 - a.1),
            vx: dir * self.speed * ux,
            vy: dir * self.speed * uy,
            radius: self.radius,
        }
    }
}

/// One running episode. Train and deploy environments differ only in the
/// spec they are built from.
#[derive(Clone, Debug)]
pub struct Env {
    spec: ScenarioSpec,
    track: Track,
    state: VehicleState,
    agents: Vec<ScriptedAgent>,
    obstacles: Vec<(f64, f64, f64)>,
    hazards: Vec<(f64, f64, f64)>,
    noise: ChaCha8Rng,
    steps: usize,
    s: f64,
}

impl Env {
    /// Validates `spec`, samples a concrete scenario from its ranges and
    /// places the vehicle at rest at the start of the track.
    pub fn reset(spec: &ScenarioSpec, seed: u64) -> Result<(Self, Observation)> {
        spec.validate()?;
        let spec = domain_randomize(spec, seed);
        let track = spec.track();
        let obstacles = spec
            .obstacles
            .iter()
            .map(|o| {
                let (x, y) = track.point_at(o.s, o.lateral);
                (x, y, o.radius)
            })
            .collect();
        let hazards = spec
            .hazards
            .iter()
            .map(|h| {
                let (x, y) = track.point_at(h.s, h.lateral);
                (x, y, h.radius)
            })
            .collect();
        let agents = spec.agents.iter().map(|a| ScriptedAgent::new(a, &track)).collect();
        let start = track.pose_at(0.0);
        let env = Self {
            state: VehicleState {
                x: start.x,
                y: start.y,
                heading: start.heading,
                speed: 0.0,
            },
            agents,
            obstacles,
            hazards,
            // Separate stream from the randomization draw.
            noise: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0b5e_7a11_0000),
            steps: 0,
            s: 0.0,
            spec,
            track,
        };
        let mut env = env;
        let obs = env.observe();
        Ok((env, obs))
    }

    /// The concrete (already randomized) scenario.
    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn state(&self) -> VehicleState {
        self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.spec.physics.dt
    }

    /// Overrides the vehicle state, for tests and scripted starts.
    pub fn set_state(&mut self, state: VehicleState) {
        self.state = VehicleState {
            heading: wrap_angle(state.heading),
            speed: state.speed.clamp(0.0, self.spec.vehicle.max_speed),
            ..state
        };
        self.s = self.track.project(self.state.x, self.state.y).s;
    }

    fn bodies(&self, time: f64) -> impl Iterator<Item = Body> + '_ {
        let statics = self.obstacles.iter().map(|&(x, y, radius)| Body {
            x,
            y,
            vx: 0.0,
            vy: 0.0,
            radius,
        });
        statics.chain(self.agents.iter().map(move |a| a.body_at(time)))
    }

    /// Geometric unsafe predicate at a position and time: inside an
    /// obstacle's or agent's unsafe radius, inside a hazard, or off the lane.
    pub fn unsafe_at(&self, x: f64, y: f64, time: f64) -> bool {
        self.collides(x, y, time)
            || self.hazards.iter().any(|&(hx, hy, r)| (x - hx).hypot(y - hy) < r)
            || self.track.project(x, y).lateral.abs() > self.spec.half_width
    }

    fn collides(&self, x: f64, y: f64, time: f64) -> bool {
        let reach = self.spec.vehicle.radius;
        self.bodies(time).any(|b| (x - b.x).hypot(y - b.y) < b.radius + reach)
    }

    /// Advances one step of `dt`. Both action components must lie in `[−1, 1]`.
    pub fn step(&mut self, action: [f64; 2]) -> Result<StepOutcome> {
        if action.iter().any(|a| !a.is_finite() || a.abs() > 1.0) {
            return Err(Error::ActionOutOfRange(action));
        }
        let [steer, throttle] = action;
        let v = &self.spec.vehicle;
        let dt = self.spec.physics.dt;
        let st = self.state;
        let heading = wrap_angle(st.heading + st.speed / v.wheelbase * (steer * v.max_steer).tan() * dt);
        let x = st.x + st.speed * heading.cos() * dt;
        let y = st.y + st.speed * heading.sin() * dt;
        let drag = v.drag * self.spec.physics.friction * st.speed;
        let speed = (st.speed + (throttle * v.max_accel - drag) * dt).clamp(0.0, v.max_speed);
        self.state = VehicleState { x, y, heading, speed };
        self.steps += 1;

        let proj = self.track.project(x, y);
        let progress = proj.s - self.s;
        self.s = proj.s;
        let time = self.time();
        let collision = self.collides(x, y, time);
        let cost = if self.unsafe_at(x, y, time) { 1.0 } else { 0.0 };
        let goal = !collision && proj.s >= self.spec.goal;
        let timeout = self.steps >= self.spec.horizon;
        let reward = progress
            - self.spec.shaping.lateral * proj.lateral.abs()
            - self.spec.shaping.action * (steer * steer + throttle * throttle);
        let observation = self.observe();
        Ok(StepOutcome {
            state: self.state,
            observation,
            reward,
            cost,
            terminated: collision || goal || timeout,
            info: StepInfo {
                collision,
                goal,
                timeout,
                distance: (x - st.x).hypot(y - st.y),
                s: proj.s,
            },
        })
    }

    /// Smallest time until the ego circle touches any body, both moving at
    /// constant velocity. Zero when already overlapping.
    pub fn time_to_collision(&self) -> f64 {
        let st = self.state;
        let (evx, evy) = (st.speed * st.heading.cos(), st.speed * st.heading.sin());
        let reach = self.spec.vehicle.radius;
        let mut best = f64::INFINITY;
        for b in self.bodies(self.time()) {
            let (px, py) = (b.x - st.x, b.y - st.y);
            let (vx, vy) = (b.vx - evx, b.vy - evy);
            let r = b.radius + reach;
            let c = px * px + py * py - r * r;
            if c <= 0.0 {
                return 0.0;
            }
            let a = vx * vx + vy * vy;
            let bq = px * vx + py * vy;
            let disc = bq * bq - a * c;
            if a > 0.0 && bq < 0.0 && disc >= 0.0 {
                best = best.min((-bq - disc.sqrt()) / a);
            }
        }
        best
    }

    /// True when a safety driver would take over: imminent collision or the
    /// vehicle far outside its lane (boundary inclusive).
    pub fn intervention_needed(&self) -> bool {
        let rule = &self.spec.intervention;
        let lateral = self.track.project(self.state.x, self.state.y).lateral;
        self.time_to_collision() < rule.ttc || lateral.abs() >= rule.offset_factor * self.spec.half_width
    }

    /// Puts the vehicle back on the centerline at its current arc length,
    /// aligned with the lane and at rest. The episode continues.
    pub fn intervene(&mut self) -> Observation {
        let s = self.track.project(self.state.x, self.state.y).s.clamp(0.0, self.track.length());
        let pose = self.track.pose_at(s);
        self.state = VehicleState {
            x: pose.x,
            y: pose.y,
            heading: pose.heading,
            speed: 0.0,
        };
        self.s = s;
        self.observe()
    }

    /// Noise-free ray distances from the current pose.
    pub fn clean_rays(&self) -> Vec<f64> {
        let sensor = &self.spec.sensor;
        let st = self.state;
        let bodies: Vec<Body> = self.bodies(self.time()).collect();
        (0..sensor.rays)
            .map(|i| {
                let frac = if sensor.rays == 1 {
                    0.5
                } else {
                    i as f64 / (sensor.rays - 1) as f64
                };
                let angle = st.heading - sensor.fov / 2.0 + frac * sensor.fov;
                let (dx, dy) = (angle.cos(), angle.sin());
                let mut d = self
                    .track
                    .ray_to_boundary(st.x, st.y, angle, self.spec.half_width, sensor.range);
                for b in &bodies {
                    if (st.x - b.x).hypot(st.y - b.y) <= b.radius {
                        d = 0.0;
                    } else if let Some(t) = track::ray_circle(st.x, st.y, dx, dy, b.x, b.y, b.radius)[0] {
                        d = d.min(t);
                    }
                }
                d.clamp(0.0, sensor.range)
            })
            .collect()
    }

    fn observe(&mut self) -> Observation {
        let mut rays = self.clean_rays();
        let std = self.spec.physics.sensor_noise;
        if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("finite non-negative std");
            for r in &mut rays {
                *r = (*r + normal.sample(&mut self.noise)).clamp(0.0, self.spec.sensor.range);
            }
        }
        let proj = self.track.project(self.state.x, self.state.y);
        Observation {
            rays,
            speed: self.state.speed,
            heading_error: wrap_angle(self.state.heading - proj.heading),
            lateral: proj.lateral,
            progress: (proj.s / self.spec.goal).clamp(0.0, 1.0),
        }
    }
}

#[cfg(test)]
mod tests;
