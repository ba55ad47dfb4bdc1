use proptest::prelude::*;

use super::*;

fn empty_straight() -> ScenarioSpec {
    ScenarioSpec {
        obstacles: Vec::new(),
        randomization: Randomization::default(),
        ..curriculum(1).unwrap().remove(0)
    }
}

fn with_obstacle(s: f64, lateral: f64) -> ScenarioSpec {
    ScenarioSpec {
        obstacles: vec![Obstacle { s, lateral, radius: 0.3 }],
        ..empty_straight()
    }
}

#[test]
fn zero_ranges_give_the_same_start_for_any_seed() {
    let spec = with_obstacle(20.0, 1.0);
    let (a, oa) = Env::reset(&spec, 1).unwrap();
    let (b, ob) = Env::reset(&spec, 999).unwrap();
    assert_eq!(a.state(), b.state());
    assert_eq!(oa, ob);
    assert_eq!(a.spec(), &spec);
}

#[test]
fn reset_is_deterministic_with_noise() {
    let spec = curriculum(3).unwrap().remove(0);
    let run = || {
        let (mut env, first) = Env::reset(&spec, 42).unwrap();
        let mut obs = vec![first.to_vec()];
        for k in 0..30 {
            let out = env.step([0.1 * ((k % 5) as f64 - 2.0), 0.7]).unwrap();
            obs.push(out.observation.to_vec());
            obs.push(vec![out.reward, out.cost]);
        }
        obs
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn jitter_stays_within_radius() {
    for spec in [curriculum(1).unwrap().remove(0), curriculum(2).unwrap().remove(1)] {
        let r = spec.randomization.obstacle_jitter;
        let track = spec.track();
        let mut moved = false;
        for seed in 0..100 {
            let out = domain_randomize(&spec, seed);
            for (o, n) in out.obstacles.iter().zip(&spec.obstacles) {
                let (x0, y0) = track.point_at(n.s, n.lateral);
                let (x1, y1) = track.point_at(o.s, o.lateral);
                let d = (x1 - x0).hypot(y1 - y0);
                assert!(d <= r + 1e-9, "{} moved {d} > {r}", spec.name);
                moved |= d > 0.0;
            }
        }
        assert!(moved);
    }
}

#[test]
fn idle_from_rest_stays_put() {
    let (mut env, _) = Env::reset(&empty_straight(), 0).unwrap();
    let before = env.state();
    let out = env.step([0.0, 0.0]).unwrap();
    assert_eq!(out.state, before);
    assert_eq!(out.reward, 0.0);
    assert_eq!(out.cost, 0.0);
    assert!(!out.terminated);
}

#[test]
fn full_throttle_matches_closed_form() {
    let spec = empty_straight();
    let v = &spec.vehicle;
    let dt = spec.physics.dt;
    // v_k = v*(1 − q^k) until the cap, with q = 1 − c·dt and v* = a/c.
    let c = v.drag * spec.physics.friction;
    let q = 1.0 - c * dt;
    let v_star = v.max_accel / c;
    let speed_at = |k: i32| (v_star * (1.0 - q.powi(k))).min(v.max_speed);
    let (mut env, _) = Env::reset(&spec, 3).unwrap();
    let n = 120;
    for _ in 0..n {
        env.step([0.0, 1.0]).unwrap();
    }
    // Position uses the speed at the start of each step; split the sum at
    // the first capped step and use the geometric series before it.
    let cap = (0..).find(|&k| v_star * (1.0 - q.powi(k)) >= v.max_speed).unwrap();
    let k1 = cap.min(n);
    let uncapped = v_star * (k1 as f64 - (1.0 - q.powi(k1)) / (1.0 - q));
    let x = dt * (uncapped + v.max_speed * (n - k1) as f64);
    let st = env.state();
    assert!((st.x - x).abs() <= 1e-9, "{} vs {x}", st.x);
    assert_eq!(st.y, 0.0);
    assert!((st.speed - speed_at(n)).abs() <= 1e-9);
}

#[test]
fn entering_an_obstacle_costs_and_terminates() {
    let spec = with_obstacle(1.5, 0.0);
    let (mut env, _) = Env::reset(&spec, 0).unwrap();
    env.set_state(VehicleState {
        x: 0.0,
        y: 0.0,
        heading: 0.0,
        speed: 3.0,
    });
    // Drive on until the circles overlap; nothing costs before that.
    let mut out = env.step([0.0, 0.0]).unwrap();
    while !out.terminated {
        assert_eq!(out.cost, 0.0);
        out = env.step([0.0, 0.0]).unwrap();
    }
    assert!(out.info.collision);
    assert_eq!(out.cost, 1.0);
    assert!((1.5 - out.state.x) < 0.8);
}

#[test]
fn out_of_range_actions_are_rejected() {
    let (mut env, _) = Env::reset(&empty_straight(), 0).unwrap();
    for a in [[1.01, 0.0], [0.0, -1.5], [f64::NAN, 0.0]] {
        assert!(matches!(env.step(a), Err(Error::ActionOutOfRange(_))));
    }
    assert_eq!(env.steps(), 0);
}

#[test]
fn lane_departure_costs_without_terminating() {
    let (mut env, _) = Env::reset(&empty_straight(), 0).unwrap();
    env.set_state(VehicleState {
        x: 10.0,
        y: 2.5,
        heading: 0.0,
        speed: 1.0,
    });
    let out = env.step([0.0, 0.0]).unwrap();
    assert_eq!(out.cost, 1.0);
    assert!(!out.terminated);
}

#[test]
fn goal_and_horizon_terminate() {
    let spec = ScenarioSpec {
        horizon: 5,
        ..empty_straight()
    };
    let (mut env, _) = Env::reset(&spec, 0).unwrap();
    for _ in 0..4 {
        assert!(!env.step([0.0, 1.0]).unwrap().terminated);
    }
    let last = env.step([0.0, 1.0]).unwrap();
    assert!(last.terminated && last.truncated());

    let (mut env, _) = Env::reset(&empty_straight(), 0).unwrap();
    env.set_state(VehicleState {
        x: 59.9,
        y: 0.0,
        heading: 0.0,
        speed: 5.0,
    });
    let out = env.step([0.0, 0.0]).unwrap();
    assert!(out.info.goal && out.terminated && !out.truncated());
}

#[test]
fn oracle_quiet_when_stationary_on_empty_track() {
    let (env, _) = Env::reset(&empty_straight(), 0).unwrap();
    assert!(!env.intervention_needed());
    assert_eq!(env.time_to_collision(), f64::INFINITY);
}

#[test]
fn oracle_fires_on_short_time_to_collision() {
    let (mut env, _) = Env::reset(&with_obstacle(20.0, 0.0), 0).unwrap();
    // Gap between the circles is 0.5 m at 5 m/s: 0.1 s.
    env.set_state(VehicleState {
        x: 20.0 - 0.8 - 0.5,
        y: 0.0,
        heading: 0.0,
        speed: 5.0,
    });
    assert!((env.time_to_collision() - 0.1).abs() < 1e-12);
    assert!(env.intervention_needed());
    // Five metres away the same speed gives a full second.
    env.set_state(VehicleState {
        x: 20.0 - 0.8 - 5.0,
        y: 0.0,
        heading: 0.0,
        speed: 5.0,
    });
    assert!((env.time_to_collision() - 1.0).abs() < 1e-12);
    assert!(!env.intervention_needed());
}

#[test]
fn oracle_offset_boundary_is_inclusive() {
    let (mut env, _) = Env::reset(&empty_straight(), 0).unwrap();
    let limit = 1.5 * env.spec().half_width;
    let at = |y: f64| VehicleState {
        x: 10.0,
        y,
        heading: 0.0,
        speed: 0.0,
    };
    env.set_state(at(limit));
    assert!(env.intervention_needed());
    env.set_state(at(limit - 1e-9));
    assert!(!env.intervention_needed());
    env.set_state(at(-limit));
    assert!(env.intervention_needed());
}

#[test]
fn intervention_recentres_and_stops() {
    let spec = curriculum(2).unwrap().remove(0);
    let (mut env, _) = Env::reset(&spec, 0).unwrap();
    let (x, y) = env.track().point_at(30.0, 3.1);
    env.set_state(VehicleState {
        x,
        y,
        heading: 1.0,
        speed: 4.0,
    });
    let obs = env.intervene();
    let st = env.state();
    let p = env.track().project(st.x, st.y);
    assert!((p.s - 30.0).abs() < 1e-9 && p.lateral.abs() < 1e-9);
    assert_eq!(st.speed, 0.0);
    assert!(obs.heading_error.abs() < 1e-9);
}

#[test]
fn curriculum_features_grow_by_stage() {
    let features = |stage| {
        let specs = curriculum(stage).unwrap();
        for s in &specs {
            s.validate().unwrap();
        }
        (
            specs.iter().any(|s| !s.obstacles.is_empty()),
            specs.iter().any(ScenarioSpec::has_curves),
            specs.iter().any(|s| !s.agents.is_empty()),
        )
    };
    let s1 = curriculum(1).unwrap();
    assert!(s1.iter().all(|s| !s.has_curves() && s.agents.is_empty()));
    assert!(curriculum(3).unwrap().iter().all(|s| !s.agents.is_empty()));
    assert_eq!(features(1), (true, false, false));
    assert_eq!(features(2), (true, true, false));
    assert_eq!(features(3), (true, true, true));
    for bad in [0, 4] {
        assert!(matches!(curriculum(bad), Err(Error::InvalidStage(_))));
    }
    shortcut().validate().unwrap();
}

#[test]
fn randomize_with_zero_ranges_is_identity() {
    let spec = with_obstacle(20.0, 1.0);
    assert_eq!(domain_randomize(&spec, 7), spec);
}

#[test]
fn randomize_differs_across_seeds() {
    let spec = curriculum(1).unwrap().remove(0);
    assert_ne!(domain_randomize(&spec, 1), domain_randomize(&spec, 2));
    assert_eq!(domain_randomize(&spec, 1), domain_randomize(&spec, 1));
}

#[test]
fn friction_samples_are_uniform_on_the_declared_range() {
    let spec = curriculum(1).unwrap().remove(0);
    let (f, w) = (spec.physics.friction, spec.randomization.friction_spread);
    let samples: Vec<f64> = (0..1000).map(|s| domain_randomize(&spec, s).physics.friction).collect();
    assert!(samples.iter().all(|x| (f - w..=f + w).contains(x)));
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    assert!((mean - f).abs() <= 0.05 * f);
    let noise = domain_randomize(&spec, 5).physics.sensor_noise;
    assert!((0.0..=spec.randomization.sensor_noise_spread).contains(&noise));
}

#[test]
fn toml_round_trip_and_validation() {
    for (_, spec) in builtin() {
        let text = spec.to_toml().unwrap();
        assert_eq!(ScenarioSpec::from_toml(&text).unwrap(), spec);
    }
    let good = empty_straight();
    let bad = [
        ScenarioSpec { version: 2, ..good.clone() },
        ScenarioSpec { horizon: 0, ..good.clone() },
        ScenarioSpec {
            randomization: Randomization {
                obstacle_jitter: -0.1,
                ..Randomization::default()
            },
            ..good.clone()
        },
        ScenarioSpec {
            obstacles: vec![Obstacle {
                s: 10.0,
                lateral: 2.5,
                radius: 0.3,
            }],
            ..good.clone()
        },
        ScenarioSpec {
            goal: 1000.0,
            ..good.clone()
        },
    ];
    for spec in bad {
        assert!(matches!(spec.validate(), Err(Error::InvalidScenario(_))));
        assert!(Env::reset(&spec, 0).is_err());
    }
    let minimal = r#"
        version = 1
        name = "mini"
        half_width = 2.0
        goal = 20.0
        horizon = 50
        [[segments]]
        kind = "straight"
        length = 30.0
        [[segments]]
        kind = "arc"
        radius = 10.0
        angle = -0.5
    "#;
    let spec = ScenarioSpec::from_toml(minimal).unwrap();
    assert_eq!(spec.sensor.rays, 16);
    assert!(spec.has_curves());
    assert!(ScenarioSpec::from_toml("version = 1\nname = \"x\"\nbogus = 3").is_err());
}

#[test]
fn rays_see_boundaries_and_obstacles() {
    let spec = ScenarioSpec {
        obstacles: vec![Obstacle {
            s: 5.0,
            lateral: 0.0,
            radius: 1.0,
        }],
        ..empty_straight()
    };
    let (mut env, obs) = Env::reset(&spec, 0).unwrap();
    assert_eq!(obs.dim(), 20);
    // First and last rays point straight left and right at the lane edges.
    assert!((obs.rays[0] - 2.0).abs() < 1e-9 && (obs.rays[15] - 2.0).abs() < 1e-9);
    // The two middle rays sit 6 degrees either side of forward.
    let theta = 6f64.to_radians();
    let hit = 5.0 * theta.cos() - (1.0 - (5.0 * theta.sin()).powi(2)).sqrt();
    assert!((obs.rays[7] - hit).abs() < 1e-9 && (obs.rays[8] - hit).abs() < 1e-9);
    env.set_state(VehicleState {
        x: 10.0,
        y: 0.0,
        heading: 0.0,
        speed: 0.0,
    });
    assert!(env.clean_rays().iter().all(|r| (0.0..=20.0).contains(r)));
}

#[test]
fn agents_shuttle_between_waypoints() {
    let spec = ScenarioSpec {
        agents: vec![AgentScript {
            waypoints: vec![[10.0, -1.0], [20.0, -1.0]],
            speed: 2.0,
            radius: 0.3,
        }],
        ..empty_straight()
    };
    let (env, _) = Env::reset(&spec, 0).unwrap();
    let agent = &env.agents[0];
    let at = |t: f64| agent.body_at(t);
    assert!((at(2.5).x - 15.0).abs() < 1e-12 && at(2.5).vx == 2.0);
    assert!((at(7.5).x - 15.0).abs() < 1e-12 && at(7.5).vx == -2.0);
    assert!((at(10.0).x - 10.0).abs() < 1e-12);
    assert!((at(3.0).y + 1.0).abs() < 1e-12);
}

#[test]
fn trajectory_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    let steps: Vec<StepRecord> = (0..5)
        .map(|k| StepRecord {
            time: 0.1 * (k + 1) as f64,
            from: [k as f64, 0.0],
            position: [k as f64 + 0.3, 0.1],
            speed: 3.0,
            action: [0.1, -0.2],
            reward: 0.25,
            cost: (k % 2) as f64,
            intervened: k == 3,
        })
        .collect();
    write_trajectory(&path, &steps).unwrap();
    assert_eq!(read_trajectory(&path).unwrap(), steps);
    std::fs::write(&path, "{\"time\": 1}\n").unwrap();
    assert!(matches!(read_trajectory(&path), Err(Error::Parse { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dynamics_stay_in_bounds_and_cost_is_geometric(
        seed in 0u64..1000,
        stage in 1u32..=3,
        actions in prop::collection::vec((-1.0f64..=1.0, -1.0f64..=1.0), 1..80),
    ) {
        let spec = curriculum(stage).unwrap().remove((seed % 2) as usize);
        let (mut env, obs) = Env::reset(&spec, seed).unwrap();
        prop_assert_eq!(obs.dim(), spec.observation_dim());
        for (steer, throttle) in actions {
            let out = env.step([steer, throttle]).unwrap();
            let st = out.state;
            prop_assert!((0.0..=spec.vehicle.max_speed).contains(&st.speed));
            prop_assert!(st.heading > -std::f64::consts::PI && st.heading <= std::f64::consts::PI);
            let geometric = env.unsafe_at(st.x, st.y, env.time());
            prop_assert_eq!(out.cost, if geometric { 1.0 } else { 0.0 });
            for r in &out.observation.rays {
                prop_assert!((0.0..=spec.sensor.range).contains(r));
            }
            prop_assert!(out.observation.to_vec().iter().all(|v| v.is_finite()));
            prop_assert!((0.0..=1.0).contains(&out.observation.progress));
            if out.terminated {
                break;
            }
            if env.intervention_needed() {
                env.intervene();
            }
        }
    }
}

#[test]
fn shortcut_hazard_blocks_every_lateral_offset() {
    let spec = shortcut();
    let (env, _) = Env::reset(&spec, 0).unwrap();
    let track = spec.track();
    let h = &spec.hazards[0];
    for i in 0..=50 {
        let lat = -spec.half_width + 2.0 * spec.half_width * i as f64 / 50.0;
        let (x, y) = track.point_at(h.s, lat);
        assert!(env.unsafe_at(x, y, 0.0), "safe gap at lateral {lat}");
    }
    let (x, y) = track.point_at(h.s - h.radius - 1.0, 0.0);
    assert!(!env.unsafe_at(x, y, 0.0));
}
