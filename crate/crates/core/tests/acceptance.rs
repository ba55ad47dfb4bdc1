//! Acceptance criteria, one line each. Runs as a plain binary so every
//! criterion reports even when an earlier one fails.
//!
//! `cargo test --release --test acceptance -- 4 5` runs a subset.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use latentdrive::agent::{
    solve_tabular_cmdp, ActorCritic, AgentConfig, SolveMethod, TabularCmdp,
};
use latentdrive::autodiff::{
    adam_step, categorical_entropy, check_gradients, kl_diag_gaussian, kl_per_row, AdamConfig, DiagonalGaussian,
    GradCheck, ParameterSet, Tape, Tensor, Var,
};
use latentdrive::eval::{
    comparison_report, compute_mpi, compute_sr, compute_std_v, compute_tt, read_csv, write_csv, EpisodeLog, Metric,
    MetricsReport,
};
use latentdrive::nn::Load;
use latentdrive::replay::{ReplayBuffer, Transition};
use latentdrive::run::{evaluate, train, RunConfig, ScenarioChoice};
use latentdrive::sim::StepRecord;
use latentdrive::world_model::{
    observe, one_step_prediction_mse, world_model_loss, ImagineNoise, LatentSnapshot, LossWeights, SequenceBatch,
    WorldModel, WorldModelConfig,
};
use latentdrive::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Outcome of one criterion: pass flag and a short measurement summary.
type Verdict = Result<(bool, String)>;

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Verdict); 10] = [
        (1, "gradient correctness", gradient_correctness),
        (2, "distribution math", distribution_math),
        (3, "world-model learning", world_model_learning),
        (4, "policy learning", policy_learning),
        (5, "constraint mechanism", constraint_mechanism),
        (6, "CMDP oracle equivalence", cmdp_oracle),
        (7, "metrics oracle", metrics_oracle),
        (8, "Table I fixture", table_one_fixture),
        (9, "determinism", determinism),
        (10, "stop-gradient partition", stop_gradient_partition),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = run().unwrap_or_else(|e| (false, format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {n:>2} {name}: {} ({detail}; {secs:.1}s)", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed += 1;
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}

fn rand_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn normals(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn small_wm() -> WorldModelConfig {
    WorldModelConfig {
        obs_dim: 3,
        action_dim: 2,
        deter: 4,
        stoch: 2,
        hidden: 5,
        min_std: 1e-4,
    }
}

fn random_snapshot(cfg: &WorldModelConfig, rows: usize, rng: &mut impl Rng) -> LatentSnapshot<f64> {
    LatentSnapshot {
        h: rand_tensor(rows, cfg.deter, rng),
        z: rand_tensor(rows, cfg.stoch, rng),
        mean: rand_tensor(rows, cfg.stoch, rng),
        std: Tensor::ones(&[rows, cfg.stoch]),
    }
}

fn toy_batch(b: usize, t: usize, rng: &mut impl Rng) -> SequenceBatch<f64> {
    let flags = |rng: &mut dyn rand::RngCore| {
        Tensor::new(vec![b, 1], (0..b).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()).unwrap()
    };
    let mut batch = SequenceBatch {
        observations: vec![],
        actions: vec![],
        rewards: vec![],
        costs: vec![],
        continues: vec![],
    };
    for _ in 0..t {
        batch.observations.push(rand_tensor(b, 3, rng));
        batch.actions.push(rand_tensor(b, 2, rng));
        batch.rewards.push(rand_tensor(b, 1, rng));
        batch.costs.push(flags(rng));
        batch.continues.push(flags(rng));
    }
    batch
}

fn squash_sum(t: &mut Tape<f64>, v: Var) -> Var {
    let s = t.tanh(v);
    t.sum(s)
}

fn gauss_sum(t: &mut Tape<f64>, d: &DiagonalGaussian) -> Result<Var> {
    let m = squash_sum(t, d.mean);
    let s = t.sum(d.std);
    Ok(t.add(m, s)?)
}

/// Plain `Σ_t KL(post ‖ prior) / B` without stop-gradients.
fn plain_kl(
    t: &mut Tape<f64>,
    wm: &WorldModel,
    p: &ParameterSet<f64>,
    batch: &SequenceBatch<f64>,
    noise: &[Tensor<f64>],
) -> Result<Var> {
    let posts = observe(t, wm, p, Load::Train, batch, noise)?;
    let mut rows = Vec::new();
    for post in &posts {
        let prior = wm.prior_dist(t, p, Load::Train, post.h)?;
        rows.push(kl_per_row(t, &post.dist, &prior)?);
    }
    let all = t.concat_rows(&rows)?;
    let sum = t.sum(all);
    Ok(t.scale(sum, 1.0 / batch.batch_size() as f64))
}

fn gradient_correctness() -> Verdict {
    let cfg = small_wm();
    let agent_cfg = AgentConfig {
        hidden: 6,
        horizon: 3,
        ..AgentConfig::default()
    };
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |what: &'static str, e: f64| {
        let w = worst.entry(what).or_insert(0.0);
        *w = w.max(e);
    };
    let gc = GradCheck::default();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (wm, params) = WorldModel::new::<f64>(cfg.clone(), &mut rng)?;
        let snap = random_snapshot(&cfg, 2, &mut rng);
        let obs = rand_tensor(2, cfg.obs_dim, &mut rng);
        let act = rand_tensor(2, cfg.action_dim, &mut rng);
        let feat = rand_tensor(2, cfg.feature_dim(), &mut rng);
        let wm_checks: [(&'static str, &dyn Fn(&mut Tape<f64>, &ParameterSet<f64>) -> Result<Var>); 8] = [
            ("encoder", &|t, p| {
                let o = t.constant(obs.clone());
                let e = wm.embed(t, p, Load::Train, o)?;
                Ok(squash_sum(t, e))
            }),
            ("recurrent cell", &|t, p| {
                let s = snap.load(t)?;
                let a = t.constant(act.clone());
                let h = wm.recurrent(t, p, Load::Train, &s, a)?;
                Ok(squash_sum(t, h))
            }),
            ("prior head", &|t, p| {
                let h = t.constant(snap.h.clone());
                let d = wm.prior_dist(t, p, Load::Train, h)?;
                gauss_sum(t, &d)
            }),
            ("posterior head", &|t, p| {
                let h = t.constant(snap.h.clone());
                let o = t.constant(obs.clone());
                let e = wm.embed(t, p, Load::Train, o)?;
                let d = wm.posterior_dist(t, p, Load::Train, h, e)?;
                gauss_sum(t, &d)
            }),
            ("decoder", &|t, p| {
                let f = t.constant(feat.clone());
                let d = wm.decode_features(t, p, Load::Train, f)?;
                Ok(squash_sum(t, d))
            }),
            ("reward head", &|t, p| {
                let f = t.constant(feat.clone());
                let r = wm.reward_features(t, p, Load::Train, f)?;
                Ok(squash_sum(t, r))
            }),
            ("cost head", &|t, p| {
                let f = t.constant(feat.clone());
                let c = wm.cost_logit_features(t, p, Load::Train, f)?;
                Ok(squash_sum(t, c))
            }),
            ("continuation head", &|t, p| {
                let f = t.constant(feat.clone());
                let c = wm.cont_logit_features(t, p, Load::Train, f)?;
                Ok(squash_sum(t, c))
            }),
        ];
        for (what, f) in wm_checks {
            note(what, check_gradients(|t, p| f(t, p), &params, gc)?.max_rel_error);
        }

        // Composite world-model loss on B=2, T=2. The likelihood terms are
        // checked directly; the balanced KL has stop-gradients that change
        // its gradient but not its value, so at unit weights its gradient
        // must equal the gradient of a plain KL that is itself checked.
        let batch = toy_batch(2, 2, &mut rng);
        let noise: Vec<_> = (0..2).map(|_| rand_tensor(2, cfg.stoch, &mut rng)).collect();
        let likelihood = LossWeights {
            kl_prior: 0.0,
            kl_posterior: 0.0,
            ..LossWeights::default()
        };
        let r = check_gradients(
            |t, p| Ok::<_, Error>(world_model_loss(t, &wm, p, &batch, &noise, &likelihood)?.loss),
            &params,
            gc,
        )?;
        note("world-model likelihood terms", r.max_rel_error);
        let r = check_gradients(|t, p| plain_kl(t, &wm, p, &batch, &noise), &params, gc)?;
        note("world-model KL oracle", r.max_rel_error);
        let kl_only = LossWeights {
            kl_prior: 1.0,
            kl_posterior: 1.0,
            observation: 0.0,
            reward: 0.0,
            cost: 0.0,
            continuation: 0.0,
            entropy: 0.0,
            free_nats: 0.0,
        };
        let mut t = Tape::new();
        let out = world_model_loss(&mut t, &wm, &params, &batch, &noise, &kl_only)?;
        let balanced = t.backward(out.loss)?.params();
        let mut t = Tape::new();
        let plain = plain_kl(&mut t, &wm, &params, &batch, &noise)?;
        let plain = t.backward(plain)?.params();
        let mut kl_err: f64 = 0.0;
        for (name, g) in &balanced {
            let zero = Tensor::zeros(g.shape());
            let p = plain.get(name).unwrap_or(&zero);
            for (a, b) in g.data().iter().zip(p.data()) {
                kl_err = kl_err.max((a - b).abs() / a.abs().max(b.abs()).max(1e-6));
            }
        }
        note("balanced KL vs oracle", kl_err);

        // Actor and critic networks, then their losses on an H=3 rollout.
        let (ac, actor_params, critic_params) =
            ActorCritic::new::<f64>(cfg.feature_dim(), cfg.action_dim, agent_cfg.clone(), &mut rng)?;
        let pol_noise = normals(2, cfg.action_dim, &mut rng);
        let r = check_gradients(
            |t, p| {
                let f = t.constant(feat.clone());
                let n = t.constant(pol_noise.clone());
                let s = ac.actor.sample(t, p, Load::Train, f, n)?;
                let a = t.sum(s.action);
                let e = t.sum(s.entropy);
                Ok::<_, Error>(t.add(a, e)?)
            },
            &actor_params,
            gc,
        )?;
        note("actor network", r.max_rel_error);
        let r = check_gradients(
            |t, p| {
                let f = t.constant(feat.clone());
                let v = ac.critic.value(t, p, Load::Train, f)?;
                let c = ac.critic.cost_value(t, p, Load::Train, f)?;
                let v = squash_sum(t, v);
                let c = squash_sum(t, c);
                Ok::<_, Error>(t.add(v, c)?)
            },
            &critic_params,
            gc,
        )?;
        note("critic networks", r.max_rel_error);

        let start = random_snapshot(&cfg, 2, &mut rng);
        let inoise = ImagineNoise::sample(&mut rng, 2, cfg.stoch, cfg.action_dim, 3);
        let mut tape = Tape::new();
        let pins = ac
            .imagined_losses(&mut tape, &wm, &params, &actor_params, &critic_params, &start, &inoise, 0.7, None)?
            .targets;
        let build = |t: &mut Tape<f64>, actor: &ParameterSet<f64>, critic: &ParameterSet<f64>| {
            ac.imagined_losses(t, &wm, &params, actor, critic, &start, &inoise, 0.7, Some(&pins))
        };
        let r = check_gradients(|t, p| Ok::<_, Error>(build(t, p, &critic_params)?.actor), &actor_params, gc)?;
        note("actor loss", r.max_rel_error);
        let r = check_gradients(|t, p| Ok::<_, Error>(build(t, &actor_params, p)?.critic), &critic_params, gc)?;
        note("critic loss", r.max_rel_error);
    }
    let max = worst.values().cloned().fold(0.0, f64::max);
    let (name, _) = worst.iter().max_by(|a, b| a.1.total_cmp(b.1)).expect("checks ran");
    Ok((
        max <= 1e-4,
        format!("{} checks x 10 seeds, max relative error {max:.2e} in {name}", worst.len()),
    ))
}

fn kl_closed(t: &mut Tape<f64>, m1: f64, s1: f64, m2: f64, s2: f64) -> Result<f64> {
    let [m1, s1, m2, s2] = [m1, s1, m2, s2].map(|v| t.constant(Tensor::scalar(v)));
    let p = DiagonalGaussian::new(t, m1, s1)?;
    let q = DiagonalGaussian::new(t, m2, s2)?;
    let kl = kl_diag_gaussian(t, &p, &q)?;
    Ok(t.value(kl).item())
}

/// `∫ p(x) (log p(x) − log q(x)) dx` by composite Simpson over ±14σ of p.
fn kl_numeric(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let logpdf = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * PI).ln();
    let f = |x: f64| {
        let lp = logpdf(x, m1, s1);
        lp.exp() * (lp - logpdf(x, m2, s2))
    };
    let (a, b) = (m1 - 14.0 * s1, m1 + 14.0 * s1);
    let n = 40_000;
    let h = (b - a) / n as f64;
    let mut sum = f(a) + f(b);
    for i in 1..n {
        sum += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    sum * h / 3.0
}

fn distribution_math() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut t = Tape::new();
    let mut worst: f64 = 0.0;
    let mut min_kl = f64::INFINITY;
    for _ in 0..100 {
        let (m1, m2) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (s1, s2) = (rng.random_range(0.3..2.0), rng.random_range(0.3..2.0));
        let closed = kl_closed(&mut t, m1, s1, m2, s2)?;
        worst = worst.max((closed - kl_numeric(m1, s1, m2, s2)).abs());
        min_kl = min_kl.min(closed);
    }
    let mut self_kl: f64 = 0.0;
    for _ in 0..100 {
        let (m, s) = (rng.random_range(-5.0..5.0), rng.random_range(0.01..5.0));
        self_kl = self_kl.max(kl_closed(&mut t, m, s, m, s)?.abs());
    }
    let h = categorical_entropy(&Tensor::new(vec![4], vec![0.25; 4])?)?;
    let ent_err = (h - 4f64.ln()).abs();
    let pass = worst <= 1e-6 && min_kl >= 0.0 && self_kl == 0.0 && ent_err <= 1e-12;
    Ok((
        pass,
        format!("max |KL − integral| {worst:.1e}, min KL {min_kl:.3}, max KL(p,p) {self_kl}, |H(uniform4) − ln 4| {ent_err:.1e}"),
    ))
}

/// Position/velocity under a random acceleration, `dt = 0.1`.
fn kinematic_episode(len: usize, rng: &mut impl Rng) -> Vec<Transition> {
    let dt = 0.1;
    let mut x: f64 = rng.random_range(-1.0..1.0);
    let mut v: f64 = rng.random_range(-0.5..0.5);
    let mut out = vec![Transition {
        observation: vec![x, v],
        action: vec![0.0],
        reward: 0.0,
        cost: 0.0,
        terminated: false,
        intervened: false,
    }];
    for _ in 1..len {
        let a: f64 = rng.random_range(-1.0..1.0);
        x += v * dt;
        v = (v + a * dt).clamp(-1.0, 1.0);
        out.push(Transition {
            observation: vec![x, v],
            action: vec![a],
            reward: 0.0,
            cost: 0.0,
            terminated: false,
            intervened: false,
        });
    }
    out
}

fn world_model_learning() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fill = |episodes: usize, rng: &mut ChaCha8Rng| -> Result<ReplayBuffer> {
        let mut buf = ReplayBuffer::new(20_000, 2, 1)?;
        for _ in 0..episodes {
            for t in kinematic_episode(100, rng) {
                buf.append(t)?;
            }
            buf.close_episode();
        }
        Ok(buf)
    };
    let train_buf = fill(100, &mut rng)?;
    let held_out = fill(20, &mut rng)?.sample_seeded::<f64>(64, 16, 99)?.batch;
    let cfg = WorldModelConfig::new(2, 1);
    let (wm, mut params) = WorldModel::new::<f64>(cfg.clone(), &mut rng)?;
    let before = one_step_prediction_mse(&wm, &params, &held_out)?;
    let adam = AdamConfig::with_lr(1e-3);
    let weights = LossWeights::default();
    for _ in 0..5_000 {
        let batch = train_buf.sample_sequences::<f64>(16, 16, &mut rng)?.batch;
        let noise: Vec<_> = (0..16).map(|_| normals(16, cfg.stoch, &mut rng)).collect();
        let mut tape = Tape::new();
        let out = world_model_loss(&mut tape, &wm, &params, &batch, &noise, &weights)?;
        let grads = tape.backward(out.loss)?.params();
        adam_step(&mut params, &grads, &adam)?;
    }
    let after = one_step_prediction_mse(&wm, &params, &held_out)?;
    Ok((
        after <= 0.1 * before,
        format!(
            "{} transitions, 5000 steps: one-step MSE {before:.4} -> {after:.5} ({:.0}x)",
            train_buf.len(),
            before / after
        ),
    ))
}

/// Stage-1 and shortcut runs use 20,000 environment steps, well inside the
/// 200,000 allowed, to keep the suite within a single-core budget.
const LEARNING_STEPS: u64 = 20_000;

fn run_in(dir: &Path, name: &str, cfg: RunConfig) -> Result<latentdrive::run::TrainOutcome> {
    train(&RunConfig {
        out: dir.join(name),
        ..cfg
    })
}

fn policy_learning() -> Verdict {
    let dir = tempfile::tempdir()?;
    let mut srs = Vec::new();
    for seed in [0, 1, 2] {
        let out = run_in(
            dir.path(),
            &format!("seed{seed}"),
            RunConfig {
                seed,
                steps: LEARNING_STEPS,
                scenario: ScenarioChoice::Stage(1),
                eval_episodes: 100,
                ..RunConfig::default()
            },
        )?;
        srs.push(out.evaluation.expect("evaluation requested").report.sr);
    }
    let passing = srs.iter().filter(|&&sr| sr >= 90.0).count();
    Ok((
        passing >= 2,
        format!("{LEARNING_STEPS} steps, SR by seed {srs:?}, {passing}/3 seeds at >= 90%"),
    ))
}

fn constraint_mechanism() -> Verdict {
    let dir = tempfile::tempdir()?;
    let base = RunConfig {
        seed: 0,
        steps: LEARNING_STEPS,
        scenario: ScenarioChoice::Shortcut,
        eval_episodes: 100,
        ..RunConfig::default()
    };
    let d = base.budget.limit;
    let lag = run_in(dir.path(), "lagrangian", base.clone())?.evaluation.expect("evaluation");
    let abl = run_in(
        dir.path(),
        "ablation",
        RunConfig {
            constrained: false,
            ..base
        },
    )?
    .evaluation
    .expect("evaluation");
    let (lc, ac) = (lag.mean_discounted_cost(), abl.mean_discounted_cost());
    let (lr, ar) = (lag.mean_return(), abl.mean_return());
    Ok((
        lc <= 1.1 * d && ac > d && ar > lr,
        format!("d = {d}: Lagrangian cost {lc:.3} return {lr:.2}; frozen-multiplier cost {ac:.3} return {ar:.2}"),
    ))
}

fn cmdp_oracle() -> Verdict {
    // Seed fixed before the first run.
    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let mut gaps = Vec::new();
    for _ in 0..20 {
        let problem = TabularCmdp::random(&mut rng, 5, 3, 0.9)?;
        let exact = solve_tabular_cmdp(&problem, SolveMethod::Enumerate)?;
        let sweep = solve_tabular_cmdp(
            &problem,
            SolveMethod::LagrangianSweep {
                grid: 401,
                max_multiplier: 10.0,
            },
        )?;
        gaps.push((exact.value - sweep.value) / exact.value.abs());
    }
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    let within = gaps.iter().filter(|&&g| g <= 0.05).count();
    Ok((
        within == gaps.len(),
        format!("{within}/20 instances within 5% of enumeration, worst gap {:.1}%", 100.0 * worst),
    ))
}

fn synthetic_log(rng: &mut impl Rng, zero_interventions: bool) -> EpisodeLog {
    let dt = 0.1;
    let n = rng.random_range(2..60);
    let (mut x, mut y) = (0.0, 0.0);
    let mut steps = Vec::with_capacity(n);
    for i in 0..n {
        let from = [x, y];
        let speed: f64 = rng.random_range(0.0..8.0);
        x += speed * dt;
        y += rng.random_range(-0.2..0.2);
        steps.push(StepRecord {
            time: (i + 1) as f64 * dt,
            from,
            position: [x, y],
            speed,
            action: [0.0, 0.0],
            reward: 0.0,
            cost: 0.0,
            intervened: !zero_interventions && rng.random_bool(0.05),
        });
    }
    EpisodeLog::new(dt, steps, rng.random_bool(0.7)).expect("consistent log")
}

fn metrics_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut flags_ok = true;
    for case in 0..20 {
        let zero = case < 2;
        let logs: Vec<EpisodeLog> = (0..rng.random_range(1..8)).map(|_| synthetic_log(&mut rng, zero)).collect();

        // Independent single-pass oracles over the raw step records.
        let (mut dist, mut interventions, mut clean) = (0.0, 0usize, 0usize);
        let (mut tt_sum, mut tt_n) = (0.0, 0usize);
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for log in &logs {
            let mut own = 0usize;
            for s in &log.steps {
                dist += (s.position[0] - s.from[0]).hypot(s.position[1] - s.from[1]);
                own += s.intervened as usize;
                n += 1;
                let delta = s.speed - mean;
                mean += delta / n as f64;
                m2 += delta * (s.speed - mean);
            }
            interventions += own;
            clean += (log.completed && own == 0) as usize;
            if log.completed {
                tt_sum += log.steps.len() as f64 * log.dt;
                tt_n += 1;
            }
        }
        let mpi = compute_mpi(&logs)?;
        let want_mpi = if interventions == 0 { dist } else { dist / interventions as f64 };
        flags_ok &= mpi.lower_bound == (interventions == 0);
        worst = worst.max((mpi.meters - want_mpi).abs());
        let tt = compute_tt(&logs);
        match tt.seconds {
            Some(s) => worst = worst.max((s - tt_sum / tt_n as f64).abs()),
            None => flags_ok &= tt_n == 0,
        }
        flags_ok &= tt.dnf == logs.len() - tt_n;
        worst = worst.max((compute_sr(&logs)? - 100.0 * clean as f64 / logs.len() as f64).abs());
        worst = worst.max((compute_std_v(&logs)? - (m2 / n as f64).sqrt()).abs());
    }
    Ok((
        flags_ok && worst <= 1e-12,
        format!("20 randomized log sets incl. zero-intervention cases, max deviation {worst:.1e}"),
    ))
}

fn table_one_fixture() -> Verdict {
    let row = |mpi: f64, tt: f64, sr: f64, std_v: f64| MetricsReport {
        mpi,
        mpi_lower_bound: false,
        tt: Some(tt),
        dnf: 0,
        sr,
        sr_distance: sr,
        std_v,
        episodes: 100,
        fingerprint: "table-i".into(),
    };
    let rows = vec![
        ("DayDreamer".to_string(), row(86.1, 21.0, 82.3, 0.25)),
        ("Efficient-RL".to_string(), row(91.6, 27.0, 77.5, 0.27)),
        ("Our Method".to_string(), row(92.8, 21.0, 89.3, 0.22)),
    ];
    let cmp = comparison_report(&rows)?;
    let ours = ["Our Method".to_string()];
    let winners_ok = cmp.winners_of(Metric::Mpi) == ours
        && cmp.winners_of(Metric::Sr) == ours
        && cmp.winners_of(Metric::StdV) == ours
        && cmp.winners_of(Metric::Tt) == ["DayDreamer".to_string(), "Our Method".to_string()];
    let text = write_csv(&rows)?;
    let back = read_csv(&text, Path::new("table-i.csv"))?;
    let round_trip = back == rows && write_csv(&back)? == text;
    Ok((
        winners_ok && round_trip,
        format!("ranking {:?}, CSV round trip {}", cmp.ranking, if round_trip { "lossless" } else { "lossy" }),
    ))
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir()?;
    let cfg = RunConfig {
        seed: 5,
        steps: 10_000,
        eval_episodes: 100,
        ..RunConfig::default()
    };
    let a = run_in(dir.path(), "a", cfg.clone())?;
    let b = run_in(dir.path(), "b", cfg)?;
    let same = |rel: &str| -> Result<bool> {
        Ok(std::fs::read(dir.path().join("a").join(rel))? == std::fs::read(dir.path().join("b").join(rel))?)
    };
    let files_same = same("checkpoint.ckpt")? && same("eval/report.json")?;
    let ea = evaluate(&a.checkpoint, None, 100, 11, None)?;
    let eb = evaluate(&b.checkpoint, None, 100, 11, None)?;
    let reports_same = ea.report == eb.report && a.fingerprint == b.fingerprint;
    Ok((
        files_same && reports_same,
        format!(
            "checkpoints and reports {}, re-evaluation {}",
            if files_same { "bit-identical" } else { "differ" },
            if reports_same { "identical" } else { "differs" }
        ),
    ))
}

fn stop_gradient_partition() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = small_wm();
    let (wm, mut wm_params) = WorldModel::new::<f64>(cfg.clone(), &mut rng)?;
    let (ac, mut actor, mut critic) = ActorCritic::new::<f64>(
        cfg.feature_dim(),
        cfg.action_dim,
        AgentConfig {
            hidden: 6,
            horizon: 3,
            ..AgentConfig::default()
        },
        &mut rng,
    )?;

    // Actor-critic update: world model unchanged, and no gradient reaches it
    // even when its parameters sit on the tape as trainable leaves.
    let start = random_snapshot(&cfg, 4, &mut rng);
    let wm_before = wm_params.clone();
    let (actor_before, critic_before) = (actor.clone(), critic.clone());
    ac.update(&wm, &wm_params, &mut actor, &mut critic, &start, 1.0, &mut rng)?;
    let wm_delta = max_delta(&wm_before, &wm_params)?;
    let ac_moved = max_delta(&actor_before, &actor)? > 0.0 && max_delta(&critic_before, &critic)? > 0.0;
    let mut tape = Tape::new();
    for name in wm_params.names() {
        tape.param(&wm_params, name)?;
    }
    let inoise = ImagineNoise::sample(&mut rng, 4, cfg.stoch, cfg.action_dim, 3);
    let l = ac.imagined_losses(&mut tape, &wm, &wm_params, &actor, &critic, &start, &inoise, 1.0, None)?;
    let total = tape.add(l.actor, l.critic)?;
    let wm_grad = tape
        .backward(total)?
        .params()
        .iter()
        .filter(|(n, _)| n.starts_with("wm."))
        .map(|(_, g)| g.max_abs())
        .fold(0.0, f64::max);

    // World-model update: actor and critic unchanged, gradients only on wm.
    let (actor_before, critic_before) = (actor.clone(), critic.clone());
    let batch = toy_batch(2, 3, &mut rng);
    let noise: Vec<_> = (0..3).map(|_| rand_tensor(2, cfg.stoch, &mut rng)).collect();
    let mut tape = Tape::new();
    let out = world_model_loss(&mut tape, &wm, &wm_params, &batch, &noise, &LossWeights::default())?;
    let grads = tape.backward(out.loss)?.params();
    let foreign = grads.keys().filter(|n| !n.starts_with("wm.")).count();
    let wm_before = wm_params.clone();
    adam_step(&mut wm_params, &grads, &AdamConfig::default())?;
    let wm_moved = max_delta(&wm_before, &wm_params)? > 0.0;
    let ac_delta = max_delta(&actor_before, &actor)?.max(max_delta(&critic_before, &critic)?);

    Ok((
        wm_delta == 0.0 && wm_grad == 0.0 && ac_moved && ac_delta == 0.0 && foreign == 0 && wm_moved,
        format!(
            "after actor-critic update world-model delta {wm_delta} (gradient {wm_grad}); after world-model update actor/critic delta {ac_delta}"
        ),
    ))
}

fn max_delta(a: &ParameterSet<f64>, b: &ParameterSet<f64>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for name in a.names() {
        let (x, y) = (a.get(name)?, b.get(name)?);
        for (p, q) in x.data().iter().zip(y.data()) {
            worst = worst.max((p - q).abs());
        }
    }
    Ok(worst)
}
