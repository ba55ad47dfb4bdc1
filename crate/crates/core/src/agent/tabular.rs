//! Small finite constrained MDPs solved exactly, for checking the
//! constrained learner against ground truth.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite CMDP with tables indexed `[s][a]` and `[s][a][s']`, flattened
/// row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularCmdp {
    pub states: usize,
    pub actions: usize,
    pub transitions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
    pub gamma: f64,
    /// Bound `d` on expected discounted cost from the initial distribution.
    pub budget: f64,
    pub initial: Vec<f64>,
}

/// Stochastic policy `π(a|s)`, flattened `[s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub actions: usize,
    pub probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn deterministic(choices: &[usize], actions: usize) -> Self {
        let mut probs = vec![0.0; choices.len() * actions];
        for (s, &a) in choices.iter().enumerate() {
            probs[s * actions + a] = 1.0;
        }
        Self { actions, probs }
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.actions + a]
    }

    /// Most likely action in `s` (lowest index on ties).
    pub fn greedy(&self, s: usize) -> usize {
        let row = &self.probs[s * self.actions..(s + 1) * self.actions];
        let mut best = 0;
        for (a, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = a;
            }
        }
        best
    }
}

/// Exact discounted values of a policy, per state.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyValues {
    pub reward: Vec<f64>,
    pub cost: Vec<f64>,
}

impl TabularCmdp {
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.states, self.actions);
        let bad = |msg: String| Err(Error::Config(msg));
        if n == 0 || m == 0 {
            return bad("empty state or action space".into());
        }
        if self.transitions.len() != n * m * n
            || self.rewards.len() != n * m
            || self.costs.len() != n * m
            || self.initial.len() != n
        {
            return bad("table sizes do not match state/action counts".into());
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.transitions) || !finite(&self.rewards) || !finite(&self.costs) {
            return bad("non-finite table entry".into());
        }
        if !(0.0..1.0).contains(&self.gamma) || !(self.budget.is_finite() && self.budget >= 0.0) {
            return bad("gamma must lie in [0, 1) and the budget must be non-negative".into());
        }
        let is_dist = |row: &[f64]| row.iter().all(|&p| p >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if !self.transitions.chunks(n).all(is_dist) || !is_dist(&self.initial) {
            return bad("transition rows and the initial distribution must sum to 1".into());
        }
        Ok(())
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.actions + a) * self.states + next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.actions + a]
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.costs[s * self.actions + a]
    }

    /// Random instance with uniform rewards, 0/1 costs and one zero-cost
    /// action per state, so the all-safe policy has zero cost and any budget
    /// is attainable. The budget sits strictly between zero and the cost of
    /// the unconstrained optimum so the constraint binds.
    pub fn random(rng: &mut impl Rng, states: usize, actions: usize, gamma: f64) -> Result<Self> {
        if states == 0 || actions < 2 {
            return Err(Error::Config("a binding budget needs states and at least two actions".into()));
        }
        loop {
            let mut transitions = Vec::with_capacity(states * actions * states);
            let mut rewards = Vec::with_capacity(states * actions);
            let mut costs = Vec::with_capacity(states * actions);
            for _ in 0..states {
                let safe = rng.random_range(0..actions);
                for a in 0..actions {
                    let row: Vec<f64> = (0..states).map(|_| rng.random_range(0.05..1.0)).collect();
                    let total: f64 = row.iter().sum();
                    transitions.extend(row.iter().map(|p| p / total));
                    costs.push(if a == safe || rng.random_bool(0.5) { 0.0 } else { 1.0 });
                    rewards.push(rng.random_range(0.0..1.0));
                }
            }
            let mut problem = Self {
                states,
                actions,
                transitions,
                rewards,
                costs,
                gamma,
                budget: f64::INFINITY,
                initial: vec![1.0 / states as f64; states],
            };
            let free = problem.best_response(0.0)?;
            let free_cost = problem.start_value(&problem.evaluate(&free)?.cost);
            if free_cost <= 0.0 {
                continue;
            }
            problem.budget = rng.random_range(0.2..0.8) * free_cost;
            problem.validate()?;
            return Ok(problem);
        }
    }

    /// Expected value of per-state values under the initial distribution.
    pub fn start_value(&self, per_state: &[f64]) -> f64 {
        self.initial.iter().zip(per_state).map(|(p, v)| p * v).sum()
    }

    /// Exact evaluation by solving `(I − γ P_π) v = r_π` for rewards and costs.
    pub fn evaluate(&self, policy: &TabularPolicy) -> Result<PolicyValues> {
        let n = self.states;
        let mut a = vec![0.0; n * n];
        let mut r = vec![0.0; n];
        let mut c = vec![0.0; n];
        for s in 0..n {
            a[s * n + s] += 1.0;
            for act in 0..self.actions {
                let pi = policy.prob(s, act);
                if pi == 0.0 {
                    continue;
                }
                r[s] += pi * self.reward(s, act);
                c[s] += pi * self.cost(s, act);
                for next in 0..n {
                    a[s * n + next] -= self.gamma * pi * self.p(s, act, next);
                }
            }
        }
        Ok(PolicyValues {
            reward: solve_linear(a.clone(), r, n)?,
            cost: solve_linear(a, c, n)?,
        })
    }

    /// Optimal deterministic policy for the scalarized reward `r − λ·c`,
    /// found by policy iteration.
    pub fn best_response(&self, multiplier: f64) -> Result<TabularPolicy> {
        let (n, m) = (self.states, self.actions);
        let scalar = |s: usize, a: usize| self.reward(s, a) - multiplier * self.cost(s, a);
        let mut choice: Vec<usize> = (0..n)
            .map(|s| (0..m).fold(0, |best, a| if scalar(s, a) > scalar(s, best) { a } else { best }))
            .collect();
        for _ in 0..10_000 {
            let policy = TabularPolicy::deterministic(&choice, m);
            let values = self.evaluate(&policy)?;
            let v: Vec<f64> = values
                .reward
                .iter()
                .zip(&values.cost)
                .map(|(r, c)| r - multiplier * c)
                .collect();
            let q = |s: usize, a: usize| {
                scalar(s, a) + self.gamma * (0..n).map(|next| self.p(s, a, next) * v[next]).sum::<f64>()
            };
            let mut stable = true;
            for s in 0..n {
                let current = q(s, choice[s]);
                for a in 0..m {
                    // Strict improvement with a tolerance keeps the iteration
                    // from cycling between equal-valued actions.
                    if q(s, a) > current + 1e-12 * (1.0 + current.abs()) && q(s, a) > q(s, choice[s]) {
                        choice[s] = a;
                        stable = false;
                    }
                }
            }
            if stable {
                return Ok(policy);
            }
        }
        Err(Error::Config("policy iteration did not converge".into()))
    }
}

/// Gaussian elimination with partial pivoting on a dense `n × n` system.
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Result<Vec<f64>> {
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col].abs() < 1e-14 {
            return Err(Error::Config("singular policy-evaluation system".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let f = a[row * n + col] / a[col * n + col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SolveMethod {
    /// Every deterministic policy (at most 6 states and 4 actions).
    Enumerate,
    /// Best responses to `grid` evenly spaced multipliers in
    /// `[0, max_multiplier]`, each evaluated exactly.
    LagrangianSweep { grid: usize, max_multiplier: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CmdpSolution {
    /// Expected discounted reward from the initial distribution.
    pub value: f64,
    pub cost: f64,
    pub policy: TabularPolicy,
    /// Multiplier whose best response was selected (sweep only).
    pub multiplier: Option<f64>,
}

/// Best feasible deterministic policy found by `method`.
pub fn solve_tabular_cmdp(problem: &TabularCmdp, method: SolveMethod) -> Result<CmdpSolution> {
    problem.validate()?;
    let mut best: Option<CmdpSolution> = None;
    let mut consider = |policy: TabularPolicy, multiplier: Option<f64>| -> Result<()> {
        let values = problem.evaluate(&policy)?;
        let value = problem.start_value(&values.reward);
        let cost = problem.start_value(&values.cost);
        if cost <= problem.budget && best.as_ref().is_none_or(|b| value > b.value) {
            best = Some(CmdpSolution {
                value,
                cost,
                policy,
                multiplier,
            });
        }
        Ok(())
    };
    match method {
        SolveMethod::Enumerate => {
            let (n, m) = (problem.states, problem.actions);
            if n > 6 || m > 4 {
                return Err(Error::Config(format!(
                    "enumeration supports at most 6 states and 4 actions, got {n} and {m}"
                )));
            }
            let total = m.pow(n as u32);
            let mut choice = vec![0usize; n];
            for code in 0..total {
                let mut rest = code;
                for c in choice.iter_mut() {
                    *c = rest % m;
                    rest /= m;
                }
                consider(TabularPolicy::deterministic(&choice, m), None)?;
            }
        }
        SolveMethod::LagrangianSweep { grid, max_multiplier } => {
            if grid < 2 || !(max_multiplier.is_finite() && max_multiplier > 0.0) {
                return Err(Error::Config("sweep needs at least 2 grid points and a positive range".into()));
            }
            for i in 0..grid {
                let lambda = max_multiplier * i as f64 / (grid - 1) as f64;
                consider(problem.best_response(lambda)?, Some(lambda))?;
            }
        }
    }
    best.ok_or_else(|| Error::Infeasible(format!("no policy meets the cost budget {}", problem.budget)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Two states, two actions: action 1 pays more but costs 1.
    fn fixture(budget: f64) -> TabularCmdp {
        TabularCmdp {
            states: 2,
            actions: 2,
            transitions: vec![0.9, 0.1, 0.2, 0.8, 0.5, 0.5, 0.3, 0.7],
            rewards: vec![0.2, 1.0, 0.1, 0.6],
            costs: vec![0.0, 1.0, 0.0, 1.0],
            gamma: 0.9,
            budget,
            initial: vec![1.0, 0.0],
        }
    }

    /// Truncated Monte Carlo-free oracle: iterate the Bellman operator.
    fn iterate_values(p: &TabularCmdp, policy: &TabularPolicy) -> Vec<f64> {
        let mut v = vec![0.0; p.states];
        for _ in 0..2000 {
            v = (0..p.states)
                .map(|s| {
                    (0..p.actions)
                        .map(|a| {
                            let next: f64 = (0..p.states).map(|t| p.p(s, a, t) * v[t]).sum();
                            policy.prob(s, a) * (p.reward(s, a) + p.gamma * next)
                        })
                        .sum()
                })
                .collect();
        }
        v
    }

    #[test]
    fn exact_evaluation_matches_value_iteration() {
        let p = fixture(10.0);
        let policy = TabularPolicy {
            actions: 2,
            probs: vec![0.3, 0.7, 0.6, 0.4],
        };
        let exact = p.evaluate(&policy).unwrap().reward;
        for (a, b) in exact.iter().zip(iterate_values(&p, &policy)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn slack_budget_gives_unconstrained_optimum() {
        let p = fixture(100.0);
        let sol = solve_tabular_cmdp(&p, SolveMethod::Enumerate).unwrap();
        let free = p.best_response(0.0).unwrap();
        let free_value = p.start_value(&p.evaluate(&free).unwrap().reward);
        assert!((sol.value - free_value).abs() < 1e-12);
        assert_eq!(sol.policy, TabularPolicy::deterministic(&[1, 1], 2));
    }

    #[test]
    fn zero_budget_restricts_to_zero_cost_policy() {
        let p = fixture(0.0);
        let sol = solve_tabular_cmdp(&p, SolveMethod::Enumerate).unwrap();
        assert_eq!(sol.policy, TabularPolicy::deterministic(&[0, 0], 2));
        assert_eq!(sol.cost, 0.0);
    }

    #[test]
    fn infeasible_instance_is_reported() {
        let mut p = fixture(0.0);
        p.costs = vec![1.0; 4];
        assert!(matches!(
            solve_tabular_cmdp(&p, SolveMethod::Enumerate),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn rejects_non_stochastic_rows_and_large_enumeration() {
        let mut p = fixture(1.0);
        p.transitions[0] = 0.5;
        assert!(p.validate().is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let big = TabularCmdp::random(&mut rng, 7, 2, 0.9).unwrap();
        assert!(solve_tabular_cmdp(&big, SolveMethod::Enumerate).is_err());
    }

    #[test]
    fn random_instances_are_valid_and_binding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let p = TabularCmdp::random(&mut rng, 5, 3, 0.9).unwrap();
            p.validate().unwrap();
            let free = p.best_response(0.0).unwrap();
            let free_cost = p.start_value(&p.evaluate(&free).unwrap().cost);
            assert!(p.budget < free_cost);
            assert!(solve_tabular_cmdp(&p, SolveMethod::Enumerate).is_ok());
        }
    }

    #[test]
    fn feasibility_verdict_matches_brute_force_cost() {
        use crate::agent::{is_feasible, SafetyBudget};
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let p = TabularCmdp::random(&mut rng, 4, 3, 0.9).unwrap();
            let probs: Vec<f64> = (0..4)
                .flat_map(|_| {
                    let row: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
                    let t: f64 = row.iter().sum();
                    row.into_iter().map(move |x| x / t)
                })
                .collect();
            let policy = TabularPolicy { actions: 3, probs };
            let mut oracle_costs = p.clone();
            oracle_costs.rewards = p.costs.clone();
            let cost = p.start_value(&iterate_values(&oracle_costs, &policy));
            let budget = SafetyBudget {
                limit: p.budget,
                ..SafetyBudget::default()
            };
            let verdict = is_feasible(&[p.start_value(&p.evaluate(&policy).unwrap().cost)], &budget).unwrap();
            assert_eq!(verdict.feasible, cost <= p.budget);
        }
    }

    /// Softmax policy over logits `θ[s][a]`.
    fn softmax_policy(theta: &[f64], states: usize, actions: usize) -> TabularPolicy {
        let mut probs = Vec::with_capacity(theta.len());
        for s in 0..states {
            let row = &theta[s * actions..(s + 1) * actions];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
            let total: f64 = exp.iter().sum();
            probs.extend(exp.iter().map(|e| e / total));
        }
        TabularPolicy { actions, probs }
    }

    #[test]
    fn score_function_estimate_agrees_with_exact_gradient() {
        let p = fixture(10.0);
        let theta = vec![0.3, -0.2, -0.5, 0.4];
        let objective = |th: &[f64]| {
            let pi = softmax_policy(th, 2, 2);
            p.start_value(&p.evaluate(&pi).unwrap().reward)
        };
        let eps = 1e-6;
        let exact: Vec<f64> = (0..theta.len())
            .map(|i| {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus[i] += eps;
                minus[i] -= eps;
                (objective(&plus) - objective(&minus)) / (2.0 * eps)
            })
            .collect();

        let pi = softmax_policy(&theta, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (episodes, steps) = (40_000, 120);
        let mut estimate = vec![0.0; theta.len()];
        for _ in 0..episodes {
            let mut s = 0;
            let mut visited = Vec::with_capacity(steps);
            for _ in 0..steps {
                let a = if rng.random_bool(pi.prob(s, 1)) { 1 } else { 0 };
                visited.push((s, a, p.reward(s, a)));
                s = if rng.random_bool(p.p(s, a, 1)) { 1 } else { 0 };
            }
            let mut tail = 0.0;
            for (t, &(s, a, r)) in visited.iter().enumerate().rev() {
                tail = r + p.gamma * tail;
                let weight = p.gamma.powi(t as i32) * tail;
                for b in 0..2 {
                    let indicator = if a == b { 1.0 } else { 0.0 };
                    estimate[s * 2 + b] += weight * (indicator - pi.prob(s, b));
                }
            }
        }
        for (est, ex) in estimate.iter().map(|g| g / episodes as f64).zip(&exact) {
            assert!((est - ex).abs() < 0.05 * (1.0 + ex.abs()), "{est} vs {ex}");
        }
    }

    proptest! {
        #[test]
        fn reward_scaling_scales_values_and_keeps_greedy_policy(seed in 0u64..500, scale in 0.1f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = TabularCmdp::random(&mut rng, 4, 3, 0.9).unwrap();
            let mut scaled = p.clone();
            scaled.rewards.iter_mut().for_each(|r| *r *= scale);
            let a = p.best_response(0.0).unwrap();
            let b = scaled.best_response(0.0).unwrap();
            let va = p.evaluate(&a).unwrap().reward;
            let vb = scaled.evaluate(&b).unwrap().reward;
            for (x, y) in va.iter().zip(&vb) {
                prop_assert!((x * scale - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
            prop_assert_eq!(a, b);
        }
    }
}

