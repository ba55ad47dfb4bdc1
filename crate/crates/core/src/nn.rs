//! Dense layers, MLPs and a gated recurrent cell built on the tape.

use rand::Rng;

use crate::autodiff::{ParameterSet, Result, Tape, Tensor, Var};
use crate::scalar::Scalar;

/// Whether a forward pass should record parameters as trainable leaves or
/// as constants that block gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Load {
    Train,
    Frozen,
}

pub fn load<S: Scalar>(tape: &mut Tape<S>, params: &ParameterSet<S>, name: &str, mode: Load) -> Result<Var> {
    match mode {
        Load::Train => tape.param(params, name),
        Load::Frozen => tape.frozen_param(params, name),
    }
}

/// `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<S: Scalar>(
        params: &mut ParameterSet<S>,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let layer = Self::named(prefix, in_dim, out_dim);
        params.insert_glorot(layer.weight.clone(), in_dim, out_dim, rng)?;
        params.insert(layer.bias.clone(), Tensor::zeros(&[out_dim]))?;
        Ok(layer)
    }

    fn named(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: format!("{prefix}.w"),
            bias: format!("{prefix}.b"),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        x: Var,
    ) -> Result<Var> {
        let w = load(tape, params, &self.weight, mode)?;
        let b = load(tape, params, &self.bias, mode)?;
        let xw = tape.matmul(x, w)?;
        tape.add(xw, b)
    }
}

/// ELU hidden layers followed by a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn init<S: Scalar>(
        params: &mut ParameterSet<S>,
        prefix: &str,
        dims: &[usize],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::init(params, &format!("{prefix}.l{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        mut x: Var,
    ) -> Result<Var> {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, params, mode, x)?;
            if i < last {
                x = tape.elu(x);
            }
        }
        Ok(x)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// r, u = σ([x, h]·W_g + b_g)
/// c    = tanh([x, r ⊙ h]·W_c + b_c)
/// h'   = u ⊙ h + (1 − u) ⊙ c
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub gates: Linear,
    pub candidate: Linear,
    pub hidden: usize,
}

impl GruCell {
    pub fn init<S: Scalar>(
        params: &mut ParameterSet<S>,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            gates: Linear::init(params, &format!("{prefix}.gates"), in_dim + hidden, 2 * hidden, rng)?,
            candidate: Linear::init(params, &format!("{prefix}.cand"), in_dim + hidden, hidden, rng)?,
            hidden,
        })
    }

    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParameterSet<S>,
        mode: Load,
        x: Var,
        h: Var,
    ) -> Result<Var> {
        let xh = tape.concat_cols(&[x, h])?;
        let g = self.gates.forward(tape, params, mode, xh)?;
        let g = tape.sigmoid(g);
        let reset = tape.slice_cols(g, 0, self.hidden)?;
        let update = tape.slice_cols(g, self.hidden, 2 * self.hidden)?;
        let rh = tape.mul(reset, h)?;
        let xrh = tape.concat_cols(&[x, rh])?;
        let c = self.candidate.forward(tape, params, mode, xrh)?;
        let c = tape.tanh(c);
        let keep = tape.mul(update, h)?;
        let one_minus_u = tape.affine(update, -S::one(), S::one());
        let fresh = tape.mul(one_minus_u, c)?;
        tape.add(keep, fresh)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradients, GradCheck};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn input(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    #[test]
    fn two_layer_network_matches_finite_differences() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = ParameterSet::new();
            let mlp = Mlp::init(&mut params, "net", &[3, 5, 2], &mut rng).unwrap();
            let x = input(4, 3, seed + 100);
            let report = check_gradients(
                |tape, p| {
                    let xv = tape.constant(x.clone());
                    let y = mlp.forward(tape, p, Load::Train, xv)?;
                    let y = tape.tanh(y);
                    let sq = tape.square(y);
                    Ok::<_, crate::autodiff::Error>(tape.sum(sq))
                },
                &params,
                GradCheck::default(),
            )
            .unwrap();
            assert!(report.max_rel_error <= 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn gru_matches_finite_differences_over_two_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParameterSet::new();
        let cell = GruCell::init(&mut params, "gru", 2, 3, &mut rng).unwrap();
        let x0 = input(2, 2, 1);
        let x1 = input(2, 2, 2);
        let report = check_gradients(
            |tape, p| {
                let h = tape.constant(Tensor::zeros(&[2, 3]));
                let a = tape.constant(x0.clone());
                let h = cell.forward(tape, p, Load::Train, a, h)?;
                let b = tape.constant(x1.clone());
                let h = cell.forward(tape, p, Load::Train, b, h)?;
                Ok::<_, crate::autodiff::Error>(tape.sum(h))
            },
            &params,
            GradCheck::default(),
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn frozen_forward_contributes_no_parameter_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = ParameterSet::<f64>::new();
        let lin = Linear::init(&mut params, "lin", 2, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(input(1, 2, 3));
        let y = lin.forward(&mut tape, &params, Load::Frozen, x).unwrap();
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        assert!(g.params().is_empty());
        assert!(g.wrt(x).max_abs() > 0.0);
    }
}
