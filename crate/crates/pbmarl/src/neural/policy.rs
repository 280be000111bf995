//! The branching Q-network and its loss.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::{relu, relu_backward, relu_vec, Dense, DenseGrad};
use super::{NeuralError, Transition};

/// Trunk widths used when none are configured.
pub const DEFAULT_TRUNK_HIDDEN: [usize; 2] = [128, 128];
/// Head hidden widths used when none are configured.
pub const DEFAULT_HEAD_HIDDEN: [usize; 1] = [64];

/// One agent's branching Q-network: a shared rectified trunk and one
/// head per token, each ending in a linear layer of `P` Q-values.
#[derive(Debug, Clone, PartialEq)]
pub struct QPolicy {
    state_width: usize,
    projects: usize,
    trunk: Vec<Dense>,
    heads: Vec<Vec<Dense>>,
}

/// Gradients for every parameter of a [`QPolicy`], in the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradients {
    pub trunk: Vec<DenseGrad>,
    pub heads: Vec<Vec<DenseGrad>>,
}

impl PolicyGradients {
    pub fn zeros_like(policy: &QPolicy) -> Self {
        PolicyGradients {
            trunk: policy.trunk.iter().map(DenseGrad::zeros_like).collect(),
            heads: policy
                .heads
                .iter()
                .map(|head| head.iter().map(DenseGrad::zeros_like).collect())
                .collect(),
        }
    }

    pub fn matches(&self, policy: &QPolicy) -> bool {
        self.trunk.len() == policy.trunk.len()
            && self.heads.len() == policy.heads.len()
            && self
                .trunk
                .iter()
                .zip(&policy.trunk)
                .all(|(g, l)| g.matches(l))
            && self.heads.iter().zip(&policy.heads).all(|(gh, lh)| {
                gh.len() == lh.len() && gh.iter().zip(lh).all(|(g, l)| g.matches(l))
            })
    }
}

impl QPolicy {
    /// Xavier-initialised policy with the default layer widths.
    pub fn init(
        state_width: usize,
        projects: usize,
        branches: usize,
        seed: u64,
    ) -> Result<Self, NeuralError> {
        Self::with_widths(
            state_width,
            projects,
            branches,
            &DEFAULT_TRUNK_HIDDEN,
            &DEFAULT_HEAD_HIDDEN,
            seed,
        )
    }

    /// Xavier-initialised policy with explicit trunk and head widths.
    /// Weights are drawn from a ChaCha stream keyed by `seed`, layer by
    /// layer in network order, so initialisation is reproducible.
    pub fn with_widths(
        state_width: usize,
        projects: usize,
        branches: usize,
        trunk_hidden: &[usize],
        head_hidden: &[usize],
        seed: u64,
    ) -> Result<Self, NeuralError> {
        if state_width == 0
            || projects == 0
            || branches == 0
            || trunk_hidden.contains(&0)
            || head_hidden.contains(&0)
        {
            return Err(NeuralError::ZeroDimension);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk = Vec::with_capacity(trunk_hidden.len());
        let mut width = state_width;
        for &hidden in trunk_hidden {
            trunk.push(Dense::xavier(width, hidden, &mut rng));
            width = hidden;
        }
        let mut heads = Vec::with_capacity(branches);
        for _ in 0..branches {
            let mut head = Vec::with_capacity(head_hidden.len() + 1);
            let mut head_width = width;
            for &hidden in head_hidden {
                head.push(Dense::xavier(head_width, hidden, &mut rng));
                head_width = hidden;
            }
            head.push(Dense::xavier(head_width, projects, &mut rng));
            heads.push(head);
        }
        Ok(QPolicy {
            state_width,
            projects,
            trunk,
            heads,
        })
    }

    pub fn from_layers(
        state_width: usize,
        projects: usize,
        trunk: Vec<Dense>,
        heads: Vec<Vec<Dense>>,
    ) -> Self {
        QPolicy {
            state_width,
            projects,
            trunk,
            heads,
        }
    }

    pub fn state_width(&self) -> usize {
        self.state_width
    }

    pub fn projects(&self) -> usize {
        self.projects
    }

    pub fn branches(&self) -> usize {
        self.heads.len()
    }

    pub fn trunk(&self) -> &[Dense] {
        &self.trunk
    }

    pub fn heads(&self) -> &[Vec<Dense>] {
        &self.heads
    }

    pub fn trunk_mut(&mut self) -> &mut Vec<Dense> {
        &mut self.trunk
    }

    pub fn heads_mut(&mut self) -> &mut Vec<Vec<Dense>> {
        &mut self.heads
    }

    pub fn parameter_count(&self) -> usize {
        let dense = |d: &Dense| d.weights.len() + d.biases.len();
        self.trunk.iter().map(dense).sum::<usize>()
            + self
                .heads
                .iter()
                .flat_map(|h| h.iter())
                .map(dense)
                .sum::<usize>()
    }

    fn check_state(&self, state: &[f64]) -> Result<(), NeuralError> {
        if state.len() != self.state_width {
            return Err(NeuralError::DimensionMismatch {
                expected: self.state_width,
                found: state.len(),
            });
        }
        Ok(())
    }

    /// Q-values for one state: one vector of `P` values per branch.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<Vec<f64>>, NeuralError> {
        self.check_state(state)?;
        let mut activation = Array1::from_vec(state.to_vec());
        for layer in &self.trunk {
            activation = layer.forward(&activation.view());
            relu_vec(&mut activation);
        }
        let mut outputs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let mut h = activation.clone();
            for (idx, layer) in head.iter().enumerate() {
                h = layer.forward(&h.view());
                if idx + 1 < head.len() {
                    relu_vec(&mut h);
                }
            }
            outputs.push(h.to_vec());
        }
        Ok(outputs)
    }

    /// Epsilon-greedy branch choices: per branch, a uniformly random
    /// project with probability `epsilon`, otherwise the argmax Q-value
    /// with lowest-index tie-breaking. `epsilon == 0` consumes no
    /// randomness.
    pub fn select_action(
        &self,
        state: &[f64],
        epsilon: f64,
        rng: &mut impl Rng,
    ) -> Result<Vec<usize>, NeuralError> {
        let q = self.forward(state)?;
        Ok(q.iter()
            .map(|branch| {
                if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                    rng.gen_range(0..self.projects)
                } else {
                    argmax(branch)
                }
            })
            .collect())
    }

    /// Pure greedy choices, used by validation episodes.
    pub fn select_greedy(&self, state: &[f64]) -> Result<Vec<usize>, NeuralError> {
        let q = self.forward(state)?;
        Ok(q.iter().map(|branch| argmax(branch)).collect())
    }

    /// Mean over the batch of the per-branch squared error between the
    /// scalar reward and the chosen action's Q-value, with gradients.
    /// Gradients flow only through each branch's chosen Q-value.
    pub fn compute_loss(
        &self,
        batch: &[Transition],
    ) -> Result<(f64, PolicyGradients), NeuralError> {
        if batch.is_empty() {
            return Err(NeuralError::EmptyBatch);
        }
        let b = batch.len();
        let t = self.heads.len();
        for transition in batch {
            self.check_state(&transition.state)?;
            if transition.action.len() != t {
                return Err(NeuralError::ShapeMismatch);
            }
            if transition.action.iter().any(|&a| a as usize >= self.projects) {
                return Err(NeuralError::ShapeMismatch);
            }
        }

        let mut states = Array2::zeros((b, self.state_width));
        for (i, transition) in batch.iter().enumerate() {
            states
                .row_mut(i)
                .assign(&Array1::from_vec(transition.state.to_vec()));
        }

        // Forward with caches: trunk_acts[0] is the input batch.
        let mut trunk_acts: Vec<Array2<f64>> = Vec::with_capacity(self.trunk.len() + 1);
        trunk_acts.push(states);
        for layer in &self.trunk {
            let mut z = layer.forward_batch(&trunk_acts.last().unwrap().view());
            relu(&mut z);
            trunk_acts.push(z);
        }
        let trunk_out = trunk_acts.last().unwrap().clone();

        let mut grads = PolicyGradients::zeros_like(self);
        let mut d_trunk_out: Array2<f64> = Array2::zeros(trunk_out.raw_dim());
        let scale = 2.0 / (b as f64 * t as f64);
        let mut loss = 0.0;

        for (d, head) in self.heads.iter().enumerate() {
            // head_acts[0] is the trunk output; hidden layers rectified,
            // final layer linear.
            let mut head_acts: Vec<Array2<f64>> = Vec::with_capacity(head.len() + 1);
            head_acts.push(trunk_out.clone());
            for (idx, layer) in head.iter().enumerate() {
                let mut z = layer.forward_batch(&head_acts.last().unwrap().view());
                if idx + 1 < head.len() {
                    relu(&mut z);
                }
                head_acts.push(z);
            }
            let q = head_acts.last().unwrap();

            let mut d_out: Array2<f64> = Array2::zeros(q.raw_dim());
            for (i, transition) in batch.iter().enumerate() {
                let chosen = transition.action[d] as usize;
                let err = q[(i, chosen)] - transition.reward;
                loss += err * err;
                d_out[(i, chosen)] = scale * err;
            }

            // Backward through the head into the shared trunk output.
            let mut upstream = d_out;
            for (idx, layer) in head.iter().enumerate().rev() {
                if idx + 1 < head.len() {
                    relu_backward(&mut upstream, &head_acts[idx + 1]);
                }
                let input = &head_acts[idx];
                let g = &mut grads.heads[d][idx];
                g.weights = input.t().dot(&upstream);
                g.biases = upstream.sum_axis(Axis(0));
                upstream = upstream.dot(&layer.weights.t());
            }
            d_trunk_out += &upstream;
        }

        let mut upstream = d_trunk_out;
        for (idx, layer) in self.trunk.iter().enumerate().rev() {
            relu_backward(&mut upstream, &trunk_acts[idx + 1]);
            let input = &trunk_acts[idx];
            let g = &mut grads.trunk[idx];
            g.weights = input.t().dot(&upstream);
            g.biases = upstream.sum_axis(Axis(0));
            upstream = upstream.dot(&layer.weights.t());
        }

        Ok((loss / (b as f64 * t as f64), grads))
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::StateVector;
    use approx::assert_relative_eq;
    use ndarray::array;
    use std::sync::Arc;

    fn state(values: &[f64]) -> StateVector {
        Arc::from(values.to_vec().into_boxed_slice())
    }

    fn transition(state_values: &[f64], action: &[u16], reward: f64) -> Transition {
        Transition {
            state: state(state_values),
            action: action.to_vec(),
            reward,
        }
    }

    #[test]
    fn init_rejects_zero_dimensions() {
        assert!(matches!(
            QPolicy::init(0, 3, 2, 1),
            Err(NeuralError::ZeroDimension)
        ));
        assert!(matches!(
            QPolicy::with_widths(4, 3, 2, &[0], &[], 1),
            Err(NeuralError::ZeroDimension)
        ));
    }

    #[test]
    fn init_is_bit_deterministic() {
        let a = QPolicy::init(6, 4, 3, 99).unwrap();
        let b = QPolicy::init(6, 4, 3, 99).unwrap();
        assert_eq!(a, b);
        let c = QPolicy::init(6, 4, 3, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn output_shape_is_branches_by_projects() {
        let policy = QPolicy::with_widths(330, 33, 10, &[16], &[8], 7).unwrap();
        let q = policy.forward(&vec![0.1; 330]).unwrap();
        assert_eq!(q.len(), 10);
        assert!(q.iter().all(|branch| branch.len() == 33));
    }

    #[test]
    fn zero_weights_produce_zero_q_values() {
        let mut policy = QPolicy::with_widths(4, 3, 2, &[5], &[4], 1).unwrap();
        for layer in policy.trunk_mut() {
            layer.weights.fill(0.0);
        }
        for head in policy.heads_mut() {
            for layer in head {
                layer.weights.fill(0.0);
            }
        }
        let q = policy.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert!(q.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_matches_hand_computed_affine_map() {
        // No trunk, no head hidden layer: each head is one linear map.
        let mut policy = QPolicy::with_widths(3, 2, 1, &[], &[], 1).unwrap();
        policy.heads_mut()[0][0] = Dense {
            weights: array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            biases: array![1.0, -1.0],
        };
        let q = policy.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(q, vec![vec![23.0, 27.0]]);
    }

    #[test]
    fn forward_rejects_wrong_state_width() {
        let policy = QPolicy::with_widths(4, 3, 2, &[5], &[], 1).unwrap();
        assert!(matches!(
            policy.forward(&[1.0, 2.0]),
            Err(NeuralError::DimensionMismatch {
                expected: 4,
                found: 2
            })
        ));
    }

    #[test]
    fn loss_is_zero_when_q_equals_reward() {
        let mut policy = QPolicy::with_widths(2, 2, 2, &[], &[], 1).unwrap();
        for head in policy.heads_mut() {
            head[0].weights.fill(0.0);
            head[0].biases.fill(1.5);
        }
        let batch = vec![transition(&[0.3, -0.2], &[0, 1], 1.5)];
        let (loss, _) = policy.compute_loss(&batch).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn loss_matches_hand_arithmetic() {
        // T = 2, r = 1, chosen Q-values 0 and 2: ((1-0)^2 + (1-2)^2) / 2 = 1.
        let mut policy = QPolicy::with_widths(2, 2, 2, &[], &[], 1).unwrap();
        for (d, head) in policy.heads_mut().iter_mut().enumerate() {
            head[0].weights.fill(0.0);
            head[0].biases = array![d as f64 * 2.0, -7.0];
        }
        let batch = vec![transition(&[0.0, 0.0], &[0, 0], 1.0)];
        let (loss, _) = policy.compute_loss(&batch).unwrap();
        assert_relative_eq!(loss, 1.0);
    }

    #[test]
    fn loss_rejects_empty_batch() {
        let policy = QPolicy::with_widths(2, 2, 2, &[], &[], 1).unwrap();
        assert!(matches!(
            policy.compute_loss(&[]),
            Err(NeuralError::EmptyBatch)
        ));
    }

    #[test]
    fn gradients_flow_only_through_chosen_actions() {
        let policy = QPolicy::with_widths(3, 4, 1, &[], &[], 5).unwrap();
        let batch = vec![transition(&[1.0, 2.0, 3.0], &[2], 0.7)];
        let (_, grads) = policy.compute_loss(&batch).unwrap();
        let g = &grads.heads[0][0];
        for col in 0..4 {
            let column_zero = g.weights.column(col).iter().all(|&v| v == 0.0)
                && g.biases[col] == 0.0;
            assert_eq!(column_zero, col != 2, "column {col}");
        }
    }

    #[test]
    fn branch_independence_and_trunk_sharing() {
        let base = QPolicy::with_widths(5, 3, 3, &[6], &[4], 42).unwrap();
        let s = vec![0.4, -0.1, 0.9, 0.2, -0.6];
        let q0 = base.forward(&s).unwrap();

        // Perturbing one head only changes that head's outputs. The final
        // layer is linear, so a bias shift always shows up.
        let mut head_perturbed = base.clone();
        head_perturbed.heads_mut()[1].last_mut().unwrap().biases[0] += 0.5;
        let q1 = head_perturbed.forward(&s).unwrap();
        assert_eq!(q0[0], q1[0]);
        assert_eq!(q0[2], q1[2]);
        assert_ne!(q0[1], q1[1]);

        // Perturbing the trunk can move every head.
        let mut trunk_perturbed = base.clone();
        trunk_perturbed.trunk_mut()[0].biases[0] += 10.0;
        let q2 = trunk_perturbed.forward(&s).unwrap();
        assert!(q2.iter().zip(&q0).any(|(a, b)| a != b));
    }

    #[test]
    fn epsilon_zero_is_pure_argmax_and_uses_no_randomness() {
        let policy = QPolicy::with_widths(4, 5, 3, &[6], &[4], 8).unwrap();
        let s = vec![0.2, 0.4, -0.3, 0.8];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let before = rng.clone();
        let action = policy.select_action(&s, 0.0, &mut rng).unwrap();
        assert_eq!(action, policy.select_greedy(&s).unwrap());
        assert_eq!(rng, before);
        let q = policy.forward(&s).unwrap();
        for (d, &a) in action.iter().enumerate() {
            assert!(q[d].iter().all(|&v| v <= q[d][a]));
        }
    }

    #[test]
    fn epsilon_one_is_uniform_over_projects() {
        let projects = 7usize;
        let policy = QPolicy::with_widths(3, projects, 2, &[4], &[], 13).unwrap();
        let s = vec![0.1, 0.2, 0.3];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let draws = 10_000;
        let mut counts = vec![0usize; projects];
        for _ in 0..draws {
            for &a in &policy.select_action(&s, 1.0, &mut rng).unwrap() {
                counts[a] += 1;
            }
        }
        let total = (draws * 2) as f64;
        let expected = total / projects as f64;
        // Binomial std dev per bucket; 3 sigma.
        let sigma = (total * (1.0 / projects as f64) * (1.0 - 1.0 / projects as f64)).sqrt();
        for &c in &counts {
            assert!(
                (c as f64 - expected).abs() < 3.0 * sigma,
                "count {c} vs expected {expected} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn fixed_rng_seed_reproduces_the_action_sequence() {
        let policy = QPolicy::with_widths(3, 5, 4, &[4], &[], 21).unwrap();
        let s = vec![0.5, -0.5, 0.25];
        let run = |seed| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| policy.select_action(&s, 0.3, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    /// Smallest |pre-activation| over every rectified unit for the batch.
    /// Central differences are only a valid oracle away from the kinks.
    fn min_abs_preactivation(policy: &QPolicy, batch: &[Transition]) -> f64 {
        let mut min = f64::INFINITY;
        for transition in batch {
            let mut x = ndarray::Array1::from_vec(transition.state.to_vec());
            for layer in policy.trunk() {
                let z = layer.forward(&x.view());
                min = z.iter().fold(min, |m, &v| m.min(v.abs()));
                x = z.mapv(|v| v.max(0.0));
            }
            for head in policy.heads() {
                let mut h = x.clone();
                for (idx, layer) in head.iter().enumerate() {
                    let z = layer.forward(&h.view());
                    if idx + 1 < head.len() {
                        min = z.iter().fold(min, |m, &v| m.min(v.abs()));
                    }
                    h = z.mapv(|v| v.max(0.0));
                }
            }
        }
        min
    }

    /// Central finite differences over every parameter of small random
    /// networks. The analytic gradient must agree to a relative error of
    /// 1e-4 (absolute for near-zero entries). Draws with a rectifier
    /// pre-activation within 1e-3 of zero are redrawn: the loss is not
    /// differentiable at the kink, so the oracle does not apply there.
    #[test]
    fn gradients_match_central_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7_311);
        let mut case = 0u64;
        let mut checked = 0;
        while checked < 100 {
            case += 1;
            let state_width = rng.gen_range(2..=5);
            let projects = rng.gen_range(2..=4);
            let branches = rng.gen_range(1..=3);
            let trunk: Vec<usize> = (0..rng.gen_range(0..=2))
                .map(|_| rng.gen_range(2..=5))
                .collect();
            let head: Vec<usize> = (0..rng.gen_range(0..=1))
                .map(|_| rng.gen_range(2..=4))
                .collect();
            let policy = QPolicy::with_widths(
                state_width,
                projects,
                branches,
                &trunk,
                &head,
                1000 + case,
            )
            .unwrap();

            let batch: Vec<Transition> = (0..rng.gen_range(1..=3))
                .map(|_| {
                    let s: Vec<f64> =
                        (0..state_width).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let action: Vec<u16> = (0..branches)
                        .map(|_| rng.gen_range(0..projects) as u16)
                        .collect();
                    transition(&s, &action, rng.gen_range(-1.0..1.0))
                })
                .collect();

            if min_abs_preactivation(&policy, &batch) < 1e-3 {
                continue;
            }
            checked += 1;

            let (_, grads) = policy.compute_loss(&batch).unwrap();
            let h = 1e-5;
            let check = |perturb: &dyn Fn(&mut QPolicy, f64), analytic: f64| {
                let mut plus = policy.clone();
                perturb(&mut plus, h);
                let mut minus = policy.clone();
                perturb(&mut minus, -h);
                let numeric = (plus.compute_loss(&batch).unwrap().0
                    - minus.compute_loss(&batch).unwrap().0)
                    / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs());
                if denom < 1e-8 {
                    assert!((analytic - numeric).abs() < 1e-8);
                } else {
                    assert!(
                        ((analytic - numeric) / denom).abs() < 1e-4,
                        "case {case}: analytic {analytic} vs numeric {numeric}"
                    );
                }
            };

            for (idx, grad) in grads.trunk.iter().enumerate() {
                for ((r, c), &g) in grad.weights.indexed_iter() {
                    check(&|p, h| p.trunk_mut()[idx].weights[(r, c)] += h, g);
                }
                for (r, &g) in grad.biases.indexed_iter() {
                    check(&|p, h| p.trunk_mut()[idx].biases[r] += h, g);
                }
            }
            for (d, head_grads) in grads.heads.iter().enumerate() {
                for (idx, grad) in head_grads.iter().enumerate() {
                    for ((r, c), &g) in grad.weights.indexed_iter() {
                        check(&|p, h| p.heads_mut()[d][idx].weights[(r, c)] += h, g);
                    }
                    for (r, &g) in grad.biases.indexed_iter() {
                        check(&|p, h| p.heads_mut()[d][idx].biases[r] += h, g);
                    }
                }
            }
        }
    }

    #[test]
    fn q_values_stay_finite_for_finite_inputs() {
        let policy = QPolicy::init(30, 6, 4, 3).unwrap();
        let s: Vec<f64> = (0..30).map(|i| (i as f64 - 15.0) * 1e3).collect();
        let q = policy.forward(&s).unwrap();
        assert!(q.iter().flatten().all(|v| v.is_finite()));
    }
}
