//! Losses, the diagonal AdaGrad optimizer with norm clipping, and the epoch
//! loop with best-on-dev checkpointing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{PairDataset, Split, Task};
use crate::error::{Error, Result};
use crate::model::{HeadOutput, Model, OutputGrad};
use crate::registry::{GradStore, ParamRegistry};
use crate::tensor::Tensor;

/// Max-margin ranking loss: max(0, 1 - s_pos + s_neg).
pub fn margin_loss(s_pos: f64, s_neg: f64) -> f64 {
    (1.0 - s_pos + s_neg).max(0.0)
}

/// Cross-entropy of a predicted distribution against a one-hot label.
pub fn cross_entropy(label: usize, probs: &[f64]) -> f64 {
    -probs[label].max(1e-300).ln()
}

/// Scales all gradients by threshold / norm when the global L2 norm exceeds
/// the threshold. Returns the pre-clip norm.
pub fn clip(grads: &mut GradStore, threshold: f64) -> f64 {
    assert!(threshold > 0.0);
    let norm = grads.global_norm();
    if norm > threshold {
        let scale = threshold / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Diagonal AdaGrad state.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub lr: f64,
    pub l2: f64,
    pub clip_threshold: f64,
    pub eps: f64,
    accum: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(lr: f64, l2: f64, clip_threshold: f64, eps: f64, registry: &ParamRegistry) -> Self {
        OptimizerState {
            lr,
            l2,
            clip_threshold,
            eps,
            accum: registry.iter().map(|(_, t, _)| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn accum(&self, idx: usize) -> &Tensor {
        &self.accum[idx]
    }
}

/// One AdaGrad update. The L2 penalty (2·l2·θ, non-embedding parameters
/// only) is added to the gradient before it enters the accumulator.
pub fn adagrad_step(state: &mut OptimizerState, registry: &mut ParamRegistry, grads: &GradStore) {
    for (idx, id) in registry.ids().collect::<Vec<_>>().into_iter().enumerate() {
        let decay = if registry.is_embedding(id) { 0.0 } else { 2.0 * state.l2 };
        let theta = registry.get_mut(id);
        let acc = state.accum[idx].data_mut();
        let g = grads.get(id).data();
        for (k, v) in theta.data_mut().iter_mut().enumerate() {
            let ge = g[k] + decay * *v;
            acc[k] += ge * ge;
            *v -= state.lr * ge / (acc[k].sqrt() + state.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Hyper {
    pub lr: f64,
    pub l2: f64,
    pub clip: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best_params: Vec<Tensor>,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Tab-separated lines: epoch, split, metric name, value.
    pub log: Vec<String>,
}

fn score_of(out: &HeadOutput) -> f64 {
    match out {
        HeadOutput::Score(s) => *s,
        HeadOutput::Probs(_) => panic!("ranking model required"),
    }
}

fn step_classification(
    model: &Model,
    x: &[u32],
    y: &[u32],
    label: usize,
    classes: usize,
    grads: &mut GradStore,
) -> Result<f64> {
    let (out, cache) = model.forward_cached(x, y)?;
    let probs = match out {
        HeadOutput::Probs(p) => p,
        _ => return Err(Error::Config("classification head required".into())),
    };
    let loss = cross_entropy(label, &probs);
    let mut d_logits = probs;
    d_logits[label] -= 1.0;
    debug_assert_eq!(d_logits.len(), classes);
    model.backward(&cache, &OutputGrad::Logits(d_logits), grads);
    Ok(loss)
}

fn step_ranking(model: &Model, group: &[usize], data: &PairDataset, grads: &mut GradStore) -> Result<f64> {
    let pos_idx = group
        .iter()
        .find(|&&i| data.samples[i].positive)
        .copied()
        .ok_or_else(|| Error::Input("ranking group without a positive".into()))?;
    let pos = &data.samples[pos_idx];
    let (out, pos_cache) = model.forward_cached(&pos.x, &pos.y)?;
    let s_pos = score_of(&out);
    let mut loss = 0.0;
    let mut active = 0usize;
    for &i in group {
        if i == pos_idx {
            continue;
        }
        let neg = &data.samples[i];
        let (nout, ncache) = model.forward_cached(&neg.x, &neg.y)?;
        let s_neg = score_of(&nout);
        let l = margin_loss(s_pos, s_neg);
        if l > 0.0 {
            loss += l;
            active += 1;
            model.backward(&ncache, &OutputGrad::Score(1.0), grads);
        }
    }
    if active > 0 {
        model.backward(&pos_cache, &OutputGrad::Score(-(active as f64)), grads);
    }
    Ok(loss)
}

/// Fraction correct: accuracy for classification, P@1 for ranking.
pub fn evaluate(model: &Model, data: &PairDataset, split: Split) -> Result<f64> {
    let indices = data.split(split);
    match data.task {
        Task::Classification { .. } => {
            let mut correct = 0usize;
            for &i in indices {
                let s = &data.samples[i];
                let probs = match model.forward(&s.x, &s.y)? {
                    HeadOutput::Probs(p) => p,
                    _ => return Err(Error::Config("classification head required".into())),
                };
                let pred = probs
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0;
                if pred == s.label {
                    correct += 1;
                }
            }
            Ok(correct as f64 / indices.len().max(1) as f64)
        }
        Task::Ranking => {
            let groups = data.groups(split);
            let mut hits = 0usize;
            for group in &groups {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = group[0];
                for &i in group {
                    let s = &data.samples[i];
                    let score = score_of(&model.forward(&s.x, &s.y)?);
                    if score > best {
                        best = score;
                        best_idx = i;
                    }
                }
                if data.samples[best_idx].positive {
                    hits += 1;
                }
            }
            Ok(hits as f64 / groups.len().max(1) as f64)
        }
    }
}

/// Epoch loop: shuffled pure-SGD steps (forward, loss, backward, clip,
/// AdaGrad), dev evaluation after every epoch, best-dev checkpointing.
pub fn train(model: &mut Model, data: &PairDataset, hyper: &Hyper) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut opt = OptimizerState::new(hyper.lr, hyper.l2, hyper.clip, hyper.eps, &model.registry);
    let mut grads = GradStore::zeros_like(&model.registry);
    let mut log = Vec::new();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.registry.snapshot();
    let metric_name = match data.task {
        Task::Classification { .. } => "accuracy",
        Task::Ranking => "p_at_1",
    };

    // training units: one sample (classification) or one group (ranking)
    let class_units: Vec<usize>;
    let rank_units: Vec<Vec<usize>>;
    let n_units = match data.task {
        Task::Classification { .. } => {
            class_units = data.split(Split::Train).to_vec();
            rank_units = Vec::new();
            class_units.len()
        }
        Task::Ranking => {
            class_units = Vec::new();
            rank_units = data.groups(Split::Train);
            rank_units.len()
        }
    };
    let mut order: Vec<usize> = (0..n_units).collect();

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, &u) in order.iter().enumerate() {
            grads.zero();
            let loss = match data.task {
                Task::Classification { classes } => {
                    let s = &data.samples[class_units[u]];
                    step_classification(model, &s.x, &s.y, s.label, classes, &mut grads)?
                }
                Task::Ranking => step_ranking(model, &rank_units[u], data, &mut grads)?,
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            epoch_loss += loss;
            clip(&mut grads, hyper.clip);
            adagrad_step(&mut opt, &mut model.registry, &grads);
        }
        let mean_loss = epoch_loss / n_units.max(1) as f64;
        log.push(format!("{epoch}\ttrain\tloss\t{mean_loss:.6}"));
        let dev = evaluate(model, data, Split::Dev)?;
        log.push(format!("{epoch}\tdev\t{metric_name}\t{dev:.6}"));
        if dev > best_metric {
            best_metric = dev;
            best_epoch = epoch;
            best_params = model.registry.snapshot();
        }
    }
    model.registry.restore(&best_params);
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        best_metric,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_tasks;
    use crate::model::{Arch, CellKind, DirectionMode, Head, ModelConfig};
    use crate::tensor::Tensor;
    use rand::Rng;

    #[test]
    fn margin_loss_values() {
        assert_eq!(margin_loss(1.0, 0.0), 0.0);
        assert_eq!(margin_loss(0.5, 0.5), 1.0);
        assert_eq!(margin_loss(0.0, 2.0), 3.0);
        assert!(margin_loss(-3.0, 5.0) >= 0.0);
    }

    #[test]
    fn cross_entropy_values() {
        assert_eq!(cross_entropy(0, &[1.0, 0.0]), 0.0);
        let u = 1.0 / 3.0;
        assert!((cross_entropy(1, &[u, u, u]) - 3.0f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(0, &[0.5, 0.5]) - 2.0f64.ln()).abs() < 1e-12);
    }

    fn store_with(values: &[f64]) -> (ParamRegistry, GradStore) {
        let mut reg = ParamRegistry::new();
        let id = reg
            .register("g", Tensor::zeros(&[values.len()]), false)
            .unwrap();
        let mut gs = GradStore::zeros_like(&reg);
        gs.get_mut(id).data_mut().copy_from_slice(values);
        (reg, gs)
    }

    #[test]
    fn clip_examples() {
        let (_, mut gs) = store_with(&[3.0, 4.0]);
        clip(&mut gs, 5.0); // norm == threshold: unchanged
        assert_eq!(gs.iter().next().unwrap().data(), &[3.0, 4.0]);
        clip(&mut gs, 1.0);
        let g = gs.iter().next().unwrap().data();
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let (_, mut zero) = store_with(&[0.0, 0.0]);
        clip(&mut zero, 1.0);
        assert_eq!(zero.iter().next().unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn clip_norm_bound_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let n = rng.gen_range(1..6);
            let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let (_, mut gs) = store_with(&vals);
            let t = rng.gen_range(0.1..5.0);
            clip(&mut gs, t);
            assert!(gs.global_norm() <= t + 1e-12);
        }
    }

    #[test]
    fn adagrad_two_step_example() {
        let mut reg = ParamRegistry::new();
        let id = reg.register("w", Tensor::from_vec(vec![1.0]), false).unwrap();
        let mut opt = OptimizerState::new(0.1, 0.0, 1e9, 0.0, &reg);
        let mut gs = GradStore::zeros_like(&reg);
        gs.get_mut(id).data_mut()[0] = 3.0;
        adagrad_step(&mut opt, &mut reg, &gs);
        assert!((reg.get(id).data()[0] - 0.9).abs() < 1e-12); // Δ = 0.1·3/3
        adagrad_step(&mut opt, &mut reg, &gs);
        let expect = 0.9 - 0.1 * 3.0 / 18.0f64.sqrt();
        assert!((reg.get(id).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn adagrad_zero_gradient_no_change() {
        let mut reg = ParamRegistry::new();
        let id = reg.register("w", Tensor::from_vec(vec![2.0]), false).unwrap();
        let mut opt = OptimizerState::new(0.1, 0.0, 1e9, 1e-8, &reg);
        let gs = GradStore::zeros_like(&reg);
        adagrad_step(&mut opt, &mut reg, &gs);
        assert_eq!(reg.get(id).data()[0], 2.0);
    }

    #[test]
    fn adagrad_effective_step_nonincreasing() {
        let mut reg = ParamRegistry::new();
        let id = reg.register("w", Tensor::from_vec(vec![1.0]), false).unwrap();
        let mut opt = OptimizerState::new(0.1, 0.0, 1e9, 1e-8, &reg);
        let mut gs = GradStore::zeros_like(&reg);
        let mut prev_step = f64::INFINITY;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            gs.get_mut(id).data_mut()[0] = rng.gen_range(0.5..2.0);
            adagrad_step(&mut opt, &mut reg, &gs);
            let eff = opt.lr / (opt.accum(0).data()[0].sqrt() + opt.eps);
            assert!(eff <= prev_step);
            prev_step = eff;
        }
    }

    fn tiny_cfg(vocab: usize) -> ModelConfig {
        ModelConfig {
            arch: Arch::Clstm,
            cell_kind: CellKind::Tc,
            blocks: 1,
            hidden: 4,
            embed_dim: 6,
            pool_p: 1,
            pool_q: 1,
            fc_width: 4,
            head: Head::Classification(2),
            directions: DirectionMode::Four,
            vocab_size: vocab,
            shared_encoders: false,
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let data = synth_tasks("same-seq", 50, 1).unwrap();
        let mut model = Model::new(tiny_cfg(data.vocab.len()), 2).unwrap();
        let before = model.registry.snapshot();
        let hyper = Hyper {
            lr: 0.0,
            l2: 0.0,
            clip: 10.0,
            eps: 1e-8,
            epochs: 1,
            seed: 0,
        };
        train(&mut model, &data, &hyper).unwrap();
        for (a, b) in model.registry.snapshot().iter().zip(&before) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn repeated_example_loss_nonincreasing_first_steps() {
        // sanity at a fixed seed, not a theorem
        let data = synth_tasks("same-seq", 50, 3).unwrap();
        let s = &data.samples[data.split(Split::Train)[0]];
        let mut model = Model::new(tiny_cfg(data.vocab.len()), 4).unwrap();
        let mut opt = OptimizerState::new(0.05, 0.0, 10.0, 1e-8, &model.registry);
        let mut grads = GradStore::zeros_like(&model.registry);
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            grads.zero();
            let loss =
                step_classification(&model, &s.x, &s.y, s.label, 2, &mut grads).unwrap();
            assert!(loss <= prev + 1e-12);
            prev = loss;
            clip(&mut grads, 10.0);
            adagrad_step(&mut opt, &mut model.registry, &grads);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = synth_tasks("same-seq", 60, 7).unwrap();
        let hyper = Hyper {
            lr: 0.05,
            l2: 1e-5,
            clip: 10.0,
            eps: 1e-8,
            epochs: 2,
            seed: 9,
        };
        let mut m1 = Model::new(tiny_cfg(data.vocab.len()), 5).unwrap();
        let out1 = train(&mut m1, &data, &hyper).unwrap();
        let mut m2 = Model::new(tiny_cfg(data.vocab.len()), 5).unwrap();
        let out2 = train(&mut m2, &data, &hyper).unwrap();
        assert_eq!(out1.log, out2.log);
        assert_eq!(m1.registry.snapshot(), m2.registry.snapshot());
    }
}
