//! Central finite-difference checking of reverse-mode gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::crf::CrfScoreMode;
use crate::data::Example;
use crate::graph::{Graph, NodeId, OpKind};
use crate::model::{LabelSpace, ModelConfig, ModelDims, Noise, OneNet};
use crate::params::ParameterStore;
use crate::trainer::{joint_loss, CurriculumStage};

/// Which coordinates of each tensor to perturb.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// At most `per_tensor` coordinates per tensor, drawn with `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub coordinates: usize,
    /// Largest absolute disagreement divided by [`TensorCheck::scale`].
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    /// Largest gradient magnitude seen in the tensor, analytic or numeric.
    pub scale: f64,
    /// Flat index of the coordinate with the largest disagreement.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub step: f64,
    pub tolerance: f64,
    pub loss: f64,
    /// Smallest gradient scale used as a denominator.
    pub scale_floor: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.max_relative_error < self.tolerance)
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| !(t.max_relative_error < self.tolerance))
            .collect()
    }

    pub fn max_relative_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_relative_error)
            .fold(0.0, |m, e| if e.is_nan() || m.is_nan() { f64::NAN } else { m.max(e) })
    }
}

/// Rounding noise of a central difference: each loss evaluation is exact
/// only to about `eps * |loss|`, and the difference is divided by the step.
pub fn difference_noise(loss: f64, step: f64) -> f64 {
    f64::EPSILON * loss.abs().max(1.0) / step
}

/// Gradient scales below `NOISE_MULTIPLE` times the difference noise cannot
/// be certified relative to themselves and are compared against this floor.
pub const NOISE_MULTIPLE: f64 = 1e5;

/// Tensor-level relative error: `max |a - n| / max(|a|, |n|, floor)`, both
/// maxima taken over the checked coordinates.
///
/// A central difference on an O(10) loss with step 1e-5 carries about 1e-10
/// of rounding noise per coordinate, so an entry whose own gradient is near
/// 1e-7 cannot be judged relative to itself. Normalizing by the tensor's
/// gradient scale keeps the check meaningful for those entries while a wrong
/// backward rule still shows up at the size of the gradient it corrupts.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let mut diff = 0.0_f64;
    for (a, n) in analytic.iter().zip(numeric) {
        let d = (a - n).abs();
        if d.is_nan() {
            return f64::NAN;
        }
        diff = diff.max(d);
    }
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    diff / scale.max(floor)
}

fn evaluate<F>(store: &ParameterStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let mut g = Graph::new(store, 0);
    let loss = build(&mut g)?;
    g.forward()?;
    let v = g.scalar(loss);
    if !v.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(v)
}

/// Compare the graph's gradients with central differences for every tensor
/// in `store`.
///
/// `build` must construct the same scalar loss deterministically each time it
/// is called; graphs are always seeded identically, so dropout masks repeat.
pub fn gradient_check<F>(
    store: &ParameterStore,
    build: F,
    step: f64,
    tolerance: f64,
    coverage: Coverage,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let (loss_value, grads) = {
        let mut g = Graph::new(store, 0);
        let loss = build(&mut g)?;
        g.forward()?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        g.backward(loss)?;
        (v, g.gradients()?)
    };

    let floor = NOISE_MULTIPLE * difference_noise(loss_value, step);
    let mut work = store.clone();
    let mut tensors = Vec::with_capacity(store.len());
    for (id, tensor) in store.iter() {
        let coords: Vec<usize> = match coverage {
            Coverage::All => (0..tensor.len()).collect(),
            Coverage::Sample { per_tensor, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (id.index() as u64).wrapping_mul(0x9e37_79b9));
                let k = per_tensor.min(tensor.len());
                let mut v = sample(&mut rng, tensor.len(), k).into_vec();
                v.sort_unstable();
                v
            }
        };
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        for &k in &coords {
            let orig = work.data(id)[k];
            work.data_mut(id)[k] = orig + step;
            let plus = evaluate(&work, &build)?;
            work.data_mut(id)[k] = orig - step;
            let minus = evaluate(&work, &build)?;
            work.data_mut(id)[k] = orig;
            numeric.push((plus - minus) / (2.0 * step));
            analytic.push(grads.get(id)[k]);
        }
        let diffs: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).abs()).collect();
        let worst = (0..diffs.len())
            .max_by(|&i, &j| diffs[i].total_cmp(&diffs[j]))
            .unwrap_or(0);
        let check = TensorCheck {
            name: tensor.name().to_string(),
            coordinates: coords.len(),
            max_relative_error: relative_error(&analytic, &numeric, floor),
            max_absolute_error: diffs.get(worst).copied().unwrap_or(0.0),
            scale: analytic.iter().chain(&numeric).map(|v| v.abs()).fold(0.0, f64::max),
            worst_index: coords.get(worst).copied().unwrap_or(0),
            analytic: analytic.get(worst).copied().unwrap_or(0.0),
            numeric: numeric.get(worst).copied().unwrap_or(0.0),
        };
        tensors.push(check);
    }
    Ok(GradCheckReport {
        step,
        tolerance,
        loss: loss_value,
        scale_floor: floor,
        tensors,
    })
}

/// Size of the miniature joint network used for whole-model checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MiniSpec {
    pub char_dim: usize,
    pub word_dim: usize,
    pub hidden: usize,
    pub domains: usize,
    pub intents: usize,
    pub entity_types: usize,
    pub tokens: usize,
}

impl Default for MiniSpec {
    fn default() -> Self {
        MiniSpec {
            char_dim: 5,
            word_dim: 10,
            hidden: 8,
            domains: 3,
            intents: 4,
            entity_types: 3,
            tokens: 3,
        }
    }
}

/// A random annotated utterance and a freshly initialized joint network
/// sized by `spec`, both drawn from `seed`.
pub fn mini_onenet(spec: MiniSpec, mode: CrfScoreMode, seed: u64) -> Result<(OneNet, Example)> {
    if spec.tokens == 0 || spec.domains == 0 || spec.intents == 0 {
        return Err(Error::Config("mini network needs tokens, domains and intents".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let letters: Vec<char> = "abcdefgh".chars().collect();
    let tokens: Vec<String> = (0..spec.tokens)
        .map(|_| {
            let n = rng.gen_range(1..=4);
            (0..n).map(|_| letters[rng.gen_range(0..letters.len())]).collect()
        })
        .collect();
    let entity_types: Vec<String> = (0..spec.entity_types).map(|k| format!("e{k}")).collect();
    let mut slots = Vec::with_capacity(spec.tokens);
    for i in 0..spec.tokens {
        let prev: Option<&String> = slots.last();
        let label = match rng.gen_range(0..3) {
            0 if !entity_types.is_empty() => format!("B-{}", entity_types[rng.gen_range(0..entity_types.len())]),
            1 if i > 0 && prev.is_some_and(|p| p != "O") => format!("I-{}", &prev.expect("checked")[2..]),
            _ => "O".to_string(),
        };
        slots.push(label);
    }
    let labels = LabelSpace {
        domains: (0..spec.domains).map(|k| format!("d{k}")).collect(),
        intents: (0..spec.intents).map(|k| format!("i{k}")).collect(),
        entity_types,
    };
    let example = Example::new(
        tokens,
        &labels.domains[rng.gen_range(0..spec.domains)],
        &labels.intents[rng.gen_range(0..spec.intents)],
        slots,
    )?;
    let config = ModelConfig {
        dims: ModelDims {
            char_dim: spec.char_dim,
            char_hidden: spec.hidden,
            word_dim: spec.word_dim,
            word_hidden: spec.hidden,
        },
        crf_score: mode,
        ..ModelConfig::default()
    };
    let model = OneNet::for_corpus(config, std::slice::from_ref(&example), labels, rng.gen())?;
    Ok((model, example))
}

/// Check every coordinate of every tensor of a miniature joint network
/// against its full joint loss. `fault` corrupts one backward rule.
pub fn check_mini_onenet(
    spec: MiniSpec,
    mode: CrfScoreMode,
    seed: u64,
    step: f64,
    tolerance: f64,
    fault: Option<(OpKind, f64)>,
) -> Result<GradCheckReport> {
    let (model, example) = mini_onenet(spec, mode, seed)?;
    gradient_check(
        &model.store,
        |g: &mut Graph<'_>| {
            if let Some((kind, factor)) = fault {
                g.inject_backward_fault(kind, factor);
            }
            let nodes = joint_loss(&model, g, &example, CurriculumStage::AllThree, Noise::NONE, &mut rand::rngs::mock::StepRng::new(0, 0))?;
            Ok(nodes.total)
        },
        step,
        tolerance,
        Coverage::All,
    )
}
