//! Per-pixel loss reweighting across stages, and end-to-end training.
//!
//! Stage `n` is trained with the loss `sum_p C_n(p) * (y(p) - ŷ_n(p))^2`. The
//! contribution map of the next stage is `C_{n+1}(p) = beta_n(p) * C_n(p)`,
//! with
//!
//! ```text
//! beta_n(p) = 1 - |ŷ_n(p) - 0.5|   if ŷ_n(p) is on the right side of 0.5
//!             1 + |ŷ_n(p) - 0.5|   otherwise
//! ```
//!
//! followed by normalizing the correctly and incorrectly predicted pixels of
//! the image to unit sum separately. The chain starts from `C_0` and the
//! all-0.5 null map: every null prediction counts as incorrect with beta 1, so
//! `C_1` is simply `C_0` rescaled to unit sum.
//!
//! Contribution maps are constants for differentiation. Gradients do flow
//! through the posterior each stage hands to the next, unless
//! [`ForwardOptions::propagate_between_stages`] is off.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::autodiff::{Graph, Var};
use crate::basemodel::{FcnConfig, FcnModel};
use crate::error::{invalid, Result};
use crate::grid::{BetaMap, BinaryMap, ContributionMap, Grid, InstanceLabelMap, ProbabilityMap};
use crate::optim::AdaDeltaState;
use crate::tensor::Tensor;
use crate::{seeded_rng, Rng};

/// One image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    /// `[3, H, W]`, values in [0, 1].
    pub image: Tensor,
    pub ground_truth: BinaryMap,
    pub instance_truth: InstanceLabelMap,
}

impl TrainingSample {
    /// Derives the binary truth from the instance map.
    pub fn new(image: Tensor, instance_truth: InstanceLabelMap) -> Result<Self> {
        let (_, h, w) = image.chw()?;
        if (instance_truth.width(), instance_truth.height()) != (w, h) {
            return Err(invalid!(
                "image is {}x{} but truth is {}x{}",
                w,
                h,
                instance_truth.width(),
                instance_truth.height()
            ));
        }
        let ground_truth = instance_truth.map(|&id| u8::from(id > 0));
        Ok(Self {
            image,
            ground_truth,
            instance_truth,
        })
    }

    pub fn width(&self) -> usize {
        self.ground_truth.width()
    }

    pub fn height(&self) -> usize {
        self.ground_truth.height()
    }
}

/// `ŷ = 0.5` exactly is never credited as correct.
#[inline]
pub fn is_correct(y: u8, y_hat: f64) -> bool {
    (y == 1 && y_hat > 0.5) || (y == 0 && y_hat < 0.5)
}

#[inline]
pub fn beta(y: u8, y_hat: f64) -> f64 {
    let confidence = (y_hat - 0.5).abs();
    if is_correct(y, y_hat) {
        1.0 - confidence
    } else {
        1.0 + confidence
    }
}

fn check_shape<A, B>(a: &Grid<A>, b: &Grid<B>, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(invalid!(
            "{}: {}x{} vs {}x{}",
            what,
            a.width(),
            a.height(),
            b.width(),
            b.height()
        ))
    }
}

pub fn beta_map(truth: &BinaryMap, pred: &ProbabilityMap) -> Result<BetaMap> {
    check_shape(truth, pred, "beta map shape mismatch")?;
    let data = truth
        .as_slice()
        .iter()
        .zip(pred.as_slice())
        .map(|(&y, &p)| beta(y, p))
        .collect();
    Grid::from_vec(truth.width(), truth.height(), data)
}

pub fn correct_mask(truth: &BinaryMap, pred: &ProbabilityMap) -> Result<Grid<bool>> {
    check_shape(truth, pred, "correctness mask shape mismatch")?;
    let data = truth
        .as_slice()
        .iter()
        .zip(pred.as_slice())
        .map(|(&y, &p)| is_correct(y, p))
        .collect();
    Grid::from_vec(truth.width(), truth.height(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitMode {
    Uniform,
    /// Weight inversely proportional to the pixel count of the pixel's class.
    #[default]
    ClassFrequency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialContributions {
    pub map: ContributionMap,
    /// Set when class-frequency init found a single class and used uniform.
    pub fell_back_to_uniform: bool,
}

/// Starting weights `C_0`, summing to 1 over the image.
pub fn init_contributions(truth: &BinaryMap, mode: InitMode) -> InitialContributions {
    let n = truth.len();
    let uniform = || Grid::filled(truth.width(), truth.height(), 1.0 / n as f64);
    match mode {
        InitMode::Uniform => InitialContributions {
            map: uniform(),
            fell_back_to_uniform: false,
        },
        InitMode::ClassFrequency => {
            let fg = truth.as_slice().iter().filter(|&&y| y == 1).count();
            let bg = n - fg;
            if fg == 0 || bg == 0 {
                return InitialContributions {
                    map: uniform(),
                    fell_back_to_uniform: true,
                };
            }
            // w_c proportional to 1 / count_c; the two classes each carry half.
            let (w_fg, w_bg) = (0.5 / fg as f64, 0.5 / bg as f64);
            InitialContributions {
                map: truth.map(|&y| if y == 1 { w_fg } else { w_bg }),
                fell_back_to_uniform: false,
            }
        }
    }
}

/// Raw `C_{n+1} = beta_n * C_n`, before normalization.
pub fn update_contributions(prev: &ContributionMap, betas: &BetaMap) -> Result<ContributionMap> {
    check_shape(prev, betas, "contribution update shape mismatch")?;
    let data = prev
        .as_slice()
        .iter()
        .zip(betas.as_slice())
        .map(|(c, b)| c * b)
        .collect();
    Grid::from_vec(prev.width(), prev.height(), data)
}

/// Rescales the correct and the incorrect group to unit sum independently.
/// Empty groups are skipped; a nonempty group with zero mass becomes uniform.
pub fn normalize_contributions(
    raw: &ContributionMap,
    correct: &Grid<bool>,
) -> Result<ContributionMap> {
    check_shape(raw, correct, "normalization shape mismatch")?;
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (&c, &ok) in raw.as_slice().iter().zip(correct.as_slice()) {
        sums[ok as usize] += c;
        counts[ok as usize] += 1;
    }
    let data = raw
        .as_slice()
        .iter()
        .zip(correct.as_slice())
        .map(|(&c, &ok)| {
            let g = ok as usize;
            if sums[g] > 0.0 {
                c / sums[g]
            } else {
                1.0 / counts[g] as f64
            }
        })
        .collect();
    Grid::from_vec(raw.width(), raw.height(), data)
}

/// One full step of the chain: beta, update, normalize.
pub fn next_contributions(
    prev: &ContributionMap,
    truth: &BinaryMap,
    pred: &ProbabilityMap,
) -> Result<ContributionMap> {
    let raw = update_contributions(prev, &beta_map(truth, pred)?)?;
    normalize_contributions(&raw, &correct_mask(truth, pred)?)
}

/// The chained stages and the weights of their losses in the total objective.
#[derive(Debug, Clone, PartialEq)]
pub struct StageStack {
    stages: Vec<FcnModel>,
    loss_weights: Vec<f64>,
}

impl StageStack {
    /// `count` stages, stage `i` initialized from `config.seed + i`.
    pub fn new(count: usize, config: FcnConfig) -> Result<Self> {
        let stages = (0..count)
            .map(|i| {
                FcnModel::new(FcnConfig {
                    seed: config.seed.wrapping_add(i as u64),
                    ..config
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_stages(stages)
    }

    pub fn from_stages(stages: Vec<FcnModel>) -> Result<Self> {
        let n = stages.len();
        Self::with_loss_weights(stages, vec![1.0; n])
    }

    pub fn with_loss_weights(stages: Vec<FcnModel>, loss_weights: Vec<f64>) -> Result<Self> {
        if stages.is_empty() {
            return Err(invalid!("a stage stack needs at least one stage"));
        }
        if loss_weights.len() != stages.len() {
            return Err(invalid!(
                "{} loss weights for {} stages",
                loss_weights.len(),
                stages.len()
            ));
        }
        let ic = stages[0].config().input_channels;
        let depth = stages[0].config().depth;
        if stages
            .iter()
            .any(|s| s.config().input_channels != ic || s.config().depth != depth)
        {
            return Err(invalid!("stages must share input channels and depth"));
        }
        Ok(Self {
            stages,
            loss_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn stages(&self) -> &[FcnModel] {
        &self.stages
    }

    pub fn stages_mut(&mut self) -> &mut [FcnModel] {
        &mut self.stages
    }

    pub fn loss_weights(&self) -> &[f64] {
        &self.loss_weights
    }

    /// Inference: posterior of every stage, starting from the null map.
    pub fn predict(&self, image: &Tensor) -> Result<Vec<ProbabilityMap>> {
        let (_, h, w) = image.chw()?;
        let mut prev = Grid::filled(w, h, 0.5);
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let next = stage.predict(image, &prev)?;
            out.push(next.clone());
            prev = next;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Off: every stage keeps `C_0` (the no-boost ablation).
    pub boost: bool,
    pub init_mode: InitMode,
    /// Off: each stage sees a detached copy of the previous posterior.
    pub propagate_between_stages: bool,
    /// Enables dropout.
    pub training: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            boost: true,
            init_mode: InitMode::ClassFrequency,
            propagate_between_stages: true,
            training: false,
        }
    }
}

/// Everything one multi-stage forward pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutputs {
    pub posteriors: Vec<ProbabilityMap>,
    /// `C_1 ..= C_N`, the weights each stage's loss was computed with.
    pub contributions: Vec<ContributionMap>,
    pub stage_losses: Vec<f64>,
    pub total_loss: f64,
}

struct Recorded {
    total: Var,
    posteriors: Vec<Var>,
    contributions: Vec<ContributionMap>,
}

fn record(
    stack: &StageStack,
    g: &mut Graph,
    vars: &[Vec<Var>],
    sample: &TrainingSample,
    opts: &ForwardOptions,
    rng: &mut Rng,
    fixed: Option<&[ContributionMap]>,
) -> Result<Recorded> {
    let (w, h) = (sample.width(), sample.height());
    if let Some(f) = fixed {
        if f.len() != stack.len() || f.iter().any(|c| !c.same_shape(&sample.ground_truth)) {
            return Err(invalid!("fixed contributions do not match the stack and sample"));
        }
    }
    let target = sample.ground_truth.map(|&y| f64::from(y)).to_tensor();
    let c0 = init_contributions(&sample.ground_truth, opts.init_mode).map;
    let image = g.constant(sample.image.clone());
    let mut prev_map: ProbabilityMap = Grid::filled(w, h, 0.5);
    let mut prev = g.constant(prev_map.to_tensor());
    let mut contrib = c0.clone();

    let mut losses = Vec::with_capacity(stack.len());
    let mut posteriors = Vec::with_capacity(stack.len());
    let mut contributions = Vec::with_capacity(stack.len());
    for (n, stage) in stack.stages.iter().enumerate() {
        contrib = match fixed {
            Some(f) => f[n].clone(),
            None if opts.boost => next_contributions(&contrib, &sample.ground_truth, &prev_map)?,
            None => c0.clone(),
        };
        let input = if opts.propagate_between_stages {
            prev
        } else {
            g.detach(prev)
        };
        let out = stage.stage_forward(g, &vars[n], image, input, opts.training, rng)?;
        let loss = g.weighted_sse(out, &target, &contrib.to_tensor())?;
        losses.push((loss, stack.loss_weights[n]));
        posteriors.push(out);
        contributions.push(contrib.clone());
        prev_map = ProbabilityMap::from_tensor(g.value(out))?;
        prev = out;
    }
    let total = g.combine(&losses)?;
    Ok(Recorded {
        total,
        posteriors,
        contributions,
    })
}

fn outputs(g: &Graph, rec: &Recorded, sample: &TrainingSample) -> Result<StageOutputs> {
    let posteriors = rec
        .posteriors
        .iter()
        .map(|&v| ProbabilityMap::from_tensor(g.value(v)))
        .collect::<Result<Vec<_>>>()?;
    let target = sample.ground_truth.map(|&y| f64::from(y));
    let stage_losses = posteriors
        .iter()
        .zip(&rec.contributions)
        .map(|(p, c)| {
            p.as_slice()
                .iter()
                .zip(target.as_slice())
                .zip(c.as_slice())
                .map(|((yh, y), cw)| cw * (y - yh) * (y - yh))
                .sum()
        })
        .collect();
    Ok(StageOutputs {
        posteriors,
        contributions: rec.contributions.clone(),
        stage_losses,
        total_loss: g.value(rec.total).data()[0],
    })
}

/// Runs all stages on one sample, deriving every stage's contribution map
/// on the fly.
pub fn multi_stage_forward(
    stack: &StageStack,
    sample: &TrainingSample,
    opts: &ForwardOptions,
    rng: &mut Rng,
) -> Result<StageOutputs> {
    let mut g = Graph::new();
    let vars: Vec<Vec<Var>> = stack.stages.iter().map(|s| s.bind(&mut g, false)).collect();
    let rec = record(stack, &mut g, &vars, sample, opts, rng, None)?;
    outputs(&g, &rec, sample)
}

/// Like [`multi_stage_forward`] but with caller-supplied `C_1 ..= C_N`.
pub fn multi_stage_forward_with_contributions(
    stack: &StageStack,
    sample: &TrainingSample,
    opts: &ForwardOptions,
    rng: &mut Rng,
    contributions: &[ContributionMap],
) -> Result<StageOutputs> {
    let mut g = Graph::new();
    let vars: Vec<Vec<Var>> = stack.stages.iter().map(|s| s.bind(&mut g, false)).collect();
    let rec = record(stack, &mut g, &vars, sample, opts, rng, Some(contributions))?;
    outputs(&g, &rec, sample)
}

/// Forward plus backward: gradients of the total loss for every stage's
/// parameters, in [`FcnModel::params`] order.
pub fn loss_and_gradients(
    stack: &StageStack,
    sample: &TrainingSample,
    opts: &ForwardOptions,
    rng: &mut Rng,
) -> Result<(StageOutputs, Vec<Vec<Tensor>>)> {
    let mut g = Graph::new();
    let vars: Vec<Vec<Var>> = stack.stages.iter().map(|s| s.bind(&mut g, true)).collect();
    let rec = record(stack, &mut g, &vars, sample, opts, rng, None)?;
    let mut grads = g.backward(rec.total)?;
    let per_stage = vars
        .iter()
        .zip(&stack.stages)
        .map(|(vs, stage)| {
            vs.iter()
                .zip(stage.params())
                .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
                .collect()
        })
        .collect();
    Ok((outputs(&g, &rec, sample)?, per_stage))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainOptions {
    pub max_epochs: usize,
    /// Non-improving epochs tolerated before stopping; 0 stops at the first one.
    pub patience: usize,
    pub boost_enabled: bool,
    pub seed: u64,
    pub init_mode: InitMode,
    pub propagate_between_stages: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            max_epochs: 200,
            patience: 10,
            boost_enabled: true,
            seed: 0,
            init_mode: InitMode::ClassFrequency,
            propagate_between_stages: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StopReason {
    EarlyStopping,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainingReport {
    /// Mean total loss over the training samples, per epoch.
    pub train_loss: Vec<f64>,
    /// Mean total loss over the validation samples, per epoch (dropout off).
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    /// 1-based last epoch run.
    pub stop_epoch: usize,
    pub stop_reason: StopReason,
}

/// Progress of one finished epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub improved: bool,
}

/// Mean total loss with dropout off and contributions derived as in training.
pub fn evaluate_loss(
    stack: &StageStack,
    samples: &[TrainingSample],
    opts: &ForwardOptions,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid!("cannot evaluate on an empty set"));
    }
    let opts = ForwardOptions {
        training: false,
        ..*opts
    };
    let mut rng = seeded_rng(0);
    let mut total = 0.0;
    for s in samples {
        total += multi_stage_forward(stack, s, &opts, &mut rng)?.total_loss;
    }
    Ok(total / samples.len() as f64)
}

pub fn train(
    stack: StageStack,
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    options: &TrainOptions,
) -> Result<(StageStack, TrainingReport)> {
    train_with_observer(stack, train_set, val_set, options, |_| {})
}

/// End-to-end training, one sample per update, with early stopping on the
/// validation loss. Returns the parameters of the best validation epoch.
pub fn train_with_observer(
    mut stack: StageStack,
    train_set: &[TrainingSample],
    val_set: &[TrainingSample],
    options: &TrainOptions,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<(StageStack, TrainingReport)> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(invalid!("training and validation sets must be nonempty"));
    }
    if options.max_epochs == 0 {
        return Err(invalid!("max_epochs must be at least 1"));
    }
    let fwd = ForwardOptions {
        boost: options.boost_enabled,
        init_mode: options.init_mode,
        propagate_between_stages: options.propagate_between_stages,
        training: true,
    };
    let mut rng = seeded_rng(options.seed);
    let mut state = AdaDeltaState::for_params(
        stack
            .stages
            .iter()
            .flat_map(|s| s.params().iter().map(|p| &p.value)),
    );
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut report = TrainingReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        stop_epoch: 0,
        stop_reason: StopReason::MaxEpochs,
    };
    let mut best = stack.clone();
    let mut best_val = f64::INFINITY;
    let mut waited = 0usize;

    for epoch in 1..=options.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let (out, grads) = loss_and_gradients(&stack, &train_set[i], &fwd, &mut rng)?;
            epoch_loss += out.total_loss;
            let flat_grads: Vec<&Tensor> = grads.iter().flatten().collect();
            let mut flat_params: Vec<&mut Tensor> = stack
                .stages
                .iter_mut()
                .flat_map(|s| s.params_mut().iter_mut().map(|p| &mut p.value))
                .collect();
            state.step(&mut flat_params, &flat_grads)?;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = evaluate_loss(&stack, val_set, &fwd)?;
        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        report.stop_epoch = epoch;

        let improved = val_loss < best_val;
        observer(&EpochRecord {
            epoch,
            train_loss,
            val_loss,
            improved,
        });
        if improved {
            best_val = val_loss;
            best = stack.clone();
            report.best_epoch = epoch;
            waited = 0;
        } else {
            waited += 1;
            if waited >= options.patience {
                report.stop_reason = StopReason::EarlyStopping;
                break;
            }
        }
    }
    Ok((best, report))
}
