//! Training loops for DDSTN and the comparison baselines.
//!
//! Every algorithm is the same minibatch loop over a different [`Objective`]:
//! each step draws one paired minibatch and one target minibatch from
//! independently shuffled streams, records the objective on a fresh graph,
//! backpropagates and updates both channels.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::BimodalDataset;
use crate::error::{Error, Result};
use crate::losses::{
    median_heuristic_gamma, objective, Channel, Discrepancy, Hyperparams, LupiDirection,
    MmdKernel, Objective, ObjectiveBatch, PairedBatch, UnpairedBatch,
};
use crate::network::{build_network, NetworkParams, NetworkSpec};
use crate::optim::{OptimizerKind, OptimizerState};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ddstn,
    CnnSvm,
    CnnSvmPlus,
    Ddc,
    Dan,
    DeepCoral,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::CnnSvm,
        Algorithm::CnnSvmPlus,
        Algorithm::Ddc,
        Algorithm::Dan,
        Algorithm::DeepCoral,
        Algorithm::Ddstn,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Algorithm::Ddstn => "ddstn",
            Algorithm::CnnSvm => "cnn_svm",
            Algorithm::CnnSvmPlus => "cnn_svm_plus",
            Algorithm::Ddc => "ddc",
            Algorithm::Dan => "dan",
            Algorithm::DeepCoral => "deep_coral",
        }
    }

    /// Name used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Ddstn => "DDSTN",
            Algorithm::CnnSvm => "CNN-SVM",
            Algorithm::CnnSvmPlus => "CNN-SVM+",
            Algorithm::Ddc => "DDC",
            Algorithm::Dan => "DAN",
            Algorithm::DeepCoral => "Deep CORAL",
        }
    }

    pub fn uses_source(self) -> bool {
        self != Algorithm::CnnSvm
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.key() == s)
            .ok_or_else(|| Error::config("algorithms", format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingMode {
    /// Both SVM+ directions every step, each with weight ½.
    #[default]
    Symmetric,
    /// Target decides on even epochs, source decides on odd epochs.
    EpochAlternate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub paired_batch_size: usize,
    pub unpaired_batch_size: usize,
    pub optimizer: OptimizerKind,
    pub hyper: Hyperparams,
    pub coupling: CouplingMode,
    /// Also feed paired target samples to the unpaired hinge and MMD pool.
    pub include_paired_target: bool,
    /// Multipliers of the median-heuristic `γ` for the multi-kernel baseline.
    pub multi_kernel_scales: Vec<f64>,
    /// Width of the penultimate (adaptation) layer.
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            paired_batch_size: 32,
            unpaired_batch_size: 32,
            optimizer: OptimizerKind::default(),
            hyper: Hyperparams::default(),
            coupling: CouplingMode::Symmetric,
            include_paired_target: false,
            multi_kernel_scales: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            feature_dim: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.paired_batch_size < 1 {
            return Err(Error::config("paired_batch_size", "must be at least 1"));
        }
        if self.unpaired_batch_size < 1 {
            return Err(Error::config("unpaired_batch_size", "must be at least 1"));
        }
        if self.feature_dim < 1 {
            return Err(Error::config("feature_dim", "must be at least 1"));
        }
        self.optimizer.validate()?;
        self.hyper.validate()?;
        MmdKernel::RbfMedian {
            scales: self.multi_kernel_scales.clone(),
        }
        .validate("multi_kernel_scales")
    }
}

/// Layouts of the two channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpecs {
    pub source: NetworkSpec,
    pub target: NetworkSpec,
}

impl ChannelSpecs {
    /// Default backbones for the dataset's mode.
    pub fn for_dataset(ds: &BimodalDataset, feature_dim: usize) -> Self {
        let make = |shape: Vec<usize>| match shape.as_slice() {
            [d] => NetworkSpec::vector_default(*d, feature_dim),
            [_, side, _] => NetworkSpec::image_default(*side, feature_dim),
            _ => unreachable!("dataset input shapes are rank 1 or 3"),
        };
        ChannelSpecs {
            source: make(ds.source_input_shape()),
            target: make(ds.target_input_shape()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ds = self.source.feature_dim()?;
        let dt = self.target.feature_dim()?;
        if ds != dt {
            return Err(Error::config(
                "specs",
                format!("source feature dim {ds} differs from target feature dim {dt}"),
            ));
        }
        Ok(())
    }
}

/// Result of a training run; the checkpoint format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub algorithm: Algorithm,
    pub target: NetworkParams,
    /// Only needed during training; prediction uses the target channel alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<NetworkParams>,
    /// Mean minibatch loss per epoch.
    pub history: Vec<f64>,
    /// Objective with any median-heuristic bandwidths resolved.
    pub objective: Objective,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)?;
        model.target.validate()?;
        if let Some(s) = &model.source {
            s.validate()?;
        }
        Ok(model)
    }
}

/// Cyclic index stream reshuffled whenever it runs out.
#[derive(Clone, Debug)]
struct Stream {
    order: Vec<usize>,
    pos: usize,
}

impl Stream {
    fn new(len: usize) -> Self {
        Stream {
            order: (0..len).collect(),
            pos: 0,
        }
    }

    fn reshuffle(&mut self, rng: &mut ChaCha8Rng) {
        self.order.shuffle(rng);
        self.pos = 0;
    }

    fn take(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = n.min(self.order.len());
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.pos == self.order.len() {
                self.reshuffle(rng);
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    fn steps(&self, batch: usize) -> usize {
        self.order.len().div_ceil(batch)
    }
}

/// Objective template for an algorithm before bandwidth resolution.
fn objective_template(algorithm: Algorithm, cfg: &TrainConfig) -> (Objective, Option<MmdKernel>) {
    let hp = &cfg.hyper;
    let base = Objective {
        c1: hp.c1,
        c2: hp.c2,
        lambda1: hp.lambda1,
        lambda2: hp.lambda2,
        rho: hp.rho,
        lupi: LupiDirection::Symmetric,
        source_hinge: 0.0,
        discrepancy: Discrepancy::None,
    };
    let adaptation = |kernel: Option<MmdKernel>, discrepancy: Discrepancy| {
        (
            Objective {
                c1: 0.0,
                source_hinge: hp.c2,
                discrepancy,
                ..base.clone()
            },
            kernel,
        )
    };
    match algorithm {
        Algorithm::Ddstn => (base, Some(hp.mmd_kernel.clone())),
        Algorithm::CnnSvm => (
            Objective {
                c1: 0.0,
                lambda1: 0.0,
                lambda2: 0.0,
                ..base
            },
            None,
        ),
        Algorithm::CnnSvmPlus => (Objective { lambda2: 0.0, ..base }, None),
        Algorithm::Ddc => adaptation(Some(MmdKernel::RbfMedian { scales: vec![1.0] }), Discrepancy::None),
        Algorithm::Dan => adaptation(
            Some(MmdKernel::RbfMedian {
                scales: cfg.multi_kernel_scales.clone(),
            }),
            Discrepancy::None,
        ),
        Algorithm::DeepCoral => adaptation(None, Discrepancy::Coral),
    }
}

/// Step-level training driver. [`train`] runs it to completion.
pub struct Trainer<'a> {
    ds: &'a BimodalDataset,
    algorithm: Algorithm,
    cfg: TrainConfig,
    target: NetworkParams,
    source: Option<NetworkParams>,
    opt_target: OptimizerState,
    opt_source: Option<OptimizerState>,
    /// (features, label) of every sample in the target minibatch pool.
    target_pool: Vec<(&'a [f64], i8)>,
    paired_stream: Option<Stream>,
    target_stream: Stream,
    rng: ChaCha8Rng,
    objective: Objective,
    /// Kernel still awaiting median-heuristic resolution.
    pending_kernel: Option<MmdKernel>,
    epoch: usize,
    history: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        algorithm: Algorithm,
        ds: &'a BimodalDataset,
        specs: &ChannelSpecs,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        specs.validate()?;
        if ds.unpaired.is_empty() {
            return Err(Error::data(None, "no target-only records to train on"));
        }
        if algorithm.uses_source() && ds.paired.is_empty() {
            return Err(Error::data(None, "no paired records to train on"));
        }
        if specs.target.input_shape != ds.target_input_shape() {
            return Err(Error::Dimension(format!(
                "target spec input {:?} does not match data {:?}",
                specs.target.input_shape,
                ds.target_input_shape()
            )));
        }
        if algorithm.uses_source() && specs.source.input_shape != ds.source_input_shape() {
            return Err(Error::Dimension(format!(
                "source spec input {:?} does not match data {:?}",
                specs.source.input_shape,
                ds.source_input_shape()
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let target_seed: u64 = rng.random();
        let source_seed: u64 = rng.random();
        let target = build_network(&specs.target, target_seed)?;
        let source = if algorithm.uses_source() {
            Some(build_network(&specs.source, source_seed)?)
        } else {
            None
        };

        let (objective, kernel) = objective_template(algorithm, cfg);
        let (objective, pending_kernel) = match kernel {
            Some(MmdKernel::Linear) => (
                Objective {
                    discrepancy: Discrepancy::MmdLinear,
                    ..objective
                },
                None,
            ),
            Some(MmdKernel::Rbf { bandwidths }) => (
                Objective {
                    discrepancy: Discrepancy::MmdRbf { bandwidths },
                    ..objective
                },
                None,
            ),
            Some(k @ MmdKernel::RbfMedian { .. }) if objective.lambda2 > 0.0 => (objective, Some(k)),
            _ => (objective, None),
        };

        let pool_all = algorithm == Algorithm::CnnSvm
            || matches!(algorithm, Algorithm::Ddc | Algorithm::Dan | Algorithm::DeepCoral)
            || cfg.include_paired_target;
        let mut target_pool = Vec::new();
        if pool_all {
            target_pool.extend(ds.paired.iter().map(|r| (r.target.as_slice(), r.label)));
        }
        target_pool.extend(ds.unpaired.iter().map(|r| (r.target.as_slice(), r.label)));

        let opt_target = OptimizerState::new(cfg.optimizer, &target.params);
        let opt_source = source
            .as_ref()
            .map(|s| OptimizerState::new(cfg.optimizer, &s.params));
        let paired_stream = algorithm.uses_source().then(|| Stream::new(ds.paired.len()));
        let target_stream = Stream::new(target_pool.len());

        Ok(Trainer {
            ds,
            algorithm,
            cfg: cfg.clone(),
            target,
            source,
            opt_target,
            opt_source,
            target_pool,
            paired_stream,
            target_stream,
            rng,
            objective,
            pending_kernel,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn target(&self) -> &NetworkParams {
        &self.target
    }

    pub fn source(&self) -> Option<&NetworkParams> {
        self.source.as_ref()
    }

    /// Current objective (bandwidths resolved after the first step).
    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    /// Minibatch steps per epoch: enough to cover the larger pool once.
    pub fn steps_per_epoch(&self) -> usize {
        let t = self.target_stream.steps(self.cfg.unpaired_batch_size);
        match &self.paired_stream {
            Some(p) => t.max(p.steps(self.cfg.paired_batch_size)),
            None => t,
        }
    }

    fn lupi_direction(&self) -> LupiDirection {
        match self.cfg.coupling {
            CouplingMode::Symmetric => LupiDirection::Symmetric,
            CouplingMode::EpochAlternate if self.epoch % 2 == 0 => LupiDirection::TargetDecides,
            CouplingMode::EpochAlternate => LupiDirection::SourceDecides,
        }
    }

    fn begin_epoch(&mut self) {
        if let Some(p) = &mut self.paired_stream {
            p.reshuffle(&mut self.rng);
        }
        self.target_stream.reshuffle(&mut self.rng);
    }

    /// Draw the next pair of minibatches.
    pub fn next_batch(&mut self) -> Result<ObjectiveBatch> {
        let paired = match &mut self.paired_stream {
            Some(stream) => {
                let idx = stream.take(self.cfg.paired_batch_size, &mut self.rng);
                let recs: Vec<_> = idx.iter().map(|&i| &self.ds.paired[i]).collect();
                Some(PairedBatch {
                    source: self.ds.batch(recs.iter().map(|r| r.source.as_slice()), true)?,
                    target: self.ds.batch(recs.iter().map(|r| r.target.as_slice()), false)?,
                    labels: recs.iter().map(|r| f64::from(r.label)).collect(),
                })
            }
            None => None,
        };
        let idx = self.target_stream.take(self.cfg.unpaired_batch_size, &mut self.rng);
        let unpaired = UnpairedBatch {
            target: self.ds.batch(idx.iter().map(|&i| self.target_pool[i].0), false)?,
            labels: idx.iter().map(|&i| f64::from(self.target_pool[i].1)).collect(),
        };
        Ok(ObjectiveBatch {
            paired,
            unpaired,
            source_pool: None,
        })
    }

    fn resolve_kernel(&mut self, batch: &ObjectiveBatch) -> Result<()> {
        let Some(MmdKernel::RbfMedian { scales }) = self.pending_kernel.take() else {
            return Ok(());
        };
        let source = self.source.as_ref().expect("kernel only pending with a source channel");
        let paired = batch.paired.as_ref().expect("source channel implies paired batches");
        let fs = source.forward(&paired.source)?.features;
        let ft = self.target.forward(&batch.unpaired.target)?.features;
        let gamma = median_heuristic_gamma(&[&fs, &ft]);
        self.objective.discrepancy = Discrepancy::MmdRbf {
            bandwidths: scales.iter().map(|s| s * gamma).collect(),
        };
        Ok(())
    }

    /// Objective value on `batch` at the current parameters, without updating.
    pub fn evaluate(&self, batch: &ObjectiveBatch) -> Result<f64> {
        let mut g = Graph::new();
        let t_ids = self.target.bind(&mut g);
        let s_ids = self.source.as_ref().map(|s| s.bind(&mut g));
        let mut obj = self.objective.clone();
        obj.lupi = self.lupi_direction();
        let source = self
            .source
            .as_ref()
            .zip(s_ids.as_deref())
            .map(|(net, ids)| Channel::new(net, ids));
        let nodes = objective(&mut g, source, Channel::new(&self.target, &t_ids), batch, &obj)?;
        g.scalar(nodes.total)
    }

    /// One optimisation step on `batch`; returns the loss before the update.
    pub fn step_on(&mut self, batch: &ObjectiveBatch) -> Result<f64> {
        self.resolve_kernel(batch)?;
        let mut g = Graph::new();
        let t_ids = self.target.bind(&mut g);
        let s_ids = self.source.as_ref().map(|s| s.bind(&mut g));
        let mut obj = self.objective.clone();
        obj.lupi = self.lupi_direction();
        let source = self
            .source
            .as_ref()
            .zip(s_ids.as_deref())
            .map(|(net, ids)| Channel::new(net, ids));
        let nodes = objective(&mut g, source, Channel::new(&self.target, &t_ids), batch, &obj)?;
        let loss = g.scalar(nodes.total)?;
        if !loss.is_finite() {
            return Err(Error::Contract(format!(
                "{} loss became non-finite at epoch {}",
                self.algorithm, self.epoch
            )));
        }
        let grads = g.backward(nodes.total)?;
        let gt: Vec<Tensor> = t_ids.iter().map(|&id| grads.wrt(id)).collect();
        self.opt_target.step(&mut self.target.params, &gt)?;
        if let (Some(src), Some(ids), Some(opt)) =
            (self.source.as_mut(), s_ids.as_ref(), self.opt_source.as_mut())
        {
            let gs: Vec<Tensor> = ids.iter().map(|&id| grads.wrt(id)).collect();
            opt.step(&mut src.params, &gs)?;
        }
        Ok(loss)
    }

    /// Run one full epoch and record its mean minibatch loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.begin_epoch();
        let steps = self.steps_per_epoch();
        let mut total = 0.0;
        for _ in 0..steps {
            let batch = self.next_batch()?;
            total += self.step_on(&batch)?;
        }
        let mean = total / steps as f64;
        self.history.push(mean);
        self.epoch += 1;
        Ok(mean)
    }

    pub fn finish(self) -> TrainedModel {
        TrainedModel {
            algorithm: self.algorithm,
            target: self.target,
            source: self.source,
            history: self.history,
            objective: self.objective,
            config: self.cfg,
        }
    }
}

pub fn train(
    algorithm: Algorithm,
    ds: &BimodalDataset,
    specs: &ChannelSpecs,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let mut trainer = Trainer::new(algorithm, ds, specs, cfg)?;
    for _ in 0..cfg.epochs {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}

pub fn train_ddstn(ds: &BimodalDataset, specs: &ChannelSpecs, cfg: &TrainConfig) -> Result<TrainedModel> {
    train(Algorithm::Ddstn, ds, specs, cfg)
}

/// Train one of the comparison methods.
pub fn train_baseline(
    kind: Algorithm,
    ds: &BimodalDataset,
    specs: &ChannelSpecs,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if kind == Algorithm::Ddstn {
        return Err(Error::config("kind", "ddstn is not a baseline"));
    }
    train(kind, ds, specs, cfg)
}
