//! Training objectives.
//!
//! Every loss is recorded on an autodiff [`Graph`] and reduces with a batch
//! mean, so the weights `C1`/`C2` do not depend on the minibatch size.
//! The SVM+ constraint set is folded into a penalty surrogate: the correcting
//! output `ξ = f_s(x_s)` is clamped at zero and the margin constraint
//! `y·f_t ≥ 1 − ξ` is enforced with a hinge weighted by `ρ`.
//! Distribution matching uses the squared (biased) MMD estimate.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::network::NetworkParams;
use crate::tensor::Tensor;

/// Kernel used for the feature discrepancy term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MmdKernel {
    /// `k(x, y) = ⟨x, y⟩`; MMD² is the squared distance of feature means.
    Linear,
    /// Gaussian kernels `exp(−γ‖x − y‖²)` with fixed `γ` values.
    Rbf { bandwidths: Vec<f64> },
    /// Gaussian kernels whose `γ` is the median-heuristic value of the first
    /// training batch multiplied by each scale.
    RbfMedian { scales: Vec<f64> },
}

impl MmdKernel {
    pub fn validate(&self, field: &str) -> Result<()> {
        let list = match self {
            MmdKernel::Linear => return Ok(()),
            MmdKernel::Rbf { bandwidths } => bandwidths,
            MmdKernel::RbfMedian { scales } => scales,
        };
        if list.is_empty() {
            return Err(Error::config(field, "rbf bandwidth list is empty"));
        }
        if list.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::config(field, "rbf bandwidths must be positive"));
        }
        Ok(())
    }
}

/// Which channel plays the decision role in the SVM+ term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LupiDirection {
    /// Target scores decide, source outputs are the correcting slack.
    TargetDecides,
    /// Roles swapped.
    SourceDecides,
    /// Half of each direction.
    Symmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Weight of the paired SVM+ term.
    pub c1: f64,
    /// Weight of the unpaired hinge term.
    pub c2: f64,
    /// Regulariser on the correcting (source) final layer.
    pub lambda1: f64,
    /// Weight of the MMD term.
    pub lambda2: f64,
    pub rho: f64,
    pub mmd_kernel: MmdKernel,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            c1: 1.0,
            c2: 1.0,
            lambda1: 1.0,
            lambda2: 0.5,
            rho: 1.0,
            mmd_kernel: MmdKernel::Linear,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be non-negative, got {v}")));
            }
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::config("rho", format!("must be positive, got {}", self.rho)));
        }
        self.mmd_kernel.validate("mmd_kernel")
    }
}

fn check_labels(labels: &[f64]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    if let Some(i) = labels.iter().position(|&y| y != 1.0 && y != -1.0) {
        return Err(Error::data(i, format!("label {} is not ±1", labels[i])));
    }
    Ok(())
}

fn check_scores(g: &Graph, scores: NodeId, n: usize, what: &str) -> Result<()> {
    if g.value(scores).numel() != n {
        return Err(Error::Contract(format!(
            "{what}: {} scores for {n} labels",
            g.value(scores).numel()
        )));
    }
    Ok(())
}

/// `y ⊙ s` as an `n × 1` node.
fn signed_margin(g: &mut Graph, scores: NodeId, labels: &[f64]) -> Result<NodeId> {
    let n = labels.len();
    let s = g.reshape(scores, vec![n, 1])?;
    let y = g.leaf(Tensor::column(labels.to_vec())?);
    g.mul(s, y)
}

/// `mean_i max(0, 1 − y_i s_i)`.
pub fn hinge_loss(g: &mut Graph, scores: NodeId, labels: &[f64]) -> Result<NodeId> {
    check_labels(labels)?;
    check_scores(g, scores, labels.len(), "hinge_loss")?;
    let ys = signed_margin(g, scores, labels)?;
    let neg = g.scale(ys, -1.0);
    let r = g.offset(neg, 1.0);
    let h = g.relu(r);
    Ok(g.mean(h))
}

/// `mean_i [ max(0, ξ_i) + ρ · max(0, 1 − y_i s_i − max(0, ξ_i)) ]`.
pub fn svmplus_paired_loss(
    g: &mut Graph,
    decision_scores: NodeId,
    slack: NodeId,
    labels: &[f64],
    rho: f64,
) -> Result<NodeId> {
    check_labels(labels)?;
    let n = labels.len();
    check_scores(g, decision_scores, n, "svmplus decision")?;
    check_scores(g, slack, n, "svmplus slack")?;
    let xi = g.reshape(slack, vec![n, 1])?;
    let xi = g.clamp_min0(xi);
    let ys = signed_margin(g, decision_scores, labels)?;
    let neg = g.scale(ys, -1.0);
    let r = g.offset(neg, 1.0);
    let r = g.sub(r, xi)?;
    let violation = g.relu(r);
    let violation = g.scale(violation, rho);
    let per_sample = g.add(xi, violation)?;
    Ok(g.mean(per_sample))
}

fn feature_dims(g: &Graph, fs: NodeId, ft: NodeId) -> Result<(usize, usize, usize)> {
    let (a, b) = (g.value(fs).shape(), g.value(ft).shape());
    match (a, b) {
        ([ns, ds], [nt, dt]) if ds == dt => Ok((*ns, *nt, *ds)),
        _ => Err(Error::Contract(format!(
            "feature sets must be n×d with equal d, got {a:?} and {b:?}"
        ))),
    }
}

/// `1 × d` mean of the rows of an `n × d` node.
fn row_mean(g: &mut Graph, x: NodeId, n: usize) -> Result<NodeId> {
    let w = g.leaf(Tensor::filled(&[1, n], 1.0 / n as f64));
    g.matmul(w, x)
}

/// `‖mean(fs) − mean(ft)‖²`.
pub fn mmd2_linear(g: &mut Graph, fs: NodeId, ft: NodeId) -> Result<NodeId> {
    let (ns, nt, _) = feature_dims(g, fs, ft)?;
    let ms = row_mean(g, fs, ns)?;
    let mt = row_mean(g, ft, nt)?;
    let diff = g.sub(ms, mt)?;
    let sq = g.square(diff);
    Ok(g.sum(sq))
}

/// `n_a × n_b` matrix of squared Euclidean distances between rows.
fn sq_distances(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let (na, nb, d) = feature_dims(g, a, b)?;
    let ones_d = g.leaf(Tensor::filled(&[d, 1], 1.0));
    let a2 = g.square(a);
    let a_norm = g.matmul(a2, ones_d)?;
    let b2 = g.square(b);
    let b_norm = g.matmul(b2, ones_d)?;
    let b_norm_t = g.transpose(b_norm)?;
    let ones_row = g.leaf(Tensor::filled(&[1, nb], 1.0));
    let ones_col = g.leaf(Tensor::filled(&[na, 1], 1.0));
    let ta = g.matmul(a_norm, ones_row)?;
    let tb = g.matmul(ones_col, b_norm_t)?;
    let bt = g.transpose(b)?;
    let cross = g.matmul(a, bt)?;
    let cross2 = g.scale(cross, 2.0);
    let s = g.add(ta, tb)?;
    g.sub(s, cross2)
}

fn rbf_kernel_mean(g: &mut Graph, a: NodeId, b: NodeId, gamma: f64) -> Result<NodeId> {
    let d = sq_distances(g, a, b)?;
    let scaled = g.scale(d, -gamma);
    let k = g.exp(scaled);
    Ok(g.mean(k))
}

/// Biased multi-kernel estimate
/// `mean_γ [ mean K_ss + mean K_tt − 2 mean K_st ]`.
pub fn mmd2_rbf(g: &mut Graph, fs: NodeId, ft: NodeId, bandwidths: &[f64]) -> Result<NodeId> {
    feature_dims(g, fs, ft)?;
    if bandwidths.is_empty() {
        return Err(Error::config("bandwidths", "empty bandwidth list"));
    }
    if let Some(&bad) = bandwidths.iter().find(|&&gm| !(gm > 0.0 && gm.is_finite())) {
        return Err(Error::config("bandwidths", format!("bandwidth {bad} is not positive")));
    }
    let mut total: Option<NodeId> = None;
    for &gamma in bandwidths {
        let kss = rbf_kernel_mean(g, fs, fs, gamma)?;
        let ktt = rbf_kernel_mean(g, ft, ft, gamma)?;
        let kst = rbf_kernel_mean(g, fs, ft, gamma)?;
        let within = g.add(kss, ktt)?;
        let cross = g.scale(kst, 2.0);
        let term = g.sub(within, cross)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    let total = total.expect("non-empty");
    Ok(g.scale(total, 1.0 / bandwidths.len() as f64))
}

fn covariance(g: &mut Graph, x: NodeId, n: usize) -> Result<NodeId> {
    let m = row_mean(g, x, n)?;
    let ones = g.leaf(Tensor::filled(&[n, 1], 1.0));
    let spread = g.matmul(ones, m)?;
    let xc = g.sub(x, spread)?;
    let xct = g.transpose(xc)?;
    let c = g.matmul(xct, xc)?;
    Ok(g.scale(c, 1.0 / (n as f64 - 1.0)))
}

/// `‖C_s − C_t‖²_F / (4 d²)` with unbiased sample covariances.
pub fn coral_loss(g: &mut Graph, fs: NodeId, ft: NodeId) -> Result<NodeId> {
    let (ns, nt, d) = feature_dims(g, fs, ft)?;
    if ns < 2 || nt < 2 {
        return Err(Error::Contract(format!(
            "coral needs at least 2 samples per side, got {ns} and {nt}"
        )));
    }
    let cs = covariance(g, fs, ns)?;
    let ct = covariance(g, ft, nt)?;
    let diff = g.sub(cs, ct)?;
    let sq = g.square(diff);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / (4.0 * (d * d) as f64)))
}

/// Median-heuristic RBF parameter `γ = 1 / (2 · median²)` over all pairwise
/// distances between rows of the given feature sets. Falls back to `1.0` when
/// the median distance is zero.
pub fn median_heuristic_gamma(sets: &[&Tensor]) -> f64 {
    let rows: Vec<&[f64]> = sets
        .iter()
        .flat_map(|t| (0..t.rows()).map(move |i| t.row(i)))
        .collect();
    let mut dists = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d2: f64 = rows[i].iter().zip(rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        1.0 / (2.0 * median * median)
    } else {
        1.0
    }
}

/// Feature discrepancy with any bandwidths already fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Discrepancy {
    None,
    MmdLinear,
    MmdRbf { bandwidths: Vec<f64> },
    Coral,
}

impl Discrepancy {
    pub fn record(&self, g: &mut Graph, fs: NodeId, ft: NodeId) -> Result<Option<NodeId>> {
        Ok(match self {
            Discrepancy::None => None,
            Discrepancy::MmdLinear => Some(mmd2_linear(g, fs, ft)?),
            Discrepancy::MmdRbf { bandwidths } => Some(mmd2_rbf(g, fs, ft, bandwidths)?),
            Discrepancy::Coral => Some(coral_loss(g, fs, ft)?),
        })
    }
}

/// Weighted terms of a training objective; DDSTN and every baseline are
/// instances of this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub c1: f64,
    pub c2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho: f64,
    pub lupi: LupiDirection,
    /// Weight of a plain hinge on the source channel over paired source data.
    pub source_hinge: f64,
    pub discrepancy: Discrepancy,
}

impl Objective {
    /// DDSTN objective from hyperparameters whose kernel is already resolved.
    pub fn ddstn(hp: &Hyperparams, lupi: LupiDirection) -> Result<Self> {
        hp.validate()?;
        let discrepancy = match &hp.mmd_kernel {
            MmdKernel::Linear => Discrepancy::MmdLinear,
            MmdKernel::Rbf { bandwidths } => Discrepancy::MmdRbf {
                bandwidths: bandwidths.clone(),
            },
            MmdKernel::RbfMedian { .. } => {
                return Err(Error::config(
                    "mmd_kernel",
                    "median-heuristic bandwidths must be resolved before building the objective",
                ))
            }
        };
        Ok(Objective {
            c1: hp.c1,
            c2: hp.c2,
            lambda1: hp.lambda1,
            lambda2: hp.lambda2,
            rho: hp.rho,
            lupi,
            source_hinge: 0.0,
            discrepancy,
        })
    }

    fn uses_source(&self) -> bool {
        self.c1 > 0.0
            || self.source_hinge > 0.0
            || (self.lambda2 > 0.0 && self.discrepancy != Discrepancy::None)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedBatch {
    pub source: Tensor,
    pub target: Tensor,
    pub labels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnpairedBatch {
    pub target: Tensor,
    pub labels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveBatch {
    pub paired: Option<PairedBatch>,
    pub unpaired: UnpairedBatch,
    /// Source samples for the discrepancy term; defaults to the paired sources.
    pub source_pool: Option<Tensor>,
}

/// A channel's parameters together with their bound graph leaves.
#[derive(Clone, Copy, Debug)]
pub struct Channel<'a> {
    pub net: &'a NetworkParams,
    pub ids: &'a [NodeId],
}

impl<'a> Channel<'a> {
    pub fn new(net: &'a NetworkParams, ids: &'a [NodeId]) -> Self {
        Channel { net, ids }
    }

    fn final_weight(&self) -> NodeId {
        self.ids[self.net.final_weight_index()]
    }
}

/// Node handles of each recorded term, already weighted only in `total`.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveNodes {
    pub total: NodeId,
    /// `½‖W_t‖² + ½λ1‖W_s‖²`.
    pub regularizer: NodeId,
    pub lupi: Option<NodeId>,
    pub hinge: NodeId,
    pub source_hinge: Option<NodeId>,
    pub discrepancy: Option<NodeId>,
}

fn half_sq_norm(g: &mut Graph, w: NodeId) -> NodeId {
    let sq = g.square(w);
    let s = g.sum(sq);
    g.scale(s, 0.5)
}

fn weighted_add(g: &mut Graph, acc: NodeId, term: NodeId, weight: f64) -> Result<NodeId> {
    let t = g.scale(term, weight);
    g.add(acc, t)
}

/// Record the full objective
/// `½(‖W_t‖² + λ1‖W_s‖²) + C1·SVM+ + C2·hinge + λ2·D(φ_s, φ_t)` (plus the
/// optional source hinge used by some baselines).
pub fn objective(
    g: &mut Graph,
    source: Option<Channel<'_>>,
    target: Channel<'_>,
    batch: &ObjectiveBatch,
    obj: &Objective,
) -> Result<ObjectiveNodes> {
    let source = match (source, obj.uses_source()) {
        (Some(s), _) => Some(s),
        (None, false) => None,
        (None, true) => {
            return Err(Error::Contract(
                "objective uses the source channel but none was given".into(),
            ))
        }
    };

    let w_t = target.final_weight();
    let mut regularizer = half_sq_norm(g, w_t);
    if let Some(s) = source {
        let ws = half_sq_norm(g, s.final_weight());
        regularizer = weighted_add(g, regularizer, ws, obj.lambda1)?;
    }
    let mut total = regularizer;

    let mut lupi = None;
    let mut source_hinge = None;
    let mut paired_source_features = None;
    let needs_paired = obj.c1 > 0.0 || obj.source_hinge > 0.0;
    if let (Some(s), Some(p)) = (source, batch.paired.as_ref()) {
        let xs = g.leaf(p.source.clone());
        let fs = s.net.forward_on(g, s.ids, xs)?;
        paired_source_features = Some(fs.features);
        if obj.c1 > 0.0 {
            let xt = g.leaf(p.target.clone());
            let ft = target.net.forward_on(g, target.ids, xt)?;
            let term = match obj.lupi {
                LupiDirection::TargetDecides => {
                    svmplus_paired_loss(g, ft.scores, fs.scores, &p.labels, obj.rho)?
                }
                LupiDirection::SourceDecides => {
                    svmplus_paired_loss(g, fs.scores, ft.scores, &p.labels, obj.rho)?
                }
                LupiDirection::Symmetric => {
                    let a = svmplus_paired_loss(g, ft.scores, fs.scores, &p.labels, obj.rho)?;
                    let b = svmplus_paired_loss(g, fs.scores, ft.scores, &p.labels, obj.rho)?;
                    let ab = g.add(a, b)?;
                    g.scale(ab, 0.5)
                }
            };
            total = weighted_add(g, total, term, obj.c1)?;
            lupi = Some(term);
        }
        if obj.source_hinge > 0.0 {
            let term = hinge_loss(g, fs.scores, &p.labels)?;
            total = weighted_add(g, total, term, obj.source_hinge)?;
            source_hinge = Some(term);
        }
    } else if needs_paired {
        return Err(Error::Contract("objective needs a paired batch".into()));
    }

    let xu = g.leaf(batch.unpaired.target.clone());
    let fu = target.net.forward_on(g, target.ids, xu)?;
    let hinge = hinge_loss(g, fu.scores, &batch.unpaired.labels)?;
    total = weighted_add(g, total, hinge, obj.c2)?;

    let mut discrepancy = None;
    if obj.lambda2 > 0.0 && obj.discrepancy != Discrepancy::None {
        let s = source.expect("checked by uses_source");
        let pool_features = match &batch.source_pool {
            Some(pool) => {
                let xp = g.leaf(pool.clone());
                s.net.forward_on(g, s.ids, xp)?.features
            }
            None => paired_source_features.ok_or_else(|| {
                Error::Contract("discrepancy term needs source samples".into())
            })?,
        };
        if let Some(d) = obj.discrepancy.record(g, pool_features, fu.features)? {
            total = weighted_add(g, total, d, obj.lambda2)?;
            discrepancy = Some(d);
        }
    }

    Ok(ObjectiveNodes {
        total,
        regularizer,
        lupi,
        hinge,
        source_hinge,
        discrepancy,
    })
}

/// The DDSTN objective: both channels, SVM+ on the paired batch, hinge and
/// MMD on the unpaired batch.
pub fn ddstn_objective(
    g: &mut Graph,
    source: Channel<'_>,
    target: Channel<'_>,
    batch: &ObjectiveBatch,
    hp: &Hyperparams,
    lupi: LupiDirection,
) -> Result<ObjectiveNodes> {
    let obj = Objective::ddstn(hp, lupi)?;
    objective(g, Some(source), target, batch, &obj)
}
