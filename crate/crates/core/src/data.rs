//! Bimodal datasets: paired (source, target, label) records plus
//! target-only records, a synthetic generator, CSV persistence and
//! stratified fold planning over the target-only records.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Vector,
    /// Each record is a flattened single-channel `side × side` image.
    Image { side: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedRecord {
    pub id: usize,
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    pub label: i8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnpairedRecord {
    pub id: usize,
    pub target: Vec<f64>,
    pub label: i8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BimodalDataset {
    pub paired: Vec<PairedRecord>,
    pub unpaired: Vec<UnpairedRecord>,
    pub mode: Mode,
    pub dim_s: usize,
    pub dim_t: usize,
}

fn check_label(label: i8, row: usize) -> Result<()> {
    if label == 1 || label == -1 {
        Ok(())
    } else {
        Err(Error::data(row, format!("label {label} is not ±1")))
    }
}

impl BimodalDataset {
    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for (row, r) in self.paired.iter().enumerate() {
            check_label(r.label, row)?;
            if r.source.len() != self.dim_s || r.target.len() != self.dim_t {
                return Err(Error::data(row, format!("paired record {} has wrong feature count", r.id)));
            }
            if !ids.insert(r.id) {
                return Err(Error::data(row, format!("duplicate id {}", r.id)));
            }
        }
        for (i, r) in self.unpaired.iter().enumerate() {
            let row = self.paired.len() + i;
            check_label(r.label, row)?;
            if r.target.len() != self.dim_t {
                return Err(Error::data(row, format!("record {} has wrong feature count", r.id)));
            }
            if !ids.insert(r.id) {
                return Err(Error::data(row, format!("duplicate id {}", r.id)));
            }
        }
        if let Mode::Image { side } = self.mode {
            if self.dim_t != side * side || (!self.paired.is_empty() && self.dim_s != side * side) {
                return Err(Error::config("mode", format!("image side {side} does not match feature dims")));
            }
        }
        Ok(())
    }

    /// Per-sample network input shape for a modality with `dim` features.
    fn input_shape(&self, dim: usize) -> Vec<usize> {
        match self.mode {
            Mode::Vector => vec![dim],
            Mode::Image { side } => vec![1, side, side],
        }
    }

    pub fn source_input_shape(&self) -> Vec<usize> {
        self.input_shape(self.dim_s)
    }

    pub fn target_input_shape(&self) -> Vec<usize> {
        self.input_shape(self.dim_t)
    }

    /// Stack flat feature rows into an `n × input_shape` batch.
    pub fn batch<'a>(&self, rows: impl Iterator<Item = &'a [f64]>, source: bool) -> Result<Tensor> {
        let mut data = Vec::new();
        let mut n = 0;
        for r in rows {
            data.extend_from_slice(r);
            n += 1;
        }
        let mut shape = vec![n];
        shape.extend(if source {
            self.source_input_shape()
        } else {
            self.target_input_shape()
        });
        Tensor::new(shape, data)
    }

    pub fn unpaired_ids(&self) -> Vec<usize> {
        self.unpaired.iter().map(|r| r.id).collect()
    }

    pub fn paired_ids(&self) -> Vec<usize> {
        self.paired.iter().map(|r| r.id).collect()
    }

    /// Target features and labels of every record, paired first.
    pub fn all_targets(&self) -> (Vec<&[f64]>, Vec<i8>) {
        let feats = self
            .paired
            .iter()
            .map(|r| r.target.as_slice())
            .chain(self.unpaired.iter().map(|r| r.target.as_slice()))
            .collect();
        let labels = self
            .paired
            .iter()
            .map(|r| r.label)
            .chain(self.unpaired.iter().map(|r| r.label))
            .collect();
        (feats, labels)
    }

    /// Copy with every source feature vector removed.
    pub fn without_source(&self) -> BimodalDataset {
        let mut ds = self.clone();
        ds.paired.iter_mut().for_each(|r| r.source.clear());
        ds.dim_s = 0;
        ds
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("id,kind,label");
        for i in 0..self.dim_s {
            write!(out, ",s{i}").unwrap();
        }
        for i in 0..self.dim_t {
            write!(out, ",t{i}").unwrap();
        }
        out.push('\n');
        let push_values = |out: &mut String, values: &[f64]| {
            for v in values {
                write!(out, ",{v:.16e}").unwrap();
            }
        };
        for r in &self.paired {
            write!(out, "{},paired,{}", r.id, r.label).unwrap();
            push_values(&mut out, &r.source);
            push_values(&mut out, &r.target);
            out.push('\n');
        }
        for r in &self.unpaired {
            write!(out, "{},unpaired,{}", r.id, r.label).unwrap();
            out.push_str(&",".repeat(self.dim_s));
            push_values(&mut out, &r.target);
            out.push('\n');
        }
        out
    }

    /// Loads a vector-mode dataset; use [`BimodalDataset::with_mode`] for images.
    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::data(0, "empty file"))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[..3] != ["id", "kind", "label"] {
            return Err(Error::data(0, "header must start with id,kind,label"));
        }
        let dim_s = cols[3..].iter().take_while(|c| c.starts_with('s')).count();
        let dim_t = cols.len() - 3 - dim_s;
        for (i, c) in cols[3..3 + dim_s].iter().enumerate() {
            if *c != format!("s{i}") {
                return Err(Error::data(0, format!("expected column s{i}, found `{c}`")));
            }
        }
        for (i, c) in cols[3 + dim_s..].iter().enumerate() {
            if *c != format!("t{i}") {
                return Err(Error::data(0, format!("expected column t{i}, found `{c}`")));
            }
        }
        if dim_t == 0 {
            return Err(Error::data(0, "no target feature columns"));
        }

        let parse_values = |fields: &[&str], row: usize| -> Result<Vec<f64>> {
            fields
                .iter()
                .map(|f| {
                    f.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        Error::data(row, format!("invalid feature value `{f}`"))
                    })
                })
                .collect()
        };

        let mut ds = BimodalDataset {
            paired: Vec::new(),
            unpaired: Vec::new(),
            mode: Mode::Vector,
            dim_s,
            dim_t,
        };
        let mut ids = HashSet::new();
        for (i, line) in lines.enumerate() {
            let row = i + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::data(
                    row,
                    format!("expected {} columns, found {}", cols.len(), fields.len()),
                ));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|_| Error::data(row, format!("invalid id `{}`", fields[0])))?;
            if !ids.insert(id) {
                return Err(Error::data(row, format!("duplicate id {id}")));
            }
            let label: i8 = fields[2]
                .trim()
                .parse()
                .map_err(|_| Error::data(row, format!("invalid label `{}`", fields[2])))?;
            check_label(label, row)?;
            let s_fields = &fields[3..3 + dim_s];
            let target = parse_values(&fields[3 + dim_s..], row)?;
            match fields[1] {
                "paired" => {
                    if dim_s == 0 || s_fields.iter().any(|f| f.trim().is_empty()) {
                        return Err(Error::data(row, "paired row lacks source features"));
                    }
                    let source = parse_values(s_fields, row)?;
                    ds.paired.push(PairedRecord {
                        id,
                        source,
                        target,
                        label,
                    });
                }
                "unpaired" => {
                    if s_fields.iter().any(|f| !f.trim().is_empty()) {
                        return Err(Error::data(row, "unpaired row has source features"));
                    }
                    ds.unpaired.push(UnpairedRecord { id, target, label });
                }
                other => return Err(Error::data(row, format!("unknown kind `{other}`"))),
            }
        }
        Ok(ds)
    }

    pub fn with_mode(mut self, mode: Mode) -> Result<Self> {
        self.mode = mode;
        self.validate()?;
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_paired: usize,
    pub n_unpaired: usize,
    pub dim_s: usize,
    pub dim_t: usize,
    pub separation_s: f64,
    pub separation_t: f64,
    pub noise_s: f64,
    pub noise_t: f64,
    pub cross_corr: f64,
    pub mode: GenMode,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMode {
    #[default]
    Vector,
    /// Records rendered on a 12 × 12 grid.
    Image,
}

/// Side length of rendered image records.
pub const IMAGE_SIDE: usize = 12;

impl Default for GenConfig {
    /// The complementary-source profile: an informative source modality and a
    /// noisier target, 106 paired and 159 target-only records.
    fn default() -> Self {
        GenConfig {
            n_paired: 106,
            n_unpaired: 159,
            dim_s: 8,
            dim_t: 8,
            separation_s: 1.6,
            separation_t: 0.8,
            noise_s: 0.6,
            noise_t: 1.0,
            cross_corr: 0.7,
            mode: GenMode::Vector,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paired < 1 {
            return Err(Error::config("n_paired", "must be at least 1"));
        }
        if self.n_unpaired < 1 {
            return Err(Error::config("n_unpaired", "must be at least 1"));
        }
        if self.dim_s < 1 {
            return Err(Error::config("dim_s", "must be at least 1"));
        }
        if self.dim_t < 1 {
            return Err(Error::config("dim_t", "must be at least 1"));
        }
        for (name, v) in [("noise_s", self.noise_s), ("noise_t", self.noise_t)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be positive"));
            }
        }
        for (name, v) in [("separation_s", self.separation_s), ("separation_t", self.separation_t)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.cross_corr) {
            return Err(Error::config("cross_corr", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v = normal_vec(rng, d);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `n` labels with counts differing by at most one, in random order.
fn balanced_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    let neg = n.div_ceil(2);
    let mut labels: Vec<i8> = (0..n).map(|i| if i < neg { -1 } else { 1 }).collect();
    labels.shuffle(rng);
    labels
}

struct Modality<'a> {
    direction: &'a [f64],
    separation: f64,
    noise: f64,
}

impl Modality<'_> {
    fn sample(&self, rng: &mut ChaCha8Rng, y: i8, latent: &[f64], coupling: f64) -> Vec<f64> {
        let fresh = (1.0 - coupling * coupling).sqrt();
        self.direction
            .iter()
            .zip(latent)
            .map(|(&mu, &u)| {
                let eps: f64 = StandardNormal.sample(rng);
                f64::from(y) * self.separation * mu + self.noise * (coupling * u + fresh * eps)
            })
            .collect()
    }
}

/// Renders a vector record as a centred blob: the projection on the class
/// direction sets the radius, the orthogonal residual drives pixel noise.
fn render_image(x: &[f64], direction: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let proj: f64 = x.iter().zip(direction).map(|(a, b)| a * b).sum();
    let radius = (3.0 + proj).clamp(0.5, 5.5);
    let c = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    let mut img = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for i in 0..IMAGE_SIDE {
        for j in 0..IMAGE_SIDE {
            let r = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
            let blob = 1.0 / (1.0 + (-(radius - r) * 2.0).exp());
            let eps: f64 = StandardNormal.sample(rng);
            img.push(blob + 0.3 * noise * eps);
        }
    }
    img
}

/// Class-conditional Gaussian bimodal data: `x = y·sep·μ + noise·(c·u + √(1−c²)·ε)`
/// with a latent `u` shared by the two modalities of a paired record.
pub fn generate_synthetic(cfg: &GenConfig) -> Result<BimodalDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mu_s = unit_vec(&mut rng, cfg.dim_s);
    let mu_t = unit_vec(&mut rng, cfg.dim_t);
    let latent_dim = cfg.dim_s.max(cfg.dim_t);
    let src = Modality {
        direction: &mu_s,
        separation: cfg.separation_s,
        noise: cfg.noise_s,
    };
    let tgt = Modality {
        direction: &mu_t,
        separation: cfg.separation_t,
        noise: cfg.noise_t,
    };

    let paired_labels = balanced_labels(&mut rng, cfg.n_paired);
    let unpaired_labels = balanced_labels(&mut rng, cfg.n_unpaired);

    let mut paired = Vec::with_capacity(cfg.n_paired);
    for (i, &y) in paired_labels.iter().enumerate() {
        let u = normal_vec(&mut rng, latent_dim);
        let mut source = src.sample(&mut rng, y, &u, cfg.cross_corr);
        let mut target = tgt.sample(&mut rng, y, &u, cfg.cross_corr);
        if cfg.mode == GenMode::Image {
            source = render_image(&source, &mu_s, cfg.noise_s, &mut rng);
            target = render_image(&target, &mu_t, cfg.noise_t, &mut rng);
        }
        paired.push(PairedRecord {
            id: i,
            source,
            target,
            label: y,
        });
    }
    let mut unpaired = Vec::with_capacity(cfg.n_unpaired);
    for (i, &y) in unpaired_labels.iter().enumerate() {
        let u = normal_vec(&mut rng, latent_dim);
        let mut target = tgt.sample(&mut rng, y, &u, cfg.cross_corr);
        if cfg.mode == GenMode::Image {
            target = render_image(&target, &mu_t, cfg.noise_t, &mut rng);
        }
        unpaired.push(UnpairedRecord {
            id: cfg.n_paired + i,
            target,
            label: y,
        });
    }

    let (mode, dim_s, dim_t) = if cfg.mode == GenMode::Image {
        let d = IMAGE_SIDE * IMAGE_SIDE;
        (Mode::Image { side: IMAGE_SIDE }, d, d)
    } else {
        (Mode::Vector, cfg.dim_s, cfg.dim_t)
    };
    Ok(BimodalDataset {
        paired,
        unpaired,
        mode,
        dim_s,
        dim_t,
    })
}

/// Stratified partition of the target-only ids into `k` test folds.
/// Paired ids are always training data and never appear here.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Test ids per fold, sorted.
    pub test_ids: Vec<Vec<usize>>,
}

pub fn make_fold_plan(ds: &BimodalDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config("k", "need at least 2 folds"));
    }
    if ds.unpaired.len() < k {
        return Err(Error::config(
            "k",
            format!("{k} folds exceed {} target-only records", ds.unpaired.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut neg: Vec<usize> = ds.unpaired.iter().filter(|r| r.label < 0).map(|r| r.id).collect();
    let mut pos: Vec<usize> = ds.unpaired.iter().filter(|r| r.label > 0).map(|r| r.id).collect();
    neg.shuffle(&mut rng);
    pos.shuffle(&mut rng);
    let mut test_ids = vec![Vec::new(); k];
    // deal negatives then positives round-robin, continuing the rotation
    for (slot, id) in neg.into_iter().chain(pos).enumerate() {
        test_ids[slot % k].push(id);
    }
    test_ids.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan { k, seed, test_ids })
}

impl FoldPlan {
    /// Checks the plan partitions exactly the dataset's target-only ids.
    pub fn validate(&self, ds: &BimodalDataset) -> Result<()> {
        let unpaired: HashSet<usize> = ds.unpaired_ids().into_iter().collect();
        let mut seen = HashSet::new();
        for (f, fold) in self.test_ids.iter().enumerate() {
            for id in fold {
                if !unpaired.contains(id) {
                    return Err(Error::data(None, format!("fold {f} references unknown or paired id {id}")));
                }
                if !seen.insert(*id) {
                    return Err(Error::data(None, format!("id {id} appears in more than one fold")));
                }
            }
        }
        if seen.len() != unpaired.len() {
            return Err(Error::data(None, "folds do not cover every target-only id"));
        }
        Ok(())
    }

    /// Target-only ids used for training in fold `f`.
    pub fn train_ids(&self, ds: &BimodalDataset, f: usize) -> Vec<usize> {
        let test: HashSet<usize> = self.test_ids[f].iter().copied().collect();
        ds.unpaired_ids().into_iter().filter(|id| !test.contains(id)).collect()
    }
}
