//! Experiment orchestration behind the `ddstn` binary: dataset generation,
//! single-model train/eval, and the multi-algorithm comparison with its
//! report directory (`table1.csv`, per-algorithm ROC CSVs, `roc.svg`,
//! `manifest.json`).

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, make_fold_plan, BimodalDataset, GenConfig, Mode};
use crate::error::{Error, Result};
use crate::eval::{
    cross_validate, mean_sd, metrics, predict, roc_auc, Aggregate, EvalReport, FoldResult, Roc,
    RunSpec,
};
use crate::train::{train, Algorithm, ChannelSpecs, TrainConfig, TrainedModel};

/// Where the data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Synthetic data; the run seed is added to `seed`.
    Generate(GenConfig),
    Csv {
        path: PathBuf,
        /// Records are flattened `side × side` images.
        #[serde(default)]
        image_side: Option<usize>,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Generate(GenConfig::default())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub algorithms: Vec<String>,
    pub train: TrainConfig,
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Not written to manifests, so reruns into another directory match byte for byte.
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSource::default(),
            algorithms: Algorithm::ALL.iter().map(|a| a.key().to_string()).collect(),
            train: TrainConfig::default(),
            k: 3,
            seeds: (0..10).collect(),
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<Vec<Algorithm>> {
        if self.algorithms.is_empty() {
            return Err(Error::config("algorithms", "list is empty"));
        }
        let algos = self
            .algorithms
            .iter()
            .map(|a| a.parse::<Algorithm>())
            .collect::<Result<Vec<_>>>()?;
        let unique: HashSet<_> = algos.iter().collect();
        if unique.len() != algos.len() {
            return Err(Error::config("algorithms", "duplicate algorithm"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "list is empty"));
        }
        if self.k < 2 {
            return Err(Error::config("k", "need at least 2 folds"));
        }
        if let DatasetSource::Generate(g) = &self.dataset {
            g.validate()?;
        }
        self.train.validate()?;
        Ok(algos)
    }

    /// Seed for single-run commands.
    pub fn first_seed(&self) -> u64 {
        self.seeds.first().copied().unwrap_or(0)
    }

    pub fn dataset(&self, seed: u64) -> Result<BimodalDataset> {
        match &self.dataset {
            DatasetSource::Generate(g) => generate_synthetic(&GenConfig {
                seed: g.seed.wrapping_add(seed),
                ..g.clone()
            }),
            DatasetSource::Csv { path, image_side } => {
                let ds = BimodalDataset::load_csv(path)?;
                match image_side {
                    Some(side) => ds.with_mode(Mode::Image { side: *side }),
                    None => {
                        ds.validate()?;
                        Ok(ds)
                    }
                }
            }
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes `dataset.csv` into the output directory.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    if let DatasetSource::Generate(g) = &cfg.dataset {
        g.validate()?;
    }
    let ds = cfg.dataset(cfg.first_seed())?;
    create_dir(&cfg.out)?;
    let path = cfg.out.join("dataset.csv");
    ds.save_csv(&path)?;
    let pos = |labels: &mut dyn Iterator<Item = i8>| labels.filter(|&l| l > 0).count();
    println!(
        "wrote {}: {} paired ({} positive), {} target-only ({} positive)",
        path.display(),
        ds.paired.len(),
        pos(&mut ds.paired.iter().map(|r| r.label)),
        ds.unpaired.len(),
        pos(&mut ds.unpaired.iter().map(|r| r.label)),
    );
    Ok(path)
}

pub fn history_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        writeln!(out, "{e},{l:.16e}").unwrap();
    }
    out
}

/// Trains the first configured algorithm on the whole dataset and writes
/// `model.json` and `history.csv`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainedModel> {
    let algos = cfg.validate()?;
    let seed = cfg.first_seed();
    let ds = cfg.dataset(seed)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let specs = ChannelSpecs::for_dataset(&ds, train_cfg.feature_dim);
    let model = train(algos[0], &ds, &specs, &train_cfg)?;
    create_dir(&cfg.out)?;
    model.save_json(&cfg.out.join("model.json"))?;
    write_file(&cfg.out.join("history.csv"), &history_csv(&model.history))?;
    Ok(model)
}

/// Scores every record of `data` with the checkpoint's target channel.
pub fn evaluate_checkpoint(model: &TrainedModel, data: &BimodalDataset) -> Result<EvalReport> {
    let (feats, truth) = data.all_targets();
    let x = data.batch(feats.into_iter(), false)?;
    let pred = predict(model, &x)?;
    let m = metrics(&pred.labels, &truth)?;
    let roc = roc_auc(&pred.scores, &truth)?;
    let mut ids = data.paired_ids();
    ids.extend(data.unpaired_ids());
    let fold = FoldResult {
        fold: 0,
        metrics: m,
        auc: roc.auc,
        roc: roc.points.clone(),
        train_ids: Vec::new(),
        test_ids: ids,
        test_scores: pred.scores,
        test_labels: truth,
    };
    Ok(EvalReport {
        algorithm: model.algorithm,
        seed: model.config.seed,
        aggregate: Aggregate::from_folds(std::slice::from_ref(&fold)),
        folds: vec![fold],
        pooled_roc: roc,
    })
}

/// Loads a checkpoint and a labelled CSV, writes `eval.json`.
pub fn cmd_eval(cfg: &ExperimentConfig, model_path: &Path, data_path: &Path) -> Result<EvalReport> {
    let model = TrainedModel::load_json(model_path)?;
    let mut data = BimodalDataset::load_csv(data_path)?;
    if let [_, side, _] = model.target.spec.input_shape.as_slice() {
        data = data.with_mode(Mode::Image { side: *side })?;
    }
    let report = evaluate_checkpoint(&model, &data)?;
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("eval.json"), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldManifest {
    pub fold: usize,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub folds: Vec<FoldManifest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub paired_ids: Vec<usize>,
    pub unpaired_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub datasets: Vec<DatasetManifest>,
    pub runs: Vec<RunManifest>,
}

impl Manifest {
    /// Paired ids never tested; each run's test folds partition the
    /// target-only ids; no fold trains on its own test ids.
    pub fn verify_protocol(&self) -> Result<()> {
        for run in &self.runs {
            let ds = self
                .datasets
                .iter()
                .find(|d| d.seed == run.seed)
                .ok_or_else(|| Error::data(None, format!("no dataset entry for seed {}", run.seed)))?;
            let paired: HashSet<usize> = ds.paired_ids.iter().copied().collect();
            let unpaired: HashSet<usize> = ds.unpaired_ids.iter().copied().collect();
            let mut covered = HashSet::new();
            let ctx = |f: usize| format!("{} seed {} fold {f}", run.algorithm, run.seed);
            for fold in &run.folds {
                let train: HashSet<usize> = fold.train_ids.iter().copied().collect();
                for id in &fold.test_ids {
                    if paired.contains(id) {
                        return Err(Error::data(None, format!("{}: paired id {id} in test set", ctx(fold.fold))));
                    }
                    if !unpaired.contains(id) {
                        return Err(Error::data(None, format!("{}: unknown test id {id}", ctx(fold.fold))));
                    }
                    if train.contains(id) {
                        return Err(Error::data(None, format!("{}: test id {id} used for training", ctx(fold.fold))));
                    }
                    if !covered.insert(*id) {
                        return Err(Error::data(None, format!("{}: id {id} tested twice", ctx(fold.fold))));
                    }
                }
                if !paired.is_subset(&train) {
                    return Err(Error::data(None, format!("{}: paired data missing from training", ctx(fold.fold))));
                }
            }
            if covered != unpaired {
                return Err(Error::data(
                    None,
                    format!("{} seed {}: test folds do not cover the target-only ids", run.algorithm, run.seed),
                ));
            }
        }
        Ok(())
    }
}

/// One row of `table1.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub algorithm: Algorithm,
    /// Mean over seeds of each run's fold mean / fold SD, as fractions.
    pub acc: (f64, f64),
    pub sen: (f64, f64),
    pub spe: (f64, f64),
    pub yi: (f64, f64),
    pub auc: (f64, f64),
    /// AUC of the ROC pooled over every seed and fold.
    pub pooled_auc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareOutcome {
    pub rows: Vec<TableRow>,
    pub reports: Vec<EvalReport>,
    pub pooled_rocs: Vec<(Algorithm, Roc)>,
    pub manifest: Manifest,
}

fn average_over_seeds(reports: &[&EvalReport], pick: fn(&Aggregate) -> crate::eval::MeanSd) -> (f64, f64) {
    let means: Vec<f64> = reports.iter().map(|r| pick(&r.aggregate).mean).collect();
    let sds: Vec<f64> = reports.iter().map(|r| pick(&r.aggregate).sd).collect();
    (mean_sd(&means).mean, mean_sd(&sds).mean)
}

/// `86.79±1.54`.
pub fn percent_cell((mean, sd): (f64, f64)) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * sd)
}

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from("algorithm,ACC,SEN,SPE,YI\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.algorithm.label(),
            percent_cell(r.acc),
            percent_cell(r.sen),
            percent_cell(r.spe),
            percent_cell(r.yi)
        )
        .unwrap();
    }
    out
}

pub fn roc_csv(roc: &Roc) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &roc.points {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", p.threshold, p.fpr, p.tpr).unwrap();
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#d62728"];

/// Combined ROC plot: one polyline per algorithm, legend with AUC.
pub fn roc_svg(curves: &[(Algorithm, Roc)]) -> String {
    let (left, top, size) = (60.0, 20.0, 400.0);
    let x = |fpr: f64| left + fpr * size;
    let y = |tpr: f64| top + (1.0 - tpr) * size;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="680" height="480" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="680" height="480" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{size}" height="{size}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.1}</text>"#,
            x(v), top + size, x(v), top + size + 5.0, x(v), top + size + 18.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.1}</text>"#,
            left - 5.0, y(v), left, y(v), left - 8.0, y(v) + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#999" stroke-dasharray="4 4"/>"##,
        x(0.0), y(0.0), x(1.0), y(1.0)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">False positive rate</text>"#,
        left + size / 2.0,
        top + size + 36.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">True positive rate</text>"#,
        top + size / 2.0
    )
    .unwrap();
    for (i, (algo, roc)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = roc
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", x(p.fpr), y(p.tpr)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = top + 10.0 + 20.0 * i as f64;
        writeln!(
            s,
            r#"<line x1="475" y1="{ly:.1}" x2="495" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="500" y="{:.1}">{} (AUC {:.3})</text>"#,
            ly + 4.0,
            algo.label(),
            roc.auc
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Cross-validates every algorithm for every seed; pure computation, no I/O.
pub fn run_comparison(cfg: &ExperimentConfig) -> Result<CompareOutcome> {
    let algos = cfg.validate()?;
    let mut datasets = Vec::with_capacity(cfg.seeds.len());
    let mut plans = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let ds = cfg.dataset(seed)?;
        plans.push(make_fold_plan(&ds, cfg.k, seed)?);
        datasets.push(ds);
    }

    let mut reports = Vec::new();
    let mut runs = Vec::new();
    for &algo in &algos {
        for ((&seed, ds), plan) in cfg.seeds.iter().zip(&datasets).zip(&plans) {
            let run = RunSpec {
                algorithm: algo,
                config: TrainConfig {
                    seed,
                    ..cfg.train.clone()
                },
                specs: None,
            };
            let report = cross_validate(ds, plan, &run)?;
            runs.push(RunManifest {
                algorithm: algo,
                seed,
                folds: report
                    .folds
                    .iter()
                    .map(|f| FoldManifest {
                        fold: f.fold,
                        train_ids: f.train_ids.clone(),
                        test_ids: f.test_ids.clone(),
                    })
                    .collect(),
            });
            reports.push(report);
        }
    }

    let mut rows = Vec::new();
    let mut pooled_rocs = Vec::new();
    for &algo in &algos {
        let mine: Vec<&EvalReport> = reports.iter().filter(|r| r.algorithm == algo).collect();
        let scores: Vec<f64> = mine
            .iter()
            .flat_map(|r| r.folds.iter().flat_map(|f| f.test_scores.iter().copied()))
            .collect();
        let labels: Vec<i8> = mine
            .iter()
            .flat_map(|r| r.folds.iter().flat_map(|f| f.test_labels.iter().copied()))
            .collect();
        let pooled = roc_auc(&scores, &labels)?;
        rows.push(TableRow {
            algorithm: algo,
            acc: average_over_seeds(&mine, |a| a.acc),
            sen: average_over_seeds(&mine, |a| a.sen),
            spe: average_over_seeds(&mine, |a| a.spe),
            yi: average_over_seeds(&mine, |a| a.yi),
            auc: average_over_seeds(&mine, |a| a.auc),
            pooled_auc: pooled.auc,
        });
        pooled_rocs.push((algo, pooled));
    }

    let manifest = Manifest {
        config: cfg.clone(),
        seeds: cfg.seeds.clone(),
        datasets: cfg
            .seeds
            .iter()
            .zip(&datasets)
            .map(|(&seed, ds)| DatasetManifest {
                seed,
                paired_ids: ds.paired_ids(),
                unpaired_ids: ds.unpaired_ids(),
            })
            .collect(),
        runs,
    };
    Ok(CompareOutcome {
        rows,
        reports,
        pooled_rocs,
        manifest,
    })
}

/// Runs the comparison and writes the report directory.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<CompareOutcome> {
    let outcome = run_comparison(cfg)?;
    outcome.manifest.verify_protocol()?;
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("table1.csv"), &table_csv(&outcome.rows))?;
    for (algo, roc) in &outcome.pooled_rocs {
        write_file(&cfg.out.join(format!("roc_{}.csv", algo.key())), &roc_csv(roc))?;
    }
    write_file(&cfg.out.join("roc.svg"), &roc_svg(&outcome.pooled_rocs))?;
    write_file(
        &cfg.out.join("summary.json"),
        &serde_json::to_string_pretty(&outcome.rows)?,
    )?;
    write_file(
        &cfg.out.join("manifest.json"),
        &serde_json::to_string_pretty(&outcome.manifest)?,
    )?;
    Ok(outcome)
}
