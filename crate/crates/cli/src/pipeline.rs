//! Pipeline stages. Each stage reads its inputs from the output directory,
//! writes its artifacts back, and can be re-run in isolation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use losstrace::aggregators::{lt_iqr_grid, mean_score, score_all, score_evolution};
use losstrace::attacks::{run_attack, AttackKind};
use losstrace::evaluation::{
    auc, evaluate_predictor, label_vulnerable, precision_at_k, roc_curve, union_vulnerable, EvalReport,
    ThresholdChoice,
};
use losstrace::stats::quantile;
use losstrace::trainer::{
    config_digest, generate_synthetic, per_sample_metrics, random_half_mask, setup_digest, train, train_shadows,
    Mlp, ToyDataset, TrainConfig, TrainSummary,
};
use losstrace::{ScoreVector, ShadowPanel, TraceSet, VulnerableSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::io::{self, fmt_f64};
use crate::plot::{Chart, Scale, Series};

pub const BASELINES: [&str; 4] = ["loss", "confidence", "param_grad_norm", "input_grad_norm"];
pub const UNION: &str = "union";
pub const STAGES: [&str; 8] = ["gen-data", "train", "train-shadows", "score", "attack", "evaluate", "ablate", "report"];

/// Where each artifact lives under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.json")
    }
    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed-{seed}"))
    }
    pub fn target_dir(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("target")
    }
    pub fn shadow_dir(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("shadows")
    }
    pub fn panel(&self, seed: u64) -> PathBuf {
        self.shadow_dir(seed).join("panel.json")
    }
    pub fn scores_dir(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("scores")
    }
    pub fn score_file(&self, seed: u64, predictor: &str) -> PathBuf {
        self.scores_dir(seed).join(format!("{predictor}.csv"))
    }
    pub fn attack_dir(&self, seed: u64, label: &str) -> PathBuf {
        self.seed_dir(seed).join("attacks").join(label)
    }
    pub fn vulnerable_file(&self, seed: u64, label: &str, alpha: f64) -> PathBuf {
        self.attack_dir(seed, label).join(format!("vulnerable_alpha-{alpha}.json"))
    }
    pub fn eval_dir(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("eval")
    }
    pub fn ablation_dir(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("ablation")
    }
    pub fn report_dir(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("report")
    }
}

/// Messages and warnings produced by a stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub messages: Vec<String>,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn extend(&mut self, other: Outcome) {
        self.messages.extend(other.messages);
        self.warnings.extend(other.warnings);
    }
}

/// Member split and run seeds derived from one experiment seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedPlan {
    pub member_mask: Vec<bool>,
    pub target_seed: u64,
    pub shadow_seed: u64,
}

pub fn seed_plan(seed: u64, n: usize) -> SeedPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let member_mask = random_half_mask(n, &mut rng);
    SeedPlan { member_mask, target_seed: rng.gen(), shadow_seed: rng.gen() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRun {
    pub run_id: String,
    pub config_digest: String,
}

/// Shadow panel plus the digests of the runs it was folded from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelFile {
    pub setup_digest: String,
    pub runs: Vec<PanelRun>,
    pub panel: ShadowPanel,
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<ToyDataset> {
    let path = Layout::new(&cfg.output_dir).dataset();
    io::require(&path, "gen-data")?;
    let data: ToyDataset = io::read_json(&path)?;
    data.validate()?;
    if data.spec != cfg.dataset {
        return Err(CliError::Data(format!(
            "{} was generated from a different dataset spec; re-run `losstrace gen-data`",
            path.display()
        )));
    }
    Ok(data)
}

fn target_config(cfg: &ExperimentConfig, plan: &SeedPlan) -> TrainConfig {
    TrainConfig { seed: plan.target_seed, ..cfg.train.clone() }
}

/// Loads the target run of `seed` and checks it matches the current config.
pub fn load_target(cfg: &ExperimentConfig, data: &ToyDataset, seed: u64) -> Result<TraceSet> {
    let dir = Layout::new(&cfg.output_dir).target_dir(seed);
    io::require(&dir.join(io::MANIFEST_FILE), "train")?;
    let (manifest, traces) = io::read_run(&dir)?;
    let plan = seed_plan(seed, data.len());
    let expected = config_digest(data, &target_config(cfg, &plan), &plan.member_mask);
    if manifest.config_digest != expected || manifest.seed != plan.target_seed {
        return Err(CliError::Data(format!(
            "{} was trained under a different config; re-run `losstrace train`",
            dir.display()
        )));
    }
    if traces.sample_ids() != data.sample_ids.as_slice() {
        return Err(CliError::Data(format!("{}: sample ids do not match the dataset", dir.display())));
    }
    Ok(traces)
}

pub fn gen_data(cfg: &ExperimentConfig) -> Result<Outcome> {
    let d = cfg.dataset;
    let data = generate_synthetic(d.n, d.dim, d.n_classes, d.label_noise_fraction, d.seed)?;
    let path = Layout::new(&cfg.output_dir).dataset();
    io::write_json(&path, &data)?;
    Ok(Outcome {
        messages: vec![format!("wrote {} ({} samples, {} relabeled)", path.display(), data.len(), data.relabeled.len())],
        warnings: vec![],
    })
}

pub fn train_targets(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = load_dataset(cfg)?;
    let layout = Layout::new(&cfg.output_dir);
    let mut out = Outcome::default();
    for &seed in &cfg.seeds {
        let plan = seed_plan(seed, data.len());
        let mut run = train(&data, &plan.member_mask, &target_config(cfg, &plan))?;
        run.manifest.run_id = format!("target-seed-{seed}");
        let dir = layout.target_dir(seed);
        io::write_run(&dir, &run.manifest, &run.traces)?;
        io::write_json(&dir.join("model.json"), &run.model)?;
        io::write_json(&dir.join("summary.json"), &run.summary)?;
        out.messages.push(format!(
            "seed {seed}: target member accuracy {:.4}, wrote {}",
            run.summary.member_accuracy,
            dir.display()
        ));
        if run.summary.member_accuracy < 0.99 {
            out.warnings.push(format!(
                "seed {seed}: target reached only {:.4} member accuracy",
                run.summary.member_accuracy
            ));
        }
    }
    Ok(out)
}

pub fn train_shadow_sets(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = load_dataset(cfg)?;
    let layout = Layout::new(&cfg.output_dir);
    let mut out = Outcome::default();
    for &seed in &cfg.seeds {
        let plan = seed_plan(seed, data.len());
        let (runs, _) = train_shadows(&data, cfg.shadows, &cfg.train, plan.shadow_seed)?;
        let dir = layout.shadow_dir(seed);
        let mut stored = Vec::with_capacity(runs.len());
        let mut panel_runs = Vec::with_capacity(runs.len());
        for (manifest, traces) in &runs {
            io::write_run(&dir.join(&manifest.run_id), manifest, traces)?;
            stored.push(traces.quantized());
            panel_runs.push(PanelRun { run_id: manifest.run_id.clone(), config_digest: manifest.config_digest.clone() });
        }
        // Built from the stored precision so it equals a rebuild from the files.
        let panel = ShadowPanel::from_runs(stored.iter())?;
        let file = PanelFile { setup_digest: setup_digest(&data, &cfg.train), runs: panel_runs, panel };
        io::write_json(&layout.panel(seed), &file)?;
        out.messages.push(format!("seed {seed}: {} shadow runs, wrote {}", runs.len(), dir.display()));
    }
    Ok(out)
}

/// Loads a panel and checks it belongs to the current config.
pub fn load_panel(cfg: &ExperimentConfig, data: &ToyDataset, seed: u64) -> Result<ShadowPanel> {
    let layout = Layout::new(&cfg.output_dir);
    let path = layout.panel(seed);
    io::require(&path, "train-shadows")?;
    let file: PanelFile = io::read_json(&path)?;
    if file.setup_digest != setup_digest(data, &cfg.train) {
        return Err(CliError::Data(format!(
            "{} was built under a different dataset or training config; re-run `losstrace train-shadows`",
            path.display()
        )));
    }
    for run in &file.runs {
        let manifest_path = layout.shadow_dir(seed).join(&run.run_id).join(io::MANIFEST_FILE);
        io::require(&manifest_path, "train-shadows")?;
        let m: io::ManifestFile = io::read_json(&manifest_path)?;
        if m.config_digest != run.config_digest {
            return Err(CliError::Data(format!(
                "{} does not match the digest recorded in {}",
                manifest_path.display(),
                path.display()
            )));
        }
    }
    file.panel.validate()?;
    Ok(file.panel)
}

fn member_ids(traces: &TraceSet) -> HashSet<&str> {
    traces
        .sample_ids()
        .iter()
        .zip(traces.membership())
        .filter(|(_, &m)| m)
        .map(|(id, _)| id.as_str())
        .collect()
}

/// Names of every predictor the score stage writes.
pub fn predictor_names(cfg: &ExperimentConfig) -> Result<Vec<String>> {
    let mut names: Vec<String> = cfg.aggregator_specs()?.iter().map(|s| s.name()).collect();
    names.extend(BASELINES.iter().map(|s| s.to_string()));
    Ok(names)
}

pub fn score(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = load_dataset(cfg)?;
    let layout = Layout::new(&cfg.output_dir);
    let specs = cfg.aggregator_specs()?;
    let mut out = Outcome::default();
    for &seed in &cfg.seeds {
        let traces = load_target(cfg, &data, seed)?;
        let model_path = layout.target_dir(seed).join("model.json");
        io::require(&model_path, "train")?;
        let model: Mlp = io::read_json(&model_path)?;
        let members = member_ids(&traces);
        let mut vectors: Vec<ScoreVector> = specs.iter().map(|s| score_all(&traces, s)).collect::<losstrace::Result<_>>()?;
        vectors.extend(per_sample_metrics(&model, &data)?.into_vec().into_iter().map(|v| v.restrict_to(&members)));
        let mut means = BTreeMap::new();
        for v in &vectors {
            io::write_scores(&layout.score_file(seed, &v.predictor_name), v)?;
            means.insert(v.predictor_name.clone(), mean_score(v)?);
        }
        io::write_json(&layout.scores_dir(seed).join("mean_scores.json"), &means)?;
        out.messages.push(format!("seed {seed}: {} predictors, wrote {}", vectors.len(), layout.scores_dir(seed).display()));
    }
    Ok(out)
}

fn membership_of(scores: &ScoreVector, traces: &TraceSet) -> Result<Vec<bool>> {
    let index = traces.index_of();
    scores
        .sample_ids
        .iter()
        .map(|id| {
            index.get(id.as_str()).map(|&i| traces.membership()[i]).ok_or_else(|| CliError::Data(format!("unknown sample id {id:?}")))
        })
        .collect()
}

pub fn attack(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = load_dataset(cfg)?;
    let layout = Layout::new(&cfg.output_dir);
    let mut out = Outcome::default();
    for &seed in &cfg.seeds {
        let traces = load_target(cfg, &data, seed)?;
        let panel = if cfg.attacks.iter().any(|a| a.attack.needs_shadows()) {
            Some(load_panel(cfg, &data, seed)?)
        } else {
            None
        };
        let mut per_alpha: BTreeMap<usize, Vec<VulnerableSet>> = BTreeMap::new();
        for acfg in &cfg.attacks {
            let name = acfg.attack.name();
            let dir = layout.attack_dir(seed, name);
            let outcome = run_attack(acfg, panel.as_ref(), &traces)?;
            io::write_scores(&dir.join("scores.csv"), &outcome.scores)?;
            let excluded: Vec<Vec<String>> =
                outcome.excluded.iter().map(|e| vec![e.sample_id.clone(), e.reason.clone()]).collect();
            io::write_csv(&dir.join("excluded.csv"), &["id", "reason"], &excluded)?;
            if !excluded.is_empty() {
                out.warnings.push(format!("seed {seed}: {name} could not score {} samples", excluded.len()));
            }
            let membership = membership_of(&outcome.scores, &traces)?;
            for (ai, &alpha) in cfg.alphas.iter().enumerate() {
                let (v, choice) = label_vulnerable(&outcome.scores, &membership, alpha)?;
                if choice.below_resolution {
                    out.warnings.push(format!(
                        "seed {seed}: {name} at alpha = {alpha} is below the resolution 1/{} of the non-member set; \
                         using the max-score threshold (fpr = {})",
                        membership.iter().filter(|m| !**m).count(),
                        choice.fpr
                    ));
                }
                io::write_json(&dir.join(format!("threshold_alpha-{alpha}.json")), &choice)?;
                io::write_json(&layout.vulnerable_file(seed, name, alpha), &v)?;
                per_alpha.entry(ai).or_default().push(v);
            }
        }
        for (ai, sets) in per_alpha {
            let alpha = cfg.alphas[ai];
            let union = union_vulnerable(&sets)?;
            io::write_json(&layout.vulnerable_file(seed, UNION, alpha), &union)?;
        }
        out.messages.push(format!("seed {seed}: {} attacks, wrote {}", cfg.attacks.len(), layout.seed_dir(seed).join("attacks").display()));
    }
    Ok(out)
}

fn load_vulnerable(layout: &Layout, seed: u64, label: &str, alpha: f64) -> Result<VulnerableSet> {
    let path = layout.vulnerable_file(seed, label, alpha);
    io::require(&path, "attack")?;
    io::read_json(&path)
}

fn load_predictor(layout: &Layout, seed: u64, name: &str) -> Result<ScoreVector> {
    let path = layout.score_file(seed, name);
    io::require(&path, "score")?;
    io::read_scores(&path, name)
}

/// Member scores of an attack, used as the Spearman reference.
fn load_attack_member_scores(layout: &Layout, seed: u64, kind: AttackKind, traces: &TraceSet) -> Result<ScoreVector> {
    let path = layout.attack_dir(seed, kind.name()).join("scores.csv");
    io::require(&path, "attack")?;
    Ok(io::read_scores(&path, kind.name())?.restrict_to(&member_ids(traces)))
}

fn label_sources(cfg: &ExperimentConfig) -> Vec<(String, Option<AttackKind>)> {
    let mut labels: Vec<(String, Option<AttackKind>)> =
        cfg.attacks.iter().map(|a| (a.attack.name().to_string(), Some(a.attack))).collect();
    labels.push((UNION.to_string(), None));
    labels
}

fn k_header(prefix: &str, k: f64) -> String {
    format!("{prefix}@{}%", (k * 100.0 * 1e6).round() / 1e6)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn evaluate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = load_dataset(cfg)?;
    let layout = Layout::new(&cfg.output_dir);
    let predictors = predictor_names(cfg)?;
    let mut all: BTreeMap<(String, String), Vec<(u64, EvalReport)>> = BTreeMap::new();
    let mut out = Outcome::default();
    for &seed in &cfg.seeds {
        let traces = load_target(cfg, &data, seed)?;
        let vectors: Vec<ScoreVector> =
            predictors.iter().map(|p| load_predictor(&layout, seed, p)).collect::<Result<_>>()?;
        let mut reports = Vec::new();
        for (label, kind) in label_sources(cfg) {
            let label_scores = match kind {
                Some(k) => Some(load_attack_member_scores(&layout, seed, k, &traces)?),
                None => None,
            };
            for &alpha in &cfg.alphas {
                let v = load_vulnerable(&layout, seed, &label, alpha)?;
                if v.is_empty() {
                    out.warnings.push(format!("seed {seed}: {label} flags no members at alpha = {alpha}"));
                }
                let mut rows = Vec::with_capacity(vectors.len() + 1);
                for p in &vectors {
                    let report = evaluate_predictor(p, &v, &cfg.k_fractions, label_scores.as_ref())?;
                    let mut row = vec![report.predictor.clone()];
                    row.extend(report.per_k.iter().map(|m| fmt_f64(m.precision)));
                    row.extend(report.per_k.iter().map(|m| opt(m.recall)));
                    row.push(opt(report.spearman));
                    rows.push(row);
                    all.entry((label.clone(), fmt_f64(alpha))).or_default().push((seed, report.clone()));
                    reports.push(report);
                }
                if let Some(first) = reports.last() {
                    let mut row = vec!["max_recall".to_string()];
                    row.extend(cfg.k_fractions.iter().map(|_| String::new()));
                    row.extend(first.per_k.iter().map(|m| opt(m.max_recall)));
                    row.push(String::new());
                    rows.push(row);
                }
                let mut header: Vec<String> = vec!["predictor".into()];
                header.extend(cfg.k_fractions.iter().map(|&k| k_header("precision", k)));
                header.extend(cfg.k_fractions.iter().map(|&k| k_header("recall", k)));
                header.push("spearman".into());
                let header: Vec<&str> = header.iter().map(String::as_str).collect();
                io::write_csv(&layout.eval_dir(seed).join(format!("table_{label}_alpha-{alpha}.csv")), &header, &rows)?;
            }
        }
        io::write_json(&layout.eval_dir(seed).join("report.json"), &reports)?;
        out.messages.push(format!("seed {seed}: {} reports, wrote {}", reports.len(), layout.eval_dir(seed).display()));
    }

    let mut rows = Vec::new();
    for ((label, alpha), reports) in &all {
        for name in &predictors {
            for (ki, &k) in cfg.k_fractions.iter().enumerate() {
                let per_seed: Vec<&EvalReport> =
                    reports.iter().filter(|(_, r)| &r.predictor == name).map(|(_, r)| r).collect();
                let precision: f64 =
                    per_seed.iter().map(|r| r.per_k[ki].precision).sum::<f64>() / per_seed.len() as f64;
                let recalls: Vec<f64> = per_seed.iter().filter_map(|r| r.per_k[ki].recall).collect();
                let recall = (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64);
                rows.push(vec![
                    label.clone(),
                    alpha.clone(),
                    name.clone(),
                    fmt_f64(k),
                    fmt_f64(precision),
                    opt(recall),
                    per_seed.len().to_string(),
                ]);
            }
        }
    }
    let path = layout.root.join("eval_summary.csv");
    io::write_csv(&path, &["label", "alpha", "predictor", "k_fraction", "mean_precision", "mean_recall", "seeds"], &rows)?;
    out.messages.push(format!("wrote {}", path.display()));
    Ok(out)
}

/// Precision@k of LT-IQR over the quantile grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub q1s: Vec<f64>,
    pub q2s: Vec<f64>,
    /// `cells[i][j]` for `(q1s[i], q2s[j])`; `None` where `q1 >= q2`.
    pub cells: Vec<Vec<Option<f64>>>,
}

impl AblationGrid {
    /// `q1 ∈ {0, 0.05, …, 0.5}` and `q2 ∈ {0.5, 0.55, …, 1}`.
    pub fn axes() -> (Vec<f64>, Vec<f64>) {
        ((0..=10).map(|i| i as f64 / 20.0).collect(), (10..=20).map(|i| i as f64 / 20.0).collect())
    }

    pub fn compute(traces: &TraceSet, v: &VulnerableSet, k_fraction: f64) -> Result<Self> {
        let (q1s, q2s) = Self::axes();
        let grid = lt_iqr_grid(traces, &q1s, &q2s)?;
        let cells = grid
            .iter()
            .map(|row| {
                row.iter()
                    .map(|cell| cell.as_ref().map(|s| precision_at_k(s, v, k_fraction)).transpose())
                    .collect::<losstrace::Result<Vec<_>>>()
            })
            .collect::<losstrace::Result<Vec<_>>>()?;
        Ok(Self { q1s, q2s, cells })
    }

    /// Cell-wise mean over grids with the same axes.
    pub fn mean(grids: &[AblationGrid]) -> Option<Self> {
        let first = grids.first()?;
        let cells = (0..first.q1s.len())
            .map(|i| {
                (0..first.q2s.len())
                    .map(|j| {
                        let vals: Option<Vec<f64>> = grids.iter().map(|g| g.cells[i][j]).collect();
                        vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
                    })
                    .collect()
            })
            .collect();
        Some(Self { q1s: first.q1s.clone(), q2s: first.q2s.clone(), cells })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut long = Vec::new();
        let mut matrix = Vec::new();
        for (i, &q1) in self.q1s.iter().enumerate() {
            let mut row = vec![fmt_f64(q1)];
            for (j, &q2) in self.q2s.iter().enumerate() {
                let cell = opt(self.cells[i][j]);
                long.push(vec![fmt_f64(q1), fmt_f64(q2), cell.clone()]);
                row.push(cell);
            }
            matrix.push(row);
        }
        io::write_csv(&dir.join("grid.csv"), &["q1", "q2", "precision"], &long)?;
        let mut header = vec!["q1\\q2".to_string()];
        header.extend(self.q2s.iter().map(|&q| fmt_f64(q)));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        io::write_csv(&dir.join("heatmap.csv"), &header, &matrix)
    }
}

pub fn ablate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = load_dataset(cfg)?;
    let layout = Layout::new(&cfg.output_dir);
    let alpha = cfg.ablation_alpha();
    let label = cfg.ablation.label.name();
    let mut grids = Vec::new();
    let mut out = Outcome::default();
    for &seed in &cfg.seeds {
        let traces = load_target(cfg, &data, seed)?;
        let v = load_vulnerable(&layout, seed, label, alpha)?;
        let grid = AblationGrid::compute(&traces, &v, cfg.ablation.k_fraction)?;
        grid.write(&layout.ablation_dir(seed))?;
        out.messages.push(format!("seed {seed}: wrote {}", layout.ablation_dir(seed).display()));
        grids.push(grid);
    }
    if let Some(mean) = AblationGrid::mean(&grids) {
        let dir = layout.root.join("ablation");
        mean.write(&dir)?;
        out.messages.push(format!("wrote {} (mean over {} seeds)", dir.display(), grids.len()));
    }
    Ok(out)
}

/// Grid of k fractions used for precision-vs-k curves.
pub fn report_k_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 / 100.0).collect()
}

pub fn report(cfg: &ExperimentConfig) -> Result<Outcome> {
    let data = load_dataset(cfg)?;
    let layout = Layout::new(&cfg.output_dir);
    let mut out = Outcome::default();
    for &seed in &cfg.seeds {
        let traces = load_target(cfg, &data, seed)?;
        let dir = layout.report_dir(seed);
        let mut attack_scores = Vec::new();
        for a in &cfg.attacks {
            let path = layout.attack_dir(seed, a.attack.name()).join("scores.csv");
            io::require(&path, "attack")?;
            attack_scores.push(io::read_scores(&path, a.attack.name())?);
        }
        let membership: Vec<Vec<bool>> =
            attack_scores.iter().map(|s| membership_of(s, &traces)).collect::<Result<_>>()?;
        render_roc(&dir, &attack_scores, &membership)?;

        let label = cfg.ablation.label.name();
        let v = load_vulnerable(&layout, seed, label, cfg.ablation_alpha())?;
        let predictors: Vec<ScoreVector> =
            predictor_names(cfg)?.iter().map(|p| load_predictor(&layout, seed, p)).collect::<Result<_>>()?;
        render_precision_at_k(&dir, &predictors, &v)?;
        write_iqr_evolution(&dir, &traces)?;
        out.messages.push(format!("seed {seed}: wrote {}", dir.display()));
    }
    Ok(out)
}

/// Writes `roc_<attack>.csv` per attack and a combined log-log `roc.svg`.
pub fn render_roc(dir: &Path, scores: &[ScoreVector], membership: &[Vec<bool>]) -> Result<Vec<f64>> {
    let mut series = Vec::new();
    let mut aucs = Vec::new();
    let mut floor: f64 = 1.0;
    for (s, m) in scores.iter().zip(membership) {
        let roc = roc_curve(s, m)?;
        let area = auc(&roc);
        let rows: Vec<Vec<String>> = roc
            .points
            .iter()
            .map(|p| vec![fmt_f64(p.threshold), fmt_f64(p.fpr), fmt_f64(p.tpr)])
            .collect();
        io::write_csv(&dir.join(format!("roc_{}.csv", s.predictor_name)), &["threshold", "fpr", "tpr"], &rows)?;
        let n = roc.n_members.max(roc.n_non_members) as f64;
        floor = floor.min(10f64.powf((1.0 / n).log10().floor()));
        series.push(Series {
            label: format!("{} (AUC = {:.3})", s.predictor_name, area),
            points: roc.points.iter().map(|p| (p.fpr, p.tpr)).collect(),
            dashed: false,
        });
        aucs.push(area);
    }
    series.push(Series { label: "chance".into(), points: vec![(floor, floor), (1.0, 1.0)], dashed: true });
    let chart = Chart {
        title: "ROC".into(),
        x_label: "false positive rate".into(),
        y_label: "true positive rate".into(),
        x_range: (floor, 1.0),
        y_range: (floor, 1.0),
        x_scale: Scale::Log10,
        y_scale: Scale::Log10,
        series,
    };
    write_text(&dir.join("roc.svg"), &chart.to_svg())?;
    Ok(aucs)
}

/// Writes `precision_at_k.csv` and `precision_at_k.svg` against one vulnerable set.
pub fn render_precision_at_k(dir: &Path, predictors: &[ScoreVector], v: &VulnerableSet) -> Result<()> {
    let ks = report_k_grid();
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(predictors.len());
    for p in predictors {
        table.push(ks.iter().map(|&k| precision_at_k(p, v, k)).collect::<losstrace::Result<_>>()?);
    }
    let rows: Vec<Vec<String>> = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| std::iter::once(fmt_f64(k)).chain(table.iter().map(|col| fmt_f64(col[i]))).collect())
        .collect();
    let mut header = vec!["k_fraction".to_string()];
    header.extend(predictors.iter().map(|p| p.predictor_name.clone()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    io::write_csv(&dir.join("precision_at_k.csv"), &header, &rows)?;
    let chart = Chart {
        title: format!("precision@k against {} (alpha = {})", v.attack_name, v.alpha),
        x_label: "k (fraction of members)".into(),
        y_label: "precision".into(),
        x_range: (0.0, *ks.last().expect("non-empty")),
        y_range: (0.0, 1.0),
        x_scale: Scale::Linear,
        y_scale: Scale::Linear,
        series: predictors
            .iter()
            .zip(&table)
            .map(|(p, col)| Series {
                label: p.predictor_name.clone(),
                points: ks.iter().copied().zip(col.iter().copied()).collect(),
                dashed: !p.predictor_name.starts_with("lt_"),
            })
            .collect(),
    };
    write_text(&dir.join("precision_at_k.svg"), &chart.to_svg())
}

/// Distribution of member LT-IQR scores when traces are cut at ten checkpoints.
pub fn write_iqr_evolution(dir: &Path, traces: &TraceSet) -> Result<()> {
    let s = traces.epoch_count();
    let step = s.div_ceil(10).max(1);
    let mut checkpoints: Vec<usize> = (1..=10).map(|i| (i * step).min(s)).collect();
    checkpoints.dedup();
    let evolution = score_evolution(traces, &losstrace::aggregators::AggregatorSpec::IQR, &checkpoints)?;
    let mut rows = Vec::with_capacity(evolution.len());
    for (epoch, v) in &evolution {
        let mut row = vec![epoch.to_string(), fmt_f64(mean_score(v)?)];
        for q in [0.1, 0.25, 0.5, 0.75, 0.9] {
            row.push(fmt_f64(quantile(&v.scores, q)?));
        }
        rows.push(row);
    }
    io::write_csv(&dir.join("lt_iqr_evolution.csv"), &["epoch", "mean", "p10", "p25", "p50", "p75", "p90"], &rows)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Runs one stage by its command-line name.
pub fn run_stage(stage: &str, cfg: &ExperimentConfig) -> Result<Outcome> {
    match stage {
        "gen-data" => gen_data(cfg),
        "train" => train_targets(cfg),
        "train-shadows" => train_shadow_sets(cfg),
        "score" => score(cfg),
        "attack" => attack(cfg),
        "evaluate" => evaluate(cfg),
        "ablate" => ablate(cfg),
        "report" => report(cfg),
        other => Err(CliError::Usage(format!("unknown stage {other:?}"))),
    }
}

/// Every stage in order.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    for stage in STAGES {
        out.extend(run_stage(stage, cfg)?);
    }
    Ok(out)
}

/// Loads every predictor of one seed, keyed by name.
pub fn load_predictors(cfg: &ExperimentConfig, seed: u64) -> Result<HashMap<String, ScoreVector>> {
    let layout = Layout::new(&cfg.output_dir);
    predictor_names(cfg)?.into_iter().map(|p| Ok((p.clone(), load_predictor(&layout, seed, &p)?))).collect()
}

/// Loads the vulnerable set written by the attack stage.
pub fn load_vulnerable_set(cfg: &ExperimentConfig, seed: u64, label: &str, alpha: f64) -> Result<VulnerableSet> {
    load_vulnerable(&Layout::new(&cfg.output_dir), seed, label, alpha)
}

/// Reads the threshold the attack stage chose.
pub fn load_threshold(cfg: &ExperimentConfig, seed: u64, label: &str, alpha: f64) -> Result<ThresholdChoice> {
    let path = Layout::new(&cfg.output_dir).attack_dir(seed, label).join(format!("threshold_alpha-{alpha}.json"));
    io::require(&path, "attack")?;
    io::read_json(&path)
}

/// Reads the run summary the train stage wrote.
pub fn load_summary(cfg: &ExperimentConfig, seed: u64) -> Result<TrainSummary> {
    let path = Layout::new(&cfg.output_dir).target_dir(seed).join("summary.json");
    io::require(&path, "train")?;
    io::read_json(&path)
}
