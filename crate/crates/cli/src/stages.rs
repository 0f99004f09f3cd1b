//! The pipeline stages. Each stage reads its inputs from the output
//! directory, writes its own files there and records them in the manifest.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wdcgan_core::autodiff::set_deterministic_reductions;
use wdcgan_core::checkpoint::Checkpoint;
use wdcgan_core::classifier::{self, ClassifierMetrics};
use wdcgan_core::metrics::{self, BoxStats, EvalReport, Histogram, ScoreSummary};
use wdcgan_core::signal::{
    self, Condition, ScenarioSplit, Segment, SignalFormat, SignalMeta, POOL_MANIFEST,
};
use wdcgan_core::wdcgan::{self, GanTrainHistory, Generator, TrainOptions};
use wdcgan_core::Error as CoreError;

use crate::config::{NormScope, PipelineConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::plots::{self, Series};

/// One row of the final summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case: String,
    pub scenario: u8,
    pub classification_accuracy: f64,
    pub mean_absolute_error: f64,
}

/// Statistics of one score set as written to `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSetReport {
    pub summary: ScoreSummary,
    pub histogram: Histogram,
    pub kde: Vec<(f64, f64)>,
    pub box_stats: BoxStats,
    /// Pairs above the duplicate threshold (SSIM sets only).
    pub duplicates: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub case: String,
    pub n_generated: usize,
    pub n_real: usize,
    pub duplicate_threshold: f64,
    pub fid: ScoreSetReport,
    pub fid_multivariate: f64,
    pub fid_dim: usize,
    pub creativity: ScoreSetReport,
    pub diversity: ScoreSetReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub case: String,
    pub scenario: u8,
    pub n_test: usize,
    pub threshold: f64,
    pub classification_accuracy: f64,
    pub mean_absolute_error: f64,
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    Ok(path.to_path_buf())
}

fn read_text(path: &Path, stage: &str) -> CliResult<String> {
    require(path, stage)?;
    std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))
}

fn require(path: &Path, stage: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            path: path.to_path_buf(),
            stage: stage.to_string(),
        })
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn from_json<T: for<'de> Deserialize<'de>>(path: &Path, stage: &str) -> CliResult<T> {
    let text = read_text(path, stage)?;
    serde_json::from_str(&text).map_err(|e| CliError::Precondition(format!("corrupt {}: {e}", path.display())))
}

/// Every file of a segment pool directory, manifest first.
fn pool_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = vec![dir.join(POOL_MANIFEST)];
    let mut rest: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(format!("listing {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "f64"))
        .collect();
    rest.sort();
    files.extend(rest);
    Ok(files)
}

fn write_pool_fresh(dir: &Path, segments: &[Segment]) -> CliResult<Vec<PathBuf>> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| CliError::io(format!("clearing {}", dir.display()), e))?;
    }
    signal::write_pool(dir, segments)?;
    pool_files(dir)
}

fn score_set(values: &[f64], bins: usize, kde_points: usize, duplicates: Option<usize>) -> CliResult<ScoreSetReport> {
    let histogram = metrics::histogram_pdf(values, bins)?;
    Ok(ScoreSetReport {
        summary: metrics::summarize(values, &histogram),
        kde: metrics::kde(values, kde_points)?,
        box_stats: metrics::box_stats(values)?,
        histogram,
        duplicates,
    })
}

fn histogram_csv(h: &Histogram) -> String {
    let mut s = String::from("bin_lo,bin_hi,density\n");
    for i in 0..h.bins() {
        let _ = writeln!(s, "{},{},{}", h.edges[i], h.edges[i + 1], h.density[i]);
    }
    s
}

fn xy_csv(x_name: &str, series: &[Series]) -> String {
    let mut s = format!("series,{x_name},y\n");
    for ser in series {
        for (x, y) in &ser.points {
            let _ = writeln!(s, "{},{x},{y}", ser.name);
        }
    }
    s
}

fn report_csv(report: &EvalReport) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    report
        .write_scores_csv(&mut buf)
        .map_err(|e| CliError::io("formatting scores", e))?;
    Ok(buf)
}

/// Min-max scales every segment of the split to [-1, 1].
fn normalize_split(split: &ScenarioSplit, scope: NormScope) -> CliResult<ScenarioSplit> {
    let all = split.train.iter().chain(&split.test).flat_map(|(s, _)| s.values.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let map = |seg: &Segment| -> CliResult<Segment> {
        match scope {
            NormScope::Segment => Ok(signal::normalize_minmax(seg, -1.0, 1.0)?.0),
            NormScope::Pool => {
                if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
                    return Err(CliError::Precondition("scenario data is constant".into()));
                }
                let scale = 2.0 / (hi - lo);
                Ok(seg.with_values(seg.values.iter().map(|v| ((v - lo) * scale - 1.0).clamp(-1.0, 1.0)).collect()))
            }
        }
    };
    let conv = |v: &[(Segment, u8)]| -> CliResult<Vec<(Segment, u8)>> {
        v.iter().map(|(s, y)| Ok((map(s)?, *y))).collect()
    };
    Ok(ScenarioSplit {
        scenario_id: split.scenario_id,
        train: conv(&split.train)?,
        test: conv(&split.test)?,
    })
}

pub struct Run {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    /// Validates the configuration and opens (or starts) the manifest.
    pub fn new(cfg: PipelineConfig) -> CliResult<Self> {
        cfg.validate()?;
        set_deterministic_reductions(cfg.strict_determinism);
        let out = cfg.out_dir.clone();
        let mut manifest = RunManifest::open(&out, &cfg.hash())?;
        manifest.seeds.insert("global".into(), cfg.seed);
        Ok(Run { cfg, out, manifest })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn zero_clock(&self) -> bool {
        self.cfg.strict_determinism
    }

    fn seed(&mut self, label: &str) -> u64 {
        let s = self.cfg.stage_seed(label);
        self.manifest.seeds.insert(label.to_string(), s);
        s
    }

    fn finish(&mut self, name: &str, outputs: &[PathBuf], started: Instant) -> CliResult<()> {
        let secs = started.elapsed().as_secs_f64();
        self.manifest.record(&self.out, name, outputs, secs)?;
        self.manifest.save(&self.out)?;
        eprintln!("[{name}] {} files in {secs:.1} s", outputs.len());
        Ok(())
    }

    fn raw_dir(&self) -> PathBuf {
        self.out.join("raw")
    }

    fn pool_dir(&self, condition: Condition) -> PathBuf {
        self.out.join("pools").join(condition.to_string())
    }

    fn case_dir(&self, case: &str) -> PathBuf {
        self.out.join("cases").join(case)
    }

    fn scenario_dir(&self, case: &str, scenario: u8) -> PathBuf {
        self.case_dir(case).join(format!("scenario{scenario}"))
    }

    fn plots_dir(&self) -> PathBuf {
        self.out.join("plots")
    }

    fn read_pool(&self, dir: &Path, stage: &str) -> CliResult<Vec<Segment>> {
        require(&dir.join(POOL_MANIFEST), stage)?;
        Ok(signal::read_pool(dir)?)
    }

    /// Writes one surrogate record per condition into `raw/`.
    pub fn synth(&mut self) -> CliResult<()> {
        let started = Instant::now();
        let spec = self
            .cfg
            .surrogate
            .clone()
            .ok_or_else(|| CliError::Config("the synth stage needs a [surrogate] section".into()))?;
        let mut outputs = Vec::new();
        for condition in [Condition::Undamaged, Condition::Damaged] {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed(&format!("synth/{condition}")));
            let raw = signal::synthesize_surrogate(&spec, condition, &mut rng)?;
            let path = self.raw_dir().join(format!("{condition}.f64"));
            std::fs::create_dir_all(self.raw_dir())
                .map_err(|e| CliError::io(format!("creating {}", self.raw_dir().display()), e))?;
            signal::write_f64le(&path, &raw.samples)?;
            signal::write_meta(&signal::sidecar_path(&path), &raw.meta())?;
            outputs.push(signal::sidecar_path(&path));
            outputs.push(path);
        }
        self.finish("synth", &outputs, started)
    }

    /// Raw inputs for `ingest`: explicit paths, else the configured data,
    /// else the records written by `synth`.
    fn default_inputs(&self) -> CliResult<Vec<PathBuf>> {
        if !self.cfg.data.inputs.is_empty() {
            return Ok(self.cfg.data.inputs.iter().map(|p| self.cfg.resolve(p)).collect());
        }
        let files: Vec<PathBuf> = [Condition::Undamaged, Condition::Damaged]
            .iter()
            .map(|c| self.raw_dir().join(format!("{c}.f64")))
            .collect();
        for f in &files {
            require(f, "synth")?;
        }
        Ok(files)
    }

    /// Segments raw records into `pools/undamaged` and `pools/damaged`.
    pub fn ingest(&mut self, inputs: &[PathBuf]) -> CliResult<()> {
        let started = Instant::now();
        let inputs = if inputs.is_empty() {
            self.default_inputs()?
        } else {
            inputs.to_vec()
        };
        let seg_len = self.cfg.seg_len;
        let mut pools: HashMap<Condition, Vec<Segment>> = HashMap::new();
        // later records of the same condition and joint continue the index
        let mut next_index: HashMap<(Condition, u32), usize> = HashMap::new();
        // segmentation without shuffling draws nothing from this
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        for path in &inputs {
            if !path.is_file() {
                return Err(CliError::Core(CoreError::Ingestion {
                    path: path.clone(),
                    offset: 0,
                    message: "file not found".into(),
                }));
            }
            let sidecar = signal::sidecar_path(path);
            if !sidecar.is_file() {
                return Err(CliError::Core(CoreError::Ingestion {
                    path: sidecar,
                    offset: 0,
                    message: "metadata sidecar not found".into(),
                }));
            }
            let meta: SignalMeta = signal::read_meta(&sidecar)?;
            let raw = signal::load_signal(path, SignalFormat::from_path(path)?, &meta, seg_len)?;
            let start = next_index.entry((raw.condition, raw.joint_id)).or_insert(0);
            let mut segs = signal::segment(&raw, seg_len, false, &mut unused)?;
            for s in &mut segs {
                s.segment_index += *start;
            }
            *start += segs.len();
            pools.entry(raw.condition).or_default().extend(segs);
        }
        let mut outputs = Vec::new();
        for condition in [Condition::Undamaged, Condition::Damaged] {
            if let Some(segs) = pools.get(&condition) {
                outputs.extend(write_pool_fresh(&self.pool_dir(condition), segs)?);
                eprintln!("[ingest] {condition}: {} segments of {seg_len}", segs.len());
            }
        }
        self.finish("ingest", &outputs, started)
    }

    /// Trains the GAN of `case` on the damaged pool.
    pub fn train_gan(&mut self, case: &str) -> CliResult<()> {
        let started = Instant::now();
        let case_cfg = self.cfg.case(case)?.clone();
        let mut gan_cfg = self.cfg.gan_config(&case_cfg)?;
        gan_cfg.seed = self.seed(&format!("train-gan/{case}"));
        let real = self.read_pool(&self.pool_dir(Condition::Damaged), "ingest")?;
        let dir = self.case_dir(case);
        let cfg = &self.cfg;
        let mut hook = |epoch: usize, g: &Generator| {
            let seed = cfg.stage_seed(&format!("fid/{case}/{epoch}"));
            wdcgan::median_pair_fid(g, &real, gan_cfg.eval_samples, seed)
        };
        let options = TrainOptions {
            zero_wall_clock: self.zero_clock(),
        };
        let (ckpt, history) = match wdcgan::train_gan(&gan_cfg, &real, Some(&mut hook), options) {
            Ok(r) => r,
            Err(mut e) => {
                if let CoreError::Divergence { checkpoint, .. } = &mut e {
                    if let Some(c) = checkpoint.take() {
                        let path = dir.join("gan_diverged.ckpt");
                        write_file(&path, c.to_bytes())?;
                        eprintln!("[train-gan/{case}] state at divergence saved to {}", path.display());
                    }
                }
                return Err(e.into());
            }
        };
        let mut csv = Vec::new();
        history.write_csv(&mut csv).map_err(|e| CliError::io("formatting history", e))?;
        let outputs = vec![
            write_file(&dir.join("gan.ckpt"), ckpt.to_bytes())?,
            write_file(&dir.join("history.csv"), csv)?,
        ];
        self.finish(&format!("train-gan/{case}"), &outputs, started)
    }

    /// Draws `n` segments (default `eval.n_generate`) into `cases/<case>/fake`.
    pub fn generate(&mut self, case: &str, n: Option<usize>) -> CliResult<()> {
        let started = Instant::now();
        self.cfg.case(case)?;
        let n = n.unwrap_or(self.cfg.eval.n_generate);
        if n == 0 {
            return Err(CliError::Config("--n must be at least 1".into()));
        }
        let ckpt_path = self.case_dir(case).join("gan.ckpt");
        require(&ckpt_path, "train-gan")?;
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed(&format!("generate/{case}")));
        let fakes = wdcgan::generate(&ckpt, n, &mut rng)?;
        let outputs = write_pool_fresh(&self.case_dir(case).join("fake"), &fakes)?;
        self.finish(&format!("generate/{case}"), &outputs, started)
    }

    /// FID and SSIM reports of the generated pool against the real damaged pool.
    pub fn eval(&mut self, case: &str) -> CliResult<()> {
        let started = Instant::now();
        self.cfg.case(case)?;
        let fakes = self.read_pool(&self.case_dir(case).join("fake"), "generate")?;
        let real = self.read_pool(&self.pool_dir(Condition::Damaged), "ingest")?;
        let ec = self.cfg.eval.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed(&format!("eval/{case}")));
        let partners: Vec<usize> = (0..fakes.len()).map(|_| rng.random_range(0..real.len())).collect();
        let fid = metrics::fid_report(&fakes, &real, &partners)?;
        let creativity = metrics::creativity_report(&fakes, &real, ec.duplicate_threshold)?;
        let diversity = metrics::diversity_report(&fakes, ec.duplicate_threshold)?;
        let fid_multi = metrics::fid_multivariate(&real, &fakes, ec.fid_dim)?;
        let summary = EvalSummary {
            case: case.to_string(),
            n_generated: fakes.len(),
            n_real: real.len(),
            duplicate_threshold: ec.duplicate_threshold,
            fid: score_set(&fid.values(), ec.bins, ec.kde_points, None)?,
            fid_multivariate: fid_multi,
            fid_dim: ec.fid_dim,
            creativity: score_set(&creativity.values(), ec.bins, ec.kde_points, Some(creativity.duplicate_count()))?,
            diversity: score_set(&diversity.values(), ec.bins, ec.kde_points, Some(diversity.duplicate_count()))?,
        };
        let dir = self.case_dir(case).join("eval");
        let boxes: Vec<(String, BoxStats)> = [
            ("fid", &summary.fid),
            ("ssim_creativity", &summary.creativity),
            ("ssim_diversity", &summary.diversity),
        ]
        .iter()
        .map(|(n, s)| (n.to_string(), s.box_stats.clone()))
        .collect();
        let mut outputs = vec![
            write_file(&dir.join("fid_scores.csv"), report_csv(&fid)?)?,
            write_file(&dir.join("ssim_creativity.csv"), report_csv(&creativity)?)?,
            write_file(&dir.join("ssim_diversity.csv"), report_csv(&diversity)?)?,
            write_file(&dir.join("box.csv"), box_csv(&boxes))?,
            write_file(&dir.join("report.json"), to_json(&summary))?,
        ];
        for (name, s) in [("fid", &summary.fid), ("ssim_creativity", &summary.creativity), ("ssim_diversity", &summary.diversity)] {
            outputs.push(write_file(&dir.join(format!("pdf_{name}.csv")), histogram_csv(&s.histogram))?);
            let kde = Series {
                name: name.to_string(),
                points: s.kde.clone(),
            };
            outputs.push(write_file(&dir.join(format!("kde_{name}.csv")), xy_csv("x", &[kde]))?);
        }
        eprintln!(
            "[eval/{case}] median FID {:.4}, multivariate FID {:.4}, duplicates: {} creativity, {} diversity",
            summary.fid.summary.median,
            fid_multi,
            creativity.duplicate_count(),
            diversity.duplicate_count()
        );
        self.finish(&format!("eval/{case}"), &outputs, started)
    }

    /// Builds the scenario split and trains a classifier on it.
    pub fn train_dcnn(&mut self, case: &str, scenario: u8) -> CliResult<()> {
        let started = Instant::now();
        self.cfg.case(case)?;
        if !matches!(scenario, 1 | 2) {
            return Err(CliError::Config(format!("scenario must be 1 or 2, got {scenario}")));
        }
        let undamaged = self.read_pool(&self.pool_dir(Condition::Undamaged), "ingest")?;
        let damaged = self.read_pool(&self.pool_dir(Condition::Damaged), "ingest")?;
        let fakes = if scenario == 2 {
            self.read_pool(&self.case_dir(case).join("fake"), "generate")?
        } else {
            Vec::new()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed(&format!("split/{case}/s{scenario}")));
        let split = signal::build_scenario(&undamaged, &damaged, &fakes, scenario, self.cfg.split, &mut rng)?;
        let mut split_csv = String::from("role,id,truth\n");
        for (role, part) in [("train", &split.train), ("test", &split.test)] {
            for (s, y) in part {
                let _ = writeln!(split_csv, "{role},{},{y}", s.id());
            }
        }
        let normalized = normalize_split(&split, self.cfg.normalization)?;
        let mut ccfg = self.cfg.classifier_config(case, scenario);
        ccfg.seed = self.seed(&format!("train-dcnn/{case}/s{scenario}"));
        let dir = self.scenario_dir(case, scenario);
        let (ckpt, history) = match classifier::train_classifier(&ccfg, &normalized, self.zero_clock()) {
            Ok(r) => r,
            Err(mut e) => {
                if let CoreError::Divergence { checkpoint, .. } = &mut e {
                    if let Some(c) = checkpoint.take() {
                        write_file(&dir.join("classifier_diverged.ckpt"), c.to_bytes())?;
                    }
                }
                return Err(e.into());
            }
        };
        let mut hist = Vec::new();
        history.write_csv(&mut hist).map_err(|e| CliError::io("formatting history", e))?;
        let outputs = vec![
            write_file(&dir.join("split.csv"), split_csv)?,
            write_file(&dir.join("classifier.ckpt"), ckpt.to_bytes())?,
            write_file(&dir.join("classifier_history.csv"), hist)?,
        ];
        if let Some(last) = history.records.last() {
            eprintln!("[train-dcnn/{case}/s{scenario}] final loss {:.5}", last.loss);
        }
        self.finish(&format!("train-dcnn/{case}/s{scenario}"), &outputs, started)
    }

    /// Scores the held-out part of the split written by `train-dcnn`.
    pub fn test_dcnn(&mut self, case: &str, scenario: u8) -> CliResult<()> {
        let started = Instant::now();
        self.cfg.case(case)?;
        let dir = self.scenario_dir(case, scenario);
        let split_text = read_text(&dir.join("split.csv"), "train-dcnn")?;
        let ckpt_path = dir.join("classifier.ckpt");
        require(&ckpt_path, "train-dcnn")?;
        let ckpt = Checkpoint::load(&ckpt_path)?;

        let mut by_id: HashMap<String, Segment> = HashMap::new();
        let mut pools = vec![self.pool_dir(Condition::Undamaged), self.pool_dir(Condition::Damaged)];
        if scenario == 2 {
            pools.push(self.case_dir(case).join("fake"));
        }
        for p in &pools {
            for s in self.read_pool(p, "ingest")? {
                by_id.insert(s.id(), s);
            }
        }
        let mut split = ScenarioSplit {
            scenario_id: scenario,
            train: Vec::new(),
            test: Vec::new(),
        };
        for (n, line) in split_text.lines().enumerate().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || CliError::Precondition(format!("split.csv line {}: {line:?}", n + 1));
            let [role, id, truth] = parts[..] else {
                return Err(bad());
            };
            let truth: u8 = truth.parse().map_err(|_| bad())?;
            let seg = by_id.get(id).cloned().ok_or_else(|| {
                CliError::Precondition(format!("segment {id} from split.csv is not in any pool"))
            })?;
            match role {
                "train" => split.train.push((seg, truth)),
                "test" => split.test.push((seg, truth)),
                _ => return Err(bad()),
            }
        }
        let normalized = normalize_split(&split, self.cfg.normalization)?;
        let m: ClassifierMetrics = classifier::test_classifier(&ckpt, &normalized)?;
        let mut csv = Vec::new();
        m.write_csv(&mut csv).map_err(|e| CliError::io("formatting metrics", e))?;
        let summary = ScenarioMetrics {
            case: case.to_string(),
            scenario,
            n_test: m.records.len(),
            threshold: m.threshold,
            classification_accuracy: m.classification_accuracy,
            mean_absolute_error: m.mean_absolute_error,
        };
        let outputs = vec![
            write_file(&dir.join("metrics.csv"), csv)?,
            write_file(&dir.join("metrics.json"), to_json(&summary))?,
        ];
        eprintln!(
            "[test-dcnn/{case}/s{scenario}] CA {:.4}, MAE {:.4}",
            m.classification_accuracy, m.mean_absolute_error
        );
        self.finish(&format!("test-dcnn/{case}/s{scenario}"), &outputs, started)
    }

    fn scenario_metrics(&self) -> CliResult<Vec<ScenarioMetrics>> {
        let mut rows = Vec::new();
        for c in &self.cfg.cases {
            for s in &self.cfg.scenarios {
                rows.push(from_json(&self.scenario_dir(&c.name, *s).join("metrics.json"), "test-dcnn")?);
            }
        }
        Ok(rows)
    }

    /// One SVG plus one CSV per figure.
    pub fn plots(&mut self) -> CliResult<()> {
        let started = Instant::now();
        let dir = self.plots_dir();
        let mut outputs = Vec::new();
        let mut emit = |name: &str, svg: String, csv: String| -> CliResult<()> {
            outputs.push(write_file(&dir.join(format!("{name}.svg")), svg)?);
            outputs.push(write_file(&dir.join(format!("{name}.csv")), csv)?);
            Ok(())
        };
        let real = self.read_pool(&self.pool_dir(Condition::Damaged), "ingest")?;
        let mut fid_boxes = Vec::new();
        let mut ssim_boxes = Vec::new();
        for c in &self.cfg.cases {
            let name = &c.name;
            let cdir = self.case_dir(name);
            let history = GanTrainHistory::read_csv(&read_text(&cdir.join("history.csv"), "train-gan")?)?;
            let epochs = || history.records.iter().map(|r| r.epoch as f64);
            let losses = [
                Series {
                    name: "critic".into(),
                    points: epochs().zip(history.records.iter().map(|r| r.critic_loss)).collect(),
                },
                Series {
                    name: "generator".into(),
                    points: epochs()
                        .zip(history.records.iter().map(|r| r.generator_loss.unwrap_or(f64::NAN)))
                        .collect(),
                },
            ];
            emit(
                &format!("{name}_training_loss"),
                plots::line_plot(&format!("GAN training loss, {name}"), "epoch", "loss", &losses)?,
                xy_csv("epoch", &losses),
            )?;
            let trace = [Series {
                name: "median FID".into(),
                points: history
                    .records
                    .iter()
                    .filter_map(|r| r.fid_median.map(|f| (r.epoch as f64, f)))
                    .collect(),
            }];
            if !trace[0].points.is_empty() {
                emit(
                    &format!("{name}_fid_trace"),
                    plots::line_plot(&format!("Median per-pair FID, {name}"), "epoch", "FID", &trace)?,
                    xy_csv("epoch", &trace),
                )?;
            }

            let report: EvalSummary = from_json(&cdir.join("eval").join("report.json"), "eval")?;
            for (key, title, set) in [
                ("fid_pdf", "FID", &report.fid),
                ("ssim_creativity_pdf", "SSIM, generated vs real", &report.creativity),
                ("ssim_diversity_pdf", "SSIM, generated vs generated", &report.diversity),
            ] {
                let curve = [Series {
                    name: "KDE".into(),
                    points: set.kde.clone(),
                }];
                emit(
                    &format!("{name}_{key}"),
                    plots::density_plot(
                        &format!("{title}, {name}"),
                        title.split(',').next().unwrap_or(title),
                        &[("histogram".to_string(), set.histogram.clone())],
                        &curve,
                    )?,
                    histogram_csv(&set.histogram),
                )?;
            }
            fid_boxes.push((name.clone(), report.fid.box_stats.clone()));
            ssim_boxes.push((format!("{name} creativity"), report.creativity.box_stats.clone()));
            ssim_boxes.push((format!("{name} diversity"), report.diversity.box_stats.clone()));

            let fakes = self.read_pool(&cdir.join("fake"), "generate")?;
            let overlay: Vec<Series> = real
                .iter()
                .take(2)
                .map(|s| (format!("real {}", s.segment_index), s))
                .chain(fakes.iter().take(2).map(|s| (format!("generated {}", s.segment_index), s)))
                .map(|(n, s)| Series {
                    name: n,
                    points: s.values.iter().enumerate().map(|(i, v)| (i as f64, *v)).collect(),
                })
                .collect();
            emit(
                &format!("{name}_samples"),
                plots::line_plot(&format!("Real and generated segments, {name}"), "sample", "amplitude", &overlay)?,
                xy_csv("sample", &overlay),
            )?;

            for s in &self.cfg.scenarios {
                let text = read_text(&self.scenario_dir(name, *s).join("metrics.csv"), "test-dcnn")?;
                let mut cats = Vec::new();
                let mut by_truth = [Vec::new(), Vec::new()];
                for line in text.lines().skip(1) {
                    let f: Vec<&str> = line.split(',').collect();
                    let (Some(score), Some(truth)) = (f.get(1), f.get(2)) else {
                        continue;
                    };
                    let score: f64 = score.parse().unwrap_or(f64::NAN);
                    let truth: usize = truth.parse().unwrap_or(0).min(1);
                    cats.push((cats.len() + 1).to_string());
                    by_truth[truth].push(score);
                    by_truth[1 - truth].push(0.0);
                }
                let series = vec![
                    ("undamaged".to_string(), by_truth[0].clone()),
                    ("damaged".to_string(), by_truth[1].clone()),
                ];
                let thr = self.cfg.classifier.threshold;
                emit(
                    &format!("{name}_scenario{s}_scores"),
                    plots::bar_plot(
                        &format!("Prediction scores, {name}, scenario {s}"),
                        "score",
                        &cats,
                        &series,
                        Some((thr, "threshold")),
                    )?,
                    text,
                )?;
            }
        }
        let fid_csv = box_csv(&fid_boxes);
        emit("fid_box", plots::box_plot("Per-pair FID", "FID", &fid_boxes)?, fid_csv)?;
        let ssim_csv = box_csv(&ssim_boxes);
        emit("ssim_box", plots::box_plot("SSIM", "SSIM", &ssim_boxes)?, ssim_csv)?;

        let rows = self.scenario_metrics()?;
        let cats: Vec<String> = rows.iter().map(|r| format!("{} s{}", r.case, r.scenario)).collect();
        let series = vec![
            ("CA".to_string(), rows.iter().map(|r| r.classification_accuracy).collect()),
            ("MAE".to_string(), rows.iter().map(|r| r.mean_absolute_error).collect()),
        ];
        emit(
            "summary",
            plots::bar_plot("Classification accuracy and MAE", "value", &cats, &series, None)?,
            summary_csv(&rows),
        )?;
        self.finish("plots", &outputs, started)
    }

    /// Collects every scenario's metrics into `summary.csv`.
    pub fn summary(&mut self) -> CliResult<Vec<SummaryRow>> {
        let started = Instant::now();
        let rows = self.scenario_metrics()?;
        let out = vec![write_file(&self.out.join("summary.csv"), summary_csv(&rows))?];
        self.finish("summary", &out, started)?;
        Ok(rows
            .into_iter()
            .map(|r| SummaryRow {
                case: r.case,
                scenario: r.scenario,
                classification_accuracy: r.classification_accuracy,
                mean_absolute_error: r.mean_absolute_error,
            })
            .collect())
    }

    /// Runs every stage in order, skipping stages whose recorded outputs are
    /// intact as long as nothing upstream of them was re-run.
    pub fn pipeline(&mut self) -> CliResult<Vec<SummaryRow>> {
        let mut upstream_ran = false;
        let mut step = |run: &mut Run, name: String, f: &dyn Fn(&mut Run) -> CliResult<()>| -> CliResult<()> {
            if !upstream_ran && run.manifest.is_complete(&run.out, &name) {
                eprintln!("[{name}] up to date");
                return Ok(());
            }
            upstream_ran = true;
            f(run)
        };
        if self.cfg.surrogate.is_some() && self.cfg.data.inputs.is_empty() {
            step(self, "synth".into(), &|r| r.synth())?;
        }
        step(self, "ingest".into(), &|r| r.ingest(&[]))?;
        let cases: Vec<String> = self.cfg.cases.iter().map(|c| c.name.clone()).collect();
        let scenarios = self.cfg.scenarios.clone();
        for c in &cases {
            step(self, format!("train-gan/{c}"), &|r| r.train_gan(c))?;
            step(self, format!("generate/{c}"), &|r| r.generate(c, None))?;
            step(self, format!("eval/{c}"), &|r| r.eval(c))?;
        }
        for c in &cases {
            for s in &scenarios {
                step(self, format!("train-dcnn/{c}/s{s}"), &|r| r.train_dcnn(c, *s))?;
                step(self, format!("test-dcnn/{c}/s{s}"), &|r| r.test_dcnn(c, *s))?;
            }
        }
        step(self, "plots".into(), &|r| r.plots())?;
        self.summary()
    }
}

fn box_csv(boxes: &[(String, BoxStats)]) -> String {
    let mut s = String::from("name,min,q1,median,q3,max,whisker_low,whisker_high,outliers\n");
    for (n, b) in boxes {
        let _ = writeln!(
            s,
            "{n},{},{},{},{},{},{},{},{}",
            b.min, b.q1, b.median, b.q3, b.max, b.whisker_low, b.whisker_high, b.outliers.len()
        );
    }
    s
}

fn summary_csv(rows: &[ScenarioMetrics]) -> String {
    let mut s = String::from("case,scenario,classification_accuracy,mean_absolute_error\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.case, r.scenario, r.classification_accuracy, r.mean_absolute_error);
    }
    s
}

/// Fixed-width text rendering of the summary rows.
pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!("{:<16} {:>8} {:>8} {:>8}\n", "case", "scenario", "CA", "MAE");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8.4} {:>8.4}",
            r.case, r.scenario, r.classification_accuracy, r.mean_absolute_error
        );
    }
    s
}
