//! Batch drivers behind the command-line tool: configuration, fitting,
//! prior training, synthesis and evaluation. Every command reads its inputs
//! from the configured paths and writes JSON or checkpoint files into the
//! output directory.

pub mod files;
pub mod fit;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Camera;
use crate::handmodel::{default_skeleton, load_skeleton, MotionSequence, SkeletonSpec};
use crate::ingest::{
    detections_to_json, initialization_to_json, load_detections, load_initialization,
};
use crate::metrics::{summarize, MetricSummary};
use crate::prior::{load_prior, save_prior, PriorKind, PriorModel, WindowSpec};
use crate::priortrain::{
    fit_gmm, fit_pca, preprocess, train_latent_field, LatentTrainConfig, RawSequence,
};
use crate::synth::{synthesize, training_sequences, MotionFamily, SyntheticSpec};

pub use files::{load_camera, load_motion, motion_to_json, parse_motion, write_json, write_text};
pub use fit::{chunks, fit, FitOutput, FitReport, FitSettings, StageSelect};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Skeleton JSON; the bundled skeleton when absent.
    pub skeleton: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub initialization: Option<PathBuf>,
    /// Prior checkpoint read by `fit` and written by `train-prior`.
    pub prior: Option<PathBuf>,
    /// Camera JSON; the default VGA camera when absent.
    pub camera: Option<PathBuf>,
    pub output: PathBuf,
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    /// Motion files for prior training; procedural data when empty.
    pub data: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub window: WindowSpec,
    pub pca_components: usize,
    pub gmm_components: usize,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
    pub latent: LatentTrainConfig,
    /// Procedural training corpus used when no data files are given.
    pub synthetic_sequences: usize,
    pub synthetic_frames: usize,
    pub synthetic_fps: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            window: WindowSpec::default(),
            pca_components: 32,
            gmm_components: 8,
            gmm_max_iter: 200,
            gmm_tol: 1e-6,
            latent: LatentTrainConfig::default(),
            synthetic_sequences: 32,
            synthetic_frames: 256,
            synthetic_fps: 30.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub prior: PriorKind,
    pub paths: Paths,
    pub fit: FitSettings,
    pub synth: SyntheticSpec,
    pub train: TrainSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            prior: PriorKind::Latent,
            paths: Paths {
                output: PathBuf::from("out"),
                ..Paths::default()
            },
            fit: FitSettings::default(),
            synth: SyntheticSpec::default(),
            train: TrainSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::parse("<config>", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { msg, .. } => Error::parse(path, msg),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        self.synth.validate()?;
        self.train.latent.validate()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.paths.output.join(name)
    }

    fn skeleton(&self) -> Result<SkeletonSpec> {
        match &self.paths.skeleton {
            Some(p) => load_skeleton(p),
            None => Ok(default_skeleton()),
        }
    }

    fn camera(&self) -> Result<Camera> {
        match &self.paths.camera {
            Some(p) => load_camera(p),
            None => Ok(Camera::default()),
        }
    }

    fn prior_model(&self) -> Result<PriorModel> {
        if self.prior == PriorKind::None {
            return Ok(PriorModel::None);
        }
        let model = load_prior(required(&self.paths.prior, "prior")?)?;
        if model.kind() != self.prior {
            return Err(Error::Config(format!(
                "checkpoint holds a {} prior, configuration asks for {}",
                model.kind(),
                self.prior
            )));
        }
        Ok(model)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("paths.{name} is required for this command")))
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    config: &'a PipelineConfig,
    #[serde(flatten)]
    body: &'a T,
}

fn write_report(cfg: &PipelineConfig, name: &str, body: &impl Serialize) -> Result<()> {
    write_json(cfg.out(name), &Report { config: cfg, body })
}

/// Fit a sequence; writes `motion.json`, `stage1_motion.json` and
/// `fit_report.json`.
pub fn cmd_fit(cfg: &PipelineConfig) -> Result<FitOutput> {
    let skeleton = cfg.skeleton()?;
    let camera = cfg.camera()?;
    let detections = load_detections(required(&cfg.paths.detections, "detections")?)?;
    let init = load_initialization(required(&cfg.paths.initialization, "initialization")?)?;
    let prior = cfg.prior_model()?;
    let out = fit(&skeleton, &camera, &detections, &init, &prior, &cfg.fit)?;
    write_text(cfg.out("motion.json"), &motion_to_json(&out.motion))?;
    write_text(cfg.out("stage1_motion.json"), &motion_to_json(&out.stage1))?;
    write_report(cfg, "fit_report.json", &FitReportBody { fit: &out.report })?;
    Ok(out)
}

#[derive(Serialize)]
struct FitReportBody<'a> {
    fit: &'a FitReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: PriorKind,
    pub sequences: usize,
    pub clips: usize,
    /// Per-epoch loss (latent) or per-iteration log-likelihood (GMM).
    pub trace: Vec<f64>,
    pub explained_variance_ratio: Option<f64>,
}

/// Train the configured prior variant into a model and report.
pub fn train_prior(
    skeleton: &SkeletonSpec,
    sequences: &[RawSequence],
    kind: PriorKind,
    settings: &TrainSettings,
    seed: u64,
) -> Result<(PriorModel, TrainReport)> {
    let clips = preprocess(skeleton, sequences)?;
    let mut report = TrainReport {
        variant: kind,
        sequences: sequences.len(),
        clips: clips.len(),
        trace: Vec::new(),
        explained_variance_ratio: None,
    };
    let model = match kind {
        PriorKind::None => {
            return Err(Error::Config(
                "the none variant has nothing to train".into(),
            ))
        }
        PriorKind::Pca => {
            let p = fit_pca(&clips, settings.pca_components, settings.window)?;
            report.explained_variance_ratio = Some(p.explained_variance_ratio);
            PriorModel::Pca(p)
        }
        PriorKind::Gmm => {
            let g = fit_gmm(
                &clips,
                settings.gmm_components,
                seed,
                settings.gmm_max_iter,
                settings.gmm_tol,
                settings.window,
            )?;
            report.trace = g.log_likelihood;
            PriorModel::Gmm(g.model)
        }
        PriorKind::Latent => {
            let t = train_latent_field(&clips, &settings.latent, seed)?;
            report.trace = t.epoch_loss;
            PriorModel::Latent(t.model)
        }
    };
    Ok((model, report))
}

/// Training sequences from the configured files, or the procedural corpus.
pub fn training_data(cfg: &PipelineConfig) -> Result<Vec<RawSequence>> {
    if cfg.paths.data.is_empty() {
        let t = &cfg.train;
        training_sequences(
            t.synthetic_sequences,
            t.synthetic_frames,
            t.synthetic_fps,
            cfg.seed,
        )
    } else {
        cfg.paths.data.iter().map(load_motion).collect()
    }
}

/// Train a prior; writes the checkpoint (to `paths.prior` or
/// `prior.ckpt` in the output directory) and `train_report.json`.
pub fn cmd_train_prior(cfg: &PipelineConfig) -> Result<TrainReport> {
    let skeleton = cfg.skeleton()?;
    let data = training_data(cfg)?;
    let (model, report) = train_prior(&skeleton, &data, cfg.prior, &cfg.train, cfg.seed)?;
    let path = cfg
        .paths
        .prior
        .clone()
        .unwrap_or_else(|| cfg.out("prior.ckpt"));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_prior(&model, &path)?;
    write_report(
        cfg,
        "train_report.json",
        &TrainReportBody { train: &report },
    )?;
    Ok(report)
}

#[derive(Serialize)]
struct TrainReportBody<'a> {
    train: &'a TrainReport,
}

/// Synthesize a benchmark sequence; writes `detections.json`,
/// `initialization.json`, `ground_truth.json` and `camera.json`.
pub fn cmd_synth(cfg: &PipelineConfig) -> Result<()> {
    let skeleton = cfg.skeleton()?;
    let spec = SyntheticSpec {
        seed: cfg.seed,
        ..cfg.synth.clone()
    };
    let prior = match spec.motion {
        MotionFamily::CurlWave => None,
        MotionFamily::PriorSample => Some(load_prior(required(&cfg.paths.prior, "prior")?)?),
    };
    let data = synthesize(&skeleton, &spec, prior.as_ref())?;
    write_text(
        cfg.out("detections.json"),
        &detections_to_json(&data.detections),
    )?;
    write_text(
        cfg.out("initialization.json"),
        &initialization_to_json(&data.initialization),
    )?;
    write_text(
        cfg.out("ground_truth.json"),
        &motion_to_json(&data.ground_truth),
    )?;
    write_json(cfg.out("camera.json"), &spec.camera)
}

/// Metrics of a predicted motion against ground truth.
pub fn evaluate(
    skeleton: &SkeletonSpec,
    pred: &MotionSequence,
    gt: &MotionSequence,
) -> Result<MetricSummary> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch(format!(
            "prediction has {} frames, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    summarize(&pred.joints(skeleton)?, &gt.joints(skeleton)?, gt.fps)
}

/// Evaluate `paths.pred` against `paths.gt`; writes `metrics.json`.
pub fn cmd_eval(cfg: &PipelineConfig) -> Result<MetricSummary> {
    let skeleton = cfg.skeleton()?;
    let pred = load_motion(required(&cfg.paths.pred, "pred")?)?.motion;
    let gt = load_motion(required(&cfg.paths.gt, "gt")?)?.motion;
    let m = evaluate(&skeleton, &pred, &gt)?;
    write_report(cfg, "metrics.json", &EvalReportBody { metrics: &m })?;
    Ok(m)
}

#[derive(Serialize)]
struct EvalReportBody<'a> {
    metrics: &'a MetricSummary,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        let cfg = PipelineConfig::from_toml_str(
            r#"
            seed = 7
            prior = "gmm"
            [fit]
            stage = "1"
            iters_stage1 = 10
            [fit.stage2]
            orient = 2.0
            transl = 1.0
            shape = 10.0
            orient_smooth = 1.0
            transl_smooth = 0.0
            keypoints_2d = 0.05
            motion_prior = 100.0
            pose_smooth = 300.0
            lr = 0.05
            [synth]
            occlusion = [[3, 9]]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.prior, PriorKind::Gmm);
        assert_eq!(cfg.fit.stage, StageSelect::One);
        assert_eq!(cfg.fit.iters_stage2, 400);
        assert_eq!(cfg.fit.stage2.motion_prior, 100.0);
        assert_eq!(cfg.synth.occlusion, vec![[3, 9]]);
        assert_eq!(PipelineConfig::from_toml_str(&cfg.to_toml()).unwrap(), cfg);

        assert!(matches!(
            PipelineConfig::from_toml_str("sed = 1"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            PipelineConfig::from_toml_str("[fit]\nbbox_threshold = 2.0"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn missing_inputs_are_config_errors() {
        let cfg = PipelineConfig::default();
        assert!(matches!(cmd_fit(&cfg), Err(Error::Config(_))));
        assert!(matches!(cmd_eval(&cfg), Err(Error::Config(_))));
    }
}
