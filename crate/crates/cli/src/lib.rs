//! Pipeline orchestration behind the `hoi` binary: artifact layout, the
//! synth-gen / latent-build / flow-train / infer / optimize / eval stages and
//! the evaluation report.

pub mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hoi_core::body::{build_default_body, BodyModel};
use hoi_core::fit::{post_optimize, recover_instance, Camera, HOIInstance, OptimConfig};
use hoi_core::flow::train::{mean_nll, train, TrainConfig, TrainHistory, TrainSet};
use hoi_core::flow::{params_from_pose6d, FlowDims, FlowModel};
use hoi_core::geom::Vec3;
use hoi_core::io::{content_hash, BinReader, BinWriter};
use hoi_core::relation::{
    build_latent_space_with_spectrum, AnchorConfig, LatentCode, LatentRelationSpace, PcaSpectrum,
};
use hoi_core::rigid::init_object_pose;
use hoi_core::synth::{
    build_anchor_config, generate_dataset, object_templates, offsets_by_category, parallel_map, read_instance,
    templates_from_config, training_set, write_instance, NoiseConfig, ObjectTemplate, Split, SynthConfig, SynthDataset,
    ViewRecord,
};
use hoi_core::{Error, Result};

pub use report::{evaluate_pair, EvalReport, EvalRow};

pub const DATA_DIR_ENV: &str = "HOI_DATA_DIR";

/// File layout of one experiment directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn body(&self) -> PathBuf {
        self.dir.join("body.hobm")
    }
    pub fn anchors(&self) -> PathBuf {
        self.dir.join("anchors.hoac")
    }
    pub fn dataset(&self, split: Split) -> PathBuf {
        self.dir.join(format!("{}.hods", split.name()))
    }
    pub fn space(&self, category: u32) -> PathBuf {
        self.dir.join(format!("latent_{category}.hols"))
    }
    pub fn spectrum(&self) -> PathBuf {
        self.dir.join("latent_spectrum.csv")
    }
    pub fn flow(&self) -> PathBuf {
        self.dir.join("flow.hofl")
    }
    pub fn loss_curve(&self) -> PathBuf {
        self.dir.join("flow_loss.csv")
    }
    pub fn predictions(&self, stage: Stage) -> PathBuf {
        self.dir.join(format!("predictions_{}.hopr", stage.name()))
    }
    pub fn report(&self, stage: Stage, ext: &str) -> PathBuf {
        self.dir.join(format!("eval_{}.{ext}", stage.name()))
    }

    pub fn load_body(&self) -> Result<BodyModel> {
        BodyModel::from_bytes(&fs::read(self.body())?)
    }
    pub fn load_anchors(&self) -> Result<AnchorConfig> {
        AnchorConfig::from_bytes(&fs::read(self.anchors())?)
    }
    pub fn load_dataset(&self, split: Split) -> Result<(SynthDataset, u64)> {
        let bytes = fs::read(self.dataset(split))?;
        Ok((SynthDataset::from_bytes(&bytes)?, content_hash(&bytes)))
    }
    pub fn load_spaces(&self, categories: usize) -> Result<Vec<LatentRelationSpace>> {
        (0..categories as u32)
            .map(|c| LatentRelationSpace::from_bytes(&fs::read(self.space(c))?))
            .collect()
    }
    pub fn load_flow(&self) -> Result<FlowModel> {
        FlowModel::from_bytes(&fs::read(self.flow())?)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn mismatch(what: &'static str, expected: u64, got: u64) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::HashMismatch { what, expected, got })
    }
}

#[derive(Debug, Clone)]
pub struct SynthGenArgs {
    pub count: usize,
    pub test_count: usize,
    pub views: usize,
    pub test_views: usize,
    pub seed: u64,
    pub human_anchors: usize,
    pub object_anchors: usize,
    pub categories: usize,
    pub joints: usize,
    pub shape_dims: usize,
    pub noise: NoiseConfig,
    pub jobs: usize,
}

impl Default for SynthGenArgs {
    fn default() -> Self {
        Self {
            count: 2000,
            test_count: 200,
            views: 12,
            test_views: 1,
            seed: 0,
            human_anchors: 128,
            object_anchors: 16,
            categories: 4,
            joints: 16,
            shape_dims: 4,
            noise: NoiseConfig::default(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthSummary {
    pub train_views: usize,
    pub test_views: usize,
    pub body_hash: u64,
    pub anchor_hash: u64,
}

/// Writes the body model, anchor config and train/test datasets.
pub fn cmd_synth_gen(ws: &Workspace, args: &SynthGenArgs) -> Result<SynthSummary> {
    let body = build_default_body(args.joints, args.shape_dims, args.seed)?;
    let templates = object_templates(args.categories, args.object_anchors, args.seed)?;
    let config = build_anchor_config(&body, &templates, args.human_anchors, args.seed)?;
    let mut summary = SynthSummary {
        train_views: 0,
        test_views: 0,
        body_hash: body.hash(),
        anchor_hash: config.hash(),
    };
    write_file(&ws.body(), &body.to_bytes())?;
    write_file(&ws.anchors(), &config.to_bytes())?;
    for (split, count, views) in [
        (Split::Train, args.count, args.views),
        (Split::Test, args.test_count, args.test_views),
    ] {
        if count == 0 {
            continue;
        }
        let cfg = SynthConfig {
            count,
            views,
            // Test instances come from an independent stream.
            seed: if split == Split::Test {
                args.seed ^ 0x7E57_7E57
            } else {
                args.seed
            },
            split,
            noise: args.noise,
            ..SynthConfig::default()
        };
        let ds = generate_dataset(&body, &templates, &config, &cfg, args.jobs)?;
        match split {
            Split::Train => summary.train_views = ds.view_count(),
            Split::Test => summary.test_views = ds.view_count(),
        }
        write_file(&ws.dataset(split), &ds.to_bytes())?;
    }
    Ok(summary)
}

/// Per-category PCA spaces over every training instance.
pub fn build_spaces(
    body: &BodyModel,
    templates: &[ObjectTemplate],
    config: &AnchorConfig,
    dataset: &SynthDataset,
    k: usize,
    jobs: usize,
) -> Result<Vec<(LatentRelationSpace, PcaSpectrum)>> {
    dataset.check_hashes(body, config)?;
    let groups = offsets_by_category(body, templates, config, dataset, jobs)?;
    groups
        .iter()
        .enumerate()
        .map(|(c, xs)| {
            if xs.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "category {c} has {} training instances, need at least 2",
                    xs.len()
                )));
            }
            build_latent_space_with_spectrum(xs, k, c as u32)
        })
        .collect()
}

pub fn spectrum_csv(spectra: &[PcaSpectrum]) -> String {
    let mut s = String::from("category,component,singular_value,explained_ratio,cumulative\n");
    for (c, sp) in spectra.iter().enumerate() {
        let mut cum = 0.0;
        for (i, (sv, r)) in sp.singular_values.iter().zip(&sp.explained_variance_ratio).enumerate() {
            cum += r;
            s.push_str(&format!("{c},{},{sv:?},{r:?},{cum:?}\n", i + 1));
        }
    }
    s
}

pub fn cmd_latent_build(ws: &Workspace, k: usize, jobs: usize) -> Result<Vec<PcaSpectrum>> {
    let body = ws.load_body()?;
    let config = ws.load_anchors()?;
    let templates = templates_from_config(&config)?;
    let (dataset, _) = ws.load_dataset(Split::Train)?;
    let built = build_spaces(&body, &templates, &config, &dataset, k, jobs)?;
    let mut spectra = Vec::with_capacity(built.len());
    for (space, spectrum) in built {
        write_file(&ws.space(space.category), &space.to_bytes())?;
        spectra.push(spectrum);
    }
    write_file(&ws.spectrum(), spectrum_csv(&spectra).as_bytes())?;
    Ok(spectra)
}

#[derive(Debug, Clone)]
pub struct FlowTrainArgs {
    pub train: TrainConfig,
    pub hidden: usize,
    pub blocks: usize,
    /// Fraction of training instances (all their views) held out for NLL.
    pub holdout_fraction: f64,
    pub jobs: usize,
}

impl Default for FlowTrainArgs {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            hidden: 64,
            blocks: 4,
            holdout_fraction: 0.1,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub history: TrainHistory,
    /// Held-out total NLL with true and with shuffled conditions.
    pub conditioned_nll: f64,
    pub shuffled_nll: f64,
}

/// Splits views of the last `fraction` of instances off as a held-out set.
pub fn split_holdout(set: &TrainSet, dataset: &SynthDataset, fraction: f64) -> Result<(TrainSet, TrainSet)> {
    let n = dataset.records.len();
    let held = ((n as f64 * fraction).ceil() as usize).clamp(1, n.saturating_sub(1));
    if n < 2 || held == 0 {
        return Err(Error::InvalidArgument(
            "need at least 2 instances to hold some out".into(),
        ));
    }
    let cut: usize = dataset.records[..n - held].iter().map(|r| r.views.len()).sum();
    let train_idx: Vec<usize> = (0..cut).collect();
    let hold_idx: Vec<usize> = (cut..set.len()).collect();
    Ok((set.select(&train_idx), set.select(&hold_idx)))
}

pub fn train_models(
    body: &BodyModel,
    templates: &[ObjectTemplate],
    config: &AnchorConfig,
    spaces: &[LatentRelationSpace],
    dataset: &SynthDataset,
    args: &FlowTrainArgs,
) -> Result<TrainOutcome> {
    dataset.check_hashes(body, config)?;
    for s in spaces {
        mismatch("latent space anchor config", config.hash(), s.anchor_hash)?;
    }
    let full = training_set(body, templates, config, spaces, dataset, args.jobs)?;
    let (train_set, holdout) = split_holdout(&full, dataset, args.holdout_fraction)?;
    let dims = FlowDims {
        joints: body.joint_count(),
        shape_dims: body.shape_dims(),
        k: spaces[0].k,
        cond_dim: full.cond.nrows(),
        hidden: args.hidden,
        blocks: args.blocks,
    };
    let mut model = FlowModel::new(dims, args.train.seed)?;
    model.body_hash = body.hash();
    model.anchor_hash = config.hash();
    model.space_hashes = spaces.iter().map(|s| s.hash()).collect();
    let cfg = TrainConfig {
        gamma_scale: args.train.gamma_scale / ((config.m * config.n) as f64).sqrt(),
        ..args.train.clone()
    };
    let history = train(&mut model, &train_set, &holdout, &cfg)?;
    let (a, b) = mean_nll(&model, &holdout, None)?;
    let (sa, sb) = mean_nll(&model, &holdout, Some(args.train.seed ^ 0x5A5A))?;
    Ok(TrainOutcome {
        model,
        history,
        conditioned_nll: a + b,
        shuffled_nll: sa + sb,
    })
}

pub fn cmd_flow_train(ws: &Workspace, args: &FlowTrainArgs) -> Result<TrainOutcome> {
    let body = ws.load_body()?;
    let config = ws.load_anchors()?;
    let templates = templates_from_config(&config)?;
    let (dataset, _) = ws.load_dataset(Split::Train)?;
    let spaces = ws.load_spaces(dataset.categories)?;
    let out = train_models(&body, &templates, &config, &spaces, &dataset, args)?;
    write_file(&ws.flow(), &out.model.to_bytes())?;
    write_file(&ws.loss_curve(), out.history.to_csv().as_bytes())?;
    Ok(out)
}

/// Everything needed to run inference on one observation.
pub struct Models {
    pub body: BodyModel,
    pub config: AnchorConfig,
    pub templates: Vec<ObjectTemplate>,
    pub spaces: Vec<LatentRelationSpace>,
    pub flow: FlowModel,
    pub object_anchors: Vec<Vec<Vec3>>,
}

impl Models {
    pub fn new(
        body: BodyModel,
        config: AnchorConfig,
        spaces: Vec<LatentRelationSpace>,
        flow: FlowModel,
    ) -> Result<Self> {
        mismatch("flow body model", flow.body_hash, body.hash())?;
        mismatch("flow anchor config", flow.anchor_hash, config.hash())?;
        let hashes: Vec<u64> = spaces.iter().map(|s| s.hash()).collect();
        if hashes.len() != flow.space_hashes.len() {
            return Err(Error::InvalidArgument(
                "flow and latent spaces disagree on category count".into(),
            ));
        }
        for (&e, &g) in flow.space_hashes.iter().zip(&hashes) {
            mismatch("flow latent space", e, g)?;
        }
        let templates = templates_from_config(&config)?;
        let object_anchors = templates.iter().map(|t| t.anchor_positions()).collect::<Result<_>>()?;
        Ok(Self {
            body,
            config,
            templates,
            spaces,
            flow,
            object_anchors,
        })
    }

    pub fn load(ws: &Workspace) -> Result<Self> {
        let config = ws.load_anchors()?;
        let flow = ws.load_flow()?;
        let spaces = ws.load_spaces(config.objects.len())?;
        Self::new(ws.load_body()?, config, spaces, flow)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub record: usize,
    pub view: usize,
    pub instance: HOIInstance,
    pub t_cam: Vec3,
    pub millis: f64,
    pub diverged: bool,
}

/// Mode prediction, closed-form object init and offset-driven recovery.
pub fn infer_view(models: &Models, view: &ViewRecord, category: u32, opt: &OptimConfig) -> Result<(HOIInstance, Vec3)> {
    let mode = models.flow.stacked_posterior_mode(&view.feature)?;
    let params = params_from_pose6d(&mode.theta6d, &mode.beta);
    let space = models
        .spaces
        .get(category as usize)
        .ok_or_else(|| Error::InvalidArgument(format!("no latent space for category {category}")))?;
    let x_hat = space.reproject(&LatentCode {
        gamma: mode.gamma,
        category,
    })?;
    let template = &models.templates[category as usize];
    let init = init_object_pose(&models.body, &params, &x_hat, &models.config, &template.mesh, category)?;
    let start = HOIInstance {
        body: params,
        object_pose: init.pose,
        category,
    };
    let rec = recover_instance(
        &models.body,
        &x_hat,
        &start,
        &models.config,
        &models.object_anchors[category as usize],
        opt,
    )?;
    Ok((rec.instance, mode.t_cam))
}

/// Post-optimization of an inferred instance against the view's evidence.
/// The camera rotation and intrinsics are known, its translation is `t_cam`.
pub fn refine_view(
    models: &Models,
    view: &ViewRecord,
    init: &HOIInstance,
    t_cam: Vec3,
    opt: &OptimConfig,
) -> Result<(HOIInstance, Vec3, bool)> {
    let c = &view.camera;
    let cam = Camera::new(c.fx, c.fy, c.cx, c.cy, c.rotation, t_cam)?;
    let cat = init.category as usize;
    let r = post_optimize(
        &models.body,
        init,
        &models.flow,
        &models.spaces[cat],
        &models.config,
        &models.object_anchors[cat],
        &cam,
        &view.evidence,
        &view.feature,
        opt,
    )?;
    Ok((r.instance, r.camera.translation, r.diverged))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Infer,
    Optimize,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Infer => "infer",
            Stage::Optimize => "optimize",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub stage: Stage,
    pub dataset_hash: u64,
    pub flow_hash: u64,
    pub predictions: Vec<Prediction>,
}

const PRED_MAGIC: &[u8; 4] = b"HOPR";
const PRED_VERSION: u16 = 1;

impl PredictionSet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new();
        w.magic(PRED_MAGIC).u16(PRED_VERSION);
        w.u8(matches!(self.stage, Stage::Optimize) as u8);
        w.u64(self.dataset_hash).u64(self.flow_hash);
        w.u64(self.predictions.len() as u64);
        for p in &self.predictions {
            w.u64(p.record as u64).u32(p.view as u32);
            write_instance(&mut w, &p.instance);
            w.f64(p.t_cam.x).f64(p.t_cam.y).f64(p.t_cam.z);
            w.f64(p.millis).u8(p.diverged as u8);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::new(bytes);
        r.expect_magic(PRED_MAGIC)?;
        r.version(PRED_VERSION)?;
        let stage = if r.u8()? == 1 { Stage::Optimize } else { Stage::Infer };
        let dataset_hash = r.u64()?;
        let flow_hash = r.u64()?;
        let n = r.usize()?;
        let mut predictions = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let record = r.usize()?;
            let view = r.u32()? as usize;
            let instance = read_instance(&mut r)?;
            let t_cam = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
            let millis = r.f64()?;
            let diverged = r.u8()? == 1;
            predictions.push(Prediction {
                record,
                view,
                instance,
                t_cam,
                millis,
                diverged,
            });
        }
        r.finish()?;
        Ok(Self {
            stage,
            dataset_hash,
            flow_hash,
            predictions,
        })
    }
}

/// Which test records to process.
#[derive(Debug, Clone, Copy, Default)]
pub struct Selection {
    pub limit: Option<usize>,
    pub view: usize,
}

pub fn infer_dataset(
    models: &Models,
    dataset: &SynthDataset,
    sel: Selection,
    opt: &OptimConfig,
    jobs: usize,
) -> Result<Vec<Prediction>> {
    let n = sel
        .limit
        .map_or(dataset.records.len(), |l| l.min(dataset.records.len()));
    parallel_map(n, jobs, |i| {
        let rec = &dataset.records[i];
        let view = rec
            .views
            .get(sel.view)
            .ok_or_else(|| Error::InvalidArgument(format!("record {i} has no view {}", sel.view)))?;
        let t0 = Instant::now();
        let (instance, t_cam) = infer_view(models, view, rec.instance.category, opt)?;
        Ok(Prediction {
            record: i,
            view: sel.view,
            instance,
            t_cam,
            millis: t0.elapsed().as_secs_f64() * 1e3,
            diverged: false,
        })
    })
    .into_iter()
    .collect()
}

pub fn refine_predictions(
    models: &Models,
    dataset: &SynthDataset,
    inferred: &[Prediction],
    opt: &OptimConfig,
    jobs: usize,
) -> Result<Vec<Prediction>> {
    parallel_map(inferred.len(), jobs, |i| {
        let p = &inferred[i];
        let rec = dataset
            .records
            .get(p.record)
            .ok_or_else(|| Error::InvalidArgument(format!("prediction refers to missing record {}", p.record)))?;
        let view = &rec.views[p.view];
        let t0 = Instant::now();
        let (instance, t_cam, diverged) = refine_view(models, view, &p.instance, p.t_cam, opt)?;
        Ok(Prediction {
            record: p.record,
            view: p.view,
            instance,
            t_cam,
            millis: t0.elapsed().as_secs_f64() * 1e3,
            diverged,
        })
    })
    .into_iter()
    .collect()
}

pub fn cmd_infer(ws: &Workspace, sel: Selection, opt: &OptimConfig, jobs: usize) -> Result<PredictionSet> {
    let models = Models::load(ws)?;
    let (dataset, dataset_hash) = ws.load_dataset(Split::Test)?;
    dataset.check_hashes(&models.body, &models.config)?;
    let predictions = infer_dataset(&models, &dataset, sel, opt, jobs)?;
    let set = PredictionSet {
        stage: Stage::Infer,
        dataset_hash,
        flow_hash: models.flow.hash(),
        predictions,
    };
    write_file(&ws.predictions(Stage::Infer), &set.to_bytes())?;
    Ok(set)
}

pub fn cmd_optimize(ws: &Workspace, opt: &OptimConfig, jobs: usize) -> Result<PredictionSet> {
    let models = Models::load(ws)?;
    let (dataset, dataset_hash) = ws.load_dataset(Split::Test)?;
    let inferred = PredictionSet::from_bytes(&fs::read(ws.predictions(Stage::Infer))?)?;
    mismatch("predictions dataset", inferred.dataset_hash, dataset_hash)?;
    mismatch("predictions flow", inferred.flow_hash, models.flow.hash())?;
    let predictions = refine_predictions(&models, &dataset, &inferred.predictions, opt, jobs)?;
    let set = PredictionSet {
        stage: Stage::Optimize,
        dataset_hash,
        flow_hash: inferred.flow_hash,
        predictions,
    };
    write_file(&ws.predictions(Stage::Optimize), &set.to_bytes())?;
    Ok(set)
}

#[derive(Debug, Clone, Copy)]
pub struct EvalArgs {
    pub body_samples: usize,
    pub object_samples: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for EvalArgs {
    fn default() -> Self {
        Self {
            body_samples: 2000,
            object_samples: 2000,
            seed: 0,
            jobs: 1,
        }
    }
}

pub fn evaluate_predictions(
    body: &BodyModel,
    templates: &[ObjectTemplate],
    dataset: &SynthDataset,
    predictions: &[Prediction],
    args: &EvalArgs,
) -> Result<Vec<EvalRow>> {
    parallel_map(predictions.len(), args.jobs, |i| {
        let p = &predictions[i];
        let gt = &dataset
            .records
            .get(p.record)
            .ok_or_else(|| Error::InvalidArgument(format!("prediction refers to missing record {}", p.record)))?
            .instance;
        if gt.category != p.instance.category {
            return Err(Error::InvalidArgument(format!("record {} category mismatch", p.record)));
        }
        let (b, o) = evaluate_pair(body, &templates[gt.category as usize].mesh, &p.instance, gt, args)?;
        Ok(EvalRow {
            record: p.record,
            category: gt.category,
            body_chamfer: b,
            object_chamfer: o,
            millis: p.millis,
        })
    })
    .into_iter()
    .collect()
}

pub fn cmd_eval(ws: &Workspace, stage: Stage, args: &EvalArgs) -> Result<EvalReport> {
    let body = ws.load_body()?;
    let config = ws.load_anchors()?;
    let templates = templates_from_config(&config)?;
    let (dataset, dataset_hash) = ws.load_dataset(Split::Test)?;
    dataset.check_hashes(&body, &config)?;
    let bytes = fs::read(ws.predictions(stage))?;
    let preds = PredictionSet::from_bytes(&bytes)?;
    mismatch("predictions dataset", preds.dataset_hash, dataset_hash)?;
    if ws.flow().exists() {
        mismatch("predictions flow", preds.flow_hash, ws.load_flow()?.hash())?;
    }
    let rows = evaluate_predictions(&body, &templates, &dataset, &preds.predictions, args)?;
    let report = EvalReport::new(stage.name(), dataset_hash, content_hash(&bytes), rows);
    write_file(&ws.report(stage, "csv"), report.to_csv().as_bytes())?;
    write_file(&ws.report(stage, "json"), report.to_json().as_bytes())?;
    Ok(report)
}

/// Writes `{record}_body.obj` and `{record}_object.obj` for every prediction
/// of `stage` into `out`, returning the number of meshes written.
pub fn dump_meshes(ws: &Workspace, stage: Stage, out: &Path) -> Result<usize> {
    let body = ws.load_body()?;
    let templates = templates_from_config(&ws.load_anchors()?)?;
    let preds = PredictionSet::from_bytes(&fs::read(ws.predictions(stage))?)?;
    fs::create_dir_all(out)?;
    for p in &preds.predictions {
        let template = templates
            .get(p.instance.category as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("no template for category {}", p.instance.category)))?;
        body.forward(&p.instance.body)?
            .write_obj(&out.join(format!("{}_body.obj", p.record)))?;
        p.instance
            .object_mesh(&template.mesh)
            .write_obj(&out.join(format!("{}_object.obj", p.record)))?;
    }
    Ok(2 * preds.predictions.len())
}

/// Ground-truth predictions, used to sanity-check evaluation.
pub fn ground_truth_predictions(dataset: &SynthDataset) -> Vec<Prediction> {
    dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| Prediction {
            record: i,
            view: 0,
            instance: r.instance.clone(),
            t_cam: r.views[0].camera.translation,
            millis: 0.0,
            diverged: false,
        })
        .collect()
}
