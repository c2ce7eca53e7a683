use std::path::{Path, PathBuf};

use mwslc::beamform::BeamformConfig;
use mwslc::coding::{
    compute_irm, encode_mwsbc, encode_mwslc, encode_mwslc_sum, encode_sbc, encode_slc, shared_cells, CodingKind,
    CodingTensor, DoaSet, MaskSet, SpatialGrid,
};
use mwslc::conditioning::theta_sweep;
use mwslc::container::Container;
use mwslc::decode::{calibrate_threshold, decode_doas, sample_masks, ClusterConfig, DoaEstimates, ValidationScene};
use mwslc::estimator::{corrupt_oracle, features, forward, train, EstimatorParams, TrainConfig, TrainingScene};
use mwslc::metrics::{delta_si_sdr, doa_mae_known_count, doa_precision_recall, permute_align};
use mwslc::pipeline::{beamform_signals, demo_scene, evaluate, prepare, PreparedScene};
use mwslc::scene::{simulate, ArrayGeometry, Room, SceneSpec};
use mwslc::signal::{load_wav, save_wav, TimeSignal, WavEncoding};
use mwslc::stft::{analyze, StftConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineMode, RunConfig};
use crate::error::CliError;
use crate::report::{ensure_dir, read_json_data, write_json, write_report, Format, Header};

pub struct Ctx {
    pub cfg: RunConfig,
    pub format: Format,
    pub input: Option<PathBuf>,
}

impl Ctx {
    fn out(&self) -> Result<&Path, CliError> {
        ensure_dir(&self.cfg.out_dir)?;
        Ok(&self.cfg.out_dir)
    }

    /// Directory the stage reads from: `--input`, else the output directory.
    fn input_dir(&self) -> &Path {
        self.input.as_deref().unwrap_or(&self.cfg.out_dir)
    }

    fn header(&self, command: &str) -> Header {
        Header::new(command, &self.cfg)
    }

    fn geometry(&self) -> Result<ArrayGeometry, CliError> {
        let a = &self.cfg.array;
        if a.mic_count < 2 {
            return Err(CliError::Config("array.mic_count must be at least 2".into()));
        }
        let mid = (a.mic_count as f64 - 1.0) / 2.0;
        let pos = (0..a.mic_count)
            .map(|c| [(c as f64 - mid) * a.spacing_m, 0.0, 0.0])
            .collect();
        Ok(ArrayGeometry::new(pos, 0, a.speed_of_sound)?)
    }

    fn stft(&self) -> Result<StftConfig, CliError> {
        let s = &self.cfg.stft;
        Ok(StftConfig::new(s.win_len, s.hop, self.cfg.scene.sample_rate_hz)?)
    }

    fn grid(&self) -> Result<SpatialGrid, CliError> {
        Ok(SpatialGrid::new(self.cfg.coding.theta_count, self.cfg.scene.span_deg)?)
    }

    fn cluster(&self) -> ClusterConfig {
        ClusterConfig {
            sigma_deg: self.cfg.coding.sigma_deg,
            min_support_frac: self.cfg.decode.min_support_frac,
        }
    }

    fn beamform_cfg(&self) -> BeamformConfig {
        BeamformConfig {
            loading: self.cfg.beamform.loading,
            block_frames: self.cfg.beamform.block_frames,
        }
    }

    fn scene_spec(&self, doas: &[f64], duration_s: f64, seed: u64) -> Result<SceneSpec, CliError> {
        let s = &self.cfg.scene;
        let mut spec = demo_scene(doas, duration_s, seed, s.sample_rate_hz)?;
        for src in &mut spec.sources {
            src.distance_m = s.distance_m;
        }
        spec.span_deg = s.span_deg;
        spec.min_gap_deg = s.min_gap_deg;
        spec.array_center_m = s.array_center_m;
        spec.room = s.room.as_ref().map(|r| Room {
            dims_m: r.dims_m,
            absorption: r.absorption,
            order: r.order,
        });
        spec.validate()?;
        Ok(spec)
    }

    fn prepare(&self, spec: &SceneSpec) -> Result<PreparedScene, CliError> {
        Ok(prepare(
            spec,
            &self.geometry()?,
            &self.stft()?,
            self.cfg.coding.eps_m_db,
        )?)
    }

    fn configured_scene(&self) -> Result<PreparedScene, CliError> {
        let s = &self.cfg.scene;
        self.prepare(&self.scene_spec(&s.doas_deg, s.duration_s, self.cfg.seed)?)
    }

    /// Scene `index` of a generated split, with random on-grid directions.
    fn random_scene(&self, split: u64, index: u64, duration_s: f64) -> Result<PreparedScene, CliError> {
        let seed = self.cfg.seed ^ (split << 40) ^ index.wrapping_mul(0x9e37_79b9);
        let doas = random_doas(
            self.cfg.scene.doas_deg.len(),
            &self.grid()?,
            self.cfg.scene.min_gap_deg,
            seed,
        )?;
        self.prepare(&self.scene_spec(&doas, duration_s, seed)?)
    }

    fn encode(&self, kind: CodingKind, m: &MaskSet, d: &DoaSet) -> Result<CodingTensor, CliError> {
        let grid = self.grid()?;
        let sigma = self.cfg.coding.sigma_deg;
        Ok(match kind {
            CodingKind::Sbc => encode_sbc(d, &m.activity(), &grid)?,
            CodingKind::Slc => encode_slc(d, &m.activity(), &grid, sigma)?,
            CodingKind::MwSbc => encode_mwsbc(m, d, &grid)?,
            CodingKind::MwSlc => encode_mwslc(m, d, &grid, sigma)?,
            CodingKind::MwSlcSum => encode_mwslc_sum(m, d, &grid, sigma)?,
            CodingKind::Estimated => return Err(CliError::Config("`estimated` is not an oracle encoding".into())),
        })
    }

    fn load_params(&self) -> Result<EstimatorParams, CliError> {
        let path = self
            .cfg
            .pipeline
            .params
            .as_ref()
            .ok_or_else(|| CliError::Config("pipeline.mode = \"estimated\" needs pipeline.params".into()))?;
        Ok(EstimatorParams::from_container(&Container::read(path)?)?)
    }

    /// The localisation coding the configured pipeline mode produces.
    fn mode_coding(
        &self,
        scene: &PreparedScene,
        params: Option<&EstimatorParams>,
        seed: u64,
    ) -> Result<CodingTensor, CliError> {
        let p = &self.cfg.pipeline;
        match p.mode {
            PipelineMode::Oracle => self.encode(self.cfg.coding.kind.kind(), &scene.masks, &scene.truth),
            PipelineMode::Corrupted => {
                let c = self.encode(self.cfg.coding.kind.kind(), &scene.masks, &scene.truth)?;
                Ok(corrupt_oracle(&c, p.noise_std, p.blur_cells, seed)?)
            }
            PipelineMode::Estimated => {
                let params = params.ok_or_else(|| CliError::Config("estimator parameters missing".into()))?;
                Ok(forward(params, &features(&scene.mixture)?, &self.grid()?)?)
            }
        }
    }

    fn calibrate(&self, params: Option<&EstimatorParams>) -> Result<mwslc::decode::Calibration, CliError> {
        let d = &self.cfg.decode;
        let scenes = (0..d.calibration_scenes as u64)
            .map(|i| {
                let s = self.random_scene(2, i, self.cfg.scene.duration_s)?;
                let coding = self.mode_coding(&s, params, self.cfg.seed.wrapping_add(i))?;
                Ok(ValidationScene::from_coding(&coding, s.truth))
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(calibrate_threshold(
            &scenes,
            &d.calibration_candidates,
            d.delta_theta_deg,
            &self.cluster(),
            self.cfg.metrics.tolerance_deg,
        )?)
    }

    fn required_eps(&self) -> Result<f64, CliError> {
        self.cfg
            .decode
            .eps_theta
            .ok_or_else(|| CliError::Config("decode needs decode.eps_theta or --eps-theta".into()))
    }
}

/// Distinct grid directions at least `min_gap_deg` apart, drawn uniformly.
pub fn random_doas(count: usize, grid: &SpatialGrid, min_gap_deg: f64, seed: u64) -> Result<Vec<f64>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let mut doas: Vec<f64> = Vec::with_capacity(count);
        for _ in 0..count {
            let a = grid.angle_of(rng.random_range(0..grid.theta_count()));
            if doas.iter().all(|&b| grid.distance(a, b) >= min_gap_deg) {
                doas.push(a);
            }
        }
        if doas.len() == count {
            return Ok(doas);
        }
    }
    Err(CliError::Config(format!(
        "cannot place {count} sources {min_gap_deg} deg apart on a {} deg span",
        grid.span_deg()
    )))
}

#[derive(Debug, Serialize, Deserialize)]
struct Truth {
    doas_deg: Vec<f64>,
    span_deg: f64,
    sample_rate_hz: u32,
    samples: usize,
}

fn wav(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

fn image_name(i: usize) -> String {
    format!("image_{i}.wav")
}

fn separated_name(i: usize) -> String {
    format!("separated_{i}.wav")
}

fn write_signals(dir: &Path, signals: &[TimeSignal], name: fn(usize) -> String) -> Result<(), CliError> {
    for (i, s) in signals.iter().enumerate() {
        save_wav(s, wav(dir, &name(i)), WavEncoding::Float32)?;
    }
    Ok(())
}

fn read_truth(dir: &Path) -> Result<DoaSet, CliError> {
    let t: Truth = read_json_data(&dir.join("truth.json"))?;
    Ok(DoaSet::new(t.doas_deg, t.span_deg)?)
}

fn read_doas(dir: &Path) -> Result<DoaEstimates, CliError> {
    read_json_data(&dir.join("doas.json"))
}

/// Scene from a `simulate` directory: truth plus oracle masks from the
/// reference channel of each image.
fn scene_from_dir(ctx: &Ctx, dir: &Path) -> Result<LoadedScene, CliError> {
    let truth = read_truth(dir)?;
    let stft = ctx.stft()?;
    let reference = ctx.geometry()?.reference_mic();
    let images = (0..truth.len())
        .map(|i| {
            Ok(analyze(
                &load_wav(wav(dir, &image_name(i)))?.extract_channel(reference)?,
                &stft,
            )?)
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(LoadedScene {
        masks: compute_irm(&images, ctx.cfg.coding.eps_m_db)?,
        truth,
    })
}

struct LoadedScene {
    masks: MaskSet,
    truth: DoaSet,
}

/// The configured scene, or the one stored in `--input` when given.
fn input_scene(ctx: &Ctx) -> Result<LoadedScene, CliError> {
    match &ctx.input {
        Some(dir) => scene_from_dir(ctx, dir),
        None => {
            let s = ctx.configured_scene()?;
            Ok(LoadedScene {
                masks: s.masks,
                truth: s.truth,
            })
        }
    }
}

pub fn simulate_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let s = &ctx.cfg.scene;
    let spec = ctx.scene_spec(&s.doas_deg, s.duration_s, ctx.cfg.seed)?;
    let rendered = simulate(&spec, &ctx.geometry()?)?;
    let out = ctx.out()?;
    save_wav(&rendered.mixture, wav(out, "mixture.wav"), WavEncoding::Float32)?;
    write_signals(out, &rendered.source_images, image_name)?;
    let truth = Truth {
        doas_deg: rendered.truth.azimuths().to_vec(),
        span_deg: rendered.truth.span_deg(),
        sample_rate_hz: rendered.mixture.sample_rate_hz(),
        samples: rendered.mixture.len(),
    };
    write_json(&out.join("truth.json"), &ctx.header("simulate"), &truth)
}

#[derive(Serialize)]
struct EncodeSummary {
    kind: String,
    frames: usize,
    bins: usize,
    theta_count: usize,
    span_deg: f64,
    speakers: usize,
    /// Speaker pairs snapped to the same cell, as `(first, second, cell)`.
    shared_cells: Vec<(usize, usize, usize)>,
}

pub fn encode_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let scene = input_scene(ctx)?;
    let grid = ctx.grid()?;
    let kind = ctx.cfg.coding.kind;
    let coding = ctx.encode(kind.kind(), &scene.masks, &scene.truth)?;
    let out = ctx.out()?;
    Container::from(&coding).write(out.join("coding.bin"))?;
    Container::from(&scene.masks).write(out.join("masks.bin"))?;
    let summary = EncodeSummary {
        kind: format!("{kind:?}"),
        frames: coding.frames(),
        bins: coding.bins(),
        theta_count: grid.theta_count(),
        span_deg: grid.span_deg(),
        speakers: scene.truth.len(),
        shared_cells: shared_cells(&scene.truth, &grid),
    };
    let csv = format!(
        "kind,frames,bins,theta_count,span_deg,speakers,shared_cells\n{},{},{},{},{},{},{}\n",
        summary.kind,
        summary.frames,
        summary.bins,
        summary.theta_count,
        summary.span_deg,
        summary.speakers,
        summary.shared_cells.len()
    );
    write_report(out, "encode", ctx.format, &ctx.header("encode"), &csv, &summary)?;
    Ok(())
}

pub fn conditioning_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let scene = input_scene(ctx)?;
    let report = theta_sweep(
        &scene.masks,
        &scene.truth,
        ctx.cfg.coding.sigma_deg,
        ctx.cfg.scene.span_deg,
        &ctx.cfg.conditioning.theta_counts,
    )?;
    write_report(
        ctx.out()?,
        "conditioning",
        ctx.format,
        &ctx.header("conditioning"),
        &report.to_csv(),
        &report,
    )?;
    Ok(())
}

pub fn calibrate_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let params = match ctx.cfg.pipeline.mode {
        PipelineMode::Estimated => Some(ctx.load_params()?),
        _ => None,
    };
    let cal = ctx.calibrate(params.as_ref())?;
    let header = ctx
        .header("calibrate")
        .with("best_eps_theta", cal.best_eps_theta)
        .with("best_f1", format!("{:.6}", cal.best_f1));
    write_report(ctx.out()?, "calibration", ctx.format, &header, &cal.to_csv(), &cal)?;
    Ok(())
}

pub fn train_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let e = &ctx.cfg.estimator;
    let target = e.target.kind();
    let split = |id: u64, n: usize| {
        (0..n as u64)
            .map(|i| {
                let s = ctx.random_scene(id, i, e.duration_s)?;
                Ok(TrainingScene {
                    features: features(&s.mixture)?,
                    target: ctx.encode(target, &s.masks, &s.truth)?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()
    };
    let train_set = split(0, e.train_scenes)?;
    let val_set = split(1, e.val_scenes)?;
    let cfg = TrainConfig {
        learning_rate: e.learning_rate,
        decay_factor: e.decay_factor,
        decay_every: e.decay_every,
        epochs: e.epochs,
        batch_size: e.batch_size,
        patience: e.patience,
        hidden_dim: e.hidden_dim,
        output_bias_init: e.output_bias_init,
        seed: ctx.cfg.seed,
    };
    let (params, history) = train(&train_set, &val_set, &cfg)?;
    let out = ctx.out()?;
    params.to_container().write(out.join("params.bin"))?;
    let header = ctx
        .header("train")
        .with("best_epoch", history.best_epoch)
        .with("stopped_early", history.stopped_early);
    write_report(out, "history", ctx.format, &header, &history.to_csv(), &history)?;
    Ok(())
}

pub fn decode_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let eps = ctx.required_eps()?;
    let path = match &ctx.input {
        Some(p) if p.is_dir() => p.join("coding.bin"),
        Some(p) => p.clone(),
        None => ctx.cfg.out_dir.join("coding.bin"),
    };
    let coding = CodingTensor::try_from(&Container::read(&path)?)?;
    let est = decode_doas(&coding, eps, ctx.cfg.decode.delta_theta_deg, &ctx.cluster())?;
    let masks = sample_masks(&coding, &est)?;
    let out = ctx.out()?;
    let header = ctx.header("decode").with("eps_theta", eps);
    write_json(&out.join("doas.json"), &header, &est)?;
    Container::from(&masks).write(out.join("masks_est.bin"))?;
    write_report(out, "decode", ctx.format, &header, &est.to_csv(), &est)?;
    Ok(())
}

#[derive(Serialize)]
struct BeamformRow {
    speaker: usize,
    doa_deg: f64,
    file: String,
    samples: usize,
}

fn beamform_rows(doas: &[f64], signals: &[TimeSignal]) -> (Vec<BeamformRow>, String) {
    let rows: Vec<BeamformRow> = doas
        .iter()
        .zip(signals)
        .enumerate()
        .map(|(i, (&d, s))| BeamformRow {
            speaker: i,
            doa_deg: d,
            file: separated_name(i),
            samples: s.len(),
        })
        .collect();
    let mut csv = String::from("speaker,doa_deg,file,samples\n");
    for r in &rows {
        csv.push_str(&format!("{},{:.6},{},{}\n", r.speaker, r.doa_deg, r.file, r.samples));
    }
    (rows, csv)
}

pub fn beamform_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let dir = ctx.input_dir().to_path_buf();
    let mixture = analyze(&load_wav(wav(&dir, "mixture.wav"))?, &ctx.stft()?)?;
    let est = read_doas(&dir)?;
    let masks = MaskSet::try_from(&Container::read(dir.join("masks_est.bin"))?)?;
    let doas = est.centers();
    let signals = beamform_signals(&mixture, &doas, &masks, &ctx.geometry()?, &ctx.beamform_cfg())?;
    let out = ctx.out()?;
    write_signals(out, &signals, separated_name)?;
    let (rows, csv) = beamform_rows(&doas, &signals);
    write_report(out, "beamform", ctx.format, &ctx.header("beamform"), &csv, &rows)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct DoaScores {
    pub mae_deg: Option<f64>,
    pub mae_insufficient: bool,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub empty_estimates: bool,
}

#[derive(Debug, Serialize)]
pub struct EvalOutput {
    pub si_sdr_db: Vec<f64>,
    pub mean_si_sdr_db: f64,
    pub permutation: Vec<Option<usize>>,
    pub input_si_sdr_db: Option<Vec<f64>>,
    pub delta_si_sdr_db: Option<f64>,
    pub doa: Option<DoaScores>,
}

impl EvalOutput {
    fn to_csv(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(";");
        let opt = |v: Option<f64>, p: usize| v.map_or(String::new(), |x| format!("{x:.p$}"));
        let perm = self
            .permutation
            .iter()
            .map(|p| p.map_or("-".to_string(), |e| e.to_string()))
            .collect::<Vec<_>>()
            .join(";");
        let d = self.doa.as_ref();
        format!(
            "mean_si_sdr_db,delta_si_sdr_db,si_sdr_db,input_si_sdr_db,permutation,doa_mae_deg,precision,recall,f1\n\
             {:.4},{},{},{},{},{},{},{},{}\n",
            self.mean_si_sdr_db,
            opt(self.delta_si_sdr_db, 4),
            list(&self.si_sdr_db),
            self.input_si_sdr_db.as_deref().map_or(String::new(), list),
            perm,
            opt(d.and_then(|d| d.mae_deg), 6),
            opt(d.map(|d| d.precision), 6),
            opt(d.map(|d| d.recall), 6),
            opt(d.map(|d| d.f1), 6),
        )
    }
}

pub struct EvalInputs {
    pub estimates: Vec<PathBuf>,
    pub references: Vec<PathBuf>,
    pub mixture: Option<PathBuf>,
}

fn mono(path: &Path, reference: usize) -> Result<TimeSignal, CliError> {
    let s = load_wav(path)?;
    let c = if s.channel_count() > 1 { reference } else { 0 };
    Ok(s.extract_channel(c)?)
}

fn numbered(dir: &Path, name: fn(usize) -> String) -> Vec<PathBuf> {
    (0..).map(|i| dir.join(name(i))).take_while(|p| p.exists()).collect()
}

pub fn eval_cmd(ctx: &Ctx, files: EvalInputs) -> Result<(), CliError> {
    let dir = ctx.input_dir().to_path_buf();
    let explicit = !files.estimates.is_empty() || !files.references.is_empty();
    let (est_paths, ref_paths, mix_path) = if explicit {
        (files.estimates, files.references, files.mixture)
    } else {
        let mix = dir.join("mixture.wav");
        (
            numbered(&dir, separated_name),
            numbered(&dir, image_name),
            files.mixture.or(Some(mix)),
        )
    };
    if est_paths.is_empty() || ref_paths.is_empty() {
        return Err(CliError::io(
            &dir,
            "no estimate or reference signals found (expected separated_*.wav and image_*.wav)",
        ));
    }
    let reference = ctx.geometry()?.reference_mic();
    let load = |ps: &[PathBuf]| ps.iter().map(|p| mono(p, reference)).collect::<Result<Vec<_>, _>>();
    let ests = load(&est_paths)?;
    let refs = load(&ref_paths)?;
    let (alignment, input, delta) = match &mix_path {
        Some(m) => {
            let d = delta_si_sdr(&ests, &mono(m, reference)?, &refs)?;
            (d.alignment, Some(d.input_db), Some(d.delta_db))
        }
        None => (permute_align(&ests, &refs)?, None, None),
    };
    let doa = if explicit {
        None
    } else {
        match (read_doas(&dir), read_truth(&dir)) {
            (Ok(est), Ok(truth)) => {
                let mae = doa_mae_known_count(&est, &truth);
                let pr = doa_precision_recall(&est, &truth, ctx.cfg.metrics.tolerance_deg);
                Some(DoaScores {
                    mae_deg: mae.mae_deg,
                    mae_insufficient: mae.insufficient,
                    precision: pr.precision,
                    recall: pr.recall,
                    f1: pr.f1,
                    empty_estimates: pr.empty_estimates,
                })
            }
            _ => None,
        }
    };
    let report = EvalOutput {
        mean_si_sdr_db: alignment.mean_db,
        si_sdr_db: alignment.si_sdr_db,
        permutation: alignment.assignment,
        input_si_sdr_db: input,
        delta_si_sdr_db: delta,
        doa,
    };
    write_report(
        ctx.out()?,
        "eval",
        ctx.format,
        &ctx.header("eval"),
        &report.to_csv(),
        &report,
    )?;
    Ok(())
}

pub fn pipeline_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let params = match ctx.cfg.pipeline.mode {
        PipelineMode::Estimated => Some(ctx.load_params()?),
        _ => None,
    };
    let (eps, calibrated) = match ctx.cfg.decode.eps_theta {
        Some(e) => (e, false),
        None => (ctx.calibrate(params.as_ref())?.best_eps_theta, true),
    };
    let scene = ctx.configured_scene()?;
    let geometry = ctx.geometry()?;
    let coding = ctx.mode_coding(&scene, params.as_ref(), ctx.cfg.seed)?;
    let est = decode_doas(&coding, eps, ctx.cfg.decode.delta_theta_deg, &ctx.cluster())?;
    let masks = sample_masks(&coding, &est)?;
    let separated = if est.is_empty() {
        Vec::new()
    } else {
        beamform_signals(&scene.mixture, &est.centers(), &masks, &geometry, &ctx.beamform_cfg())?
    };
    let refs = scene.reference_images(&geometry)?;
    let mix_ref = scene.rendered.mixture.extract_channel(geometry.reference_mic())?;
    let report = evaluate(
        "pipeline",
        &est,
        &scene.truth,
        &separated,
        &mix_ref,
        &refs,
        ctx.cfg.metrics.tolerance_deg,
    )?;
    let out = ctx.out()?;
    write_signals(out, &separated, separated_name)?;
    let header = ctx
        .header("pipeline")
        .with("eps_theta", eps)
        .with("eps_calibrated", calibrated);
    write_json(&out.join("doas.json"), &header, &est)?;
    let csv = mwslc::metrics::EvalReport::to_csv(std::slice::from_ref(&report));
    write_report(out, "pipeline", ctx.format, &header, &csv, &report)?;
    Ok(())
}
