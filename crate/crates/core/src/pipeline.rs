//! Keyframe lifecycle: prior initialisation, per-frame photometric fusion,
//! keyframe switching on low overlap, depth extraction, evaluation and
//! propagation of the finished keyframe into the next one.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;

use crate::dataset_io::{self, SequenceIndex};
use crate::error::{check_dims, Error, Result};
use crate::geometry::{relative_pose, DepthBinning, Intrinsics, Pose};
use crate::maps::{BoundaryProbMap, DepthMap, NormalMap, OcclusionMask};
use crate::metrics::{ErrorAccumulator, EvalReport, ReportTable};
use crate::photometric::{normalize_image, EDGE_SLACK, CostConversion, GrayImage, PhotoCostVolume};
use crate::regularizer::{self, DEFAULT_BOUNDARY_THRESHOLD};
use crate::solver::{extract_depth, Init, RegularizerKind, SolverConfig, SolverDiagnostics};
use crate::synth::RenderedFrame;
use crate::volume::{synth_prior, PriorModel, ProbabilityVolume};
use crate::warp::propagate_keyframe;

/// Relative depth jump that marks an occlusion boundary when boundaries are
/// derived from ground-truth depth.
pub const GT_BOUNDARY_JUMP: f64 = 0.05;

/// One input frame at working resolution.
#[derive(Debug, Clone)]
pub struct Frame {
    pub index: usize,
    pub name: String,
    pub rgb: RgbImage,
    /// Camera-from-world.
    pub pose: Pose,
    pub gt_depth: Option<DepthMap>,
}

/// Random access to the frames of a sequence.
pub trait FrameSource {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn intrinsics(&self) -> &Intrinsics;
    fn frame(&self, index: usize) -> Result<Frame>;
}

/// Frames held in memory, e.g. a rendered synthetic sequence.
#[derive(Debug, Clone)]
pub struct InMemorySequence {
    pub frames: Vec<Frame>,
    pub intrinsics: Intrinsics,
}

impl InMemorySequence {
    pub fn from_rendered(frames: &[RenderedFrame], intrinsics: &Intrinsics) -> Self {
        Self {
            frames: frames
                .iter()
                .enumerate()
                .map(|(index, f)| Frame {
                    index,
                    name: format!("{index:06}"),
                    rgb: f.rgb.clone(),
                    pose: f.pose,
                    gt_depth: Some(f.depth.clone()),
                })
                .collect(),
            intrinsics: *intrinsics,
        }
    }
}

impl FrameSource for InMemorySequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        self.frames
            .get(index)
            .cloned()
            .ok_or_else(|| Error::OutOfRange(format!("frame {index} of {}", self.frames.len())))
    }
}

/// A TUM-layout sequence on disk, resampled to the working resolution as
/// frames are read.
#[derive(Debug, Clone)]
pub struct TumSequence {
    pub index: SequenceIndex,
    intrinsics: Intrinsics,
}

impl TumSequence {
    /// Uses `camera.txt` when present and the Freiburg 1 calibration
    /// otherwise, rescaled to `width × height`.
    pub fn open(dir: impl AsRef<Path>, association_tolerance: f64, width: usize, height: usize) -> Result<Self> {
        let index = dataset_io::load_tum_sequence(dir, association_tolerance)?;
        if index.is_empty() {
            return Err(Error::EmptyAssociation(association_tolerance));
        }
        let native = index.intrinsics.unwrap_or_else(Intrinsics::tum_freiburg1);
        let intrinsics = native.resized(width, height)?;
        Ok(Self { index, intrinsics })
    }
}

impl FrameSource for TumSequence {
    fn len(&self) -> usize {
        self.index.len()
    }

    fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let record = self
            .index
            .frames
            .get(index)
            .ok_or_else(|| Error::OutOfRange(format!("frame {index} of {}", self.index.len())))?;
        let (w, h) = self.intrinsics.dims();
        let rgb = dataset_io::load_rgb(&record.rgb_path)?;
        let rgb = if rgb.dimensions() == (w as u32, h as u32) {
            rgb
        } else {
            dataset_io::resample_rgb_area(&rgb, w, h)
        };
        let gt_depth = match &record.depth_path {
            Some(path) => {
                let depth = dataset_io::load_depth_png(path)?;
                Some(if depth.dims() == (w, h) {
                    depth
                } else {
                    dataset_io::resample_depth_nearest_valid(&depth, w, h)
                })
            }
            None => None,
        };
        Ok(Frame {
            index,
            name: record.stem(),
            rgb,
            pose: record.pose,
            gt_depth,
        })
    }
}

/// Which volumes enter the keyframe's fused distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    Fused,
    NetworkOnly,
    PhotometricOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::NetworkOnly, FusionMode::PhotometricOnly, FusionMode::Fused];

    pub fn label(self) -> &'static str {
        match self {
            FusionMode::Fused => "Fused",
            FusionMode::NetworkOnly => "Network-Only",
            FusionMode::PhotometricOnly => "Photometric-Only",
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fused" => Ok(FusionMode::Fused),
            "network-only" => Ok(FusionMode::NetworkOnly),
            "photometric-only" => Ok(FusionMode::PhotometricOnly),
            _ => Err(Error::Config(format!(
                "unknown mode {s:?} (expected fused, network-only or photometric-only)"
            ))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Fused => "fused",
            FusionMode::NetworkOnly => "network-only",
            FusionMode::PhotometricOnly => "photometric-only",
        })
    }
}

pub fn parse_regularizer(s: &str) -> Result<RegularizerKind> {
    match s {
        "none" | "smoothing-only" => Ok(RegularizerKind::None),
        "tv" | "total-variation" => Ok(RegularizerKind::TotalVariation),
        "normals" => Ok(RegularizerKind::Normals),
        _ => Err(Error::Config(format!(
            "unknown regularizer {s:?} (expected none, tv or normals)"
        ))),
    }
}

pub fn regularizer_name(kind: RegularizerKind) -> &'static str {
    match kind {
        RegularizerKind::None => "none",
        RegularizerKind::TotalVariation => "tv",
        RegularizerKind::Normals => "normals",
    }
}

/// Path template with `{index}` (frame index) and `{stem}` (RGB file stem)
/// placeholders.
pub fn resolve_template(template: &str, index: usize, stem: &str) -> PathBuf {
    PathBuf::from(template.replace("{index}", &index.to_string()).replace("{stem}", stem))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSource {
    Uniform,
    Synthetic(PriorModel),
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NormalsSource {
    File(String),
    FromGtDepth,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySource {
    None,
    File(String),
    FromGtDepth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub prior: PriorSource,
    pub normals: NormalsSource,
    pub boundary: BoundarySource,
    /// Mask out pixels whose boundary probability exceeds this.
    pub boundary_threshold: f64,
    /// A new keyframe starts when fewer than this share of keyframe pixels
    /// are visible in the current frame.
    pub overlap_threshold: f64,
    /// Upper bound on frames fused into one keyframe. Later frames still
    /// drive keyframe switching but add no evidence.
    pub max_refs: Option<usize>,
    pub solver: SolverConfig,
    /// Initialisation override; `None` means expected depth in
    /// photometric-only mode and argmax otherwise.
    pub init: Option<Init>,
    pub binning: DepthBinning,
    pub warp: bool,
    pub mode: FusionMode,
    pub conversion: CostConversion,
    pub width: usize,
    pub height: usize,
    pub association_tolerance: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prior: PriorSource::Synthetic(PriorModel::default()),
            normals: NormalsSource::FromGtDepth,
            boundary: BoundarySource::None,
            boundary_threshold: DEFAULT_BOUNDARY_THRESHOLD,
            overlap_threshold: 0.8,
            max_refs: None,
            solver: SolverConfig::default(),
            init: None,
            binning: DepthBinning::default(),
            warp: true,
            mode: FusionMode::Fused,
            conversion: CostConversion::ShiftLinear,
            width: 256,
            height: 192,
            association_tolerance: dataset_io::DEFAULT_ASSOCIATION_TOLERANCE,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value {value:?} for {key}"))),
    }
}

impl PipelineConfig {
    /// Defaults for the rendered scene, where ground-truth depth also
    /// supplies the occlusion boundaries.
    pub fn synthetic() -> Self {
        Self {
            boundary: BoundarySource::FromGtDepth,
            ..Self::default()
        }
    }

    /// Initialisation actually used by the solver.
    pub fn effective_init(&self) -> Init {
        self.init.unwrap_or(match self.mode {
            FusionMode::PhotometricOnly => Init::Expected,
            _ => Init::Argmax,
        })
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            init: self.effective_init(),
            ..self.solver.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "overlap threshold {} outside (0, 1]",
                self.overlap_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.boundary_threshold) {
            return Err(Error::Config(format!(
                "boundary threshold {} outside [0, 1]",
                self.boundary_threshold
            )));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::Config(format!("working size {}x{}", self.width, self.height)));
        }
        if let PriorSource::Synthetic(model) = &self.prior {
            model.validate()?;
        }
        if let CostConversion::Softmax { temperature } = self.conversion {
            if temperature.is_nan() || temperature <= 0.0 {
                return Err(Error::Config(format!("softmax temperature {temperature}")));
            }
        }
        Ok(())
    }

    fn prior_model_mut(&mut self) -> &mut PriorModel {
        if !matches!(self.prior, PriorSource::Synthetic(_)) {
            self.prior = PriorSource::Synthetic(PriorModel::default());
        }
        match &mut self.prior {
            PriorSource::Synthetic(model) => model,
            _ => unreachable!(),
        }
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (d_min, d_max, k_count) = (self.binning.d_min(), self.binning.d_max(), self.binning.k_count());
        match key {
            "mode" => self.mode = value.parse()?,
            "regularizer" => self.solver.regularizer = parse_regularizer(value)?,
            "lambda" => self.solver.lambda = Some(parse_value(key, value)?),
            "step_size" => self.solver.step_size = parse_value(key, value)?,
            "tv_step_size" => self.solver.tv_step_size = parse_value(key, value)?,
            "max_iters" => self.solver.max_iters = parse_value(key, value)?,
            "stop_tol" => self.solver.stop_tol = parse_value(key, value)?,
            "sigma" => self.solver.sigma = parse_value(key, value)?,
            "backtracking" => self.solver.backtracking = parse_bool(key, value)?,
            "parallel" => self.solver.parallel = parse_bool(key, value)?,
            "init" => {
                self.init = match value {
                    "auto" => None,
                    "argmax" => Some(Init::Argmax),
                    "expected" => Some(Init::Expected),
                    _ => return Err(Error::Config(format!("bad value {value:?} for init"))),
                }
            }
            "d_min" => self.binning = DepthBinning::new(parse_value(key, value)?, d_max, k_count)?,
            "d_max" => self.binning = DepthBinning::new(d_min, parse_value(key, value)?, k_count)?,
            "k_count" => self.binning = DepthBinning::new(d_min, d_max, parse_value(key, value)?)?,
            "warp" => self.warp = parse_bool(key, value)?,
            "overlap_threshold" => self.overlap_threshold = parse_value(key, value)?,
            "max_refs" => {
                self.max_refs = match value {
                    "none" => None,
                    v => Some(parse_value(key, v)?),
                }
            }
            "boundary_threshold" => self.boundary_threshold = parse_value(key, value)?,
            "width" => self.width = parse_value(key, value)?,
            "height" => self.height = parse_value(key, value)?,
            "association_tolerance" => self.association_tolerance = parse_value(key, value)?,
            "conversion" => {
                self.conversion = match value {
                    "shift-linear" => CostConversion::ShiftLinear,
                    "softmax" => CostConversion::Softmax { temperature: 1.0 },
                    _ => return Err(Error::Config(format!("bad value {value:?} for conversion"))),
                }
            }
            "softmax_temperature" => {
                self.conversion = CostConversion::Softmax {
                    temperature: parse_value(key, value)?,
                }
            }
            "prior" => {
                self.prior = match value {
                    "uniform" => PriorSource::Uniform,
                    "synthetic" => PriorSource::Synthetic(PriorModel::default()),
                    _ => return Err(Error::Config(format!("bad value {value:?} for prior"))),
                }
            }
            "prior_file" => self.prior = PriorSource::File(value.to_string()),
            "prior_sigma_bins" => self.prior_model_mut().sigma_bins = parse_value(key, value)?,
            "prior_floor" => self.prior_model_mut().uniform_floor = parse_value(key, value)?,
            "prior_spurious" => self.prior_model_mut().spurious_mode_prob = parse_value(key, value)?,
            "prior_spurious_offset" => self.prior_model_mut().spurious_offset_bins = parse_value(key, value)?,
            "prior_spurious_weight" => self.prior_model_mut().spurious_weight = parse_value(key, value)?,
            "prior_seed" => self.prior_model_mut().seed = parse_value(key, value)?,
            "normals" => {
                self.normals = match value {
                    "from-gt-depth" => NormalsSource::FromGtDepth,
                    _ => return Err(Error::Config(format!("bad value {value:?} for normals"))),
                }
            }
            "normals_file" => self.normals = NormalsSource::File(value.to_string()),
            "boundary" => {
                self.boundary = match value {
                    "none" => BoundarySource::None,
                    "from-gt-depth" => BoundarySource::FromGtDepth,
                    _ => return Err(Error::Config(format!("bad value {value:?} for boundary"))),
                }
            }
            "boundary_file" => self.boundary = BoundarySource::File(value.to_string()),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` document; blank lines and `#` comments are
    /// ignored.
    pub fn apply_kv(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e)))?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_kv(text)?;
        Ok(config)
    }
}

/// State of the active keyframe.
#[derive(Debug, Clone)]
pub struct KeyframeState {
    pub frame_index: usize,
    pub name: String,
    pub image: GrayImage,
    pub color: RgbImage,
    /// Camera-from-world.
    pub pose: Pose,
    pub gt_depth: Option<DepthMap>,
    /// Prior and photometric evidence fused together. Drives keyframe
    /// switching in every mode, so all modes see the same schedule.
    pub fused: ProbabilityVolume,
    /// Volume of the configured ablation mode when it differs from
    /// `fused`.
    pub ablation: Option<ProbabilityVolume>,
    /// Sum of all photometric costs seen by this keyframe.
    pub cost: PhotoCostVolume,
    pub normals: NormalMap,
    pub mask: OcclusionMask,
    pub reference_count: usize,
}

impl KeyframeState {
    /// The volume the configured mode extracts depth from.
    pub fn volume(&self) -> &ProbabilityVolume {
        self.ablation.as_ref().unwrap_or(&self.fused)
    }
}

/// Result of [`process_frame`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameUpdate {
    pub overlap: f64,
    pub fused: bool,
    pub new_keyframe: bool,
}

/// Share of keyframe pixels whose argmax-depth point projects inside a
/// camera at `frame_from_kf`.
pub fn overlap_fraction(vol: &ProbabilityVolume, frame_from_kf: &Pose, intrinsics: &Intrinsics) -> Result<f64> {
    check_dims("intrinsics", vol.dims(), intrinsics.dims())?;
    let depth = vol.argmax_depth();
    let (w, h) = vol.dims();
    let (max_u, max_v) = ((w - 1) as f64, (h - 1) as f64);
    let mut inside = 0usize;
    for y in 0..h {
        for x in 0..w {
            let p = frame_from_kf.transform(&intrinsics.backproject(x as f64, y as f64, depth.get(x, y)));
            if let Some((u, v, _)) = intrinsics.project_checked(&p) {
                if (-EDGE_SLACK..=max_u + EDGE_SLACK).contains(&u) && (-EDGE_SLACK..=max_v + EDGE_SLACK).contains(&v) {
                    inside += 1;
                }
            }
        }
    }
    Ok(inside as f64 / (w * h) as f64)
}

/// Fuses `frame` into the keyframe and reports whether it should become
/// the next keyframe.
pub fn process_frame(
    state: &mut KeyframeState,
    frame: &Frame,
    intrinsics: &Intrinsics,
    config: &PipelineConfig,
) -> Result<FrameUpdate> {
    let reference = normalize_image(&frame.rgb);
    check_dims("frame", state.image.dims(), reference.dims())?;
    let ref_from_kf = relative_pose(&state.pose, &frame.pose);
    let fuse_allowed = config.max_refs.is_none_or(|cap| state.reference_count < cap);
    if fuse_allowed {
        let mut cost = PhotoCostVolume::new(state.image.width(), state.image.height(), state.fused.binning());
        cost.accumulate(&state.image, &reference, &ref_from_kf, intrinsics)?;
        let photo = cost.to_probability(config.conversion);
        state.fused.fuse_in_place(&photo)?;
        if config.mode == FusionMode::PhotometricOnly {
            state
                .ablation
                .as_mut()
                .expect("photometric-only keeps its own volume")
                .fuse_in_place(&photo)?;
        }
        state.cost.add(&cost)?;
        state.reference_count += 1;
    }
    let overlap = overlap_fraction(&state.fused, &ref_from_kf, intrinsics)?;
    Ok(FrameUpdate {
        overlap,
        fused: fuse_allowed,
        new_keyframe: overlap < config.overlap_threshold,
    })
}

/// Prior, normals and occlusion mask for a keyframe, from the configured
/// sources.
#[derive(Debug, Clone)]
pub struct KeyframeInputs {
    pub prior: ProbabilityVolume,
    pub normals: NormalMap,
    pub mask: OcclusionMask,
}

fn gt_for<'a>(frame: &'a Frame, what: &str) -> Result<&'a DepthMap> {
    frame.gt_depth.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "{what} derived from ground truth, but frame {} has no depth",
            frame.name
        ))
    })
}

pub fn keyframe_inputs(frame: &Frame, intrinsics: &Intrinsics, config: &PipelineConfig) -> Result<KeyframeInputs> {
    let (w, h) = intrinsics.dims();
    let binning = &config.binning;
    let prior = match &config.prior {
        PriorSource::Uniform => ProbabilityVolume::uniform(w, h, binning),
        PriorSource::Synthetic(model) => {
            let model = PriorModel {
                seed: model.seed.wrapping_add(frame.index as u64),
                ..model.clone()
            };
            synth_prior(gt_for(frame, "prior")?, &model, binning)?
        }
        PriorSource::File(template) => {
            let vol = dataset_io::load_prior(resolve_template(template, frame.index, &frame.name))?;
            check_dims("prior", (w, h), vol.dims())?;
            if vol.binning() != binning {
                return Err(Error::DimensionMismatch(format!(
                    "prior binning {}..{} m x {} differs from configured {}..{} m x {}",
                    vol.binning().d_min(),
                    vol.binning().d_max(),
                    vol.k_count(),
                    binning.d_min(),
                    binning.d_max(),
                    binning.k_count()
                )));
            }
            vol
        }
    };
    let normals = if config.solver.regularizer != RegularizerKind::Normals {
        NormalMap::filled(w, h, nalgebra::Vector3::zeros())
    } else {
        match &config.normals {
            NormalsSource::FromGtDepth => regularizer::normals_from_depth(gt_for(frame, "normals")?, intrinsics),
            NormalsSource::File(template) => {
                let n = dataset_io::load_normals(resolve_template(template, frame.index, &frame.name))?;
                check_dims("normals", (w, h), n.dims())?;
                n
            }
        }
    };
    let boundary: Option<BoundaryProbMap> = match &config.boundary {
        BoundarySource::None => None,
        BoundarySource::FromGtDepth => Some(regularizer::boundary_prob_from_depth(
            gt_for(frame, "boundary")?,
            GT_BOUNDARY_JUMP,
        )),
        BoundarySource::File(template) => {
            let b = dataset_io::load_boundary(resolve_template(template, frame.index, &frame.name))?;
            check_dims("boundary", (w, h), b.dims())?;
            Some(b)
        }
    };
    let mask = match boundary {
        Some(b) => regularizer::mask_from_boundary_prob(&b, config.boundary_threshold),
        None => OcclusionMask::all_ones(w, h),
    };
    Ok(KeyframeInputs { prior, normals, mask })
}

/// Starts a keyframe at `frame`. With `previous` set (and warping
/// enabled) the old keyframe's volumes are propagated into the new view.
pub fn create_keyframe(
    frame: &Frame,
    intrinsics: &Intrinsics,
    config: &PipelineConfig,
    previous: Option<&KeyframeState>,
) -> Result<KeyframeState> {
    let (w, h) = intrinsics.dims();
    let image = normalize_image(&frame.rgb);
    check_dims("frame", (w, h), image.dims())?;
    let KeyframeInputs { prior, normals, mask } = keyframe_inputs(frame, intrinsics, config)?;
    let uniform = ProbabilityVolume::uniform(w, h, &config.binning);
    let mode_prior = match config.mode {
        FusionMode::PhotometricOnly => &uniform,
        _ => &prior,
    };

    let carried = previous.filter(|_| config.warp);
    let (fused, ablation) = match carried {
        Some(old) => {
            let new_from_old = relative_pose(&old.pose, &frame.pose);
            let fused = propagate_keyframe(&old.fused, &prior, &new_from_old, intrinsics)?;
            let ablation = match &old.ablation {
                Some(old_ablation) => Some(propagate_keyframe(old_ablation, mode_prior, &new_from_old, intrinsics)?),
                None => None,
            };
            (fused, ablation)
        }
        None => (
            prior.clone(),
            (config.mode != FusionMode::Fused).then(|| mode_prior.clone()),
        ),
    };
    Ok(KeyframeState {
        frame_index: frame.index,
        name: frame.name.clone(),
        image,
        color: frame.rgb.clone(),
        pose: frame.pose,
        gt_depth: frame.gt_depth.clone(),
        fused,
        ablation,
        cost: PhotoCostVolume::new(w, h, &config.binning),
        normals,
        mask,
        reference_count: 0,
    })
}

#[derive(Debug, Clone)]
pub struct KeyframeResult {
    pub frame_index: usize,
    pub name: String,
    pub pose: Pose,
    pub depth: DepthMap,
    pub report: Option<EvalReport>,
    pub diagnostics: SolverDiagnostics,
    pub reference_count: usize,
}

#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub keyframes: Vec<KeyframeResult>,
    /// Metrics pooled over every evaluated keyframe pixel.
    pub pooled: Option<EvalReport>,
}

impl SequenceResult {
    /// Per-keyframe metrics plus the pooled row.
    pub fn table(&self, title: &str, sequence: &str) -> ReportTable {
        let mut table = ReportTable::new(title);
        for kf in &self.keyframes {
            if let Some(report) = &kf.report {
                table.push(sequence, format!("keyframe {}", kf.name), *report);
            }
        }
        if let Some(pooled) = &self.pooled {
            table.push(sequence, "all keyframes", *pooled);
        }
        table
    }
}

/// Extracts depth for a finished keyframe and scores it against ground
/// truth when available.
pub fn finalize_keyframe(state: &KeyframeState, intrinsics: &Intrinsics, config: &PipelineConfig) -> Result<KeyframeResult> {
    let (depth, diagnostics) = extract_depth(
        state.volume(),
        &state.normals,
        &state.mask,
        intrinsics,
        &config.solver_config(),
    )?;
    let report = match &state.gt_depth {
        Some(gt) if gt.valid_count() > 0 => Some(crate::metrics::evaluate(&depth, gt)?),
        _ => None,
    };
    log::info!(
        "keyframe {} ({} reference frames): cost {:.4e} -> {:.4e} in {} iterations",
        state.name,
        state.reference_count,
        diagnostics.initial_cost(),
        diagnostics.final_cost(),
        diagnostics.iterations
    );
    Ok(KeyframeResult {
        frame_index: state.frame_index,
        name: state.name.clone(),
        pose: state.pose,
        depth,
        report,
        diagnostics,
        reference_count: state.reference_count,
    })
}

/// Runs the whole pipeline over `source`.
pub fn run_frames(source: &dyn FrameSource, config: &PipelineConfig) -> Result<SequenceResult> {
    config.validate()?;
    if source.is_empty() {
        return Err(Error::Config("sequence has no frames".into()));
    }
    let intrinsics = source.intrinsics();
    check_dims("working size", (config.width, config.height), intrinsics.dims())?;

    let mut keyframes = Vec::new();
    let mut state = create_keyframe(&source.frame(0)?, intrinsics, config, None)?;
    for index in 1..source.len() {
        let frame = source.frame(index)?;
        let update = process_frame(&mut state, &frame, intrinsics, config)?;
        log::debug!(
            "frame {} overlap {:.3}{}",
            frame.name,
            update.overlap,
            if update.new_keyframe { " -> new keyframe" } else { "" }
        );
        if update.new_keyframe {
            keyframes.push(finalize_keyframe(&state, intrinsics, config)?);
            state = create_keyframe(&frame, intrinsics, config, Some(&state))?;
        }
    }
    keyframes.push(finalize_keyframe(&state, intrinsics, config)?);

    let mut acc = ErrorAccumulator::default();
    let mut any = false;
    for kf in &keyframes {
        if kf.report.is_some() {
            let gt = source.frame(kf.frame_index)?.gt_depth.expect("reported keyframes have depth");
            acc.add(&kf.depth, &gt)?;
            any = true;
        }
    }
    let pooled = if any { Some(acc.report()?) } else { None };
    Ok(SequenceResult { keyframes, pooled })
}

/// Loads a TUM-layout sequence and runs the pipeline on it.
pub fn run_sequence(dir: impl AsRef<Path>, config: &PipelineConfig) -> Result<SequenceResult> {
    let source = TumSequence::open(dir, config.association_tolerance, config.width, config.height)?;
    run_frames(&source, config)
}

fn pooled_or_err(result: &SequenceResult) -> Result<EvalReport> {
    result
        .pooled
        .ok_or_else(|| Error::EmptyValidSet)
}

/// Network-only, photometric-only and fused rows for one sequence.
pub fn ablate_fusion(source: &dyn FrameSource, base: &PipelineConfig, sequence: &str) -> Result<ReportTable> {
    let mut table = ReportTable::new("Fusion ablation");
    for mode in FusionMode::ALL {
        let config = PipelineConfig { mode, ..base.clone() };
        table.push(sequence, mode.label(), pooled_or_err(&run_frames(source, &config)?)?);
    }
    Ok(table)
}

/// Labelled solver variants compared by the regulariser ablation.
pub fn regularizer_variants(base: &SolverConfig) -> Vec<(&'static str, SolverConfig)> {
    vec![
        (
            "No Optimisation",
            SolverConfig {
                max_iters: 0,
                ..base.clone()
            },
        ),
        (
            "Smoothing-Only",
            SolverConfig {
                regularizer: RegularizerKind::None,
                lambda: None,
                ..base.clone()
            },
        ),
        (
            "Total Variation",
            SolverConfig {
                regularizer: RegularizerKind::TotalVariation,
                lambda: None,
                ..base.clone()
            },
        ),
        (
            "Normals + Occlusions",
            SolverConfig {
                regularizer: RegularizerKind::Normals,
                lambda: None,
                ..base.clone()
            },
        ),
    ]
}

/// The regulariser rows for one sequence. Volumes are built once and only
/// the extraction differs between rows.
pub fn ablate_regularizers(source: &dyn FrameSource, base: &PipelineConfig, sequence: &str) -> Result<ReportTable> {
    let mut table = ReportTable::new("Regulariser ablation");
    for (label, solver) in regularizer_variants(&base.solver) {
        let config = PipelineConfig {
            solver,
            ..base.clone()
        };
        table.push(sequence, label, pooled_or_err(&run_frames(source, &config)?)?);
    }
    Ok(table)
}

/// Rows with keyframe propagation disabled and enabled.
pub fn ablate_warp(source: &dyn FrameSource, base: &PipelineConfig, sequence: &str) -> Result<ReportTable> {
    let mut table = ReportTable::new("Keyframe propagation ablation");
    for (label, warp) in [("No Warping", false), ("Warping", true)] {
        let config = PipelineConfig { warp, ..base.clone() };
        table.push(sequence, label, pooled_or_err(&run_frames(source, &config)?)?);
    }
    Ok(table)
}
