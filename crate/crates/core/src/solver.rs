//! Depth extraction: gradient descent on
//! `c(d) = Σ_i −ln f_i(d_i) + λ·E_reg(d)`, where `f_i` is the KDE-smoothed
//! distribution of pixel `i`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{check_dims, Error, Result};
use crate::geometry::Intrinsics;
use crate::kde::{self, SmoothedRay};
use crate::maps::{DepthMap, NormalMap, OcclusionMask};
use crate::regularizer;
use crate::volume::ProbabilityVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerKind {
    None,
    TotalVariation,
    Normals,
}

impl RegularizerKind {
    pub fn default_lambda(self) -> f64 {
        match self {
            RegularizerKind::None => 0.0,
            RegularizerKind::TotalVariation => 1e2,
            RegularizerKind::Normals => 1e7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Argmax,
    Expected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Step size for the normal regulariser and for unregularised descent.
    pub step_size: f64,
    /// Step size used with the total-variation regulariser.
    pub tv_step_size: f64,
    /// Regularisation weight; `None` picks the regulariser's default.
    pub lambda: Option<f64>,
    pub regularizer: RegularizerKind,
    pub init: Init,
    /// Stop once an accepted step lowers the cost by less than this
    /// fraction of its magnitude.
    pub stop_tol: f64,
    /// KDE bandwidth in metres.
    pub sigma: f64,
    /// Halve the step whenever it would increase the cost. Disable for a
    /// plain fixed-step descent.
    pub backtracking: bool,
    /// Evaluate the unary term on the rayon pool.
    pub parallel: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            step_size: 0.2,
            tv_step_size: 0.05,
            lambda: None,
            regularizer: RegularizerKind::Normals,
            init: Init::Argmax,
            stop_tol: 1e-6,
            sigma: kde::DEFAULT_SIGMA,
            backtracking: true,
            parallel: false,
        }
    }
}

impl SolverConfig {
    pub fn with_regularizer(regularizer: RegularizerKind) -> Self {
        Self {
            regularizer,
            ..Self::default()
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| self.regularizer.default_lambda())
    }

    pub fn effective_step(&self) -> f64 {
        match self.regularizer {
            RegularizerKind::TotalVariation => self.tv_step_size,
            _ => self.step_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.step_size > 0.0
            && self.tv_step_size > 0.0
            && self.stop_tol >= 0.0
            && self.sigma > 0.0
            && self.lambda.is_none_or(|l| l >= 0.0 && l.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid solver configuration {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    RelativeDecrease,
    StepUnderflow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    /// Cost at the initialisation followed by the cost after every
    /// accepted step.
    pub cost_trace: Vec<f64>,
    pub final_grad_norm: f64,
    pub rejected_steps: usize,
    pub final_step: f64,
    pub stop_reason: StopReason,
}

impl SolverDiagnostics {
    pub fn initial_cost(&self) -> f64 {
        self.cost_trace[0]
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().expect("trace holds the initial cost")
    }

    /// Plain-text table with one row per accepted iteration.
    pub fn cost_trace_table(&self) -> String {
        let mut out = String::from("iter  cost\n");
        for (i, c) in self.cost_trace.iter().enumerate() {
            let _ = writeln!(out, "{i:>4}  {c:.12e}");
        }
        out
    }
}

struct Problem<'a> {
    vol: &'a ProbabilityVolume,
    normals: &'a NormalMap,
    mask: &'a OcclusionMask,
    intrinsics: &'a Intrinsics,
    config: &'a SolverConfig,
    lambda: f64,
}

const PAR_CHUNK: usize = 4096;

impl Problem<'_> {
    /// Total cost at `depth`; writes the gradient into `grad`.
    fn evaluate(&self, depth: &[f64], grad: &mut [f64]) -> Result<f64> {
        let centers = self.vol.binning().midpoints();
        let k = self.vol.k_count();
        let sigma = self.config.sigma;
        let unary_chunk = |offset: usize, d: &[f64], g: &mut [f64]| -> f64 {
            let mut sum = 0.0;
            for (j, (di, gi)) in d.iter().zip(g.iter_mut()).enumerate() {
                let pixel = offset + j;
                let ray = SmoothedRay::new(&self.vol.probs()[pixel * k..(pixel + 1) * k], centers, sigma);
                let (c, dc) = ray.neg_log_pdf_and_grad_windowed(*di);
                sum += c;
                *gi = dc;
            }
            sum
        };
        let unary = if self.config.parallel {
            let partial: Vec<f64> = depth
                .par_chunks(PAR_CHUNK)
                .zip(grad.par_chunks_mut(PAR_CHUNK))
                .enumerate()
                .map(|(c, (d, g))| unary_chunk(c * PAR_CHUNK, d, g))
                .collect();
            partial.iter().sum()
        } else {
            unary_chunk(0, depth, grad)
        };

        let reg = if self.lambda == 0.0 {
            0.0
        } else {
            match self.config.regularizer {
                RegularizerKind::None => 0.0,
                RegularizerKind::TotalVariation => regularizer::tv_energy_into(
                    depth,
                    self.vol.width(),
                    self.vol.height(),
                    self.lambda,
                    grad,
                ),
                RegularizerKind::Normals => regularizer::normal_energy_into(
                    depth,
                    self.normals,
                    self.mask,
                    self.intrinsics,
                    self.lambda,
                    grad,
                ),
            }
        };
        let total = unary + self.lambda * reg;
        if !total.is_finite() {
            let w = self.vol.width();
            let bad = grad
                .iter()
                .zip(depth)
                .position(|(g, d)| !g.is_finite() || !d.is_finite())
                .unwrap_or(0);
            return Err(Error::NonFiniteCost {
                x: bad % w,
                y: bad / w,
            });
        }
        Ok(total)
    }
}

fn check_problem(
    vol: &ProbabilityVolume,
    normals: &NormalMap,
    mask: &OcclusionMask,
    intrinsics: &Intrinsics,
) -> Result<()> {
    check_dims("normals", vol.dims(), normals.dims())?;
    check_dims("occlusion mask", vol.dims(), mask.dims())?;
    check_dims("intrinsics", vol.dims(), intrinsics.dims())
}

/// Total cost `c_f(d) + λ·E_reg(d)` for the configured regulariser.
pub fn total_cost(
    depth: &DepthMap,
    vol: &ProbabilityVolume,
    normals: &NormalMap,
    mask: &OcclusionMask,
    intrinsics: &Intrinsics,
    config: &SolverConfig,
) -> Result<f64> {
    check_problem(vol, normals, mask, intrinsics)?;
    check_dims("depth", vol.dims(), depth.dims())?;
    let problem = Problem {
        vol,
        normals,
        mask,
        intrinsics,
        config,
        lambda: config.lambda(),
    };
    let mut grad = vec![0.0; depth.data().len()];
    problem.evaluate(depth.data(), &mut grad)
}

const MAX_HALVINGS: usize = 80;

/// Extracts a depth map from `vol` by gradient descent.
pub fn extract_depth(
    vol: &ProbabilityVolume,
    normals: &NormalMap,
    mask: &OcclusionMask,
    intrinsics: &Intrinsics,
    config: &SolverConfig,
) -> Result<(DepthMap, SolverDiagnostics)> {
    config.validate()?;
    check_problem(vol, normals, mask, intrinsics)?;
    let problem = Problem {
        vol,
        normals,
        mask,
        intrinsics,
        config,
        lambda: config.lambda(),
    };
    let binning = vol.binning();
    let (lo, hi) = (binning.d_min(), binning.d_max());

    let init = match config.init {
        Init::Argmax => vol.argmax_depth(),
        Init::Expected => vol.expected_depth(),
    };
    let mut depth = init.into_data();
    depth.iter_mut().for_each(|d| *d = d.clamp(lo, hi));

    let n = depth.len();
    let mut grad = vec![0.0; n];
    let mut cost = problem.evaluate(&depth, &mut grad)?;
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];
    let mut cost_trace = vec![cost];
    let mut step = config.effective_step();
    let mut rejected = 0;
    let mut iterations = 0;
    let mut stop_reason = StopReason::MaxIterations;

    'descent: while iterations < config.max_iters {
        let mut halvings = 0;
        let trial_cost = loop {
            for ((t, d), g) in trial.iter_mut().zip(&depth).zip(&grad) {
                *t = (d - step * g).clamp(lo, hi);
            }
            let c = problem.evaluate(&trial, &mut trial_grad)?;
            if !config.backtracking || c <= cost {
                break c;
            }
            rejected += 1;
            halvings += 1;
            step *= 0.5;
            if halvings >= MAX_HALVINGS {
                stop_reason = StopReason::StepUnderflow;
                break 'descent;
            }
        };
        let decrease = (cost - trial_cost) / cost.abs().max(f64::MIN_POSITIVE);
        std::mem::swap(&mut depth, &mut trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        cost = trial_cost;
        cost_trace.push(cost);
        iterations += 1;
        if decrease < config.stop_tol {
            stop_reason = StopReason::RelativeDecrease;
            break;
        }
    }

    let final_grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let map = DepthMap::new(vol.width(), vol.height(), depth).expect("dimensions agree");
    Ok((
        map,
        SolverDiagnostics {
            iterations,
            cost_trace,
            final_grad_norm,
            rejected_steps: rejected,
            final_step: step,
            stop_reason,
        },
    ))
}
