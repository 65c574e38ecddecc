//! Shared fixtures for the stage benchmarks.

use probfuse::synth::{default_intrinsics, render_sequence, RenderedFrame, Scene, Trajectory};
use probfuse::{synth_prior, DepthBinning, Intrinsics, PriorModel, ProbabilityVolume};

pub struct Fixture {
    pub intrinsics: Intrinsics,
    pub binning: DepthBinning,
    pub frames: Vec<RenderedFrame>,
    pub prior: ProbabilityVolume,
}

/// Two rendered frames of the default scene at 256×192 and a 64-bin prior
/// for the first one.
pub fn fixture() -> Fixture {
    let intrinsics = default_intrinsics();
    let binning = DepthBinning::default();
    let frames = render_sequence(&Scene::default(), &Trajectory::sweep(2), &intrinsics);
    let prior = synth_prior(&frames[0].depth, &PriorModel::default(), &binning).expect("valid prior model");
    Fixture {
        intrinsics,
        binning,
        frames,
        prior,
    }
}
