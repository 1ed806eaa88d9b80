//! The alternating compress / re-register loop.
//!
//! Each outer iteration compresses the current deformation of the input at
//! the scheduled budget (x-step), then re-estimates the flow that warps the
//! input onto that compressed image (T-step), warm-started from the previous
//! flow. The budget starts generous and tightens toward the target; once the
//! target has been used for a T-step, one last x-step at the target produces
//! the output pair.

use std::time::{SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};

use crate::codec::{compress_to_budget, CodecHandle, CodecKind, RateTarget};
use crate::dassd::dassd_with_hint;
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, flow_energy, FlowField, FlowParams, DEFAULT_LAMBDA};
use crate::image::{ssd, Image, MetricsReport};
use crate::warp::warp;
use crate::weights::{build_weight_map, WeightMap, DEFAULT_SIGMA};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_ITERATIONS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateMode {
    Ratio,
    Quality,
    Bpp,
}

impl RateMode {
    pub fn target(self, value: f64) -> RateTarget {
        match self {
            RateMode::Ratio => RateTarget::Ratio(value),
            RateMode::Quality => RateTarget::Quality(value),
            RateMode::Bpp => RateTarget::Bpp(value),
        }
    }

    pub fn of(target: &RateTarget) -> RateMode {
        match target {
            RateTarget::Ratio(_) => RateMode::Ratio,
            RateTarget::Quality(_) => RateMode::Quality,
            RateTarget::Bpp(_) => RateMode::Bpp,
        }
    }
}

/// Codec families with known schedule and regularization defaults.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodecPreset {
    /// Built-in global or subband thresholding.
    Thresholding,
    Jpeg,
    Jpeg2000,
    Webp,
    /// Quality index where lower is better.
    Bpg,
    /// Learned codecs driven by bits per pixel.
    Learned,
}

impl CodecPreset {
    pub fn alpha(self) -> f64 {
        match self {
            CodecPreset::Jpeg => 20.0,
            CodecPreset::Thresholding | CodecPreset::Jpeg2000 => 3.0,
            CodecPreset::Webp | CodecPreset::Bpg | CodecPreset::Learned => 6.0,
        }
    }

    /// Starting value and step magnitude of the gradual schedule.
    pub fn schedule_start(self) -> (RateMode, f64, f64) {
        match self {
            CodecPreset::Thresholding => (RateMode::Ratio, 5.0, 1.0),
            CodecPreset::Jpeg2000 => (RateMode::Ratio, 20.0, 5.0),
            CodecPreset::Jpeg | CodecPreset::Webp => (RateMode::Quality, 50.0, 1.0),
            CodecPreset::Bpg => (RateMode::Quality, 30.0, 1.0),
            CodecPreset::Learned => (RateMode::Bpp, 0.75, 0.125),
        }
    }

    /// Best guess when only the codec and the requested mode are known.
    pub fn infer(codec: &CodecHandle, mode: RateMode) -> CodecPreset {
        match (&codec.kind, mode) {
            (CodecKind::GlobalThreshold | CodecKind::SubbandThreshold, _) => CodecPreset::Thresholding,
            (CodecKind::External(_), RateMode::Ratio) => CodecPreset::Jpeg2000,
            (CodecKind::External(ext), RateMode::Quality) if !ext.higher_is_better => CodecPreset::Bpg,
            (CodecKind::External(_), RateMode::Quality) => CodecPreset::Webp,
            (CodecKind::External(_), RateMode::Bpp) => CodecPreset::Learned,
        }
    }
}

/// Budget sequence for the outer loop.
///
/// The value stays at `start` for `plateau` iterations, then moves toward
/// `target` by `step` once every `slow_period` iterations for
/// `slow_iterations` iterations, then by `step` every iteration. Values never
/// overshoot `target` and the sequence ends with the first iteration at it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSchedule {
    pub mode: RateMode,
    pub start: f64,
    pub target: f64,
    pub plateau: usize,
    pub slow_period: usize,
    pub slow_iterations: usize,
    /// Step magnitude; the direction is always toward `target`.
    pub step: f64,
}

impl RateSchedule {
    pub const PLATEAU: usize = 10;
    pub const SLOW_PERIOD: usize = 5;
    pub const SLOW_ITERATIONS: usize = 25;

    pub fn gradual(mode: RateMode, start: f64, step: f64, target: f64) -> Self {
        Self {
            mode,
            start,
            target,
            plateau: Self::PLATEAU,
            slow_period: Self::SLOW_PERIOD,
            slow_iterations: Self::SLOW_ITERATIONS,
            step,
        }
    }

    /// Gradual schedule with the preset's start and step.
    pub fn for_preset(preset: CodecPreset, target: RateTarget) -> Result<Self> {
        let (mode, start, step) = preset.schedule_start();
        if RateMode::of(&target) != mode {
            return Err(Error::Config(format!(
                "{preset:?} schedules run in {mode:?} mode, target is {:?}",
                RateMode::of(&target)
            )));
        }
        Ok(Self::gradual(mode, start, step, target.value()))
    }

    /// `iterations` outer iterations, all at the target.
    pub fn direct(target: RateTarget, iterations: usize) -> Self {
        Self {
            mode: RateMode::of(&target),
            start: target.value(),
            target: target.value(),
            plateau: iterations.max(1),
            slow_period: 1,
            slow_iterations: 0,
            step: 0.0,
        }
    }

    pub fn target_rate(&self) -> RateTarget {
        self.mode.target(self.target)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.start.is_finite() || !self.target.is_finite() || !(self.step >= 0.0) || !self.step.is_finite() {
            return Err(Error::Config("schedule values must be finite with a non-negative step".into()));
        }
        if self.slow_period == 0 {
            return Err(Error::Config("schedule slow period must be positive".into()));
        }
        if self.start != self.target && self.step == 0.0 {
            return Err(Error::Config("schedule never reaches its target (zero step)".into()));
        }
        Ok(())
    }

    /// The budget for every outer iteration, in order.
    pub fn values(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let dir = (self.target - self.start).signum();
        let mut current = self.start;
        let mut out = Vec::new();
        let advance = |current: &mut f64| {
            *current += dir * self.step;
            if (*current - self.target) * dir >= -1e-12 * self.target.abs().max(1.0) {
                *current = self.target;
            }
        };
        for _ in 0..self.plateau {
            out.push(current);
        }
        if current == self.target {
            return Ok(out);
        }
        for i in 0..self.slow_iterations {
            if i % self.slow_period == 0 {
                advance(&mut current);
            }
            out.push(current);
            if current == self.target {
                return Ok(out);
            }
        }
        while current != self.target {
            advance(&mut current);
            out.push(current);
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricWeights {
    /// The weight map used during optimization.
    #[default]
    Optimization,
    /// `w ≡ 1`.
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub codec: CodecHandle,
    pub schedule: RateSchedule,
    pub lambda: f64,
    pub alpha: f64,
    pub sigma: f64,
    pub flow: FlowParams,
    pub max_iterations: usize,
    pub metric_weights: MetricWeights,
}

impl RunConfig {
    /// Gradual schedule and regularization defaults for `preset`.
    pub fn with_preset(codec: CodecHandle, preset: CodecPreset, target: RateTarget) -> Result<Self> {
        Ok(Self {
            codec,
            schedule: RateSchedule::for_preset(preset, target)?,
            lambda: DEFAULT_LAMBDA,
            alpha: preset.alpha(),
            sigma: DEFAULT_SIGMA,
            flow: FlowParams::default(),
            max_iterations: DEFAULT_MAX_ITERATIONS,
            metric_weights: MetricWeights::default(),
        })
    }

    /// Gradual defaults with the preset inferred from the codec.
    pub fn gradual(codec: CodecHandle, target: RateTarget) -> Result<Self> {
        let preset = CodecPreset::infer(&codec, RateMode::of(&target));
        Self::with_preset(codec, preset, target)
    }

    pub fn direct(codec: CodecHandle, target: RateTarget, iterations: usize) -> Result<Self> {
        let mut cfg = Self::gradual(codec, target)?;
        cfg.schedule = RateSchedule::direct(target, iterations);
        Ok(cfg)
    }

    fn flow_params(&self) -> FlowParams {
        self.flow.clone().with_lambda(self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        self.codec.validate()?;
        self.schedule.validate()?;
        self.flow_params().validate()?;
        if !(self.alpha >= 0.0) || !(self.sigma > 0.0) {
            return Err(Error::Config("alpha must be non-negative and sigma positive".into()));
        }
        Ok(())
    }
}

/// One outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub budget: f64,
    pub achieved_rate: f64,
    /// `ssd(x, y)` for the compressed image of this iteration.
    pub ssd: f64,
    /// `ssd(x, T{y})` against the image that was compressed.
    pub ssd_to_deformed: f64,
    /// Flow energy with the incoming flow, before the T-step.
    pub energy_before: f64,
    /// Flow energy after the T-step.
    pub dassd: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub iterations: Vec<IterationRecord>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub deformed: Image,
    pub compressed: Image,
    pub flow: FlowField,
    pub weights: WeightMap,
    /// Metrics of `compressed` against the input.
    pub report: MetricsReport,
    /// `ssd(compressed, deformed)`.
    pub ssd_to_deformed: f64,
    pub trace: RunTrace,
}

fn metric_map(cfg: &RunConfig, w: &WeightMap) -> WeightMap {
    match cfg.metric_weights {
        MetricWeights::Optimization => w.clone(),
        MetricWeights::Constant => WeightMap::constant(w.width(), w.height()),
    }
}

pub fn run(y: &Image, cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let budgets = cfg.schedule.values()?;
    if budgets.len() > cfg.max_iterations {
        return Err(Error::Config(format!(
            "schedule needs {} iterations, limit is {}",
            budgets.len(),
            cfg.max_iterations
        )));
    }
    let params = cfg.flow_params();
    let w = build_weight_map(y, cfg.alpha, cfg.sigma)?;
    let mut flow = FlowField::zeros(y.width(), y.height());
    let mut trace = RunTrace::default();

    for (k, &budget) in budgets.iter().enumerate() {
        let deformed = warp(y, &flow)?;
        let x = compress_to_budget(&cfg.codec, &deformed, cfg.schedule.mode.target(budget))?;
        let before = flow_energy(y, &x.decoded, &flow, &w, cfg.lambda)?.total;
        flow = estimate_flow(y, &x.decoded, &w, &params, Some(&flow))?;
        let after = flow_energy(y, &x.decoded, &flow, &w, cfg.lambda)?.total;
        let record = IterationRecord {
            iteration: k,
            budget,
            achieved_rate: x.achieved_rate,
            ssd: ssd(&x.decoded, y)?,
            ssd_to_deformed: ssd(&x.decoded, &deformed)?,
            energy_before: before,
            dassd: after,
        };
        info!(
            "iter {k:3} budget {budget:.4} rate {:.5} ssd {:.5} dassd {:.5}",
            record.achieved_rate, record.ssd, record.dassd
        );
        trace.iterations.push(record);
    }

    let deformed = warp(y, &flow)?;
    let x = compress_to_budget(&cfg.codec, &deformed, cfg.schedule.target_rate())?;
    let metric = dassd_with_hint(&x.decoded, y, &metric_map(cfg, &w), &params, Some(&flow))?;
    let report = MetricsReport {
        ssd: metric.ssd,
        psnr: metric.psnr,
        dassd: metric.dassd,
        flow_penalty: metric.flow_penalty,
        achieved_rate: x.achieved_rate,
        iterations: trace.iterations.len(),
    };
    Ok(RunOutput {
        ssd_to_deformed: ssd(&x.decoded, &deformed)?,
        compressed: x.decoded,
        deformed,
        flow,
        weights: w,
        report,
        trace,
    })
}

#[derive(Clone, Debug)]
pub struct BaselineOutput {
    pub compressed: Image,
    pub report: MetricsReport,
}

/// Plain compression at `budget`, with DASSD measured under `w`.
pub fn baseline(
    y: &Image,
    codec: &CodecHandle,
    budget: RateTarget,
    w: &WeightMap,
    params: &FlowParams,
) -> Result<BaselineOutput> {
    let x = compress_to_budget(codec, y, budget)?;
    let metric = dassd_with_hint(&x.decoded, y, w, params, None)?;
    Ok(BaselineOutput {
        report: MetricsReport {
            ssd: metric.ssd,
            psnr: metric.psnr,
            dassd: metric.dassd,
            flow_penalty: metric.flow_penalty,
            achieved_rate: x.achieved_rate,
            iterations: 0,
        },
        compressed: x.decoded,
    })
}

/// Machine-readable summary of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Seconds since the Unix epoch; the only field that differs between
    /// identical runs.
    pub timestamp: u64,
    pub input: Option<String>,
    pub config: RunConfig,
    pub metrics: MetricsReport,
    pub ssd_to_deformed: f64,
    pub trace: RunTrace,
}

impl RunReport {
    pub fn new(cfg: &RunConfig, out: &RunOutput, input: Option<String>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            input,
            config: cfg.clone(),
            metrics: out.report.clone(),
            ssd_to_deformed: out.ssd_to_deformed,
            trace: out.trace.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thresholding_schedule_shape() {
        let s = RateSchedule::gradual(RateMode::Ratio, 5.0, 1.0, 40.0);
        let v = s.values().unwrap();
        assert!(v[..10].iter().all(|&b| b == 5.0));
        assert_eq!(&v[10..15], &[6.0; 5]);
        assert_eq!(&v[30..35], &[10.0; 5]);
        assert_eq!(v[35], 11.0);
        assert_eq!(*v.last().unwrap(), 40.0);
        assert_eq!(v.len(), 35 + 30);
    }

    #[test]
    fn reaching_target_early_stops_the_schedule() {
        let v = RateSchedule::gradual(RateMode::Ratio, 5.0, 1.0, 7.0).values().unwrap();
        assert_eq!(v.len(), 10 + 5 + 1);
        assert_eq!(*v.last().unwrap(), 7.0);
    }

    #[test]
    fn decreasing_schedules() {
        let v = RateSchedule::gradual(RateMode::Bpp, 0.75, 0.125, 0.1).values().unwrap();
        assert!(v.windows(2).all(|p| p[1] <= p[0]));
        assert_eq!(*v.last().unwrap(), 0.1);
        assert!(v.iter().all(|&b| b >= 0.1));
    }

    #[test]
    fn direct_schedule_is_flat() {
        let v = RateSchedule::direct(RateTarget::Ratio(40.0), 12).values().unwrap();
        assert_eq!(v, vec![40.0; 12]);
    }

    #[test]
    fn zero_step_with_distinct_target_is_rejected() {
        let s = RateSchedule::gradual(RateMode::Ratio, 5.0, 0.0, 8.0);
        assert!(matches!(s.values(), Err(Error::Config(_))));
    }

    #[test]
    fn presets() {
        assert_eq!(CodecPreset::Jpeg.alpha(), 20.0);
        assert_eq!(CodecPreset::Thresholding.alpha(), 3.0);
        assert_eq!(CodecPreset::Webp.alpha(), 6.0);
        let cfg = RunConfig::gradual(CodecHandle::subband_threshold(), RateTarget::Ratio(40.0)).unwrap();
        assert_eq!((cfg.alpha, cfg.lambda, cfg.sigma), (3.0, 65.0, 10.0));
        assert_eq!(cfg.schedule.start, 5.0);
        assert!(RunConfig::with_preset(
            CodecHandle::subband_threshold(),
            CodecPreset::Jpeg,
            RateTarget::Ratio(10.0)
        )
        .is_err());
    }

    #[test]
    fn schedule_longer_than_limit_is_config_error() {
        let y = Image::filled(16, 16, 1, 0.5).unwrap();
        let mut cfg = RunConfig::gradual(CodecHandle::global_threshold(), RateTarget::Ratio(40.0)).unwrap();
        cfg.max_iterations = 20;
        assert!(matches!(run(&y, &cfg), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn schedules_are_monotone_and_end_at_target(
            start in 0.5f64..60.0,
            target in 0.5f64..60.0,
            step in 0.05f64..7.0,
            plateau in 0usize..12,
            period in 1usize..7,
            slow in 0usize..30,
        ) {
            let s = RateSchedule { mode: RateMode::Ratio, start, target, plateau, slow_period: period, slow_iterations: slow, step };
            let v = s.values().unwrap();
            if !v.is_empty() {
                prop_assert_eq!(*v.last().unwrap(), target);
            }
            let dir = (target - start).signum();
            prop_assert!(v.windows(2).all(|p| (p[1] - p[0]) * dir >= 0.0));
            prop_assert!(v.iter().all(|&b| (b - target) * dir <= 0.0));
            prop_assert_eq!(v.iter().filter(|&&b| b == target).count(), if start == target { plateau } else { 1 });
        }
    }
}
