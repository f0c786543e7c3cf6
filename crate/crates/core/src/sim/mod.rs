//! Monte-Carlo model of single, parallel and sequential annotation over a
//! latent set of `n_units` semantic units.
//!
//! A sequential round samples from the units nobody has covered yet; a
//! parallel round samples from the whole set, so it can repeat earlier work.
//! Times follow `T = rounds * t_observe + sum_k (read_k + output_k)` with
//! words derived from unit counts, and the merger is taken to be lossless.

mod closed_form;
mod sweep;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{QualityObjective, QualityScore, QualityWeights, BITS_PER_WORD};

pub use closed_form::{cotalk_time, delta_t, parallel_time, single_time, strategy_time, DeltaT, PremiseViolation};
pub use sweep::{pareto_sweep, speed_sweep, words_per_unit_grid, ParetoReport, ParetoRow, StrategySet, SpeedCell};

/// Speaking rate in words per minute.
pub const V_TALK_WPM: f64 = 161.2;
/// Typing rate in words per minute.
pub const V_TYPE_WPM: f64 = 53.46;
/// Silent reading rate in words per minute.
pub const V_READ_WPM: f64 = 236.0;

pub const DEFAULT_N_UNITS: usize = 60;
pub const DEFAULT_CAPACITY: [usize; 2] = [30, 15];
pub const DEFAULT_DIMINISH_FACTOR: f64 = 0.5;
pub const DEFAULT_WORDS_PER_UNIT: f64 = 4.0;
pub const DEFAULT_T_OBSERVE_S: f64 = 20.0;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_TRIALS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

fn invalid(message: impl Into<String>) -> SimError {
    SimError::InvalidScenario(message.into())
}

/// How a parallel annotator picks units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum OverlapModel {
    /// `c_1` distinct units drawn uniformly from the whole set.
    Uniform,
    /// Each unit covered independently with probability `p`.
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputChannel {
    Speech,
    Typing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    pub n_units: usize,
    /// Units coverable in round k (`c_k`). Rounds past the list shrink by `diminish_factor`.
    pub annotator_capacity: Vec<usize>,
    pub diminish_factor: f64,
    pub words_per_unit: f64,
    pub v_talk: f64,
    pub v_type: f64,
    pub v_read: f64,
    pub t_observe_image: f64,
    pub parallel_overlap_model: OverlapModel,
    pub output_channel: OutputChannel,
    pub quality: QualityWeights,
    pub rng_seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            n_units: DEFAULT_N_UNITS,
            annotator_capacity: DEFAULT_CAPACITY.to_vec(),
            diminish_factor: DEFAULT_DIMINISH_FACTOR,
            words_per_unit: DEFAULT_WORDS_PER_UNIT,
            v_talk: V_TALK_WPM,
            v_type: V_TYPE_WPM,
            v_read: V_READ_WPM,
            t_observe_image: DEFAULT_T_OBSERVE_S,
            parallel_overlap_model: OverlapModel::Uniform,
            output_channel: OutputChannel::Speech,
            quality: QualityWeights::default(),
            rng_seed: DEFAULT_SEED,
        }
    }
}

fn positive(name: &str, value: f64) -> Result<(), SimError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive and finite, got {value}")))
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_units == 0 {
            return Err(invalid("n_units must be at least 1"));
        }
        let first = *self.annotator_capacity.first().ok_or_else(|| invalid("annotator_capacity is empty"))?;
        if first == 0 {
            return Err(invalid("first-round capacity must be at least 1"));
        }
        if first > self.n_units {
            return Err(invalid(format!("first-round capacity {first} exceeds n_units {}", self.n_units)));
        }
        if !(self.diminish_factor > 0.0 && self.diminish_factor <= 1.0) {
            return Err(invalid(format!("diminish_factor must be in (0, 1], got {}", self.diminish_factor)));
        }
        positive("words_per_unit", self.words_per_unit)?;
        positive("v_talk", self.v_talk)?;
        positive("v_type", self.v_type)?;
        positive("v_read", self.v_read)?;
        if !(self.t_observe_image.is_finite() && self.t_observe_image >= 0.0) {
            return Err(invalid(format!("t_observe_image must be finite and non-negative, got {}", self.t_observe_image)));
        }
        if let OverlapModel::Bernoulli { p } = self.parallel_overlap_model {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("overlap probability must be in [0, 1], got {p}")));
            }
        }
        QualityWeights::new(self.quality.beta, self.quality.gamma).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    /// `c_k` for 1-based round `k`.
    pub fn capacity(&self, k: usize) -> usize {
        let listed = &self.annotator_capacity;
        if k == 0 {
            return 0;
        }
        if k <= listed.len() {
            return listed[k - 1];
        }
        let mut c = *listed.last().unwrap_or(&0);
        for _ in listed.len()..k {
            c = (c as f64 * self.diminish_factor).floor() as usize;
        }
        c
    }

    /// Output rate for the configured channel, in words per minute.
    pub fn v_out(&self) -> f64 {
        match self.output_channel {
            OutputChannel::Speech => self.v_talk,
            OutputChannel::Typing => self.v_type,
        }
    }

    pub fn words(&self, units: usize) -> f64 {
        units as f64 * self.words_per_unit
    }
}

/// Seconds needed for `words` at `wpm` words per minute.
pub fn seconds(words: f64, wpm: f64) -> f64 {
    words / (wpm / 60.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum Strategy {
    Single,
    Parallel { m: usize },
    Cotalk { n: usize },
}

impl Strategy {
    pub fn rounds(&self) -> usize {
        match *self {
            Strategy::Single => 1,
            Strategy::Parallel { m } => m,
            Strategy::Cotalk { n } => n,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Strategy::Single => "single",
            Strategy::Parallel { .. } => "parallel",
            Strategy::Cotalk { .. } => "cotalk",
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.rounds() == 0 {
            return Err(invalid(format!("{self} needs at least one round")));
        }
        Ok(())
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Single => f.write_str("single"),
            Strategy::Parallel { m } => write!(f, "parallel({m})"),
            Strategy::Cotalk { n } => write!(f, "cotalk({n})"),
        }
    }
}

impl FromStr for Strategy {
    type Err = SimError;

    /// Accepts `single`, `parallel(3)`, `parallel:3`, `cotalk(2)`, `cotalk:2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "single" {
            return Ok(Strategy::Single);
        }
        let (name, count) = s
            .strip_suffix(')')
            .and_then(|rest| rest.split_once('('))
            .or_else(|| s.split_once(':'))
            .ok_or_else(|| invalid(format!("unknown strategy {s:?}")))?;
        let count: usize = count.trim().parse().map_err(|_| invalid(format!("bad round count in {s:?}")))?;
        let strategy = match name.trim() {
            "parallel" => Strategy::Parallel { m: count },
            "cotalk" => Strategy::Cotalk { n: count },
            other => return Err(invalid(format!("unknown strategy {other:?}"))),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub emitted_units: usize,
    pub new_units: usize,
    pub read_time_s: f64,
    pub output_time_s: f64,
    /// Share of emitted units already covered; absent in round 1.
    pub duplication_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub covered_units: usize,
    pub total_time_s: f64,
    pub duplication_pct: f64,
    pub quality: QualityScore,
    pub efficiency: f64,
    pub rounds: Vec<RoundOutcome>,
    /// Newly covered units per round.
    pub info_gain: Vec<f64>,
    /// Per latent unit: annotation bit minus ground-truth bit (0 covered, -1 missed).
    pub coverage_error: Vec<i8>,
}

impl SimOutcome {
    pub fn j(&self) -> f64 {
        self.quality.j
    }

    /// Covered units per second.
    pub fn speed(&self) -> f64 {
        self.covered_units as f64 / self.total_time_s
    }
}

/// The generator for one trial: the scenario seed selects the key, the trial the stream.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

pub fn simulate_strategy(scenario: &SimScenario, strategy: Strategy) -> Result<SimOutcome, SimError> {
    simulate_trial(scenario, strategy, 0)
}

pub fn simulate_trial(scenario: &SimScenario, strategy: Strategy, trial: u64) -> Result<SimOutcome, SimError> {
    scenario.validate()?;
    strategy.validate()?;
    run(scenario, strategy, &mut trial_rng(scenario.rng_seed, trial))
}

fn run(scenario: &SimScenario, strategy: Strategy, rng: &mut ChaCha8Rng) -> Result<SimOutcome, SimError> {
    let n = scenario.n_units;
    let mut covered = vec![false; n];
    let mut covered_count = 0usize;
    let mut rounds = Vec::with_capacity(strategy.rounds());
    let mut time = 0.0;

    for k in 1..=strategy.rounds() {
        let (picks, read_time_s) = match strategy {
            Strategy::Single | Strategy::Cotalk { .. } => {
                let residual: Vec<usize> = (0..n).filter(|&u| !covered[u]).collect();
                let take = scenario.capacity(k).min(residual.len());
                let picks: Vec<usize> = index::sample(rng, residual.len(), take).into_iter().map(|i| residual[i]).collect();
                let read = if k >= 2 { seconds(scenario.words(covered_count), scenario.v_read) } else { 0.0 };
                (picks, read)
            }
            Strategy::Parallel { .. } => {
                let picks = match scenario.parallel_overlap_model {
                    OverlapModel::Uniform => index::sample(rng, n, scenario.capacity(1)).into_vec(),
                    OverlapModel::Bernoulli { p } => (0..n).filter(|_| rng.random_bool(p)).collect(),
                };
                (picks, 0.0)
            }
        };
        let emitted_units = picks.len();
        let new_units = picks.iter().filter(|&&u| !covered[u]).count();
        for &u in &picks {
            covered[u] = true;
        }
        covered_count += new_units;
        let duplication_pct = (k >= 2).then(|| {
            if emitted_units == 0 {
                0.0
            } else {
                100.0 * (emitted_units - new_units) as f64 / emitted_units as f64
            }
        });
        let output_time_s = seconds(scenario.words(emitted_units), scenario.v_out());
        time += scenario.t_observe_image + read_time_s + output_time_s;
        rounds.push(RoundOutcome { emitted_units, new_units, read_time_s, output_time_s, duplication_pct });
    }

    if !(time > 0.0) {
        return Err(invalid("scenario produces zero total time"));
    }
    let dups: Vec<f64> = rounds.iter().filter_map(|r| r.duplication_pct).collect();
    let duplication_pct = if dups.is_empty() { 0.0 } else { dups.iter().sum::<f64>() / dups.len() as f64 };
    let objective = QualityObjective::new(scenario.quality);
    let bits = scenario.words(covered_count) * BITS_PER_WORD;
    let quality = objective.combine(covered_count as f64, bits, objective.intelligibility(""));
    Ok(SimOutcome {
        covered_units: covered_count,
        total_time_s: time,
        duplication_pct,
        efficiency: quality.j / time,
        quality,
        info_gain: rounds.iter().map(|r| r.new_units as f64).collect(),
        rounds,
        coverage_error: covered.iter().map(|&c| c as i8 - 1).collect(),
    })
}

pub fn info_gain_trace(scenario: &SimScenario, strategy: Strategy) -> Result<Vec<f64>, SimError> {
    Ok(simulate_strategy(scenario, strategy)?.info_gain)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for fewer than two values.
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: f64::NAN, std_dev: f64::NAN, min: f64::NAN, max: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_dev = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Stat { mean, std_dev, min, max }
    }

    /// Standard error of the mean over `n` samples.
    pub fn std_error(&self, n: usize) -> f64 {
        self.std_dev / (n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub strategy: Strategy,
    pub trials: usize,
    pub covered_units: Stat,
    pub total_time_s: Stat,
    pub duplication_pct: Stat,
    pub j: Stat,
    pub efficiency: Stat,
    pub speed: Stat,
    pub info_gain: Vec<Stat>,
}

/// Runs `trials` independent trials in parallel. Results do not depend on
/// thread count or scheduling.
pub fn simulate_trials(scenario: &SimScenario, strategy: Strategy, trials: usize) -> Result<TrialSummary, SimError> {
    scenario.validate()?;
    strategy.validate()?;
    if trials == 0 {
        return Err(invalid("trials must be at least 1"));
    }
    let outcomes: Vec<SimOutcome> = (0..trials as u64)
        .into_par_iter()
        .map(|t| run(scenario, strategy, &mut trial_rng(scenario.rng_seed, t)))
        .collect::<Result<_, _>>()?;
    let column = |f: &dyn Fn(&SimOutcome) -> f64| Stat::of(&outcomes.iter().map(f).collect::<Vec<_>>());
    let info_gain = (0..strategy.rounds()).map(|k| column(&|o| o.info_gain[k])).collect();
    Ok(TrialSummary {
        strategy,
        trials,
        covered_units: column(&|o| o.covered_units as f64),
        total_time_s: column(&|o| o.total_time_s),
        duplication_pct: column(&|o| o.duplication_pct),
        j: column(&|o| o.j()),
        efficiency: column(&|o| o.efficiency),
        speed: column(&|o| o.speed()),
        info_gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategy_parsing() {
        assert_eq!("cotalk(2)".parse::<Strategy>().unwrap(), Strategy::Cotalk { n: 2 });
        assert_eq!("parallel:3".parse::<Strategy>().unwrap(), Strategy::Parallel { m: 3 });
        assert_eq!("Single".parse::<Strategy>().unwrap(), Strategy::Single);
        assert!("parallel(0)".parse::<Strategy>().is_err());
        assert!("serial(2)".parse::<Strategy>().is_err());
    }

    #[test]
    fn capacity_extends_by_diminishing() {
        let s = SimScenario::default();
        assert_eq!((1..=5).map(|k| s.capacity(k)).collect::<Vec<_>>(), vec![30, 15, 7, 3, 1]);
    }

    #[test]
    fn cotalk_never_recovers_units() {
        let s = SimScenario::default();
        let out = simulate_strategy(&s, Strategy::Cotalk { n: 4 }).unwrap();
        assert_eq!(out.info_gain, vec![30.0, 15.0, 7.0, 3.0]);
        assert_eq!(out.duplication_pct, 0.0);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let s = SimScenario { annotator_capacity: vec![70], ..SimScenario::default() };
        assert!(s.validate().is_err());
        let s = SimScenario { v_read: 0.0, ..SimScenario::default() };
        assert!(s.validate().is_err());
    }

    #[test]
    fn same_seed_same_outcome() {
        let s = SimScenario::default();
        let a = simulate_trials(&s, Strategy::Parallel { m: 3 }, 50).unwrap();
        let b = simulate_trials(&s, Strategy::Parallel { m: 3 }, 50).unwrap();
        assert_eq!(a, b);
    }
}
