//! Quality/time tables over scenario grids.

use serde::{Deserialize, Serialize};

use super::{simulate_trials, SimError, SimScenario, Strategy, TrialSummary};

/// Which sequential and parallel round counts to compare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySet {
    pub cotalk_rounds: usize,
    pub parallel_rounds: usize,
}

impl Default for StrategySet {
    fn default() -> Self {
        StrategySet { cotalk_rounds: 2, parallel_rounds: 3 }
    }
}

impl StrategySet {
    pub fn strategies(&self) -> [Strategy; 3] {
        [
            Strategy::Single,
            Strategy::Parallel { m: self.parallel_rounds },
            Strategy::Cotalk { n: self.cotalk_rounds },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub scenario: usize,
    pub strategy: Strategy,
    pub covered_units: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub total_time_s: f64,
    #[serde(rename = "E")]
    pub efficiency: f64,
    pub speed_units_per_s: f64,
    pub duplication_pct: f64,
}

impl ParetoRow {
    fn from_summary(scenario: usize, s: &TrialSummary) -> Self {
        ParetoRow {
            scenario,
            strategy: s.strategy,
            covered_units: s.covered_units.mean,
            j: s.j.mean,
            total_time_s: s.total_time_s.mean,
            efficiency: s.efficiency.mean,
            speed_units_per_s: s.speed.mean,
            duplication_pct: s.duplication_pct.mean,
        }
    }

    /// At least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &ParetoRow) -> bool {
        self.j >= other.j && self.total_time_s <= other.total_time_s && (self.j > other.j || self.total_time_s < other.total_time_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoReport {
    pub rows: Vec<ParetoRow>,
    /// Scenarios where some strategy dominates the sequential one.
    pub cotalk_dominated: Vec<usize>,
}

/// Mean J, T and E per strategy for every scenario in `grid`.
pub fn pareto_sweep(grid: &[SimScenario], set: StrategySet, trials: usize) -> Result<ParetoReport, SimError> {
    let mut rows = Vec::new();
    let mut cotalk_dominated = Vec::new();
    for (i, scenario) in grid.iter().enumerate() {
        let cell: Vec<ParetoRow> = set
            .strategies()
            .iter()
            .map(|&s| simulate_trials(scenario, s, trials).map(|summary| ParetoRow::from_summary(i, &summary)))
            .collect::<Result<_, _>>()?;
        let cotalk = cell.iter().find(|r| matches!(r.strategy, Strategy::Cotalk { .. })).expect("set includes cotalk");
        if cell.iter().any(|r| r.dominates(cotalk)) {
            cotalk_dominated.push(i);
        }
        rows.extend(cell);
    }
    Ok(ParetoReport { rows, cotalk_dominated })
}

/// One cell of the speed and duplication comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedCell {
    pub words_per_unit: f64,
    pub cotalk_speed: f64,
    pub parallel_speed: f64,
    /// Sequential over parallel speed, both in units per second.
    pub speed_ratio: f64,
    pub cotalk_duplication_pct: f64,
    pub parallel_duplication_pct: f64,
    pub cotalk_units: f64,
    pub parallel_units: f64,
}

/// Whole words per unit from 2 to 8.
pub fn words_per_unit_grid() -> Vec<f64> {
    (2..=8).map(f64::from).collect()
}

/// Sequential vs parallel speed and duplication as words-per-unit varies.
pub fn speed_sweep(base: &SimScenario, words_per_unit: &[f64], set: StrategySet, trials: usize) -> Result<Vec<SpeedCell>, SimError> {
    words_per_unit
        .iter()
        .map(|&w| {
            let scenario = SimScenario { words_per_unit: w, ..base.clone() };
            let cotalk = simulate_trials(&scenario, Strategy::Cotalk { n: set.cotalk_rounds }, trials)?;
            let parallel = simulate_trials(&scenario, Strategy::Parallel { m: set.parallel_rounds }, trials)?;
            Ok(SpeedCell {
                words_per_unit: w,
                cotalk_speed: cotalk.speed.mean,
                parallel_speed: parallel.speed.mean,
                speed_ratio: cotalk.speed.mean / parallel.speed.mean,
                cotalk_duplication_pct: cotalk.duplication_pct.mean,
                parallel_duplication_pct: parallel.duplication_pct.mean,
                cotalk_units: cotalk.covered_units.mean,
                parallel_units: parallel.covered_units.mean,
            })
        })
        .collect()
}
