//! Deterministic strategy times from unit counts, and the parallel minus
//! sequential time gap.

use serde::{Deserialize, Serialize};

use super::{invalid, seconds, SimError, SimScenario, Strategy};

/// `T = t_observe + c_1 w / v_out`.
pub fn single_time(scenario: &SimScenario) -> f64 {
    cotalk_time(scenario, 1)
}

/// `T = m t_observe + m c_1 w / v_out`: every parallel annotator has the first-round ability.
pub fn parallel_time(scenario: &SimScenario, m: usize) -> f64 {
    let per_round = scenario.t_observe_image + seconds(scenario.words(scenario.capacity(1)), scenario.v_out());
    m as f64 * per_round
}

/// `T = n t_observe + sum_k (|merged_{k-1}| / v_read + |Y_k| / v_out)`, with
/// `|Y_k| = min(c_k, remaining) * w` and no reading in round 1.
pub fn cotalk_time(scenario: &SimScenario, n: usize) -> f64 {
    let mut covered = 0usize;
    let mut total = 0.0;
    for k in 1..=n {
        let read = if k >= 2 { seconds(scenario.words(covered), scenario.v_read) } else { 0.0 };
        let take = scenario.capacity(k).min(scenario.n_units - covered);
        total += scenario.t_observe_image + read + seconds(scenario.words(take), scenario.v_out());
        covered += take;
    }
    total
}

pub fn strategy_time(scenario: &SimScenario, strategy: Strategy) -> f64 {
    match strategy {
        Strategy::Single => single_time(scenario),
        Strategy::Parallel { m } => parallel_time(scenario, m),
        Strategy::Cotalk { n } => cotalk_time(scenario, n),
    }
}

/// A condition under which a positive gap is no longer guaranteed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "premise", rename_all = "snake_case")]
pub enum PremiseViolation {
    CapacityNotDiminishing { round: usize, previous: usize, next: usize },
    ReadNotFasterThanOutput { v_read: f64, v_out: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaT {
    /// `T_parallel(m) - T_cotalk(n)`.
    pub seconds: f64,
    pub t_parallel_s: f64,
    pub t_cotalk_s: f64,
    pub violations: Vec<PremiseViolation>,
}

impl DeltaT {
    pub fn premise_holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Time gap between `m` parallel and `n` sequential rounds. Premise
/// violations are reported alongside the value rather than refused.
pub fn delta_t(scenario: &SimScenario, n: usize, m: usize) -> Result<DeltaT, SimError> {
    scenario.validate()?;
    if n < 2 || m <= n {
        return Err(invalid(format!("need m > n >= 2, got n = {n}, m = {m}")));
    }
    let mut violations = Vec::new();
    for round in 1..n {
        let (previous, next) = (scenario.capacity(round), scenario.capacity(round + 1));
        if next >= previous {
            violations.push(PremiseViolation::CapacityNotDiminishing { round, previous, next });
        }
    }
    if scenario.v_read <= scenario.v_out() {
        violations.push(PremiseViolation::ReadNotFasterThanOutput { v_read: scenario.v_read, v_out: scenario.v_out() });
    }
    let t_parallel_s = parallel_time(scenario, m);
    let t_cotalk_s = cotalk_time(scenario, n);
    Ok(DeltaT { seconds: t_parallel_s - t_cotalk_s, t_parallel_s, t_cotalk_s, violations })
}
