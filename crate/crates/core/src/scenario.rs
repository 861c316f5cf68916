//! Departure-time scenarios for plugged-in EVs.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::synth::lognormal_with_mean;
use crate::ingest::ArrivalBlockStats;
use crate::units::{SLOTS_PER_DAY, SLOT_MINUTES};

/// Default number of sampled departure candidates per EV.
pub const DEFAULT_SCENARIOS: usize = 5;

/// Departure assumed when every sampled candidate has passed.
pub const FALLBACK_DEPARTURE_SLOT: usize = SLOTS_PER_DAY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    /// Exclusive end of availability, in `(arrival_slot, 96]`.
    pub departure_slot: usize,
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepartureScenarioSet {
    pub ev_ref: String,
    pub arrival_slot: usize,
    /// Sorted by departure slot, no duplicates.
    pub candidates: Vec<Candidate>,
}

impl DepartureScenarioSet {
    /// A set of active candidates built from arbitrary departure slots.
    pub fn new(ev_ref: impl Into<String>, arrival_slot: usize, departures: &[usize]) -> Self {
        let mut slots: Vec<usize> = departures.to_vec();
        slots.sort_unstable();
        slots.dedup();
        Self {
            ev_ref: ev_ref.into(),
            arrival_slot,
            candidates: slots
                .into_iter()
                .map(|departure_slot| Candidate {
                    departure_slot,
                    active: true,
                })
                .collect(),
        }
    }

    /// Only the end-of-day candidate, used for EVs carried over midnight.
    pub fn fallback(ev_ref: impl Into<String>, arrival_slot: usize) -> Self {
        Self::new(ev_ref, arrival_slot, &[FALLBACK_DEPARTURE_SLOT])
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.candidates
            .iter()
            .filter(|c| c.active)
            .map(|c| c.departure_slot)
    }

    pub fn active_count(&self) -> usize {
        self.candidates.iter().filter(|c| c.active).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.active_count() == 0 {
            return Err(Error::Contract(format!("{}: no active scenario", self.ev_ref)));
        }
        for w in self.candidates.windows(2) {
            if w[0].departure_slot >= w[1].departure_slot {
                return Err(Error::Contract(format!("{}: candidates not sorted", self.ev_ref)));
            }
        }
        for c in &self.candidates {
            if c.departure_slot <= self.arrival_slot || c.departure_slot > SLOTS_PER_DAY {
                return Err(Error::Contract(format!(
                    "{}: departure {} outside ({}, 96]",
                    self.ev_ref, c.departure_slot, self.arrival_slot
                )));
            }
        }
        Ok(())
    }
}

/// Stay-duration law used for both synthetic traces and scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StayDistribution {
    LogNormal { mean_min: f64, cv: f64 },
    Point { minutes: f64 },
}

impl StayDistribution {
    pub fn from_block(stats: &ArrivalBlockStats, cv: f64) -> Self {
        if cv > 0.0 {
            Self::LogNormal {
                mean_min: stats.mean_stay_min,
                cv,
            }
        } else {
            Self::Point {
                minutes: stats.mean_stay_min,
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::LogNormal { mean_min, cv } => lognormal_with_mean(mean_min, cv).sample(rng),
            Self::Point { minutes } => minutes,
        }
    }
}

/// Candidate departure for a stay of `minutes` starting at `arrival_slot`:
/// rounded up to the slot grid, at least one slot, clipped to end of day.
pub fn departure_slot_for_stay(arrival_slot: usize, minutes: f64) -> usize {
    let slots = ((minutes / SLOT_MINUTES as f64).ceil() as usize).max(1);
    (arrival_slot + slots).min(SLOTS_PER_DAY)
}

pub fn generate_scenarios<R: Rng + ?Sized>(
    ev_ref: impl Into<String>,
    arrival_slot: usize,
    dist: &StayDistribution,
    n: usize,
    rng: &mut R,
) -> DepartureScenarioSet {
    let departures: Vec<usize> = (0..n.max(1))
        .map(|_| departure_slot_for_stay(arrival_slot, dist.sample(rng)))
        .collect();
    DepartureScenarioSet::new(ev_ref, arrival_slot, &departures)
}

/// Deactivates candidates whose departure is at or before `current_slot`.
/// If none survive, the end-of-day fallback is activated.
pub fn prune(set: &DepartureScenarioSet, current_slot: usize) -> DepartureScenarioSet {
    let mut out = set.clone();
    for c in &mut out.candidates {
        if c.departure_slot <= current_slot {
            c.active = false;
        }
    }
    if out.active_count() == 0 {
        match out
            .candidates
            .iter_mut()
            .find(|c| c.departure_slot == FALLBACK_DEPARTURE_SLOT)
        {
            Some(c) => c.active = true,
            None => out.candidates.push(Candidate {
                departure_slot: FALLBACK_DEPARTURE_SLOT,
                active: true,
            }),
        }
    }
    out
}

/// `1/A` for each of the `A` active candidates, 0 for the rest.
pub fn scenario_weights(set: &DepartureScenarioSet) -> Result<Vec<f64>> {
    let a = set.active_count();
    if a == 0 {
        return Err(Error::Contract(format!("{}: no active scenario", set.ev_ref)));
    }
    let w = 1.0 / a as f64;
    Ok(set
        .candidates
        .iter()
        .map(|c| if c.active { w } else { 0.0 })
        .collect())
}

/// Half-open availability window `[start, end)` on the 96-slot day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityVector {
    pub start: usize,
    pub end: usize,
}

impl AvailabilityVector {
    pub fn contains(&self, t: usize) -> bool {
        (self.start..self.end).contains(&t)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..SLOTS_PER_DAY)
            .map(|t| if self.contains(t) { 1.0 } else { 0.0 })
            .collect()
    }
}

pub fn availability_vector(arrival_slot: usize, departure_slot: usize) -> Result<AvailabilityVector> {
    if departure_slot <= arrival_slot || departure_slot > SLOTS_PER_DAY {
        return Err(Error::Contract(format!(
            "availability [{arrival_slot}, {departure_slot}) is not a window of the day"
        )));
    }
    Ok(AvailabilityVector {
        start: arrival_slot,
        end: departure_slot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn actives(s: &DepartureScenarioSet) -> Vec<usize> {
        s.active().collect()
    }

    #[test]
    fn point_mass_gives_single_candidate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = generate_scenarios("a", 10, &StayDistribution::Point { minutes: 360.0 }, 1, &mut rng);
        assert_eq!(actives(&set), vec![34]);
        let set = generate_scenarios("a", 10, &StayDistribution::Point { minutes: 360.0 }, 5, &mut rng);
        assert_eq!(set.candidates.len(), 1, "duplicates merge");
    }

    #[test]
    fn same_seed_same_candidates() {
        let dist = StayDistribution::LogNormal {
            mean_min: 362.0,
            cv: 0.4,
        };
        let a = generate_scenarios("x", 33, &dist, 5, &mut ChaCha8Rng::seed_from_u64(9));
        let b = generate_scenarios("x", 33, &dist, 5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn monte_carlo_mean_stay() {
        // arrival at slot 0 so clipping at 96 never bites a 6 h stay
        let dist = StayDistribution::LogNormal {
            mean_min: 362.0,
            cv: 0.4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut total = 0.0;
        let mut count = 0.0;
        for _ in 0..10_000 {
            let departures: Vec<usize> = (0..5)
                .map(|_| departure_slot_for_stay(0, dist.sample(&mut rng)))
                .collect();
            total += departures.iter().map(|&d| d as f64 * 15.0).sum::<f64>();
            count += 5.0;
        }
        let mean = total / count;
        // ceil to the grid adds 7.5 min on average
        assert!((mean - 362.0).abs() / 362.0 < 0.05, "{mean}");
    }

    #[test]
    fn prune_examples() {
        let s = DepartureScenarioSet::new("e", 4, &[20, 40, 60]);
        assert_eq!(actives(&prune(&s, 40)), vec![60]);
        assert_eq!(prune(&s, 10), s);
        let s = DepartureScenarioSet::new("e", 4, &[20, 30]);
        assert_eq!(actives(&prune(&s, 35)), vec![FALLBACK_DEPARTURE_SLOT]);
        prune(&s, 35).validate().unwrap();
    }

    #[test]
    fn weight_examples() {
        let s = DepartureScenarioSet::new("e", 0, &[10, 20, 30, 40]);
        assert_eq!(scenario_weights(&s).unwrap(), vec![0.25; 4]);
        let s = prune(&DepartureScenarioSet::new("e", 0, &[10, 20, 30, 40, 50]), 45);
        assert_eq!(scenario_weights(&s).unwrap(), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        let mut s = DepartureScenarioSet::new("e", 0, &[10]);
        s.candidates[0].active = false;
        assert!(matches!(scenario_weights(&s), Err(Error::Contract(_))));
    }

    #[test]
    fn availability_examples() {
        assert_eq!(availability_vector(0, 96).unwrap().to_vec(), vec![1.0; 96]);
        let v = availability_vector(32, 56).unwrap().to_vec();
        assert_eq!(v.iter().sum::<f64>(), 24.0);
        assert_eq!(v.iter().position(|&x| x == 1.0), Some(32));
        let v = availability_vector(95, 96).unwrap().to_vec();
        assert_eq!(v[95], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 1.0);
        assert!(availability_vector(40, 40).is_err());
        assert!(availability_vector(50, 40).is_err());
        assert!(availability_vector(0, 97).is_err());
    }

    pub(crate) fn arb_set() -> impl Strategy<Value = DepartureScenarioSet> {
        (0usize..95).prop_flat_map(|arrival| {
            (
                Just(arrival),
                prop::collection::vec((arrival + 1)..=96, 1..8),
                prop::collection::vec(any::<bool>(), 8),
            )
                .prop_map(|(arrival, deps, flags)| {
                    let mut s = DepartureScenarioSet::new("p", arrival, &deps);
                    for (c, f) in s.candidates.iter_mut().zip(flags) {
                        c.active = f;
                    }
                    if s.active_count() == 0 {
                        s.candidates[0].active = true;
                    }
                    s
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn prune_is_idempotent(s in arb_set(), t in 0usize..96) {
            let once = prune(&s, t);
            prop_assert_eq!(prune(&once, t), once);
        }

        #[test]
        fn prune_is_monotone(s in arb_set(), t in 0usize..95) {
            let at_t = prune(&s, t);
            let next = prune(&at_t, t + 1);
            let before: Vec<usize> = at_t.active().collect();
            let fallback_fired = next.active().eq([FALLBACK_DEPARTURE_SLOT])
                && !before.contains(&FALLBACK_DEPARTURE_SLOT);
            if !fallback_fired {
                for d in next.active() {
                    prop_assert!(before.contains(&d));
                }
            }
            prop_assert!(next.active_count() >= 1);
            next.validate().unwrap();
        }

        #[test]
        fn weights_sum_to_one(s in arb_set(), t in 0usize..96) {
            let pruned = prune(&s, t);
            let w = scenario_weights(&pruned).unwrap();
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (wi, c) in w.iter().zip(&pruned.candidates) {
                prop_assert_eq!(*wi == 0.0, !c.active);
            }
        }
    }
}
