//! Finite possible-worlds belief states with conditioning, imaging, and
//! mixtures.
//!
//! This module is the exact oracle for the crate: conditioning corresponds to
//! belief revision (zero out worlds outside the event, renormalize), imaging
//! to belief update (transport each world's mass to its closest world inside
//! the event). All operations are pure functions on immutable values.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probability equality tolerance used throughout the finite oracle.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("probabilities must be nonnegative and sum to 1 (sum = {0})")]
    InvalidDistribution(f64),
    #[error("event has probability zero; conditioning is undefined")]
    ZeroProbabilityEvent,
    #[error("world {world:?} has positive probability but no closest-world assignment for the event")]
    MissingClosestWorld { world: String },
    #[error("closest world {closest:?} assigned to {world:?} lies outside the event")]
    ClosestOutsideEvent { world: String, closest: String },
    #[error("weights must be nonnegative and sum to 1 (sum = {0})")]
    WeightError(f64),
    #[error("states must share one world list")]
    WorldMismatch,
    #[error("unknown world {0:?}")]
    UnknownWorld(String),
    #[error("event member count and state world count are inconsistent")]
    EventMismatch,
}

/// A subset of the worlds of some [`FiniteBeliefState`], held as indices into
/// its world list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    members: BTreeSet<usize>,
}

impl Event {
    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        Event { members: indices.into_iter().collect() }
    }

    pub fn contains(&self, world: usize) -> bool {
        self.members.contains(&world)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// An explicit probability vector over named worlds, plus an optional
/// closest-world map used by imaging.
///
/// The closest-world map is keyed by `(world, event)`; worlds already inside
/// an event are their own closest world and need no entry.
#[derive(Debug, Clone)]
pub struct FiniteBeliefState {
    worlds: Vec<String>,
    probs: Vec<f64>,
    closest: HashMap<(usize, BTreeSet<usize>), usize>,
}

/// Serialized scenario consumed by the CLI `oracle` subcommand.
#[derive(Debug, Serialize, Deserialize)]
pub struct Scenario {
    pub worlds: Vec<String>,
    pub probs: Vec<f64>,
    /// Named events, each a list of world labels.
    pub events: HashMap<String, Vec<String>>,
    /// Per-event closest-world maps: event name -> {world -> closest world}.
    #[serde(default)]
    pub closest: HashMap<String, HashMap<String, String>>,
}

impl FiniteBeliefState {
    pub fn new(worlds: Vec<String>, probs: Vec<f64>) -> Result<Self, BeliefError> {
        if worlds.len() != probs.len() {
            return Err(BeliefError::EventMismatch);
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > PROB_TOL {
            return Err(BeliefError::InvalidDistribution(sum));
        }
        Ok(FiniteBeliefState { worlds, probs, closest: HashMap::new() })
    }

    pub fn from_probs(probs: Vec<f64>) -> Result<Self, BeliefError> {
        let worlds = (0..probs.len()).map(|i| format!("w{}", i + 1)).collect();
        Self::new(worlds, probs)
    }

    pub fn worlds(&self) -> &[String] {
        &self.worlds
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn world_index(&self, label: &str) -> Result<usize, BeliefError> {
        self.worlds
            .iter()
            .position(|w| w == label)
            .ok_or_else(|| BeliefError::UnknownWorld(label.to_string()))
    }

    pub fn event_from_labels(&self, labels: &[&str]) -> Result<Event, BeliefError> {
        let mut members = BTreeSet::new();
        for l in labels {
            members.insert(self.world_index(l)?);
        }
        Ok(Event { members })
    }

    /// Probability of an event.
    pub fn prob_of(&self, event: &Event) -> f64 {
        event.indices().map(|i| self.probs[i]).sum()
    }

    /// Registers `closest(world, event) = target`. The target must lie inside
    /// the event.
    pub fn set_closest(&mut self, world: usize, event: &Event, target: usize) -> Result<(), BeliefError> {
        if !event.contains(target) {
            return Err(BeliefError::ClosestOutsideEvent {
                world: self.worlds[world].clone(),
                closest: self.worlds[target].clone(),
            });
        }
        self.closest.insert((world, event.members.clone()), target);
        Ok(())
    }

    /// Derives closest-world assignments for `event` from a distance function,
    /// breaking ties by world order. The imaging rule assumes a unique closest
    /// world; deterministic tie-breaking extends it to the general case.
    pub fn derive_closest<D: Fn(usize, usize) -> f64>(&mut self, event: &Event, dist: D) {
        for w in 0..self.worlds.len() {
            if event.contains(w) {
                continue;
            }
            let best = event
                .indices()
                .min_by(|&a, &b| {
                    dist(w, a).partial_cmp(&dist(w, b)).unwrap().then(a.cmp(&b))
                })
                .expect("event must be nonempty");
            self.closest.insert((w, event.members.clone()), best);
        }
    }

    fn closest_in(&self, world: usize, event: &Event) -> Option<usize> {
        if event.contains(world) {
            return Some(world);
        }
        self.closest.get(&(world, event.members.clone())).copied()
    }

    /// Bayesian conditioning: zero mass outside the event, renormalize inside.
    pub fn condition(&self, event: &Event) -> Result<FiniteBeliefState, BeliefError> {
        let mass = self.prob_of(event);
        if mass <= 0.0 {
            return Err(BeliefError::ZeroProbabilityEvent);
        }
        let mut probs = vec![0.0; self.probs.len()];
        for i in event.indices() {
            probs[i] = self.probs[i] / mass;
        }
        Ok(FiniteBeliefState { worlds: self.worlds.clone(), probs, closest: self.closest.clone() })
    }

    /// Probabilistic imaging: transport each world's mass to its closest world
    /// inside the event.
    pub fn image(&self, event: &Event) -> Result<FiniteBeliefState, BeliefError> {
        let mut probs = vec![0.0; self.probs.len()];
        for (w, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            match self.closest_in(w, event) {
                Some(t) => probs[t] += p,
                None => {
                    return Err(BeliefError::MissingClosestWorld { world: self.worlds[w].clone() })
                }
            }
        }
        Ok(FiniteBeliefState { worlds: self.worlds.clone(), probs, closest: self.closest.clone() })
    }
}

/// Pointwise convex combination of belief states.
pub fn mix(states: &[FiniteBeliefState], weights: &[f64]) -> Result<FiniteBeliefState, BeliefError> {
    if states.is_empty() || states.len() != weights.len() {
        return Err(BeliefError::WorldMismatch);
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(BeliefError::WeightError(sum));
    }
    let worlds = states[0].worlds.clone();
    if states.iter().any(|s| s.worlds != worlds) {
        return Err(BeliefError::WorldMismatch);
    }
    let mut probs = vec![0.0; worlds.len()];
    for (s, &w) in states.iter().zip(weights) {
        for (p, q) in probs.iter_mut().zip(&s.probs) {
            *p += w * q;
        }
    }
    // Closest maps agree on shared keys for states built from one prior;
    // merge, first writer wins.
    let mut closest = HashMap::new();
    for s in states {
        for (k, v) in &s.closest {
            closest.entry(k.clone()).or_insert(*v);
        }
    }
    Ok(FiniteBeliefState { worlds, probs, closest })
}

/// Builds the banana-box state of the worked example: p = (0, 0.7, 0.3, 0)
/// with the event {w3, w4} and closest worlds w1 -> w3, w2 -> w4.
pub fn banana_box() -> (FiniteBeliefState, Event) {
    let mut state = FiniteBeliefState::from_probs(vec![0.0, 0.7, 0.3, 0.0]).unwrap();
    let event = Event::from_indices([2, 3]);
    state.set_closest(0, &event, 2).unwrap();
    state.set_closest(1, &event, 3).unwrap();
    (state, event)
}

impl Scenario {
    pub fn into_state(self) -> Result<(FiniteBeliefState, HashMap<String, Event>), BeliefError> {
        let mut state = FiniteBeliefState::new(self.worlds, self.probs)?;
        let mut events = HashMap::new();
        for (name, labels) in &self.events {
            let refs: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
            events.insert(name.clone(), state.event_from_labels(&refs)?);
        }
        for (name, map) in &self.closest {
            let event = events
                .get(name)
                .ok_or_else(|| BeliefError::UnknownWorld(name.clone()))?
                .clone();
            for (from, to) in map {
                let f = state.world_index(from)?;
                let t = state.world_index(to)?;
                state.set_closest(f, &event, t)?;
            }
        }
        Ok((state, events))
    }
}
