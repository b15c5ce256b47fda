//! Interned per-decision view of an evaluation log.
//!
//! Gate sweeps evaluate the same log under many configurations; abstracting
//! every event once and referring to states by index keeps each sweep point
//! a pass over integers.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::abstraction::{Abstraction, ActionKey, StateKey};
use crate::error::Result;
use crate::eventlog::EventLog;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub state: u32,
    /// Observed next activity.
    pub action: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceCase {
    pub case_id: String,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTrace {
    pub abstraction: Abstraction,
    pub states: Vec<StateKey>,
    pub actions: Vec<ActionKey>,
    pub cases: Vec<TraceCase>,
    pub n_decisions: usize,
}

impl DecisionTrace {
    pub fn new(log: &EventLog, abstraction: &Abstraction) -> Result<Self> {
        let raw: Vec<(String, Vec<(StateKey, String)>)> = log
            .cases
            .par_iter()
            .map(|case| {
                let states = abstraction.case_states(case)?;
                let steps = states
                    .into_iter()
                    .zip(case.events.iter().skip(1))
                    .map(|(s, next)| (s, next.activity.clone()))
                    .collect();
                Ok((case.case_id.clone(), steps))
            })
            .collect::<Result<_>>()?;

        let mut state_ids: HashMap<StateKey, u32> = HashMap::new();
        let mut action_ids: HashMap<String, u32> = HashMap::new();
        let mut states = Vec::new();
        let mut actions = Vec::new();
        let mut cases = Vec::with_capacity(raw.len());
        let mut n_decisions = 0;
        for (case_id, steps) in raw {
            let steps: Vec<Step> = steps
                .into_iter()
                .map(|(s, a)| {
                    let state = *state_ids.entry(s).or_insert_with_key(|k| {
                        states.push(k.clone());
                        (states.len() - 1) as u32
                    });
                    let action = *action_ids.entry(a).or_insert_with_key(|k| {
                        actions.push(ActionKey::new(k.clone()));
                        (actions.len() - 1) as u32
                    });
                    Step { state, action }
                })
                .collect();
            n_decisions += steps.len();
            cases.push(TraceCase { case_id, steps });
        }
        Ok(Self {
            abstraction: abstraction.clone(),
            states,
            actions,
            cases,
            n_decisions,
        })
    }

    pub fn n_cases(&self) -> usize {
        self.cases.len()
    }

    pub fn state(&self, step: &Step) -> &StateKey {
        &self.states[step.state as usize]
    }

    pub fn action(&self, step: &Step) -> &ActionKey {
        &self.actions[step.action as usize]
    }

    /// Nonterminal visits per interned state.
    pub fn visits(&self) -> Vec<u64> {
        let mut v = vec![0u64; self.states.len()];
        for step in self.cases.iter().flat_map(|c| &c.steps) {
            v[step.state as usize] += 1;
        }
        v
    }

    pub fn action_id(&self, action: &ActionKey) -> Option<u32> {
        self.actions
            .iter()
            .position(|a| a == action)
            .map(|i| i as u32)
    }
}
