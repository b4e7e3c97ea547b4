//! Assigning playable objects to controls.
//!
//! Objects of one timestep are handed, in sample-id order, to the free
//! controls with the least accumulated strain. The turntable is kept out of
//! the rotation unless a timestep needs all eight controls or the sample is a
//! scratch.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::bms::{Chart, Control, Lane, ObjectTiming, Position, SampleId, CONTROL_COUNT};
use crate::challenge::{StrainConfig, StrainState};

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error(
        "{count} playable objects at measure {measure} position {position} exceed the {CONTROL_COUNT} controls; \
         lower the difficulty curve or re-run selection"
    )]
    TooManySimultaneous {
        measure: u32,
        position: Position,
        count: usize,
    },
    #[error("{flags} playable flags for {objects} objects")]
    LengthMismatch { flags: usize, objects: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlacementConfig {
    /// Send scratch samples to the turntable when it is free.
    pub scratch_to_turntable: bool,
    pub strain: StrainConfig,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            scratch_to_turntable: true,
            strain: StrainConfig::default(),
        }
    }
}

/// Per-control strain carried between timesteps.
#[derive(Clone, Debug, Default)]
pub struct PlacementState {
    strain: StrainState,
}

impl PlacementState {
    pub fn strain_at(&self, control: Control, t: f64, cfg: &StrainConfig) -> f64 {
        self.strain.individual_at(control.index() as u32, t, cfg)
    }

    fn lowest_free(&self, free: &[Control], t: f64, cfg: &StrainConfig) -> usize {
        let mut best = 0;
        for (i, &c) in free.iter().enumerate().skip(1) {
            if self.strain_at(c, t, cfg) < self.strain_at(free[best], t, cfg) {
                best = i;
            }
        }
        best
    }

    /// Places one timestep. `group` holds `(object index, sample, is scratch)`
    /// and must already be sorted by sample id. Returns controls in the same
    /// order.
    pub fn place_group(&mut self, group: &[(usize, SampleId, bool)], t: f64, cfg: &PlacementConfig) -> Vec<Control> {
        assert!(
            group.len() <= CONTROL_COUNT,
            "at most {CONTROL_COUNT} objects per timestep"
        );
        let mut free: Vec<Control> = if group.len() == CONTROL_COUNT {
            Control::all().collect()
        } else {
            Control::all().filter(|c| !c.is_turntable()).collect()
        };
        let mut turntable_free = group.len() < CONTROL_COUNT;
        let mut out = Vec::with_capacity(group.len());
        for &(_, _, scratch) in group {
            let control = if scratch && turntable_free && cfg.scratch_to_turntable {
                turntable_free = false;
                Control::TURNTABLE
            } else {
                let i = self.lowest_free(&free, t, &cfg.strain);
                free.remove(i)
            };
            out.push(control);
        }
        for &c in &out {
            self.strain.apply_individual(c.index() as u32, t, &cfg.strain);
        }
        out
    }
}

/// Lane for every object: a control for each flagged object, background for
/// the rest.
///
/// `scratch` lists the samples classified as scratches.
pub fn assign_controls(
    chart: &Chart,
    timings: &[ObjectTiming],
    playable: &[bool],
    scratch: &BTreeSet<SampleId>,
    cfg: &PlacementConfig,
) -> Result<Vec<Lane>, PlacementError> {
    let objects = chart.objects();
    if playable.len() != objects.len() {
        return Err(PlacementError::LengthMismatch {
            flags: playable.len(),
            objects: objects.len(),
        });
    }
    assert_eq!(timings.len(), objects.len(), "one timing per object");
    let mut lanes = vec![Lane::Background; objects.len()];
    let mut state = PlacementState::default();
    for range in chart.timestep_groups() {
        let mut group: Vec<(usize, SampleId, bool)> = range
            .clone()
            .filter(|&i| playable[i])
            .map(|i| (i, objects[i].sample, scratch.contains(&objects[i].sample)))
            .collect();
        if group.is_empty() {
            continue;
        }
        if group.len() > CONTROL_COUNT {
            let first = &objects[range.start];
            return Err(PlacementError::TooManySimultaneous {
                measure: first.measure,
                position: first.position,
                count: group.len(),
            });
        }
        group.sort_by_key(|&(i, sample, _)| (sample, i));
        let controls = state.place_group(&group, timings[range.start].seconds, cfg);
        for (&(i, _, _), c) in group.iter().zip(controls) {
            lanes[i] = Lane::Control(c);
        }
    }
    Ok(lanes)
}

/// Applies [`assign_controls`] and returns the placed chart.
pub fn place_chart(
    chart: &Chart,
    timings: &[ObjectTiming],
    playable: &[bool],
    scratch: &BTreeSet<SampleId>,
    cfg: &PlacementConfig,
) -> Result<Chart, PlacementError> {
    let lanes = assign_controls(chart, timings, playable, scratch, cfg)?;
    Ok(chart
        .score_only()
        .with_lanes(&lanes)
        .expect("placement never assigns a control twice in one timestep"))
}
