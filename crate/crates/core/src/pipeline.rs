//! Chart generation from a score: difficulty, selection, placement.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::bms::{build_time_grid, BmsError, Chart, SampleId};
use crate::challenge::{chart_difficulty, ControlSource, DifficultyCurve, StrainConfig};
use crate::instrument::InstrumentLabel;
use crate::placement::{place_chart, PlacementConfig, PlacementError};
use crate::selector::{predict, SelectorError, SelectorModel, SummaryMode};

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error(transparent)]
    Bms(#[from] BmsError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateOptions {
    pub mode: SummaryMode,
    /// User-supplied difficulty per window. When absent the difficulty is
    /// measured on the input: on its lanes if it has any, otherwise with each
    /// sample acting as its own control.
    pub curve_windows: Option<Vec<f64>>,
    pub strain: StrainConfig,
    pub placement: PlacementConfig,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            mode: SummaryMode::SelfSummary,
            curve_windows: None,
            strain: StrainConfig::default(),
            placement: PlacementConfig::default(),
        }
    }
}

/// Output of [`generate`].
#[derive(Clone, Debug)]
pub struct Generated {
    pub chart: Chart,
    pub curve: DifficultyCurve,
    pub playable: Vec<bool>,
}

/// Selects playable objects with `model` and places them on controls.
///
/// `Truth` summary mode reads the input's authored playability; the other
/// modes use only its timing and samples. Samples in `scratch` prefer the
/// turntable.
pub fn generate(
    input: &Chart,
    labels: &BTreeMap<SampleId, InstrumentLabel>,
    model: &SelectorModel,
    scratch: &BTreeSet<SampleId>,
    opts: &GenerateOptions,
) -> Result<Generated, GenerateError> {
    model.features.check_mode(opts.mode)?;
    let grid = build_time_grid(input)?;
    let timings = grid.object_timings(input);
    let curve = match &opts.curve_windows {
        Some(values) => DifficultyCurve::from_windows(values.clone(), &timings, &opts.strain),
        None => chart_difficulty(input, &grid, ControlSource::for_chart(input), &opts.strain),
    };
    let playable = predict(model, input, &timings, &curve, labels, opts.mode)?;
    let chart = place_chart(input, &timings, &playable, scratch, &opts.placement)?;
    Ok(Generated { chart, curve, playable })
}
