//! Keysound rhythm-game chart generation.

pub mod audio;
pub mod bms;
pub mod challenge;
pub mod eval;
pub mod features;
pub mod instrument;
pub mod pipeline;
pub mod placement;
pub mod selector;
pub mod synth;

// The guide's snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/charts.md")]
    mod charts {}
    #[doc = include_str!("../../../book/src/difficulty.md")]
    mod difficulty {}
    #[doc = include_str!("../../../book/src/instruments.md")]
    mod instruments {}
    #[doc = include_str!("../../../book/src/features.md")]
    mod features {}
    #[doc = include_str!("../../../book/src/selector.md")]
    mod selector {}
    #[doc = include_str!("../../../book/src/placement.md")]
    mod placement {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
