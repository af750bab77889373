//! Command-line plumbing: ingestion, configuration, the experiment pipeline,
//! plotting and synthetic fixtures.

pub mod config;
pub mod experiment;
pub mod ingest;
pub mod plot;
pub mod synth;

pub use config::{RunConfig, Task, TimeConfig};
pub use experiment::{run_experiment, ExperimentReport};
pub use ingest::{ingest_curves, ingest_fields, FieldSnapshot};
pub use plot::{emit_plot, render_svg, PlotLabels, Series};
pub use synth::{synth_fixture, FixtureFiles, FixtureKind};
