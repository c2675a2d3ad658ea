// SPDX-License-Identifier: Apache-2.0

//! Experiment configuration, seeded sweeps over the layer count, and result
//! files.

mod output;
mod run;
mod spec;
pub mod streams;

pub use output::{
    emit_results, format_g, render, spec_sidecar, to_csv, to_json, ResultRow, ResultsDocument, CSV_HEADER,
};
pub use run::{
    doa_method_name, doa_samples, run_doa_cells, run_doa_sweep, run_experiment, run_sumrate_sweep, with_threads,
    DoaCell,
};
pub use spec::{
    parse_layer_range, ConfigError, DoaSettings, ExperimentKind, ExperimentSpec, OutputFormat, SchemeId, SimSettings,
    SpecOverrides, MAX_LAYERS,
};
