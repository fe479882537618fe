//! Dataset schema, CSV ingestion, weekly aggregation, z-score scaling,
//! temporal splitting and the synthetic generator.

mod scaler;
mod schema;
mod synth;
mod table;
mod weekly;

pub use scaler::{apply_scaler, fit_scaler, ScalerParams};
pub use schema::{
    default_schema, static_column_names, validate_schema, FeatureDescriptor, FeatureGroup,
    WeatherVar, DEFAULT_WEEKS, PHENOLOGY_COLUMNS, SOIL_COLUMNS,
};
pub use synth::{generate_synthetic, EffectTerm, GroundTruth, Operand, SynthSpec};
pub use table::{
    load_table, read_table, temporal_split, FeatureTable, TemporalSplit, REGION_COLUMN,
    TARGET_COLUMN, YEAR_COLUMN,
};
pub use weekly::{aggregate_daily_to_weekly, DailyWeatherSeries, WeeklyWeather};
