use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Weeks per season in the default layout (6·45 weather + 7 static = 277 columns).
pub const DEFAULT_WEEKS: usize = 45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Weather,
    Soil,
    Phenology,
}

impl FeatureGroup {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "weather" => Some(FeatureGroup::Weather),
            "soil" => Some(FeatureGroup::Soil),
            "phenology" => Some(FeatureGroup::Phenology),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::Weather => "weather",
            FeatureGroup::Soil => "soil",
            FeatureGroup::Phenology => "phenology",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherVar {
    Tmin,
    Tmax,
    Precip,
    Radiation,
    Rh,
    Wind,
}

impl WeatherVar {
    pub const ALL: [WeatherVar; 6] = [
        WeatherVar::Tmin,
        WeatherVar::Tmax,
        WeatherVar::Precip,
        WeatherVar::Radiation,
        WeatherVar::Rh,
        WeatherVar::Wind,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WeatherVar::Tmin => "tmin",
            WeatherVar::Tmax => "tmax",
            WeatherVar::Precip => "precip",
            WeatherVar::Radiation => "radiation",
            WeatherVar::Rh => "rh",
            WeatherVar::Wind => "wind",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for WeatherVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const PHENOLOGY_COLUMNS: [&str; 3] = ["sowing_doy", "flowering_doy", "harvest_doy"];
pub const SOIL_COLUMNS: [&str; 4] = ["LL", "DUL", "SAT", "BD"];

/// Names of the seven static (non-weather) columns in layout order.
pub fn static_column_names() -> impl Iterator<Item = &'static str> {
    PHENOLOGY_COLUMNS.iter().chain(SOIL_COLUMNS.iter()).copied()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub group: FeatureGroup,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather_var: Option<WeatherVar>,
    /// 1-based week counted from the season start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub week_index: Option<usize>,
}

impl FeatureDescriptor {
    pub fn weather(var: WeatherVar, week: usize) -> Self {
        FeatureDescriptor {
            name: format!("{}_w{}", var.as_str(), week),
            group: FeatureGroup::Weather,
            weather_var: Some(var),
            week_index: Some(week),
        }
    }

    pub fn soil(name: &str) -> Self {
        FeatureDescriptor {
            name: name.to_string(),
            group: FeatureGroup::Soil,
            weather_var: None,
            week_index: None,
        }
    }

    pub fn phenology(name: &str) -> Self {
        FeatureDescriptor {
            name: name.to_string(),
            group: FeatureGroup::Phenology,
            weather_var: None,
            week_index: None,
        }
    }

    fn check(&self) -> Result<()> {
        let weather_fields = self.weather_var.is_some() && self.week_index.is_some();
        let no_fields = self.weather_var.is_none() && self.week_index.is_none();
        match self.group {
            FeatureGroup::Weather if weather_fields && self.week_index != Some(0) => Ok(()),
            FeatureGroup::Soil | FeatureGroup::Phenology if no_fields => Ok(()),
            _ => Err(Error::Schema(format!(
                "descriptor `{}` has inconsistent group/variable/week fields",
                self.name
            ))),
        }
    }
}

/// The standard column layout: phenology, soil, then weather variable-major
/// (`tmin_w1..tmin_wW, tmax_w1..`).
pub fn default_schema(weeks: usize) -> Vec<FeatureDescriptor> {
    let mut out: Vec<FeatureDescriptor> = PHENOLOGY_COLUMNS
        .iter()
        .map(|n| FeatureDescriptor::phenology(n))
        .collect();
    out.extend(SOIL_COLUMNS.iter().map(|n| FeatureDescriptor::soil(n)));
    for var in WeatherVar::ALL {
        out.extend((1..=weeks).map(|w| FeatureDescriptor::weather(var, w)));
    }
    out
}

pub fn validate_schema(descriptors: &[FeatureDescriptor]) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for d in descriptors {
        d.check()?;
        if !seen.insert(d.name.as_str()) {
            return Err(Error::Schema(format!(
                "duplicate feature name `{}`",
                d.name
            )));
        }
    }
    Ok(())
}
