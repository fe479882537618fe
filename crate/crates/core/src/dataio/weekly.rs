use crate::dataio::schema::WeatherVar;
use crate::error::{Error, Result};

/// Daily weather for one season, one sequence per variable in
/// [`WeatherVar::ALL`] order. Day 0 is the season start (sowing).
#[derive(Debug, Clone, PartialEq)]
pub struct DailyWeatherSeries {
    pub values: [Vec<f64>; 6],
    pub season_start_doy: u32,
}

impl DailyWeatherSeries {
    pub fn len(&self) -> usize {
        self.values[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn variable(&self, var: WeatherVar) -> &[f64] {
        &self.values[var.index()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeeklyWeather {
    /// `weeks[var][k]` is the mean of week `k + 1`.
    pub weeks: [Vec<f64>; 6],
    /// Trailing weeks filled by repeating the last observed week.
    pub padded_weeks: usize,
}

/// Means over consecutive 7-day windows anchored at the season start.
///
/// The last observed week absorbs any remainder days. When the series is
/// shorter than `7·weeks` days, the missing trailing weeks repeat the last
/// observed weekly mean and are counted in `padded_weeks`.
pub fn aggregate_daily_to_weekly(
    series: &DailyWeatherSeries,
    weeks: usize,
) -> Result<WeeklyWeather> {
    let n = series.len();
    if n == 0 {
        return Err(Error::invalid("daily weather series is empty"));
    }
    if series.values.iter().any(|v| v.len() != n) {
        return Err(Error::invalid(
            "daily weather variables have unequal lengths",
        ));
    }
    if n < 7 {
        return Err(Error::invalid(format!(
            "daily weather series has {n} days; at least 7 are needed"
        )));
    }
    if weeks == 0 {
        return Err(Error::invalid("number of weeks must be positive"));
    }
    let observed = (n / 7).min(weeks);
    let aggregate = |days: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(weeks);
        for k in 0..observed {
            let start = 7 * k;
            let end = if k + 1 == observed { n } else { start + 7 };
            let block = &days[start..end];
            out.push(block.iter().sum::<f64>() / block.len() as f64);
        }
        let last = out[observed - 1];
        out.resize(weeks, last);
        out
    };
    Ok(WeeklyWeather {
        weeks: std::array::from_fn(|v| aggregate(&series.values[v])),
        padded_weeks: weeks - observed,
    })
}
