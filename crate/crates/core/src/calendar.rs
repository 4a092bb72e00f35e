//! Proleptic Gregorian date-time arithmetic at one-second resolution.
//!
//! Every instant is a naive wall-clock reading: no time zones, no daylight
//! saving and no leap seconds. Years before 1582 use the Gregorian rules
//! as well.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Smallest representable year.
pub const MIN_YEAR: i64 = -999_999;
/// Largest representable year.
pub const MAX_YEAR: i64 = 999_999;

const SECONDS_PER_DAY: i64 = 86_400;

pub const MONTH_NAMES: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CalendarError {
    #[error("invalid date {year}-{month}-{day}")]
    InvalidDate { year: i64, month: u32, day: u32 },
    #[error("invalid time of day {hour}:{minute}:{second}")]
    InvalidTime { hour: u32, minute: u32, second: u32 },
    #[error("result falls outside the representable year range")]
    OutOfRange,
    #[error("malformed timestamp {0:?}")]
    Malformed(String),
    #[error("timestamp states {stated} but {date} is a {actual}")]
    WeekdayMismatch {
        stated: Weekday,
        actual: Weekday,
        date: String,
    },
}

pub fn is_leap_year(year: i64) -> bool {
    year % 4 == 0 && (year % 100 != 0 || year % 400 == 0)
}

pub fn days_in_month(year: i64, month: u32) -> u32 {
    match month {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap_year(year) => 29,
        2 => 28,
        _ => 0,
    }
}

// Day count relative to 1970-01-01 (H. Hinnant's civil calendar algorithms).
fn days_from_civil(year: i64, month: u32, day: u32) -> i64 {
    let y = if month <= 2 { year - 1 } else { year };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (i64::from(month) + 9) % 12;
    let doy = (153 * mp + 2) / 5 + i64::from(day) - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let month = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let year = yoe + era * 400 + i64::from(month <= 2);
    (year, month, day)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Weekday {
    Monday,
    Tuesday,
    Wednesday,
    Thursday,
    Friday,
    Saturday,
    Sunday,
}

impl Weekday {
    pub const ALL: [Weekday; 7] = [
        Weekday::Monday,
        Weekday::Tuesday,
        Weekday::Wednesday,
        Weekday::Thursday,
        Weekday::Friday,
        Weekday::Saturday,
        Weekday::Sunday,
    ];

    /// Zero-based index with Monday = 0.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Weekday {
        Self::ALL[index % 7]
    }

    pub fn succ(self) -> Weekday {
        Self::from_index(self.index() + 1)
    }

    pub fn pred(self) -> Weekday {
        Self::from_index(self.index() + 6)
    }

    pub fn name(self) -> &'static str {
        match self {
            Weekday::Monday => "Monday",
            Weekday::Tuesday => "Tuesday",
            Weekday::Wednesday => "Wednesday",
            Weekday::Thursday => "Thursday",
            Weekday::Friday => "Friday",
            Weekday::Saturday => "Saturday",
            Weekday::Sunday => "Sunday",
        }
    }

    pub fn is_weekend(self) -> bool {
        matches!(self, Weekday::Saturday | Weekday::Sunday)
    }

    /// Accepts full English names and three-letter abbreviations, any case.
    pub fn from_name(name: &str) -> Option<Weekday> {
        let lower = name.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|w| {
            let full = w.name().to_ascii_lowercase();
            lower == full || (lower.len() >= 3 && full.starts_with(&lower))
        })
    }
}

impl fmt::Display for Weekday {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn month_name(month: u32) -> &'static str {
    MONTH_NAMES[(month as usize - 1) % 12]
}

pub fn month_abbrev(month: u32) -> &'static str {
    &month_name(month)[..3]
}

fn month_from_name(name: &str) -> Option<u32> {
    let lower = name.trim().trim_end_matches('.').to_ascii_lowercase();
    if lower.len() < 3 {
        return None;
    }
    MONTH_NAMES
        .iter()
        .position(|full| full.to_ascii_lowercase().starts_with(&lower))
        .map(|i| i as u32 + 1)
}

/// A calendar offset applied field by field: years and months first (with
/// the day clamped to the target month), then days, then time of day.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateOffset {
    pub years: i64,
    pub months: i64,
    pub days: i64,
    pub hours: i64,
    pub minutes: i64,
    pub seconds: i64,
}

impl DateOffset {
    pub fn years(years: i64) -> Self {
        DateOffset {
            years,
            ..Default::default()
        }
    }

    pub fn months(months: i64) -> Self {
        DateOffset {
            months,
            ..Default::default()
        }
    }

    pub fn days(days: i64) -> Self {
        DateOffset {
            days,
            ..Default::default()
        }
    }

    pub fn seconds(seconds: i64) -> Self {
        DateOffset {
            seconds,
            ..Default::default()
        }
    }

    pub fn is_zero(&self) -> bool {
        *self == DateOffset::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Negative,
    Zero,
    Positive,
}

/// Normalized elapsed time between two instants.
///
/// Applying `(years, months, days, hours, minutes, seconds)` as a
/// [`DateOffset`] to the earlier instant lands exactly on the later one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElapsedBreakdown {
    pub sign: Sign,
    pub years: u64,
    pub months: u64,
    pub days: u64,
    pub hours: u64,
    pub minutes: u64,
    pub seconds: u64,
    /// Signed exact difference in seconds.
    pub total_seconds: i64,
}

impl ElapsedBreakdown {
    pub fn is_zero(&self) -> bool {
        self.sign == Sign::Zero
    }

    /// The unsigned breakdown as an offset to add to the earlier instant.
    pub fn as_offset(&self) -> DateOffset {
        DateOffset {
            years: self.years as i64,
            months: self.months as i64,
            days: self.days as i64,
            hours: self.hours as i64,
            minutes: self.minutes as i64,
            seconds: self.seconds as i64,
        }
    }
}

/// An exact Gregorian wall-clock instant. Field order makes the derived
/// ordering chronological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CivilDateTime {
    year: i32,
    month: u8,
    day: u8,
    hour: u8,
    minute: u8,
    second: u8,
}

impl CivilDateTime {
    pub fn new(
        year: i64,
        month: u32,
        day: u32,
        hour: u32,
        minute: u32,
        second: u32,
    ) -> Result<Self, CalendarError> {
        if !(MIN_YEAR..=MAX_YEAR).contains(&year) {
            return Err(CalendarError::OutOfRange);
        }
        if !(1..=12).contains(&month) || day == 0 || day > days_in_month(year, month) {
            return Err(CalendarError::InvalidDate { year, month, day });
        }
        if hour > 23 || minute > 59 || second > 59 {
            return Err(CalendarError::InvalidTime {
                hour,
                minute,
                second,
            });
        }
        Ok(CivilDateTime {
            year: year as i32,
            month: month as u8,
            day: day as u8,
            hour: hour as u8,
            minute: minute as u8,
            second: second as u8,
        })
    }

    /// Midnight at the start of the given date.
    pub fn from_ymd(year: i64, month: u32, day: u32) -> Result<Self, CalendarError> {
        Self::new(year, month, day, 0, 0, 0)
    }

    pub fn year(&self) -> i64 {
        i64::from(self.year)
    }
    pub fn month(&self) -> u32 {
        u32::from(self.month)
    }
    pub fn day(&self) -> u32 {
        u32::from(self.day)
    }
    pub fn hour(&self) -> u32 {
        u32::from(self.hour)
    }
    pub fn minute(&self) -> u32 {
        u32::from(self.minute)
    }
    pub fn second(&self) -> u32 {
        u32::from(self.second)
    }

    /// Same date at a different time of day.
    pub fn with_time(&self, hour: u32, minute: u32, second: u32) -> Result<Self, CalendarError> {
        Self::new(self.year(), self.month(), self.day(), hour, minute, second)
    }

    /// Days since 1970-01-01.
    pub fn days_since_epoch(&self) -> i64 {
        days_from_civil(self.year(), self.month(), self.day())
    }

    pub fn seconds_of_day(&self) -> i64 {
        i64::from(self.hour) * 3600 + i64::from(self.minute) * 60 + i64::from(self.second)
    }

    /// Seconds since 1970-01-01 00:00:00.
    pub fn epoch_seconds(&self) -> i64 {
        self.days_since_epoch() * SECONDS_PER_DAY + self.seconds_of_day()
    }

    pub fn from_epoch_seconds(secs: i64) -> Result<Self, CalendarError> {
        let days = secs.div_euclid(SECONDS_PER_DAY);
        let rem = secs.rem_euclid(SECONDS_PER_DAY);
        // Keep the day count inside a range where the civil conversion cannot overflow.
        if days.abs() > 400_000_000 {
            return Err(CalendarError::OutOfRange);
        }
        let (year, month, day) = civil_from_days(days);
        Self::new(
            year,
            month,
            day,
            (rem / 3600) as u32,
            (rem % 3600 / 60) as u32,
            (rem % 60) as u32,
        )
    }

    pub fn weekday(&self) -> Weekday {
        // 1970-01-01 was a Thursday.
        Weekday::from_index((self.days_since_epoch() + 3).rem_euclid(7) as usize)
    }

    pub fn is_weekend(&self) -> bool {
        self.weekday().is_weekend()
    }

    pub fn checked_add(&self, offset: &DateOffset) -> Result<Self, CalendarError> {
        let month_index = self
            .year()
            .checked_mul(12)
            .and_then(|m| m.checked_add(i64::from(self.month) - 1))
            .and_then(|m| offset.years.checked_mul(12)?.checked_add(m))
            .and_then(|m| m.checked_add(offset.months))
            .ok_or(CalendarError::OutOfRange)?;
        let year = month_index.div_euclid(12);
        let month = (month_index.rem_euclid(12) + 1) as u32;
        if !(MIN_YEAR..=MAX_YEAR).contains(&year) {
            return Err(CalendarError::OutOfRange);
        }
        let day = self.day().min(days_in_month(year, month));
        let shifted = Self::new(year, month, day, self.hour(), self.minute(), self.second())?;

        let delta = [
            (offset.days, SECONDS_PER_DAY),
            (offset.hours, 3600),
            (offset.minutes, 60),
            (offset.seconds, 1),
        ]
        .iter()
        .try_fold(0i64, |acc, &(n, unit)| {
            acc.checked_add(n.checked_mul(unit)?)
        })
        .ok_or(CalendarError::OutOfRange)?;
        let secs = shifted
            .epoch_seconds()
            .checked_add(delta)
            .ok_or(CalendarError::OutOfRange)?;
        Self::from_epoch_seconds(secs)
    }

    pub fn add_days(&self, days: i64) -> Result<Self, CalendarError> {
        self.checked_add(&DateOffset::days(days))
    }

    /// Elapsed time from `self` to `later`; negative when `later` precedes `self`.
    pub fn elapsed_until(&self, later: &CivilDateTime) -> ElapsedBreakdown {
        let (lo, hi, sign) = match self.cmp(later) {
            Ordering::Less => (self, later, Sign::Positive),
            Ordering::Greater => (later, self, Sign::Negative),
            Ordering::Equal => (self, later, Sign::Zero),
        };
        let mut months =
            ((hi.year() * 12 + hi.month() as i64) - (lo.year() * 12 + lo.month() as i64)).max(0);
        let anchor = loop {
            // lo + months stays between lo and hi, so it is always representable.
            let candidate = lo
                .checked_add(&DateOffset::months(months))
                .expect("month offset within bounds");
            if candidate <= *hi || months == 0 {
                break candidate;
            }
            months -= 1;
        };
        let rest = hi.epoch_seconds() - anchor.epoch_seconds();
        let total = hi.epoch_seconds() - lo.epoch_seconds();
        ElapsedBreakdown {
            sign,
            years: (months / 12) as u64,
            months: (months % 12) as u64,
            days: (rest / SECONDS_PER_DAY) as u64,
            hours: (rest % SECONDS_PER_DAY / 3600) as u64,
            minutes: (rest % 3600 / 60) as u64,
            seconds: (rest % 60) as u64,
            total_seconds: if sign == Sign::Negative {
                -total
            } else {
                total
            },
        }
    }
}

pub fn weekday_of(d: &CivilDateTime) -> Weekday {
    d.weekday()
}

pub fn is_weekend(d: &CivilDateTime) -> bool {
    d.is_weekend()
}

pub fn add_offset(d: &CivilDateTime, offset: &DateOffset) -> Result<CivilDateTime, CalendarError> {
    d.checked_add(offset)
}

pub fn diff(a: &CivilDateTime, b: &CivilDateTime) -> ElapsedBreakdown {
    a.elapsed_until(b)
}

/// Canonical form: `Monday, September 4, 2006, 21:42:56`.
pub fn format_timestamp(d: &CivilDateTime) -> String {
    d.to_string()
}

fn timestamp_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?x)^\s*
            (?:(?P<weekday>[A-Za-z]+)\s*,\s*)?
            (?P<month>[A-Za-z]+)\.?\s+
            (?P<day>\d{1,2})(?:st|nd|rd|th)?\s*,\s*
            (?P<year>-?\d{1,6})\s*,?\s*
            (?P<hour>\d{1,2})\s*:\s*(?P<minute>\d{1,2})\s*:\s*(?P<second>\d{1,2})
            \s*$",
        )
        .expect("timestamp pattern compiles")
    })
}

/// Parses the canonical form and the lenient variants found in hand-written
/// data: unpadded fields, spaces around colons, ordinal day suffixes,
/// abbreviated names and an omitted weekday. A stated weekday must agree
/// with the date.
pub fn parse_timestamp(text: &str) -> Result<CivilDateTime, CalendarError> {
    let malformed = || CalendarError::Malformed(text.to_string());
    let caps = timestamp_regex().captures(text).ok_or_else(malformed)?;
    let num = |name: &str| -> Result<i64, CalendarError> {
        caps[name].parse::<i64>().map_err(|_| malformed())
    };
    let month = month_from_name(&caps["month"]).ok_or_else(malformed)?;
    let date = CivilDateTime::new(
        num("year")?,
        month,
        num("day")? as u32,
        num("hour")? as u32,
        num("minute")? as u32,
        num("second")? as u32,
    )?;
    if let Some(stated) = caps.name("weekday") {
        let stated = Weekday::from_name(stated.as_str()).ok_or_else(malformed)?;
        let actual = date.weekday();
        if stated != actual {
            return Err(CalendarError::WeekdayMismatch {
                stated,
                actual,
                date: format!("{}-{:02}-{:02}", date.year(), date.month(), date.day()),
            });
        }
    }
    Ok(date)
}

impl fmt::Display for CivilDateTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, {} {}, {}, {:02}:{:02}:{:02}",
            self.weekday(),
            month_name(self.month()),
            self.day,
            self.year,
            self.hour,
            self.minute,
            self.second
        )
    }
}

impl FromStr for CivilDateTime {
    type Err = CalendarError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_timestamp(s)
    }
}

impl Serialize for CivilDateTime {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CivilDateTime {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_timestamp(&text).map_err(serde::de::Error::custom)
    }
}
