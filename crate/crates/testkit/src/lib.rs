//! Brute-force oracles for tests. Nothing here shares code with `emkit`.

/// Enumerates every calendar day in a year window by stepping one day at a
/// time, using its own leap-year and month-length tables. Weekdays are
/// counted from 2000-01-01, a Saturday.
pub struct DayStepper {
    first_year: i64,
    days: Vec<(i64, u32, u32)>,
    anchor: usize,
}

/// Monday = 0 … Sunday = 6.
pub const SATURDAY: usize = 5;

fn leap(y: i64) -> bool {
    (y % 4 == 0 && y % 100 != 0) || y % 400 == 0
}

fn month_len(y: i64, m: u32) -> u32 {
    const LENGTHS: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    if m == 2 && leap(y) {
        29
    } else {
        LENGTHS[m as usize - 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct OracleInstant {
    pub year: i64,
    pub month: u32,
    pub day: u32,
    pub hour: u32,
    pub minute: u32,
    pub second: u32,
}

impl DayStepper {
    /// Covers 1 Jan `first_year` through 31 Dec `last_year`; the window must
    /// contain 2000-01-01.
    pub fn new(first_year: i64, last_year: i64) -> Self {
        assert!(first_year <= 2000 && last_year >= 2000);
        let mut days = Vec::new();
        let (mut y, mut m, mut d) = (first_year, 1u32, 1u32);
        while y <= last_year {
            days.push((y, m, d));
            d += 1;
            if d > month_len(y, m) {
                d = 1;
                m += 1;
                if m > 12 {
                    m = 1;
                    y += 1;
                }
            }
        }
        let anchor = days.iter().position(|&t| t == (2000, 1, 1)).unwrap();
        DayStepper {
            first_year,
            days,
            anchor,
        }
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn date_at(&self, index: usize) -> (i64, u32, u32) {
        self.days[index]
    }

    pub fn index_of(&self, y: i64, m: u32, d: u32) -> usize {
        // Rough guess, then walk: keeps the lookup brute force but fast.
        let mut i = (((y - self.first_year) * 365) as usize).min(self.days.len() - 1);
        while self.days[i] > (y, m, d) {
            i -= 1;
        }
        while self.days[i] < (y, m, d) {
            i += 1;
        }
        assert_eq!(self.days[i], (y, m, d), "date outside oracle window");
        i
    }

    /// Monday = 0 … Sunday = 6.
    pub fn weekday(&self, y: i64, m: u32, d: u32) -> usize {
        let delta = self.index_of(y, m, d) as i64 - self.anchor as i64;
        (SATURDAY as i64 + delta).rem_euclid(7) as usize
    }

    pub fn step_days(&self, y: i64, m: u32, d: u32, k: i64) -> (i64, u32, u32) {
        let i = self.index_of(y, m, d) as i64 + k;
        self.days[i as usize]
    }

    /// Years and months stepped one month at a time with the day clamped at
    /// the end, then days, then time of day carried through whole days.
    #[allow(clippy::too_many_arguments)]
    pub fn add(
        &self,
        t: OracleInstant,
        years: i64,
        months: i64,
        days: i64,
        hours: i64,
        minutes: i64,
        seconds: i64,
    ) -> OracleInstant {
        let (mut y, mut m) = (t.year, t.month);
        let total_months = years * 12 + months;
        for _ in 0..total_months.abs() {
            if total_months > 0 {
                m += 1;
                if m == 13 {
                    m = 1;
                    y += 1;
                }
            } else {
                m -= 1;
                if m == 0 {
                    m = 12;
                    y -= 1;
                }
            }
        }
        let d = t.day.min(month_len(y, m));
        let sod = i64::from(t.hour) * 3600
            + i64::from(t.minute) * 60
            + i64::from(t.second)
            + hours * 3600
            + minutes * 60
            + seconds;
        let carry = sod.div_euclid(86_400);
        let sod = sod.rem_euclid(86_400);
        let (y, m, d) = self.step_days(y, m, d, days + carry);
        OracleInstant {
            year: y,
            month: m,
            day: d,
            hour: (sod / 3600) as u32,
            minute: (sod % 3600 / 60) as u32,
            second: (sod % 60) as u32,
        }
    }

    /// Exact signed difference in seconds from `a` to `b`.
    pub fn seconds_between(&self, a: OracleInstant, b: OracleInstant) -> i64 {
        let da = self.index_of(a.year, a.month, a.day) as i64;
        let db = self.index_of(b.year, b.month, b.day) as i64;
        let sa = i64::from(a.hour) * 3600 + i64::from(a.minute) * 60 + i64::from(a.second);
        let sb = i64::from(b.hour) * 3600 + i64::from(b.minute) * 60 + i64::from(b.second);
        (db - da) * 86_400 + (sb - sa)
    }
}

/// Cosine similarity scaled to [-100, 100], straight from the definition.
pub fn cosine_x100(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    100.0 * dot / (na * nb)
}
