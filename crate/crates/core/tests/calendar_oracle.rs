//! Calendar arithmetic checked against a day-stepping oracle.

use emkit::calendar::{self, CivilDateTime, DateOffset};
use emkit_testkit::{DayStepper, OracleInstant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CASES: usize = 10_000;

fn to_oracle(d: &CivilDateTime) -> OracleInstant {
    OracleInstant {
        year: d.year(),
        month: d.month(),
        day: d.day(),
        hour: d.hour(),
        minute: d.minute(),
        second: d.second(),
    }
}

fn random_instant(rng: &mut ChaCha8Rng, stepper: &DayStepper, margin: usize) -> CivilDateTime {
    let i = rng.gen_range(margin..stepper.len() - margin);
    let (y, m, d) = stepper.date_at(i);
    CivilDateTime::new(
        y,
        m,
        d,
        rng.gen_range(0..24),
        rng.gen_range(0..60),
        rng.gen_range(0..60),
    )
    .unwrap()
}

fn random_offset(rng: &mut ChaCha8Rng) -> DateOffset {
    let mut pick = |bound: i64| {
        if rng.gen_bool(0.5) {
            rng.gen_range(-bound..=bound)
        } else {
            0
        }
    };
    DateOffset {
        years: pick(150),
        months: pick(30),
        days: pick(2_000),
        hours: pick(100),
        minutes: pick(5_000),
        seconds: pick(200_000),
    }
}

#[test]
fn offsets_weekdays_and_differences_match_the_oracle() {
    let stepper = DayStepper::new(1500, 2500);
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    // Keep random dates well inside the oracle window so offsets stay in it.
    let margin = 250 * 366;
    for case in 0..CASES {
        let a = random_instant(&mut rng, &stepper, margin);

        let w = stepper.weekday(a.year(), a.month(), a.day());
        assert_eq!(
            calendar::weekday_of(&a).index(),
            w,
            "case {case}: weekday of {a}"
        );

        let off = random_offset(&mut rng);
        let got = calendar::add_offset(&a, &off).unwrap();
        let want = stepper.add(
            to_oracle(&a),
            off.years,
            off.months,
            off.days,
            off.hours,
            off.minutes,
            off.seconds,
        );
        assert_eq!(to_oracle(&got), want, "case {case}: {a} + {off:?}");

        let b = random_instant(&mut rng, &stepper, margin);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let e = calendar::diff(&lo, &hi);
        assert_eq!(
            e.total_seconds,
            stepper.seconds_between(to_oracle(&lo), to_oracle(&hi)),
            "case {case}: total seconds {lo} -> {hi}"
        );
        // The breakdown rebuilds the later instant and uses as many whole
        // months as possible.
        let rebuilt = stepper.add(
            to_oracle(&lo),
            e.years as i64,
            e.months as i64,
            e.days as i64,
            e.hours as i64,
            e.minutes as i64,
            e.seconds as i64,
        );
        assert_eq!(rebuilt, to_oracle(&hi), "case {case}: rebuild {lo} -> {hi}");
        assert!(e.months < 12 && e.hours < 24 && e.minutes < 60 && e.seconds < 60);
        let next_month = stepper.add(
            to_oracle(&lo),
            e.years as i64,
            e.months as i64 + 1,
            0,
            0,
            0,
            0,
        );
        assert!(
            next_month > to_oracle(&hi),
            "case {case}: months not maximal"
        );
    }
}

#[test]
fn canonical_strings_round_trip_against_the_oracle() {
    let stepper = DayStepper::new(1600, 2400);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..2_000 {
        let a = random_instant(&mut rng, &stepper, 0);
        let text = calendar::format_timestamp(&a);
        let names = [
            "Monday",
            "Tuesday",
            "Wednesday",
            "Thursday",
            "Friday",
            "Saturday",
            "Sunday",
        ];
        let w = names[stepper.weekday(a.year(), a.month(), a.day())];
        assert!(text.starts_with(w), "{text} should start with {w}");
        assert_eq!(calendar::parse_timestamp(&text).unwrap(), a);
    }
}

#[test]
fn table_weekdays() {
    let stepper = DayStepper::new(1900, 2100);
    for (y, m, d, name) in [
        (2020, 4, 3, "Friday"),
        (2027, 7, 3, "Saturday"),
        (2027, 7, 5, "Monday"),
        (1970, 1, 1, "Thursday"),
        (2049, 4, 23, "Friday"),
        (2049, 4, 22, "Thursday"),
        (2013, 9, 3, "Tuesday"),
        (2038, 6, 22, "Tuesday"),
    ] {
        let ours = CivilDateTime::from_ymd(y, m, d).unwrap().weekday();
        assert_eq!(ours.name(), name);
        assert_eq!(ours.index(), stepper.weekday(y, m, d));
    }
}
