//! Synthesized QA items checked against the day-stepping oracle.

use emkit::calendar::{month_abbrev, month_name, CivilDateTime};
use emkit::temporal_qa::{self, Family, Horizon, QAConfig, QAItem};
use emkit_testkit::{DayStepper, OracleInstant};

const WEEKDAYS: [&str; 7] = [
    "Monday",
    "Tuesday",
    "Wednesday",
    "Thursday",
    "Friday",
    "Saturday",
    "Sunday",
];

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

fn check(stepper: &DayStepper, item: &QAItem) {
    let q = &item.query;
    let o = &q.offset;
    let target = stepper.add(
        to_oracle(&q.anchor),
        o.years,
        o.months,
        o.days,
        o.hours,
        o.minutes,
        o.seconds,
    );
    assert_eq!(to_oracle(&q.target), target, "{item:?}");

    let gap = stepper.seconds_between(to_oracle(&item.observation), target);
    let horizon = if gap.abs() <= 7 * 86_400 {
        Horizon::Short
    } else {
        Horizon::Long
    };
    assert_eq!(item.horizon, horizon, "{item:?}");

    assert!(!item.keywords.is_empty());
    assert!(temporal_qa::grade(&item.answer, item), "{item:?}");

    let answer = &item.answer;
    let weekday = WEEKDAYS[stepper.weekday(target.year, target.month, target.day)];
    match item.family {
        Family::AbsoluteOffset => {
            assert!(answer.contains(&target.year.to_string()), "{answer}");
            assert!(answer.contains(month_abbrev(target.month)), "{answer}");
        }
        Family::RelativeDay => {
            let plain = format!("{}-{}-{}", target.year, target.month, target.day);
            let long = format!("{} ", month_name(target.month));
            assert!(
                answer.contains(&plain)
                    || (answer.contains(&long) && answer.contains(&target.year.to_string())),
                "{answer}"
            );
        }
        Family::WeekdayQuery => assert!(answer.contains(weekday), "{answer}"),
        Family::WeekendQuery => {
            assert!(answer.contains(weekday), "{answer}");
            let weekend = weekday == "Saturday" || weekday == "Sunday";
            assert_eq!(answer.starts_with("Yes"), weekend, "{answer}");
        }
        Family::ElapsedSinceLastChat => {
            // The last chat is `target`; the answer quotes its clock time and
            // the whole minutes (or larger units) elapsed.
            let clock = format!(
                "{:02}:{:02}:{:02}",
                target.hour, target.minute, target.second
            );
            assert!(answer.contains(&clock), "{answer}");
            assert!(gap < 0);
            let elapsed = -gap;
            if elapsed < 3600 {
                assert!(
                    answer.contains(&format!(" {} minute", elapsed / 60)),
                    "{answer}"
                );
            } else if elapsed < 86_400 {
                assert!(
                    answer.contains(&format!(" {} hour", elapsed / 3600)),
                    "{answer}"
                );
            } else {
                assert!(answer.contains(weekday), "{answer}");
            }
        }
    }
}

#[test]
fn eval_preset_matches_oracle() {
    let stepper = DayStepper::new(1400, 2300);
    let items = temporal_qa::synthesize(&QAConfig::eval_preset(2024)).unwrap();
    let short = items.iter().filter(|i| i.horizon == Horizon::Short).count();
    assert_eq!((short, items.len() - short), (32, 260));
    for item in &items {
        check(&stepper, item);
    }
}

#[test]
fn train_preset_matches_oracle() {
    let stepper = DayStepper::new(1400, 2300);
    let items = temporal_qa::synthesize(&QAConfig::train_preset(99)).unwrap();
    assert_eq!(items.len(), 8_000);
    for family in Family::ALL {
        assert_eq!(items.iter().filter(|i| i.family == family).count(), 1_600);
    }
    for item in &items {
        check(&stepper, item);
    }
}

#[test]
fn different_seeds_give_different_data() {
    let a = temporal_qa::synthesize(&QAConfig::eval_preset(1)).unwrap();
    let b = temporal_qa::synthesize(&QAConfig::eval_preset(2)).unwrap();
    assert_ne!(a, b);
}
