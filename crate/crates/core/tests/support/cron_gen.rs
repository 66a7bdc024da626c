//! Random valid cron expressions and zones for oracle comparisons.

use rand::Rng;

const RANGES: [(u32, u32); 5] = [(0, 59), (0, 23), (1, 31), (1, 12), (0, 7)];

pub const ZONES: [&str; 7] = [
    "UTC",
    "Europe/London",
    "America/New_York",
    "Asia/Kuala_Lumpur",
    "Australia/Lord_Howe",
    "Asia/Kathmandu",
    "America/Santiago",
];

fn term(rng: &mut impl Rng, lo: u32, hi: u32) -> String {
    let a = rng.random_range(lo..=hi);
    let b = rng.random_range(a..=hi);
    let s = rng.random_range(1..=(hi - lo + 1).min(20));
    match rng.random_range(0..7) {
        0 => "*".into(),
        1 | 2 => a.to_string(),
        3 => format!("{a}-{b}"),
        4 => format!("*/{s}"),
        5 => format!("{a}/{s}"),
        _ => format!("{a}-{b}/{s}"),
    }
}

fn field(rng: &mut impl Rng, index: usize) -> String {
    let (lo, hi) = RANGES[index];
    if rng.random_bool(0.25) {
        return "*".into();
    }
    let n = rng.random_range(1..=3);
    (0..n).map(|_| term(rng, lo, hi)).collect::<Vec<_>>().join(",")
}

pub fn random_cron(rng: &mut impl Rng) -> String {
    let mut fields: Vec<String> = (0..5).map(|i| field(rng, i)).collect();
    // an every-minute expression makes a year-long comparison needlessly slow
    if fields[0] == "*" && fields[1] == "*" {
        fields[1] = rng.random_range(0..24).to_string();
    }
    fields.join(" ")
}
