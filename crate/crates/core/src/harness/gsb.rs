use serde::{Deserialize, Serialize};

use super::HarnessError;

/// Outcome counts of a pairwise preference study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GsbTally {
    pub wins: u64,
    pub loses: u64,
    pub ties: u64,
}

impl GsbTally {
    pub fn new(wins: u64, loses: u64, ties: u64) -> Self {
        Self { wins, loses, ties }
    }

    /// The same study seen from the other side.
    pub fn swapped(self) -> Self {
        Self { wins: self.loses, loses: self.wins, ties: self.ties }
    }

    pub fn total(self) -> u64 {
        self.wins + self.loses + self.ties
    }
}

/// `(W − L) / (W + L + T)` kept as an exact fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GsbScore {
    pub numerator: i128,
    pub denominator: u128,
}

impl GsbScore {
    pub fn value(self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    /// Lowest-terms form, for exact comparison.
    pub fn reduced(self) -> Self {
        fn gcd(a: u128, b: u128) -> u128 {
            if b == 0 { a } else { gcd(b, a % b) }
        }
        let g = gcd(self.numerator.unsigned_abs(), self.denominator).max(1);
        Self { numerator: self.numerator / g as i128, denominator: self.denominator / g }
    }

    pub fn neg(self) -> Self {
        Self { numerator: -self.numerator, ..self }
    }
}

impl std::fmt::Display for GsbScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:+.2}", self.value())
    }
}

pub fn gsb(t: GsbTally) -> Result<GsbScore, HarnessError> {
    let total = t.wins as u128 + t.loses as u128 + t.ties as u128;
    if total == 0 {
        return Err(HarnessError::UndefinedScore("GSB of an empty tally"));
    }
    Ok(GsbScore { numerator: t.wins as i128 - t.loses as i128, denominator: total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(gsb(GsbTally::new(0, 0, 10)).unwrap().value(), 0.0);
        assert_eq!(gsb(GsbTally::new(5, 1, 4)).unwrap().reduced(), GsbScore { numerator: 2, denominator: 5 });
        assert!(matches!(gsb(GsbTally::default()), Err(HarnessError::UndefinedScore(_))));
        let s = gsb(GsbTally::new(35, 12, 53)).unwrap();
        assert_eq!(s.to_string(), "+0.23");
        assert_eq!(gsb(GsbTally::new(35, 12, 53).swapped()).unwrap().to_string(), "-0.23");
    }
}
