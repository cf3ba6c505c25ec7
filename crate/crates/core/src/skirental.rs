//! Rent-or-buy decision with a recurring cost after buying.
//!
//! Renting is a compute request at cost `r`, buying is fetching the value at cost
//! `b`, and every access after buying still costs `b_r` (local CPU, plus disk for
//! the disk tier).

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkiError {
    #[error("rent cost must be positive and finite, got {0}")]
    Rent(f64),
    #[error("buy cost must be non-negative and finite, got {0}")]
    Buy(f64),
    #[error("recurring cost must be non-negative and finite, got {0}")]
    Recurring(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkiParams {
    r: f64,
    b: f64,
    b_r: f64,
}

impl SkiParams {
    pub fn new(rent: f64, buy: f64, recurring: f64) -> Result<Self, SkiError> {
        if !(rent.is_finite() && rent > 0.0) {
            return Err(SkiError::Rent(rent));
        }
        if !(buy.is_finite() && buy >= 0.0) {
            return Err(SkiError::Buy(buy));
        }
        if !(recurring.is_finite() && recurring >= 0.0) {
            return Err(SkiError::Recurring(recurring));
        }
        Ok(Self { r: rent, b: buy, b_r: recurring })
    }

    pub fn rent(&self) -> f64 {
        self.r
    }

    pub fn buy(&self) -> f64 {
        self.b
    }

    pub fn recurring(&self) -> f64 {
        self.b_r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkiDecision {
    Rent,
    Buy,
}

/// Number of accesses after which buying pays off: `b / (r - b_r)`.
///
/// `None` means renting is never more expensive than owning, so never buy.
pub fn threshold(p: &SkiParams) -> Option<f64> {
    if p.r > p.b_r {
        Some(p.b / (p.r - p.b_r))
    } else {
        None
    }
}

/// Last access count that is still rented, `floor(M)`.
pub fn rent_limit(p: &SkiParams) -> Option<u64> {
    // Saturate huge thresholds; no realistic count reaches them.
    threshold(p).map(|m| if m >= u64::MAX as f64 { u64::MAX } else { m.floor() as u64 })
}

/// `access_count` includes the access being decided.
pub fn decide(p: &SkiParams, access_count: u64) -> SkiDecision {
    match rent_limit(p) {
        Some(limit) if access_count > limit => SkiDecision::Buy,
        _ => SkiDecision::Rent,
    }
}

/// Cost of the cheaper of renting every time and buying up front.
pub fn offline_optimal_cost(p: &SkiParams, n: u64) -> f64 {
    let n = n as f64;
    (p.r * n).min(p.b + p.b_r * n)
}

/// Cost of following [`decide`] for `n` consecutive accesses with fixed params.
pub fn policy_cost(p: &SkiParams, n: u64) -> f64 {
    match rent_limit(p) {
        Some(limit) if n > limit => p.r * limit as f64 + p.b + p.b_r * (n - limit) as f64,
        _ => p.r * n as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sp(r: f64, b: f64, b_r: f64) -> SkiParams {
        SkiParams::new(r, b, b_r).unwrap()
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold(&sp(2.0, 10.0, 1.0)), Some(10.0));
        assert_eq!(threshold(&sp(2.0, 10.0, 2.0)), None);
        assert_eq!(threshold(&sp(1.0, 5.0, 0.0)), Some(5.0));
    }

    #[test]
    fn decide_examples() {
        let p = sp(2.0, 10.0, 1.0);
        assert_eq!(decide(&p, 10), SkiDecision::Rent);
        assert_eq!(decide(&p, 11), SkiDecision::Buy);
        assert_eq!(decide(&sp(2.0, 10.0, 2.0), 1_000_000), SkiDecision::Rent);
    }

    #[test]
    fn fractional_threshold_rents_through_floor() {
        // M = 7 / 2 = 3.5
        let p = sp(3.0, 7.0, 1.0);
        assert_eq!(decide(&p, 3), SkiDecision::Rent);
        assert_eq!(decide(&p, 4), SkiDecision::Buy);
    }

    #[test]
    fn offline_examples() {
        let p = sp(2.0, 10.0, 1.0);
        assert_eq!(offline_optimal_cost(&p, 5), 10.0);
        assert_eq!(offline_optimal_cost(&p, 100), 110.0);
        assert_eq!(offline_optimal_cost(&p, 0), 0.0);
    }

    #[test]
    fn policy_examples() {
        let basic = sp(1.0, 5.0, 0.0);
        assert_eq!(policy_cost(&basic, 5), 5.0);
        assert_eq!(policy_cost(&basic, 6), 10.0);
        assert_eq!(policy_cost(&basic, 6) / offline_optimal_cost(&basic, 6), 2.0);

        let p = sp(2.0, 10.0, 1.0);
        assert_eq!(policy_cost(&p, 11), 31.0);
        assert_eq!(offline_optimal_cost(&p, 11), 21.0);
        let ratio: f64 = 31.0 / 21.0;
        assert!(ratio <= 1.5);
        assert!((ratio - 1.476).abs() < 1e-3);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(SkiParams::new(0.0, 1.0, 0.0).is_err());
        assert!(SkiParams::new(1.0, -1.0, 0.0).is_err());
        assert!(SkiParams::new(1.0, 1.0, f64::NAN).is_err());
    }

    fn params() -> impl Strategy<Value = SkiParams> {
        (1e-3..10.0f64, 0.0..100.0f64, 0.0..1.0f64).prop_map(|(r, b, frac)| sp(r, b, r * frac))
    }

    proptest! {
        #[test]
        fn bound_holds_with_floor_slack(p in params(), n in 1u64..2000) {
            prop_assume!(p.rent() > p.recurring());
            let bound = (2.0 - p.recurring() / p.rent()) * offline_optimal_cost(&p, n) + p.rent();
            prop_assert!(policy_cost(&p, n) <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn always_rent_is_optimal_when_owning_is_no_cheaper(
            r in 1e-3..10.0f64, b in 0.0..100.0f64, extra in 0.0..5.0f64, n in 0u64..2000
        ) {
            let p = sp(r, b, r + extra);
            prop_assert_eq!(policy_cost(&p, n), offline_optimal_cost(&p, n));
        }

        #[test]
        fn once_buy_always_buy(p in params(), n in 1u64..5000) {
            if decide(&p, n) == SkiDecision::Buy {
                prop_assert_eq!(decide(&p, n + 1), SkiDecision::Buy);
            }
        }

        #[test]
        fn buy_only_when_rent_exceeds_recurring(p in params(), n in 1u64..5000) {
            if decide(&p, n) == SkiDecision::Buy {
                prop_assert!(p.rent() > p.recurring());
            }
        }
    }
}
