//! Bivariate binary (toxicity, response) outcome model.
//!
//! Cells are always stored in the order (Y_T, Y_R) = (0,1), (0,0), (1,1), (1,0):
//! best outcome first, worst last.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;

/// Elicited utilities on a 0-100 scale for the four joint outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityTable {
    pub u01: f64,
    pub u00: f64,
    pub u11: f64,
    pub u10: f64,
}

impl UtilityTable {
    /// Builds and validates a table. The best outcome must score 100 and the
    /// worst 0; response may never lower utility and toxicity may never raise it.
    pub fn new(u01: f64, u00: f64, u11: f64, u10: f64) -> Result<Self> {
        let table = Self { u01, u00, u11, u10 };
        table.validate()?;
        Ok(table)
    }

    /// Utilities used for every indication in the reference simulations.
    pub fn reference() -> Self {
        Self { u01: 100.0, u00: 40.0, u11: 60.0, u10: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("utility table {self:?}: {msg}")));
        if self.u01 != 100.0 || self.u10 != 0.0 {
            return bad("u01 must be 100 and u10 must be 0");
        }
        if !(0.0..=100.0).contains(&self.u00) || !(0.0..=100.0).contains(&self.u11) {
            return bad("u00 and u11 must lie in [0, 100]");
        }
        if self.u01 < self.u11 || self.u01 < self.u00 || self.u00 < self.u10 || self.u11 < self.u10 {
            return bad("utilities must not reward toxicity or penalize response");
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.u01, self.u00, self.u11, self.u10]
    }

    /// Additive tables make the mean utility a function of the marginals alone.
    pub fn is_additive(&self) -> bool {
        (self.u11 - (self.u01 + self.u10 - self.u00)).abs() < 1e-12
    }
}

impl Default for UtilityTable {
    fn default() -> Self {
        Self::reference()
    }
}

/// Joint distribution of (Y_T, Y_R) for one dose in one indication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointOutcomeProb {
    pub p01: f64,
    pub p00: f64,
    pub p11: f64,
    pub p10: f64,
}

impl JointOutcomeProb {
    pub fn new(p01: f64, p00: f64, p11: f64, p10: f64) -> Result<Self> {
        let cells = [p01, p00, p11, p10];
        if cells.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidInput(format!("joint cells {cells:?} must lie in [0, 1]")));
        }
        let sum: f64 = cells.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidInput(format!("joint cells sum to {sum}, not 1")));
        }
        Ok(Self { p01, p00, p11, p10 })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p01, self.p00, self.p11, self.p10]
    }

    pub fn pi_tox(&self) -> f64 {
        self.p10 + self.p11
    }

    pub fn pi_resp(&self) -> f64 {
        self.p01 + self.p11
    }

    /// Phi coefficient between toxicity and response. `None` when either
    /// marginal is degenerate.
    pub fn association(&self) -> Option<f64> {
        let (pt, pr) = (self.pi_tox(), self.pi_resp());
        let denom = (pr * (1.0 - pr) * pt * (1.0 - pt)).sqrt();
        if denom == 0.0 {
            return None;
        }
        Some((self.p00 * self.p11 - self.p10 * self.p01) / denom)
    }

    pub fn mean_utility(&self, u: &UtilityTable) -> f64 {
        mean_utility(u, self)
    }

    pub fn quasi_probability(&self, u: &UtilityTable) -> f64 {
        mean_utility(u, self) / 100.0
    }
}

/// Per-cell patient counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeCounts {
    pub x01: u32,
    pub x00: u32,
    pub x11: u32,
    pub x10: u32,
}

impl OutcomeCounts {
    pub fn new(x01: u32, x00: u32, x11: u32, x10: u32) -> Self {
        Self { x01, x00, x11, x10 }
    }

    pub fn n(&self) -> u32 {
        self.x01 + self.x00 + self.x11 + self.x10
    }

    pub fn tox(&self) -> u32 {
        self.x10 + self.x11
    }

    pub fn resp(&self) -> u32 {
        self.x01 + self.x11
    }

    pub fn record(&mut self, outcome: Outcome) {
        match (outcome.toxicity, outcome.response) {
            (false, true) => self.x01 += 1,
            (false, false) => self.x00 += 1,
            (true, true) => self.x11 += 1,
            (true, false) => self.x10 += 1,
        }
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.x01, self.x00, self.x11, self.x10]
    }

    /// Empirical joint distribution; `None` for an empty cell vector.
    pub fn empirical(&self) -> Option<JointOutcomeProb> {
        let n = self.n();
        if n == 0 {
            return None;
        }
        let n = n as f64;
        Some(JointOutcomeProb {
            p01: self.x01 as f64 / n,
            p00: self.x00 as f64 / n,
            p11: self.x11 as f64 / n,
            p10: self.x10 as f64 / n,
        })
    }
}

impl std::ops::Add for OutcomeCounts {
    type Output = OutcomeCounts;

    fn add(self, rhs: Self) -> Self {
        Self { x01: self.x01 + rhs.x01, x00: self.x00 + rhs.x00, x11: self.x11 + rhs.x11, x10: self.x10 + rhs.x10 }
    }
}

/// One patient's observed outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub toxicity: bool,
    pub response: bool,
}

/// Joint distribution with the given marginals and phi coefficient.
pub fn solve_joint(pi_t: f64, pi_r: f64, phi: f64) -> Result<JointOutcomeProb> {
    if !(0.0..=1.0).contains(&pi_t) || !(0.0..=1.0).contains(&pi_r) {
        return Err(Error::Domain(format!("marginals ({pi_t}, {pi_r}) must lie in [0, 1]")));
    }
    if !(phi > -1.0 && phi < 1.0) {
        return Err(Error::Domain(format!("phi = {phi} must lie in (-1, 1)")));
    }
    let spread = (pi_r * (1.0 - pi_r) * pi_t * (1.0 - pi_t)).sqrt();
    let infeasible = |cell, value| Error::InfeasibleAssociation { cell, value, pi_t, pi_r, phi };
    if spread == 0.0 && phi != 0.0 {
        // No joint distribution with a degenerate marginal carries a nonzero phi.
        return Err(infeasible("p11", f64::NAN));
    }
    let p11 = pi_t * pi_r + phi * spread;
    let p10 = pi_t - p11;
    let p01 = pi_r - p11;
    let p00 = 1.0 - pi_t - pi_r + p11;
    let mut cells = [("p01", p01), ("p00", p00), ("p11", p11), ("p10", p10)];
    for (name, value) in cells.iter_mut() {
        if *value < -SUM_TOL || *value > 1.0 + SUM_TOL {
            return Err(infeasible(name, *value));
        }
        // roundoff only
        *value = value.clamp(0.0, 1.0);
    }
    Ok(JointOutcomeProb { p01: cells[0].1, p00: cells[1].1, p11: cells[2].1, p10: cells[3].1 })
}

/// Probability-weighted average utility, on the 0-100 scale.
pub fn mean_utility(u: &UtilityTable, p: &JointOutcomeProb) -> f64 {
    u.as_array().iter().zip(p.as_array()).map(|(u, p)| u * p).sum()
}

/// Utility-weighted patient count divided by 100; generally non-integer.
pub fn quasi_events(u: &UtilityTable, x: &OutcomeCounts) -> f64 {
    u.as_array().iter().zip(x.as_array()).map(|(u, x)| u * x as f64).sum::<f64>() / 100.0
}

/// One categorical draw over the four cells.
pub fn sample_outcome<R: Rng + ?Sized>(p: &JointOutcomeProb, rng: &mut R) -> Outcome {
    let draw: f64 = rng.random();
    let mut acc = p.p01;
    if draw < acc {
        return Outcome { toxicity: false, response: true };
    }
    acc += p.p00;
    if draw < acc {
        return Outcome { toxicity: false, response: false };
    }
    acc += p.p11;
    if draw < acc {
        return Outcome { toxicity: true, response: true };
    }
    Outcome { toxicity: true, response: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn independence_joint() {
        let p = solve_joint(0.25, 0.40, 0.0).unwrap();
        assert!((p.p11 - 0.10).abs() < 1e-15);
        assert!((p.p10 - 0.15).abs() < 1e-15);
        assert!((p.p01 - 0.30).abs() < 1e-15);
        assert!((p.p00 - 0.45).abs() < 1e-15);
    }

    #[test]
    fn correlated_joint_recovers_phi() {
        let p = solve_joint(0.25, 0.40, 0.25).unwrap();
        assert!((p.p11 - 0.153_033).abs() < 1e-6, "p11 = {}", p.p11);
        assert!((p.association().unwrap() - 0.25).abs() < 1e-10);
        assert!((p.pi_tox() - 0.25).abs() < 1e-12);
        assert!((p.pi_resp() - 0.40).abs() < 1e-12);
    }

    #[test]
    fn degenerate_marginal_is_infeasible() {
        let err = solve_joint(0.0, 0.40, 0.25).unwrap_err();
        assert!(matches!(err, Error::InfeasibleAssociation { .. }));
        // zero association with a degenerate marginal is fine
        assert!(solve_joint(0.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn strong_association_reports_offending_cell() {
        match solve_joint(0.05, 0.9, -0.9) {
            Err(Error::InfeasibleAssociation { cell, .. }) => assert_eq!(cell, "p11"),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn reference_utilities() {
        let u = UtilityTable::reference();
        for phi in [-0.2, 0.0, 0.25, 0.5] {
            let p = solve_joint(0.15, 0.40, phi).unwrap();
            assert!((mean_utility(&u, &p) - 58.0).abs() < 1e-9);
        }
        let p = solve_joint(0.40, 0.05, 0.25).unwrap();
        assert!((mean_utility(&u, &p) - 27.0).abs() < 1e-9);
        let best = JointOutcomeProb::new(1.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(mean_utility(&u, &best), 100.0);
        assert!(u.is_additive());
    }

    #[test]
    fn rejects_bad_utilities() {
        assert!(UtilityTable::new(100.0, 40.0, 60.0, 0.0).is_ok());
        assert!(UtilityTable::new(90.0, 40.0, 60.0, 0.0).is_err());
        assert!(UtilityTable::new(100.0, 40.0, 60.0, 10.0).is_err());
        assert!(UtilityTable::new(100.0, 40.0, 110.0, 0.0).is_err());
    }

    #[test]
    fn quasi_event_counts() {
        let u = UtilityTable::reference();
        let z = quasi_events(&u, &OutcomeCounts::new(3, 5, 1, 1));
        assert!((z - 5.6).abs() < 1e-12);
        assert_eq!(quasi_events(&u, &OutcomeCounts::default()), 0.0);
        assert_eq!(quasi_events(&u, &OutcomeCounts::new(17, 0, 0, 0)), 17.0);
    }

    #[test]
    fn point_mass_sampling() {
        let p = JointOutcomeProb::new(1.0, 0.0, 0.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            assert_eq!(sample_outcome(&p, &mut rng), Outcome { toxicity: false, response: true });
        }
    }

    #[test]
    fn sampling_frequencies_converge() {
        let p = solve_joint(0.25, 0.40, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = OutcomeCounts::default();
        let draws = 1_000_000;
        for _ in 0..draws {
            counts.record(sample_outcome(&p, &mut rng));
        }
        let freq = counts.empirical().unwrap();
        for (f, truth) in freq.as_array().iter().zip(p.as_array()) {
            assert!((f - truth).abs() < 0.002, "{f} vs {truth}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = solve_joint(0.3, 0.5, 0.1).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| sample_outcome(&p, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(99), run(99));
    }

    proptest! {
        #[test]
        fn joint_round_trip(pi_t in 0.01f64..0.99, pi_r in 0.01f64..0.99, phi in -0.9f64..0.9) {
            if let Ok(p) = solve_joint(pi_t, pi_r, phi) {
                prop_assert!((p.pi_tox() - pi_t).abs() < 1e-10);
                prop_assert!((p.pi_resp() - pi_r).abs() < 1e-10);
                prop_assert!((p.association().unwrap() - phi).abs() < 1e-10);
                prop_assert!((p.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn quasi_events_match_empirical_utility(
            x01 in 0u32..30, x00 in 0u32..30, x11 in 0u32..30, x10 in 0u32..30,
            u00 in 0.0f64..100.0, u11 in 0.0f64..100.0,
        ) {
            let u = UtilityTable::new(100.0, u00, u11, 0.0).unwrap();
            let x = OutcomeCounts::new(x01, x00, x11, x10);
            let z = quasi_events(&u, &x);
            prop_assert!(z >= 0.0 && z <= x.n() as f64 + 1e-12);
            if let Some(emp) = x.empirical() {
                let q = emp.quasi_probability(&u);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&q));
                prop_assert!((z / x.n() as f64 - q).abs() < 1e-12);
            }
        }
    }
}
