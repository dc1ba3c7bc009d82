use std::io::{self, Write};

/// Effective sample size by Geyer's initial monotone sequence estimator.
///
/// Capped at the chain length. A constant chain reports its length.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 / c0
    };
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = if m == 0 { 1.0 + rho(1) } else { rho(2 * m) + rho(2 * m + 1) };
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        m += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1e-12);
    (n as f64 / tau).min(n as f64)
}

/// Kept draws of every sampled parameter, stored by column.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ChainTrace {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().position(|c| c == name).map(|i| self.values[i].as_slice())
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Tab-separated dump: a header line, then one row per kept iteration.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "iter\t{}", self.columns.join("\t"))?;
        for row in 0..self.len() {
            write!(out, "{row}")?;
            for col in &self.values {
                write!(out, "\t{}", col[row])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iid_draws_have_full_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..4000).map(|_| rng.random::<f64>()).collect();
        let ess = effective_sample_size(&x);
        assert!(ess > 3000.0, "ess = {ess}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // AR(1) with coefficient r has integrated autocorrelation (1 + r) / (1 - r).
        let r = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut v = 0.0;
        let n = 200_000;
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                v = r * v + e;
                v
            })
            .collect();
        let expected = n as f64 * (1.0 - r) / (1.0 + r);
        let ess = effective_sample_size(&x);
        assert!((ess / expected - 1.0).abs() < 0.15, "ess {ess} vs {expected}");
    }

    #[test]
    fn tsv_layout() {
        let trace = ChainTrace { columns: vec!["a".into(), "b".into()], values: vec![vec![1.0, 2.0], vec![3.0, 4.5]] };
        let mut buf = Vec::new();
        trace.write_tsv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter\ta\tb\n0\t1\t3\n1\t2\t4.5\n");
    }
}
