//! Reference implementations kept independent of the production kernels.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_64, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let pair = f(c - h * XGK[j]) + f(c + h * XGK[j]);
        k += WGK[j] * pair;
        if j % 2 == 1 {
            g += WG[j / 2] * pair;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) quadrature to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn go<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (val, err) = kronrod(f, a, b);
        if err <= tol || err <= 50.0 * f64::EPSILON * val.abs() || depth == 0 {
            return val;
        }
        let m = 0.5 * (a + b);
        go(f, a, m, 0.5 * tol, depth - 1) + go(f, m, b, 0.5 * tol, depth - 1)
    }
    if a >= b {
        return 0.0;
    }
    go(f, a, b, tol, 30)
}

/// Log of the beta kernel `x^(a-1) (1-x)^(b-1)`.
fn log_kernel(a: f64, b: f64, x: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
}

/// `exp(-shift) int_lo^hi x^(a-1) (1-x)^(b-1) dx` for `0 <= lo <= hi <= 1/2`.
/// For `a < 1` the substitution `x = u^(1/a)` removes the endpoint
/// singularity. `shift` keeps the integrand near unit scale, so the absolute
/// tolerance stays meaningful when the kernel is tiny.
fn left_piece(a: f64, b: f64, lo: f64, hi: f64, shift: f64) -> f64 {
    let (lo, hi, f): (f64, f64, Box<dyn Fn(f64) -> f64>) = if a < 1.0 {
        let f = move |u: f64| ((b - 1.0) * (1.0 - u.powf(1.0 / a)).ln() - shift).exp() / a;
        (lo.powf(a), hi.powf(a), Box::new(f))
    } else {
        let f = move |x: f64| if x <= 0.0 { 0.0 } else { (log_kernel(a, b, x) - shift).exp() };
        (lo, hi, Box::new(f))
    };
    // split first so a narrow peak cannot hide between the initial nodes
    let parts = 16;
    let step = (hi - lo) / parts as f64;
    (0..parts).map(|i| integrate(&f, lo + step * i as f64, lo + step * (i + 1) as f64, 1e-17)).sum()
}

/// Beta(a, b) mass on `[0, t]` and on `[t, 1]`, by direct quadrature of the
/// density; the normalizing constant is integrated too.
pub fn beta_masses(a: f64, b: f64, t: f64) -> (f64, f64) {
    let t = t.clamp(0.0, 1.0);
    let shift = (0..2000).map(|i| log_kernel(a, b, (i as f64 + 0.5) / 2000.0)).fold(f64::NEG_INFINITY, f64::max);
    // mass on [0, x] for x <= 1/2, and on [1 - y, 1] for y <= 1/2
    let left = |lo: f64, hi: f64| left_piece(a, b, lo, hi, shift);
    let right = |lo: f64, hi: f64| left_piece(b, a, lo, hi, shift);
    let (below, above) = if t <= 0.5 {
        (left(0.0, t), left(t, 0.5) + right(0.0, 0.5))
    } else {
        (left(0.0, 0.5) + right(1.0 - t, 0.5), right(0.0, 1.0 - t))
    };
    let total = below + above;
    (below / total, above / total)
}

/// `P(X <= x)` for `X ~ Binomial(n, p)` by summing the probability mass function.
pub fn binomial_cdf(x: u32, n: u32, p: f64) -> f64 {
    if x >= n {
        return 1.0;
    }
    if p >= 1.0 {
        return 0.0;
    }
    let mut pmf = (1.0 - p).powi(n as i32);
    let ratio = p / (1.0 - p);
    let mut total = pmf;
    for k in 0..x.min(n) {
        pmf *= (n - k) as f64 / (k + 1) as f64 * ratio;
        total += pmf;
    }
    total.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_of_smooth_functions() {
        let v = integrate(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-14);
        assert!((v - 2.0).abs() < 1e-13);
    }

    #[test]
    fn uniform_and_closed_forms() {
        let (lo, hi) = beta_masses(1.0, 1.0, 0.3);
        assert!((lo - 0.3).abs() < 1e-14 && (hi - 0.7).abs() < 1e-14);
        // Beta(2, 1) has CDF t^2; Beta(1, 3) has upper tail (1 - t)^3
        assert!((beta_masses(2.0, 1.0, 0.8).0 - 0.64).abs() < 1e-13);
        assert!((beta_masses(1.0, 3.0, 0.2).1 - 0.512).abs() < 1e-13);
        // arcsine law: Beta(1/2, 1/2) CDF is (2/pi) asin(sqrt t)
        let t: f64 = 0.1;
        let exact = 2.0 / std::f64::consts::PI * t.sqrt().asin();
        assert!((beta_masses(0.5, 0.5, t).0 - exact).abs() < 1e-12);
    }

    #[test]
    fn binomial_cdf_small_cases() {
        assert!((binomial_cdf(0, 3, 0.5) - 0.125).abs() < 1e-15);
        assert!((binomial_cdf(1, 3, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(binomial_cdf(0, 5, 0.0), 1.0);
        assert_eq!(binomial_cdf(4, 5, 1.0), 0.0);
        assert_eq!(binomial_cdf(7, 5, 0.3), 1.0);
    }
}
