use crate::error::{invalid, Result};
use crate::special::ln_binomial;

/// Probability that the median of `2b` uniform draws (the mean of the two
/// central order statistics) falls outside the quantile band `[lo, hi]`.
///
/// This is the chance that a leaf split lands at a true quantile outside
/// the band, assuming the leaf's values are an iid sample from its box.
pub fn median_split_error_prob(b: u64, lo: f64, hi: f64) -> Result<f64> {
    if b == 0 {
        return Err(invalid("half bucket size must be at least 1"));
    }
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return Err(invalid(format!("need 0 < lo < hi < 1, got [{lo}, {hi}]")));
    }
    // the median's law is symmetric about 1/2
    Ok(median_cdf(b, lo) + median_cdf(b, 1.0 - hi))
}

/// `P(M < x)` where `M = (U_(b) + U_(b+1)) / 2` for `2b` iid uniforms.
fn median_cdf(b: u64, x: f64) -> f64 {
    if x > 0.5 {
        return 1.0 - median_cdf(b, 1.0 - x);
    }
    // P(U_(b) < x): at least b of the 2b draws fall below x
    let n = 2 * b;
    let lower: f64 = (b..=n)
        .map(|i| (ln_binomial(n, i) + i as f64 * x.ln() + (n - i) as f64 * (-x).ln_1p()).exp())
        .sum();
    // minus P(U_(b) < x, U_(b+1) > 2x - U_(b)). Given U_(b) = u the b draws
    // above u are uniform on (u, 1), which leaves a polynomial integrand
    //   C u^(b-1) (1 - 2x + u)^b,   C = (2b)! / ((b-1)! b!)
    let ln_c = ln_binomial(n, b) + (b as f64).ln();
    let s = 1.0 - 2.0 * x;
    let upper: f64 = (0..=b)
        .filter(|&j| s > 0.0 || j == b)
        .map(|j| {
            let s_pow = if j == b { 0.0 } else { (b - j) as f64 * s.ln() };
            (ln_c + ln_binomial(b, j) + s_pow + (b + j) as f64 * x.ln() - ((b + j) as f64).ln()).exp()
        })
        .sum();
    lower - upper
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reproduces_balance_table_values() {
        let cases = [
            (5, 0.4, 0.6, 0.49),
            (5, 0.3, 0.7, 0.15),
            (10, 0.4, 0.6, 0.35),
            (15, 0.4, 0.6, 0.26),
            (20, 0.4, 0.6, 0.19),
        ];
        for (b, lo, hi, want) in cases {
            let got = median_split_error_prob(b, lo, hi).unwrap();
            assert!((got - want).abs() < 0.005, "b={b} [{lo},{hi}] got {got}");
        }
    }

    #[test]
    fn symmetric_band_at_half_is_continuous() {
        let a = median_cdf(4, 0.5);
        assert!((a - 0.5).abs() < 1e-12);
        let near = median_cdf(4, 0.5 - 1e-9);
        assert!((a - near).abs() < 1e-6);
    }

    #[test]
    fn small_monte_carlo_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = 3usize;
        let reps = 200_000;
        let mut miss = 0usize;
        let mut v = vec![0.0; 2 * b];
        for _ in 0..reps {
            for x in v.iter_mut() {
                *x = rng.random::<f64>();
            }
            v.sort_by(f64::total_cmp);
            let m = 0.5 * (v[b - 1] + v[b]);
            if !(0.25..=0.8).contains(&m) {
                miss += 1;
            }
        }
        let p_mc = miss as f64 / reps as f64;
        let se = (p_mc * (1.0 - p_mc) / reps as f64).sqrt();
        let p = median_split_error_prob(b as u64, 0.25, 0.8).unwrap();
        assert!((p - p_mc).abs() < 4.0 * se, "{p} vs {p_mc}");
    }

    #[test]
    fn invalid_bands_are_rejected() {
        assert!(median_split_error_prob(10, 0.6, 0.4).is_err());
        assert!(median_split_error_prob(10, 0.0, 0.4).is_err());
        assert!(median_split_error_prob(0, 0.2, 0.4).is_err());
    }
}
