//! Two-sided Fisher exact test for 2x2 tables.

use crate::error::{Error, Result};

/// Relative tolerance when comparing table probabilities to the observed one.
const REL_SLACK: f64 = 1e-12;

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for k in 1..=n {
        t[k] = t[k - 1] + (k as f64).ln();
    }
    t
}

/// Two-sided p-value for `[[a, b], [c, d]]`: the total probability, under the
/// hypergeometric null with fixed margins, of tables no more likely than the
/// observed one. Tables with an empty margin carry no information and give 1.
pub fn fisher_exact(table: [[u64; 2]; 2]) -> Result<f64> {
    let [[a, b], [c, d]] = table;
    let n = a
        .checked_add(b)
        .and_then(|x| x.checked_add(c))
        .and_then(|x| x.checked_add(d))
        .ok_or_else(|| Error::invalid("table counts overflow"))?;
    if n > 10_000_000 {
        return Err(Error::invalid("table too large"));
    }
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let c2 = b + d;
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return Ok(1.0);
    }
    let lf = ln_factorials(n as usize);
    let f = |k: u64| lf[k as usize];
    let base = f(r1) + f(r2) + f(c1) + f(c2) - f(n);
    let ln_p = |x: u64| base - f(x) - f(r1 - x) - f(c1 - x) - f(r2 + x - c1);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let p_obs = ln_p(a).exp();
    let mut p = 0.0;
    for x in lo..=hi {
        let px = ln_p(x).exp();
        if px <= p_obs * (1.0 + REL_SLACK) {
            p += px;
        }
    }
    Ok(p.min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert!((fisher_exact([[2, 0], [0, 2]]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((fisher_exact([[3, 5], [3, 5]]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fisher_exact([[0, 0], [3, 4]]).unwrap(), 1.0);
        // Classic tea-tasting table.
        assert!((fisher_exact([[3, 1], [1, 3]]).unwrap() - 0.4857142857142857).abs() < 1e-12);
    }
}
