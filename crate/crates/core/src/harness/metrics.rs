use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("pass@k needs 0 <= c <= n and 1 <= k <= n, got n={n} c={c} k={k}")]
pub struct PassAtKError {
    pub n: u32,
    pub c: u32,
    pub k: u32,
}

/// Unbiased pass@k estimate from `n` trials with `c` successes:
/// `1 - C(n-c, k) / C(n, k)`, evaluated as a running product so no
/// binomial coefficient is ever formed.
pub fn pass_at_k(n: u32, c: u32, k: u32) -> Result<f64, PassAtKError> {
    if c > n || k == 0 || k > n {
        return Err(PassAtKError { n, c, k });
    }
    if c == 0 {
        return Ok(0.0);
    }
    if n - c < k {
        return Ok(1.0);
    }
    if k == 1 {
        return Ok(f64::from(c) / f64::from(n));
    }
    let fail_all: f64 = (n - c + 1..=n).map(|i| 1.0 - f64::from(k) / f64::from(i)).product();
    Ok(1.0 - fail_all)
}
