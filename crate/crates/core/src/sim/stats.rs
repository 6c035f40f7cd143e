use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Outcome of a chi-square test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
}

fn finish(statistic: f64, df: f64) -> ChiSquare {
    let p_value = if df <= 0.0 { 1.0 } else { ChiSquared::new(df).unwrap().sf(statistic) };
    ChiSquare { statistic, df, p_value }
}

/// Goodness of fit of `counts` to the uniform distribution over its cells.
pub fn chi_square_uniform(counts: &[u64]) -> ChiSquare {
    let total: u64 = counts.iter().sum();
    if total == 0 || counts.len() < 2 {
        return finish(0.0, 0.0);
    }
    let e = total as f64 / counts.len() as f64;
    let stat = counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    finish(stat, counts.len() as f64 - 1.0)
}

/// Homogeneity of two histograms over the same cells.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquare {
    assert_eq!(a.len(), b.len(), "histograms over different cells");
    let (ta, tb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let total = ta + tb;
    let mut stat = 0.0;
    let mut cells = 0;
    for (&x, &y) in a.iter().zip(b) {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        cells += 1;
        for (o, t) in [(x as f64, ta), (y as f64, tb)] {
            let e = t * col / total;
            if e > 0.0 {
                stat += (o - e).powi(2) / e;
            }
        }
    }
    finish(stat, (cells as f64 - 1.0).max(0.0))
}

pub fn histogram(trace: &[u32], cells: u32) -> Vec<u64> {
    let mut h = vec![0u64; cells as usize];
    for &x in trace {
        h[x as usize] += 1;
    }
    h
}

/// Histogram of consecutive pairs `(x_t, x_{t+1})`, over `cells²` cells.
pub fn pair_histogram(trace: &[u32], cells: u32) -> Vec<u64> {
    let mut h = vec![0u64; cells as usize * cells as usize];
    for w in trace.windows(2) {
        h[w[0] as usize * cells as usize + w[1] as usize] += 1;
    }
    h
}
