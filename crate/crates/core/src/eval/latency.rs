use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub count: usize,
    pub avg: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std: f64,
}

pub fn latency_stats(batch_ms: &[f64]) -> Result<LatencyStats> {
    if batch_ms.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: batch_ms.len(),
        });
    }
    let n = batch_ms.len() as f64;
    let avg = batch_ms.iter().sum::<f64>() / n;
    let var = batch_ms.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(LatencyStats {
        count: batch_ms.len(),
        avg,
        std: var.sqrt(),
    })
}
