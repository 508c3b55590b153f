//! Measurement suite: WER, resegmentation, BLEU, candidate selection,
//! latency statistics and report tables.

pub mod bleu;
pub mod latency;
pub mod mwer;
pub mod report;
pub mod selection;
pub mod wer;

pub use bleu::{corpus_bleu, tokenize_13a, BleuResult};
pub use latency::{latency_stats, LatencyStats};
pub use mwer::{mwer_segment, Segmentation};
pub use selection::{
    mt_rank, select_candidate, source_average, weighted_wer, BleuCell, CandidateRanking,
    DomainReport, Exclusion, Group, MtRanking, WerTable,
};
pub use wer::{align, edit_distance, wer, wer_text, EditOp, WerResult};

/// Rounds half away from zero at `decimals` places, as reports print numbers.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x * scale;
    // Absorb representation error such as 26.105 stored as 26.10499999.
    let nudged = scaled + scaled.signum() * 1e-9 * scaled.abs().max(1.0);
    (nudged.abs() + 0.5).floor().copysign(x) / scale
}

pub fn format_fixed(x: f64, decimals: u32) -> String {
    format!("{:.*}", decimals as usize, round_half_up(x, decimals))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(format_fixed(26.098, 2), "26.10");
        assert_eq!(format_fixed(2.675, 2), "2.68");
        assert_eq!(format_fixed(-1.005, 2), "-1.01");
        assert_eq!(format_fixed(3.7955, 3), "3.796");
    }
}
