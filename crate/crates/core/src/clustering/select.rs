use super::merge::MergeTrace;
use crate::error::{Error, Result};

/// Largest relaxation exponent tried before giving up.
pub const MAX_RELAXATIONS: i32 = 64;

/// Picks the number of clusters from a full merge trace (down to one
/// cluster).
///
/// The baseline is the mean reciprocal Max RIS over the larger half of the
/// trace, `K` in `[m/2, m-1]`. Scanning `K` downward from `m/2 - 1`, the first
/// `K` whose reciprocal reaches `threshold * baseline` marks a merge of
/// dissimilar clusters, so the answer is the cluster count just before it,
/// `K + 1`, kept inside the scanned range. The threshold starts at `f` and is
/// divided by `eta` until something triggers.
pub fn select_k(trace: &MergeTrace, f: f64, eta: f64) -> Result<usize> {
    let m = trace.m();
    if !(f > 1.0) || !(eta > 1.0) {
        return Err(Error::Precondition(format!("need f > 1 and eta > 1, got f = {f}, eta = {eta}")));
    }
    if trace.steps.len() + 1 != m.max(1) || trace.steps.last().is_some_and(|s| s.k != 1) {
        return Err(Error::Precondition("merge trace must run down to one cluster".into()));
    }
    let half = m / 2;
    if half < 2 {
        return Ok(1);
    }
    // reciprocal indexed by resulting K
    let mut recip = vec![0.0; m];
    for s in &trace.steps {
        recip[s.k] = if s.max_ris == 0.0 { f64::INFINITY } else { 1.0 / s.max_ris };
    }
    let upper = &recip[half..m];
    let baseline = upper.iter().sum::<f64>() / upper.len() as f64;
    for i in 0..=MAX_RELAXATIONS {
        let threshold = f / eta.powi(i) * baseline;
        if let Some(k) = (1..half).rev().find(|&k| recip[k] >= threshold) {
            return Ok((k + 1).min(half - 1));
        }
    }
    log::warn!("K selection did not trigger after {MAX_RELAXATIONS} relaxations; using m/2 - 1");
    Ok(half - 1)
}

#[cfg(test)]
mod tests {
    use super::super::merge::MergeStep;
    use super::*;

    fn trace(m: usize, ris: impl Fn(usize) -> f64) -> MergeTrace {
        MergeTrace {
            basic_subclusters: (0..m).map(|v| vec![v]).collect(),
            steps: (1..m).rev().map(|k| MergeStep { a: 0, b: m - k, max_ris: ris(k), k }).collect(),
        }
    }

    #[test]
    fn step_trace_selects_five() {
        let t = trace(16, |k| if k >= 5 { 0.5 } else { 1e-6 });
        assert_eq!(select_k(&t, 1e3, 1.3).unwrap(), 5);
    }

    #[test]
    fn flat_trace_relaxes_to_half_minus_one() {
        let t = trace(16, |_| 0.5);
        assert_eq!(select_k(&t, 1e3, 1.3).unwrap(), 7);
    }

    #[test]
    fn zero_ris_is_infinitely_dissimilar() {
        let t = trace(12, |k| if k == 3 { 0.0 } else { 0.4 });
        assert_eq!(select_k(&t, 1e3, 1.3).unwrap(), 4);
    }

    #[test]
    fn small_m_and_bad_params() {
        assert_eq!(select_k(&trace(3, |_| 0.5), 1e3, 1.3).unwrap(), 1);
        assert!(select_k(&trace(8, |_| 0.5), 1.0, 1.3).is_err());
        let mut t = trace(8, |_| 0.5);
        t.steps.pop();
        assert!(select_k(&t, 1e3, 1.3).is_err());
    }
}
