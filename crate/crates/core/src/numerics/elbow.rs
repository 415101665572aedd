use crate::error::{invalid, Result};

/// Knee point of a sequence: the index whose point `(i, s_i)` lies farthest
/// from the chord joining the first and last points. Ties go to the smallest
/// index; a zero-length chord returns 0.
pub fn elbow_index(s: &[f64]) -> Result<usize> {
    let n = s.len();
    if n < 2 {
        return invalid(format!("elbow needs at least 2 values, got {n}"));
    }
    let start = (0.0, s[0]);
    let chord = ((n - 1) as f64 - start.0, s[n - 1] - start.1);
    let len = (chord.0 * chord.0 + chord.1 * chord.1).sqrt();
    if len == 0.0 {
        return Ok(0);
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &si) in s.iter().enumerate() {
        let w = (i as f64 - start.0, si - start.1);
        // |w - (w·u)u| in 2D is |w × chord| / |chord|; no normalization before
        // the cross product keeps both endpoints at exactly zero.
        let d = (w.0 * chord.1 - w.1 * chord.0).abs() / len;
        if d > best.1 {
            best = (i, d);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(elbow_index(&[0.0, 1.0, 1.0, 1.0, 1.0]).unwrap(), 1);
        assert_eq!(elbow_index(&[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap(), 0);
        assert_eq!(elbow_index(&[0.2, 0.8, 0.9, 0.95, 1.0]).unwrap(), 1);
        assert_eq!(elbow_index(&[0.3, 0.3, 0.3]).unwrap(), 0);
        assert!(elbow_index(&[1.0]).is_err());
        assert_eq!(elbow_index(&[0.9321, 1.0]).unwrap(), 0);
    }
}
