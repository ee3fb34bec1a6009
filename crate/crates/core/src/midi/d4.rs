use crate::signal::{DescriptorKind, DescriptorTensor};

/// Neighbor-interval features per note: raw intervals over two octaves and
/// clamped intervals. A missing neighbor contributes a zero interval.
pub fn d4_descriptor(pitches: &[u8]) -> DescriptorTensor {
    let n = pitches.len();
    let mut values = Vec::with_capacity(n * 4);
    for i in 0..n {
        let prev = if i > 0 { pitches[i] as f64 - pitches[i - 1] as f64 } else { 0.0 };
        let next = if i + 1 < n { pitches[i + 1] as f64 - pitches[i] as f64 } else { 0.0 };
        values.extend([prev / 24.0, next / 24.0, (prev / 12.0).clamp(-2.0, 2.0) / 2.0, (next / 12.0).clamp(-2.0, 2.0) / 2.0]);
    }
    DescriptorTensor { kind: DescriptorKind::D4, frames: n, values, degenerate: Vec::new() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn major_triad_middle_row() {
        let d = d4_descriptor(&[60, 64, 67]);
        let want = [4.0 / 24.0, 3.0 / 24.0, 4.0 / 12.0 / 2.0, 3.0 / 12.0 / 2.0];
        for (a, b) in d.row(1).iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(d.row(0)[0], 0.0);
        assert_eq!(d.row(2)[1], 0.0);
    }

    #[test]
    fn single_note_is_zero() {
        assert_eq!(d4_descriptor(&[60]).values, vec![0.0; 4]);
    }

    #[test]
    fn wide_interval_clamps() {
        let d = d4_descriptor(&[40, 70]);
        assert!((d.row(0)[1] - 1.25).abs() < 1e-15);
        assert_eq!(d.row(0)[3], 1.0);
    }
}
