//! Plain (P2) greyscale heatmaps of matrices with entries in [-1, 1].

use std::fmt::Write as _;

use isocaps_core::Mat;

/// `-1 -> 0`, `0 -> 128`, `1 -> 255`; values outside the range are clamped.
pub fn grey_level(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8
}

pub fn to_pgm(m: &Mat) -> String {
    let mut out = format!("P2\n{} {}\n255\n", m.cols(), m.rows());
    for r in 0..m.rows() {
        let row: Vec<String> = m
            .row(r)
            .iter()
            .map(|&v| grey_level(v).to_string())
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levels() {
        assert_eq!(grey_level(-1.0), 0);
        assert_eq!(grey_level(1.0), 255);
        assert_eq!(grey_level(0.0), 128);
        assert_eq!(grey_level(7.0), 255);
    }

    #[test]
    fn header_and_size() {
        let pgm = to_pgm(&Mat::zeros(3, 3));
        let lines: Vec<&str> = pgm.lines().collect();
        assert_eq!(&lines[..3], &["P2", "3 3", "255"]);
        assert_eq!(lines.len(), 6);
    }
}
