//! Plain-text landmark and transform files.

use std::path::Path;

use super::similarity::{Point, SimilarityTransform};
use crate::error::{Error, Result};

/// Parses one face per line, `x,y` pairs separated by commas.
pub fn parse_landmarks(text: &str) -> Result<Vec<Vec<Point>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let vals = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::input(format!("line {}: {e}", i + 1)))?;
            if vals.len() % 2 != 0 || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("line {}: expected finite x,y pairs", i + 1)));
            }
            Ok(vals.chunks(2).map(|c| [c[0], c[1]]).collect())
        })
        .collect()
}

pub fn format_landmarks(faces: &[Vec<Point>]) -> String {
    let mut out = String::new();
    for face in faces {
        let line: Vec<String> = face.iter().flat_map(|p| [p[0].to_string(), p[1].to_string()]).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn read_landmarks(path: &Path) -> Result<Vec<Vec<Point>>> {
    parse_landmarks(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_landmarks(path: &Path, faces: &[Vec<Point>]) -> Result<()> {
    std::fs::write(path, format_landmarks(faces)).map_err(|e| Error::io(path, e))
}

/// Six whitespace- or comma-separated reals, row-major 2×3.
pub fn parse_transform(text: &str) -> Result<SimilarityTransform> {
    let vals = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(str::parse::<f64>)
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::input(format!("transform: {e}")))?;
    let m: [f64; 6] = vals
        .try_into()
        .map_err(|v: Vec<f64>| Error::input(format!("transform needs 6 values, got {}", v.len())))?;
    SimilarityTransform::from_matrix(m)
}

pub fn format_transform(t: &SimilarityTransform) -> String {
    let m = t.matrix();
    format!("{} {} {}\n{} {} {}\n", m[0], m[1], m[2], m[3], m[4], m[5])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn landmark_round_trip() {
        let faces = vec![vec![[1.5, 2.0], [3.0, -4.25]], vec![[0.0, 0.0]]];
        assert_eq!(parse_landmarks(&format_landmarks(&faces)).unwrap(), faces);
        assert!(parse_landmarks("1,2,3\n").is_err());
        assert!(parse_landmarks("1,x\n").is_err());
    }

    #[test]
    fn transform_round_trip() {
        let t = SimilarityTransform::from_params(1.25, 0.5, [3.0, 4.0]);
        assert_eq!(parse_transform(&format_transform(&t)).unwrap(), t);
        assert!(parse_transform("1 2 3").is_err());
    }
}
