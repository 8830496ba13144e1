//! ASCII PLY export of labeled point clouds.

use crate::dataset::write_atomic;
use crate::error::Result;
use crate::renderer::LabeledPoint;
use std::fmt::Write as _;
use std::path::Path;

/// Serializes points as ASCII PLY: positions as float properties, color
/// and class label as uchar properties, one vertex element per point.
pub fn ply_text(points: &[LabeledPoint]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ply");
    let _ = writeln!(s, "format ascii 1.0");
    let _ = writeln!(s, "element vertex {}", points.len());
    let _ = writeln!(s, "property float x");
    let _ = writeln!(s, "property float y");
    let _ = writeln!(s, "property float z");
    let _ = writeln!(s, "property uchar red");
    let _ = writeln!(s, "property uchar green");
    let _ = writeln!(s, "property uchar blue");
    let _ = writeln!(s, "property uchar label");
    let _ = writeln!(s, "end_header");
    for p in points {
        let q = |v: f64| ((v.clamp(0.0, 1.0) * 255.0).round()) as u8;
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {}",
            p.position.x as f32,
            p.position.y as f32,
            p.position.z as f32,
            q(p.rgb[0]),
            q(p.rgb[1]),
            q(p.rgb[2]),
            p.class
        );
    }
    s
}

pub fn write_ply(path: &Path, points: &[LabeledPoint]) -> Result<()> {
    write_atomic(path, ply_text(points).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    #[test]
    fn header_counts_and_rows_match() {
        let pts = vec![
            LabeledPoint { position: Vec3::new(0.5, -0.25, 1.0), rgb: [1.0, 0.0, 0.5], class: 2 },
            LabeledPoint { position: Vec3::new(0.0, 0.0, 0.0), rgb: [0.0, 1.0, 0.0], class: 1 },
        ];
        let text = ply_text(&pts);
        assert!(text.starts_with("ply\nformat ascii 1.0\nelement vertex 2\n"));
        let body: Vec<&str> =
            text.split("end_header\n").nth(1).unwrap().trim_end().lines().collect();
        assert_eq!(body.len(), 2);
        assert_eq!(body[0], "0.5 -0.25 1 255 0 128 2");
        assert_eq!(body[1], "0 0 0 0 255 0 1");
        // 7 property lines, one per column.
        assert_eq!(text.matches("property ").count(), 7);
    }

    #[test]
    fn empty_cloud_is_valid() {
        let text = ply_text(&[]);
        assert!(text.contains("element vertex 0"));
        assert!(text.trim_end().ends_with("end_header"));
    }
}
