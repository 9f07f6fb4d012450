//! ASCII PLY export of occupied voxels as colored points.

use std::fmt::Write as _;
use std::path::Path;

use super::scene::class_color;
use crate::losses::SemanticOccGrid;
use crate::{Error, Result};

fn byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One vertex per occupied voxel center. Colors come from `colors` where given,
/// otherwise from the class palette.
pub fn occupancy_ply(
    grid: &SemanticOccGrid,
    colors: Option<&[Option<[f64; 3]>]>,
) -> Result<String> {
    if let Some(c) = colors {
        if c.len() != grid.len() {
            return Err(Error::dim(
                format!("{} voxel colors", grid.len()),
                format!("{}", c.len()),
            ));
        }
    }
    let spec = grid.spec;
    let occupied: Vec<usize> = (0..grid.len()).filter(|&i| grid.is_occupied(i)).collect();
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", occupied.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    s.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for i in occupied {
        let p = spec.center(spec.unflat(i));
        let rgb = colors
            .and_then(|c| c[i])
            .unwrap_or_else(|| class_color(grid.labels[i] as usize, grid.n_classes));
        let _ = writeln!(
            s,
            "{} {} {} {} {} {}",
            p[0] as f32,
            p[1] as f32,
            p[2] as f32,
            byte(rgb[0]),
            byte(rgb[1]),
            byte(rgb[2])
        );
    }
    Ok(s)
}

pub fn write_ply(
    path: &Path,
    grid: &SemanticOccGrid,
    colors: Option<&[Option<[f64; 3]>]>,
) -> Result<()> {
    std::fs::write(path, occupancy_ply(grid, colors)?).map_err(|e| Error::io(path, e))
}

/// Vertex count declared in a PLY header.
pub fn ply_vertex_count(text: &str) -> Option<usize> {
    text.lines()
        .take_while(|l| *l != "end_header")
        .find_map(|l| l.strip_prefix("element vertex ")?.trim().parse().ok())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::scene::{generate_scene, SceneParams};
    use crate::GridSpec;

    #[test]
    fn vertex_count_matches_occupied_voxels() {
        let s = generate_scene(1, &GridSpec::toy(), 4, &SceneParams::default()).unwrap();
        let text = occupancy_ply(&s.gt_occ, Some(&s.gt_color)).unwrap();
        let n = s.gt_occ.occupied_count();
        assert_eq!(ply_vertex_count(&text), Some(n));
        let body = text.split("end_header\n").nth(1).unwrap();
        assert_eq!(body.lines().count(), n);
        let first: Vec<&str> = body.lines().next().unwrap().split(' ').collect();
        assert_eq!(first.len(), 6);
    }

    #[test]
    fn empty_grid_has_header_only() {
        let g = SemanticOccGrid::free(GridSpec::toy(), 3).unwrap();
        let text = occupancy_ply(&g, None).unwrap();
        assert_eq!(ply_vertex_count(&text), Some(0));
        assert!(text.ends_with("end_header\n"));
    }
}
