//! Primitive triangle meshes centred at the origin.

use nalgebra::Vector3;

use crate::geometry::TriangleMesh;

/// Axis-aligned cuboid with full extents `dims`, 12 triangles.
pub fn cuboid(dims: Vector3<f64>) -> TriangleMesh {
    let h = dims * 0.5;
    let vertices = crate::geometry::CORNER_SIGNS.iter().map(|s| Vector3::new(s[0] * h.x, s[1] * h.y, s[2] * h.z)).collect();
    // Corner order: 0..3 on z = -h, 4..7 on z = +h (same xy pattern).
    let quads = [[0, 3, 2, 1], [4, 5, 6, 7], [0, 1, 5, 4], [3, 7, 6, 2], [0, 4, 7, 3], [1, 2, 6, 5]];
    let faces = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    TriangleMesh { vertices, faces }
}

/// UV sphere with `stacks` latitude bands and `slices` longitude segments.
pub fn uv_sphere(radius: f64, stacks: usize, slices: usize) -> TriangleMesh {
    let stacks = stacks.max(2);
    let slices = slices.max(3);
    let mut vertices = vec![Vector3::new(0.0, -radius, 0.0)];
    for i in 1..stacks {
        let phi = std::f64::consts::PI * i as f64 / stacks as f64;
        for j in 0..slices {
            let theta = std::f64::consts::TAU * j as f64 / slices as f64;
            vertices.push(Vector3::new(radius * phi.sin() * theta.cos(), -radius * phi.cos(), radius * phi.sin() * theta.sin()));
        }
    }
    vertices.push(Vector3::new(0.0, radius, 0.0));
    let bottom = vertices.len() - 1;
    let ring = |i: usize, j: usize| 1 + i * slices + j % slices;
    let mut faces = Vec::new();
    for j in 0..slices {
        faces.push([0, ring(0, j + 1), ring(0, j)]);
    }
    for i in 0..stacks - 2 {
        for j in 0..slices {
            faces.push([ring(i, j), ring(i, j + 1), ring(i + 1, j + 1)]);
            faces.push([ring(i, j), ring(i + 1, j + 1), ring(i + 1, j)]);
        }
    }
    for j in 0..slices {
        faces.push([bottom, ring(stacks - 2, j), ring(stacks - 2, j + 1)]);
    }
    TriangleMesh { vertices, faces }
}

/// Closed cylinder with its axis along y.
pub fn cylinder(radius: f64, height: f64, slices: usize) -> TriangleMesh {
    let slices = slices.max(3);
    let mut vertices = Vec::with_capacity(2 * slices + 2);
    for &y in &[-0.5 * height, 0.5 * height] {
        for j in 0..slices {
            let theta = std::f64::consts::TAU * j as f64 / slices as f64;
            vertices.push(Vector3::new(radius * theta.cos(), y, radius * theta.sin()));
        }
    }
    let top_c = vertices.len();
    vertices.push(Vector3::new(0.0, -0.5 * height, 0.0));
    let bot_c = vertices.len();
    vertices.push(Vector3::new(0.0, 0.5 * height, 0.0));
    let mut faces = Vec::new();
    for j in 0..slices {
        let k = (j + 1) % slices;
        faces.push([j, k, slices + k]);
        faces.push([j, slices + k, slices + j]);
        faces.push([top_c, k, j]);
        faces.push([bot_c, slices + j, slices + k]);
    }
    TriangleMesh { vertices, faces }
}

/// Axis-aligned rectangle in the plane `z = depth`, spanning `[x0, x1] × [y0, y1]`.
pub fn quad_z(x0: f64, x1: f64, y0: f64, y1: f64, depth: f64) -> TriangleMesh {
    TriangleMesh {
        vertices: vec![Vector3::new(x0, y0, depth), Vector3::new(x1, y0, depth), Vector3::new(x1, y1, depth), Vector3::new(x0, y1, depth)],
        faces: vec![[0, 1, 2], [0, 2, 3]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total_area(m: &TriangleMesh) -> f64 {
        (0..m.faces.len()).map(|f| m.face_area(f)).sum()
    }

    #[test]
    fn cuboid_area_and_extent() {
        let m = cuboid(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(m.faces.len(), 12);
        assert!((total_area(&m) - 2.0 * (2.0 + 3.0 + 6.0)).abs() < 1e-12);
    }

    #[test]
    fn sphere_and_cylinder_areas_approach_analytic() {
        let s = uv_sphere(1.0, 48, 96);
        let a = total_area(&s);
        assert!((a - 4.0 * std::f64::consts::PI).abs() / a < 0.01);
        assert!(s.vertices.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let c = cylinder(0.5, 2.0, 128);
        let expected = std::f64::consts::TAU * 0.5 * 2.0 + 2.0 * std::f64::consts::PI * 0.25;
        assert!((total_area(&c) - expected).abs() / expected < 0.01);
    }
}
