//! Statistical face model evaluation, spherical-harmonics shading, and
//! face-to-body mesh merging.
//!
//! Shading uses the real spherical-harmonics basis up to band 2 (nine
//! functions, Condon-Shortley phase omitted) evaluated at unit normals, with
//! one coefficient vector per RGB channel.

use nalgebra::Vector3;
use ndarray::Array2;

use crate::assets::{FaceAsset, MergeSpec};
use crate::body::PosedBody;
use crate::error::{Error, Result};
use crate::math::RigidTransform;

/// `V_F = mean + Σ ζ_k E_shape_k + Σ ε_k E_expr_k`.
pub fn face_geometry(asset: &FaceAsset, zeta: &[f64], epsilon: &[f64]) -> Result<Array2<f64>> {
    check_len("face shape coefficients", zeta.len(), asset.shape_basis.shape()[0])?;
    check_len(
        "face expression coefficients",
        epsilon.len(),
        asset.expression_basis.shape()[0],
    )?;
    let mut out = asset.mean_face.clone();
    for (k, &c) in zeta.iter().enumerate() {
        if c != 0.0 {
            out.scaled_add(c, &asset.shape_basis.index_axis(ndarray::Axis(0), k));
        }
    }
    for (k, &c) in epsilon.iter().enumerate() {
        if c != 0.0 {
            out.scaled_add(c, &asset.expression_basis.index_axis(ndarray::Axis(0), k));
        }
    }
    Ok(out)
}

/// `R = mean + Σ γ_k E_refl_k`, clamped back into `[0, 1]` per channel.
pub fn face_reflectance(asset: &FaceAsset, gamma: &[f64]) -> Result<Array2<f64>> {
    check_len(
        "face reflectance coefficients",
        gamma.len(),
        asset.reflectance_basis.shape()[0],
    )?;
    let mut out = asset.mean_reflectance.clone();
    for (k, &c) in gamma.iter().enumerate() {
        if c != 0.0 {
            out.scaled_add(c, &asset.reflectance_basis.index_axis(ndarray::Axis(0), k));
        }
    }
    out.mapv_inplace(|v| v.clamp(0.0, 1.0));
    Ok(out)
}

/// Area-weighted vertex normals. Every vertex must be referenced by at
/// least one triangle; otherwise the isolated ids are reported.
pub fn vertex_normals(vertices: &Array2<f64>, triangles: &[[u32; 3]]) -> Result<Array2<f64>> {
    let n = vertices.nrows();
    let mut acc = vec![Vector3::<f64>::zeros(); n];
    let mut touched = vec![false; n];
    let at = |i: usize| Vector3::new(vertices[[i, 0]], vertices[[i, 1]], vertices[[i, 2]]);
    for tri in triangles {
        let (a, b, c) = (tri[0] as usize, tri[1] as usize, tri[2] as usize);
        // Cross product length is twice the area, giving area weighting.
        let face_normal = (at(b) - at(a)).cross(&(at(c) - at(a)));
        for &v in &[a, b, c] {
            acc[v] += face_normal;
            touched[v] = true;
        }
    }
    let isolated: Vec<usize> = (0..n).filter(|&i| !touched[i]).collect();
    if !isolated.is_empty() {
        return Err(Error::IsolatedVertices { ids: isolated });
    }
    let mut out = Array2::<f64>::zeros((n, 3));
    for (i, v) in acc.iter().enumerate() {
        let norm = v.norm();
        if norm < 1e-14 {
            return Err(Error::NonUnitNormal { index: i, norm });
        }
        let u = v / norm;
        out[[i, 0]] = u.x;
        out[[i, 1]] = u.y;
        out[[i, 2]] = u.z;
    }
    Ok(out)
}

/// Real spherical-harmonics basis through band 2 at a unit direction,
/// ordered `(0,0), (1,-1), (1,0), (1,1), (2,-2), (2,-1), (2,0), (2,1), (2,2)`.
pub fn sh_basis(n: &Vector3<f64>) -> [f64; 9] {
    const C0: f64 = 0.28209479177387814; // 1 / (2 sqrt(pi))
    const C1: f64 = 0.4886025119029199; // sqrt(3 / (4 pi))
    const C2: f64 = 1.0925484305920792; // sqrt(15 / (4 pi))
    const C3: f64 = 0.31539156525252005; // sqrt(5 / (16 pi))
    const C4: f64 = 0.5462742152960396; // sqrt(15 / (16 pi))
    let (x, y, z) = (n.x, n.y, n.z);
    [
        C0,
        C1 * y,
        C1 * z,
        C1 * x,
        C2 * x * y,
        C2 * y * z,
        C3 * (3.0 * z * z - 1.0),
        C2 * x * z,
        C4 * (x * x - y * y),
    ]
}

/// Shaded color per vertex: `t_i = r_i ⊙ Σ_b μ[c][b] H_b(n_i)`.
/// `mu` is `3 x 9` (one row of nine coefficients per RGB channel); normals
/// must be unit length within `1e-6`.
pub fn sh_shade(
    reflectance: &Array2<f64>,
    normals: &Array2<f64>,
    mu: &Array2<f64>,
) -> Result<Array2<f64>> {
    let n = reflectance.nrows();
    if normals.shape() != [n, 3] {
        return Err(Error::DimensionMismatch {
            what: "normals".into(),
            expected: format!("[{n}, 3]"),
            actual: format!("{:?}", normals.shape()),
        });
    }
    if mu.shape() != [3, 9] {
        return Err(Error::DimensionMismatch {
            what: "illumination coefficients".into(),
            expected: "[3, 9]".into(),
            actual: format!("{:?}", mu.shape()),
        });
    }
    let mut out = Array2::<f64>::zeros((n, 3));
    for i in 0..n {
        let v = Vector3::new(normals[[i, 0]], normals[[i, 1]], normals[[i, 2]]);
        let norm = v.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::NonUnitNormal { index: i, norm });
        }
        let h = sh_basis(&v);
        for c in 0..3 {
            let mut irradiance = 0.0;
            for b in 0..9 {
                irradiance += mu[[c, b]] * h[b];
            }
            out[[i, c]] = reflectance[[i, c]] * irradiance;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Merging
// ---------------------------------------------------------------------------

/// Vertex of one of the two loops being zipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LoopVert {
    A(usize),
    B(usize),
}

/// Monotone zipper between two closed loops given their arc-length
/// parameterizations (both starting at 0, strictly increasing, < 1).
/// Produces exactly `len(pa) + len(pb)` triangles; each advances whichever
/// loop has the smaller next parameter (ties advance the first loop).
pub(crate) fn zipper_triangles(pa: &[f64], pb: &[f64]) -> Vec<[LoopVert; 3]> {
    let (m, n) = (pa.len(), pb.len());
    let ext = |p: &[f64], k: usize| if k < p.len() { p[k] } else { 1.0 + p[0] };
    let mut tris = Vec::with_capacity(m + n);
    let (mut ca, mut cb) = (0usize, 0usize);
    while ca < m || cb < n {
        let cand_a = if ca < m { ext(pa, ca + 1) } else { f64::INFINITY };
        let cand_b = if cb < n { ext(pb, cb + 1) } else { f64::INFINITY };
        if cand_a <= cand_b {
            tris.push([
                LoopVert::A(ca % m),
                LoopVert::B(cb % n),
                LoopVert::A((ca + 1) % m),
            ]);
            ca += 1;
        } else {
            tris.push([
                LoopVert::A(ca % m),
                LoopVert::B(cb % n),
                LoopVert::B((cb + 1) % n),
            ]);
            cb += 1;
        }
    }
    tris
}

/// Rigidly place shaped face vertices onto the posed body: similarity into
/// rig rest space, then the carrying joint's posed transform.
pub fn place_face_on_body(
    face_vertices: &Array2<f64>,
    spec: &MergeSpec,
    posed: &PosedBody,
) -> Result<Array2<f64>> {
    if spec.neck_joint_id >= posed.joint_transforms.len() {
        return Err(Error::InvalidArgument {
            what: format!(
                "neck_joint_id {} out of range (J = {})",
                spec.neck_joint_id,
                posed.joint_transforms.len()
            ),
        });
    }
    let carry: &RigidTransform = &posed.joint_transforms[spec.neck_joint_id];
    let n = face_vertices.nrows();
    let mut out = Array2::<f64>::zeros((n, 3));
    for i in 0..n {
        let v = Vector3::new(face_vertices[[i, 0]], face_vertices[[i, 1]], face_vertices[[i, 2]]);
        let rest = spec.rotation * (v * spec.scale) + spec.translation;
        let world = carry.apply(&rest);
        out[[i, 0]] = world.x;
        out[[i, 1]] = world.y;
        out[[i, 2]] = world.z;
    }
    Ok(out)
}

/// Result of merging the face mesh onto the posed body.
#[derive(Debug, Clone)]
pub struct MergedMesh {
    /// Kept body vertices (in original order) followed by the placed face.
    pub vertices: Array2<f64>,
    /// Re-indexed face triangles followed by the boundary stitch band.
    pub triangles: Vec<[u32; 3]>,
    /// Old body vertex id → merged id (`None` for replaced vertices).
    pub body_index_map: Vec<Option<usize>>,
    /// Merged id of face vertex 0; face vertex `i` maps to `offset + i`.
    pub face_vertex_offset: usize,
    /// Index of the first stitch triangle inside `triangles`.
    pub stitch_start: usize,
}

/// Merge shaped face vertices onto a posed, skinned body.
///
/// The face-region body vertices are dropped, the face is placed with
/// [`place_face_on_body`], and the face boundary loop is stitched to the
/// body boundary loop with a monotone arc-length zipper. Both loop
/// orientations are tried; the one with the shorter total stitch edge
/// length wins (ties keep the original orientation).
pub fn merge_face_body(
    body_vertices: &Array2<f64>,
    face_vertices: &Array2<f64>,
    face: &FaceAsset,
    spec: &MergeSpec,
    posed: &PosedBody,
) -> Result<MergedMesh> {
    let n_body = body_vertices.nrows();
    if face_vertices.nrows() != face.vertex_count() {
        return Err(Error::DimensionMismatch {
            what: "face vertices".into(),
            expected: face.vertex_count().to_string(),
            actual: face_vertices.nrows().to_string(),
        });
    }
    for &id in &spec.body_boundary_loop {
        if id >= n_body {
            return Err(Error::InvalidArgument {
                what: format!("body boundary vertex {id} out of range (N = {n_body})"),
            });
        }
    }
    let region: std::collections::HashSet<usize> = spec.face_region.iter().copied().collect();
    for &id in &spec.face_region {
        if id >= n_body {
            return Err(Error::InvalidArgument {
                what: format!("face-region vertex {id} out of range (N = {n_body})"),
            });
        }
    }
    for &id in &spec.body_boundary_loop {
        if region.contains(&id) {
            return Err(Error::InvalidArgument {
                what: format!("boundary vertex {id} is also in the replaced face region"),
            });
        }
    }

    let placed = place_face_on_body(face_vertices, spec, posed)?;

    // Kept body vertices keep their relative order (and exact coordinates).
    let mut body_index_map: Vec<Option<usize>> = Vec::with_capacity(n_body);
    let mut kept = 0usize;
    for i in 0..n_body {
        if region.contains(&i) {
            body_index_map.push(None);
        } else {
            body_index_map.push(Some(kept));
            kept += 1;
        }
    }
    let face_vertex_offset = kept;
    let n_merged = kept + placed.nrows();
    let mut vertices = Array2::<f64>::zeros((n_merged, 3));
    for i in 0..n_body {
        if let Some(new) = body_index_map[i] {
            for c in 0..3 {
                vertices[[new, c]] = body_vertices[[i, c]];
            }
        }
    }
    for i in 0..placed.nrows() {
        for c in 0..3 {
            vertices[[face_vertex_offset + i, c]] = placed[[i, c]];
        }
    }

    let mut triangles: Vec<[u32; 3]> = face
        .triangles
        .iter()
        .map(|t| t.map(|v| (face_vertex_offset + v as usize) as u32))
        .collect();
    let stitch_start = triangles.len();

    // Loop geometry (merged ids + positions).
    let body_loop_ids: Vec<usize> = spec
        .body_boundary_loop
        .iter()
        .map(|&i| body_index_map[i].expect("boundary excluded from region"))
        .collect();
    let pos = |id: usize| Vector3::new(vertices[[id, 0]], vertices[[id, 1]], vertices[[id, 2]]);
    let p_pos: Vec<Vector3<f64>> = body_loop_ids.iter().map(|&i| pos(i)).collect();

    let face_loop_merged: Vec<usize> = face
        .boundary_loop
        .iter()
        .map(|&i| face_vertex_offset + i)
        .collect();

    // Start the face loop at the vertex nearest the body loop start.
    let q_start = face_loop_merged
        .iter()
        .enumerate()
        .map(|(k, &id)| ((pos(id) - p_pos[0]).norm_squared(), k))
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
        .map(|(_, k)| k)
        .unwrap();

    let nl = face_loop_merged.len();
    let forward: Vec<usize> = (0..nl).map(|k| face_loop_merged[(q_start + k) % nl]).collect();
    let backward: Vec<usize> =
        (0..nl).map(|k| face_loop_merged[(q_start + nl - k % nl) % nl]).collect();

    let pa = arc_length_params(&p_pos)?;
    let mut best: Option<(f64, Vec<[u32; 3]>)> = None;
    for candidate in [&forward, &backward] {
        let q_pos: Vec<Vector3<f64>> = candidate.iter().map(|&i| pos(i)).collect();
        let pb = arc_length_params(&q_pos)?;
        let tris: Vec<[u32; 3]> = zipper_triangles(&pa, &pb)
            .into_iter()
            .map(|t| {
                t.map(|v| match v {
                    LoopVert::A(i) => body_loop_ids[i] as u32,
                    LoopVert::B(j) => candidate[j] as u32,
                })
            })
            .collect();
        let score: f64 = tris
            .iter()
            .map(|t| {
                let (a, b, c) = (pos(t[0] as usize), pos(t[1] as usize), pos(t[2] as usize));
                (a - b).norm() + (b - c).norm() + (c - a).norm()
            })
            .sum();
        // Strict `<` keeps the original orientation on ties.
        if best.as_ref().map(|(s, _)| score < *s).unwrap_or(true) {
            best = Some((score, tris));
        }
    }
    let (_, stitch) = best.unwrap();
    for t in &stitch {
        let (a, b, c) = (pos(t[0] as usize), pos(t[1] as usize), pos(t[2] as usize));
        let area = 0.5 * (b - a).cross(&(c - a)).norm();
        if area < 1e-14 {
            return Err(Error::DegenerateStitch {
                detail: format!("stitch triangle {t:?} has area {area:.3e}"),
            });
        }
    }
    triangles.extend(stitch);

    Ok(MergedMesh {
        vertices,
        triangles,
        body_index_map,
        face_vertex_offset,
        stitch_start,
    })
}

/// Normalized cumulative arc-length parameters for a closed loop, starting
/// at 0 for the first vertex.
fn arc_length_params(loop_pos: &[Vector3<f64>]) -> Result<Vec<f64>> {
    let n = loop_pos.len();
    let mut cum = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        cum[i] = total;
        total += (loop_pos[(i + 1) % n] - loop_pos[i]).norm();
    }
    if total <= 1e-12 {
        return Err(Error::DegenerateStitch {
            detail: "boundary loop has zero total length".into(),
        });
    }
    Ok(cum.into_iter().map(|c| c / total).collect())
}

fn check_len(what: &str, actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::DimensionMismatch {
            what: what.to_string(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        });
    }
    Ok(())
}
