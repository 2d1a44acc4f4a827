//! P1 element kernels shared by the operator assembly and the norms.

use crate::coefficients::{CoefficientSpec, ScalarFn};
use crate::geometry::{IntervalMesh, Profile, ThinMesh};
use crate::quadrature::triangle_rule;
use crate::sparse::{CsrMatrix, TripletBuilder};

/// Weighted 2×2 element matrices on `[x_e, x_{e+1}]`:
/// `∫ w_k φ_i' φ_j'` and `∫ w_m φ_i φ_j`.
pub(crate) fn interval_element<K, M>(mesh: &IntervalMesh, e: usize, wk: K, wm: M) -> ([[f64; 2]; 2], [[f64; 2]; 2])
where
    K: Fn(f64) -> f64,
    M: Fn(f64) -> f64,
{
    let (a, b) = mesh.element(e);
    let h = b - a;
    let mut k = [[0.0; 2]; 2];
    let mut m = [[0.0; 2]; 2];
    let d = [-1.0 / h, 1.0 / h];
    for (x, w) in mesh.quadrature(e) {
        let t = (x - a) / h;
        let phi = [1.0 - t, t];
        let ck = w * wk(x);
        let cm = w * wm(x);
        for i in 0..2 {
            for j in 0..2 {
                k[i][j] += ck * d[i] * d[j];
                m[i][j] += cm * phi[i] * phi[j];
            }
        }
    }
    (k, m)
}

/// Stiffness `∫ aⁿ A01 u'φ'` and mass `∫ aⁿ uφ` on the interval.
pub(crate) fn interval_matrices(mesh: &IntervalMesh, profile: &Profile, a01: &ScalarFn) -> (CsrMatrix, CsrMatrix) {
    let n = mesh.num_nodes();
    let mut kt = TripletBuilder::with_capacity(n, 4 * n);
    let mut mt = TripletBuilder::with_capacity(n, 4 * n);
    for e in 0..mesh.num_elements() {
        let (k, m) = interval_element(mesh, e, |x| profile.weight(x) * a01.eval(x, 0.0), |x| profile.weight(x));
        for i in 0..2 {
            for j in 0..2 {
                kt.add(e + i, e + j, k[i][j]);
                mt.add(e + i, e + j, m[i][j]);
            }
        }
    }
    (kt.build(), mt.build())
}

/// Element stiffness of `∫ A^ε ∇^ε u · ∇^ε φ` on triangle `t`.
pub(crate) fn thin_element_stiffness(mesh: &ThinMesh, t: usize, coeff: &CoefficientSpec, eps: f64) -> [[f64; 3]; 3] {
    let (g, area) = mesh.gradients(t);
    let verts = mesh.triangles[t].map(|i| mesh.vertices[i]);
    let mut k = [[0.0; 3]; 3];
    for q in triangle_rule(mesh.quad_order + 1) {
        let x = q[0] * verts[0][0] + q[1] * verts[1][0] + q[2] * verts[2][0];
        let y = q[0] * verts[0][1] + q[1] * verts[1][1] + q[2] * verts[2][1];
        let b = coeff.form_matrix(x, y, eps);
        let w = q[3] * area;
        for i in 0..3 {
            let bi = [b.xx * g[i][0] + b.xy * g[i][1], b.xy * g[i][0] + b.yy * g[i][1]];
            for j in 0..3 {
                k[i][j] += w * (bi[0] * g[j][0] + bi[1] * g[j][1]);
            }
        }
    }
    k
}

/// Exact P1 mass on a triangle: `area/12 · (1 + δ_ij)`.
#[inline]
pub(crate) fn thin_element_mass(area: f64) -> [[f64; 3]; 3] {
    let o = area / 12.0;
    let d = area / 6.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

pub(crate) fn thin_stiffness(mesh: &ThinMesh, coeff: &CoefficientSpec, eps: f64) -> CsrMatrix {
    let n = mesh.num_vertices();
    let mut kt = TripletBuilder::with_capacity(n, 9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let k = thin_element_stiffness(mesh, t, coeff, eps);
        for i in 0..3 {
            for j in 0..3 {
                kt.add(tri[i], tri[j], k[i][j]);
            }
        }
    }
    kt.build()
}

pub(crate) fn thin_mass(mesh: &ThinMesh) -> CsrMatrix {
    let n = mesh.num_vertices();
    let mut mt = TripletBuilder::with_capacity(n, 9 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let m = thin_element_mass(mesh.area(t));
        for i in 0..3 {
            for j in 0..3 {
                mt.add(tri[i], tri[j], m[i][j]);
            }
        }
    }
    mt.build()
}

/// `∫_Ω |∂_y u|²` for a nodal field.
pub(crate) fn thin_dy_energy(mesh: &ThinMesh, u: &[f64]) -> f64 {
    (0..mesh.triangles.len())
        .map(|t| {
            let (g, area) = mesh.gradients(t);
            let tri = mesh.triangles[t];
            let dy: f64 = (0..3).map(|i| u[tri[i]] * g[i][1]).sum();
            area * dy * dy
        })
        .sum()
}
