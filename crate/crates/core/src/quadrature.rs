//! Gauss rules on intervals and triangles, plus adaptive Gauss–Kronrod
//! integration with dyadic splitting toward an endpoint singularity.

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (&'static [f64], &'static [f64]) {
    const X1: [f64; 1] = [0.0];
    const W1: [f64; 1] = [2.0];
    const X2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
    const W2: [f64; 2] = [1.0, 1.0];
    const X3: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const W3: [f64; 3] = [0.555_555_555_555_555_6, 0.888_888_888_888_888_9, 0.555_555_555_555_555_6];
    const X4: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const W4: [f64; 4] = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    const X5: [f64; 5] = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    const W5: [f64; 5] = [
        0.236_926_885_056_189_1,
        0.478_628_670_499_366_5,
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
    ];
    match order {
        0 | 1 => (&X1, &W1),
        2 => (&X2, &W2),
        3 => (&X3, &W3),
        4 => (&X4, &W4),
        _ => (&X5, &W5),
    }
}

/// Gauss points mapped to `[a, b]` as `(x, w)` pairs.
pub fn gauss_on(a: f64, b: f64, order: usize) -> impl Iterator<Item = (f64, f64)> {
    let (xs, ws) = gauss_legendre(order);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    xs.iter().zip(ws).map(move |(x, w)| (mid + half * x, half * w))
}

/// Symmetric triangle rule in barycentric coordinates `(l1, l2, l3, weight)`,
/// weights summing to 1. Degree 2 (3 points) or degree 4 (6 points).
pub fn triangle_rule(order: usize) -> &'static [[f64; 4]] {
    const DEG2: [[f64; 4]; 3] = [
        [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0],
        [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 1.0 / 3.0],
        [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0],
    ];
    const A: f64 = 0.445_948_490_915_965;
    const B: f64 = 0.091_576_213_509_771;
    const WA: f64 = 0.223_381_589_678_011;
    const WB: f64 = 0.109_951_743_655_322;
    const DEG4: [[f64; 4]; 6] = [
        [A, A, 1.0 - 2.0 * A, WA],
        [A, 1.0 - 2.0 * A, A, WA],
        [1.0 - 2.0 * A, A, A, WA],
        [B, B, 1.0 - 2.0 * B, WB],
        [B, 1.0 - 2.0 * B, B, WB],
        [1.0 - 2.0 * B, B, B, WB],
    ];
    if order <= 2 {
        &DEG2
    } else {
        &DEG4
    }
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * GK_WK[7];
    let mut g = fc * GK_WG[3];
    for j in 0..7 {
        let dx = h * GK_X[j];
        let s = f(c - dx) + f(c + dx);
        k += GK_WK[j] * s;
        if j % 2 == 1 {
            g += GK_WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod on `[a, b]`. Returns `(value, error_estimate,
/// converged)`.
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, max_depth: u32) -> (f64, f64, bool) {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, whole: (f64, f64), tol: f64, depth: u32) -> (f64, f64, bool) {
        let (v, e) = whole;
        if !v.is_finite() {
            return (v, f64::INFINITY, false);
        }
        if e <= tol || depth == 0 {
            return (v, e, e <= tol);
        }
        let m = 0.5 * (a + b);
        let l = gk15(f, a, m);
        let r = gk15(f, m, b);
        let (lv, le, lc) = rec(f, a, m, l, 0.5 * tol, depth - 1);
        let (rv, re, rc) = rec(f, m, b, r, 0.5 * tol, depth - 1);
        (lv + rv, le + re, lc && rc)
    }
    let whole = gk15(f, a, b);
    rec(f, a, b, whole, tol, max_depth)
}

/// Outcome of an integral over `(lo, hi]` whose integrand may blow up at `lo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularIntegral {
    pub value: f64,
    pub converged: bool,
}

/// Integrates over `(lo, hi)` with a possible singularity at `lo` by summing
/// adaptive pieces on intervals that halve their distance to `lo`.
///
/// The sum is declared convergent once `stable_pieces` consecutive pieces
/// each contribute less than `tol * max(1, |sum|)`; the check only looks at a
/// prefix of the piece sequence, so allowing more pieces never turns a
/// convergent verdict into a divergent one.
pub fn integrate_toward<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64, max_pieces: usize) -> SingularIntegral {
    const STABLE_PIECES: usize = 4;
    let mut sum = 0.0;
    let mut right = hi;
    let mut width = hi - lo;
    let mut quiet = 0usize;
    for _ in 0..max_pieces {
        width *= 0.5;
        let left = lo + width;
        if left >= right {
            break;
        }
        let (v, _, ok) = adaptive(f, left, right, tol * 1e-2, 30);
        if !v.is_finite() || !ok {
            return SingularIntegral {
                value: f64::INFINITY,
                converged: false,
            };
        }
        sum += v;
        right = left;
        if v.abs() < tol * sum.abs().max(1.0) {
            quiet += 1;
            if quiet >= STABLE_PIECES {
                return SingularIntegral {
                    value: sum,
                    converged: true,
                };
            }
        } else {
            quiet = 0;
        }
    }
    SingularIntegral {
        value: if quiet > 0 { sum } else { f64::INFINITY },
        converged: false,
    }
}
