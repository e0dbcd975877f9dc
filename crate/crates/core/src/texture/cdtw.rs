use nalgebra::{Complex, Vector2};

use super::contour::Contour;

/// Number of evenly spaced cyclic start offsets tried on the target.
pub const CYCLIC_OFFSETS: usize = 16;

/// Additional start offsets: those with the best rigid diagonal alignment.
pub const RIGID_OFFSETS: usize = 2;

/// Dense map from source samples to continuous target parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    /// `u[i]` is the target parameter matched to source sample `i`,
    /// unwrapped so the sequence is non-decreasing; reduce modulo the
    /// target length to index it.
    pub u: Vec<f64>,
    pub cost: f64,
    /// Target start offset of the winning alignment.
    pub offset: usize,
}

impl Correspondence {
    pub fn identity(n: usize) -> Self {
        Correspondence { u: (0..n).map(|i| i as f64).collect(), cost: 0.0, offset: 0 }
    }

    /// Non-decreasing and spanning less than one full turn.
    pub fn is_monotone(&self, target_len: usize) -> bool {
        self.u.windows(2).all(|w| w[1] >= w[0])
            && match (self.u.first(), self.u.last()) {
                (Some(a), Some(b)) => b - a < target_len as f64,
                _ => true,
            }
    }
}

fn normalized(c: &Contour) -> Vec<Vector2<f64>> {
    let s = if c.scale > 0.0 { c.scale } else { 1.0 };
    c.points.iter().map(|p| (p - c.centroid) / s).collect()
}

/// Rotation angle best aligning `from[i]` onto `to[i]`.
fn best_rotation(from: &[Vector2<f64>], to: &[Vector2<f64>]) -> f64 {
    let (mut c, mut s) = (0.0, 0.0);
    for (a, b) in from.iter().zip(to) {
        c += a.dot(b);
        s += a.perp(b);
    }
    s.atan2(c)
}

/// Dynamic time warping over the cyclically shifted target. Returns the
/// path cost and, per source index, the mean matched target index.
fn dtw(p: &[Vector2<f64>], q: &[Vector2<f64>]) -> (f64, Vec<f64>) {
    let (n, m) = (p.len(), q.len());
    let mut d = vec![f64::INFINITY; n * m];
    let cost = |i: usize, j: usize| (p[i] - q[j]).norm_squared();
    for i in 0..n {
        for j in 0..m {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut b = f64::INFINITY;
                if i > 0 && j > 0 {
                    b = b.min(d[(i - 1) * m + j - 1]);
                }
                if i > 0 {
                    b = b.min(d[(i - 1) * m + j]);
                }
                if j > 0 {
                    b = b.min(d[i * m + j - 1]);
                }
                b
            };
            d[i * m + j] = best + cost(i, j);
        }
    }
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        sums[i] += j as f64;
        counts[i] += 1;
        if i == 0 && j == 0 {
            break;
        }
        // Preference on ties: diagonal, then source step, then target step.
        let diag = if i > 0 && j > 0 { d[(i - 1) * m + j - 1] } else { f64::INFINITY };
        let up = if i > 0 { d[(i - 1) * m + j] } else { f64::INFINITY };
        let left = if j > 0 { d[i * m + j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    let u = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    (d[n * m - 1], u)
}

/// Start offsets whose one-to-one diagonal matching, after the best
/// rotation, leaves the smallest residual. Scans every cyclic shift.
fn rigid_offsets(p: &[Vector2<f64>], q: &[Vector2<f64>]) -> Vec<usize> {
    let (n, m) = (p.len(), q.len());
    // Residual = |p|² + |q|² − 2·|Σ conj(q)·p|, so rank by the magnitude.
    let mut scored: Vec<(f64, usize)> = (0..m)
        .map(|o| {
            let (mut c, mut s) = (0.0, 0.0);
            for (i, a) in p.iter().enumerate() {
                let b = q[(i * m / n + o) % m];
                c += b.dot(a);
                s += b.perp(a);
            }
            (-c.hypot(s), o)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(RIGID_OFFSETS).map(|(_, o)| o).collect()
}

/// Cyclic dynamic-time-warping match after centroid, scale and rotation
/// normalization. Tries [`CYCLIC_OFFSETS`] evenly spaced target start
/// offsets plus the [`RIGID_OFFSETS`] best rigid ones; the lowest cost
/// wins and ties keep the smaller offset.
pub fn cdtw_match(source: &Contour, target: &Contour) -> Correspondence {
    let p = normalized(source);
    let q = normalized(target);
    let m = q.len();
    let mut offsets: Vec<usize> =
        (0..CYCLIC_OFFSETS).map(|k| ((k * m) as f64 / CYCLIC_OFFSETS as f64).round() as usize % m).collect();
    offsets.extend(rigid_offsets(&p, &q));
    offsets.sort_unstable();
    offsets.dedup();
    let mut best: Option<Correspondence> = None;
    for offset in offsets {
        let shifted: Vec<Vector2<f64>> = (0..m).map(|j| q[(j + offset) % m]).collect();
        let diag: Vec<Vector2<f64>> = (0..p.len()).map(|i| shifted[i * m / p.len()]).collect();
        let (sn, cs) = best_rotation(&diag, &p).sin_cos();
        let rotated: Vec<Vector2<f64>> =
            shifted.iter().map(|v| Vector2::new(cs * v.x - sn * v.y, sn * v.x + cs * v.y)).collect();
        let (cost, u) = dtw(&p, &rotated);
        if best.as_ref().is_none_or(|b| cost < b.cost) {
            let u = u.into_iter().map(|x| x + offset as f64).collect();
            best = Some(Correspondence { u, cost, offset });
        }
    }
    best.expect("at least one offset")
}

/// Closed-form least-squares 2D similarity `z ↦ a·z + b` (complex form).
pub fn fit_similarity_2d(src: &[Vector2<f64>], dst: &[Vector2<f64>]) -> (Complex<f64>, Complex<f64>) {
    let n = src.len() as f64;
    let cz = |v: &Vector2<f64>| Complex::new(v.x, v.y);
    let ms = src.iter().map(cz).sum::<Complex<f64>>() / n;
    let md = dst.iter().map(cz).sum::<Complex<f64>>() / n;
    let mut num = Complex::new(0.0, 0.0);
    let mut den = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let (s, d) = (cz(s) - ms, cz(d) - md);
        num += s.conj() * d;
        den += s.norm_sqr();
    }
    let a = if den > 0.0 { num / den } else { Complex::new(1.0, 0.0) };
    (a, md - a * ms)
}

/// Mean squared residual of corresponded pairs after the best 2D similarity
/// from source to target (target pixel units).
pub fn deformation_energy(corr: &Correspondence, source: &Contour, target: &Contour) -> f64 {
    let dst: Vec<Vector2<f64>> = corr.u.iter().map(|&u| target.point_at(u)).collect();
    let (a, b) = fit_similarity_2d(&source.points, &dst);
    let n = dst.len() as f64;
    source
        .points
        .iter()
        .zip(&dst)
        .map(|(s, d)| {
            let z = a * Complex::new(s.x, s.y) + b;
            (z.re - d.x).powi(2) + (z.im - d.y).powi(2)
        })
        .sum::<f64>()
        / n
}

/// Candidate with minimal deformation energy; ties keep the lowest index.
pub fn select_candidate(cloth: &Contour, candidates: &[Contour]) -> Option<(usize, Correspondence, f64)> {
    let mut best: Option<(usize, Correspondence, f64)> = None;
    for (k, cand) in candidates.iter().enumerate() {
        let corr = cdtw_match(cloth, cand);
        let e = deformation_energy(&corr, cloth, cand);
        if best.as_ref().is_none_or(|b| e < b.2) {
            best = Some((k, corr, e));
        }
    }
    best
}
