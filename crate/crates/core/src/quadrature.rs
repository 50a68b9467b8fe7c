//! Adaptive composite Simpson quadrature for vector-valued integrands.

use crate::error::{Error, Result};

/// Relative tolerance used for every integral in the crate.
pub const QUAD_TOL: f64 = 1e-9;
/// Bisection depth beyond which a panel is declared unconverged.
pub const MAX_DEPTH: usize = 40;
const MAX_PANELS: usize = 50_000;

struct Segment {
    a: f64,
    b: f64,
    fa: Vec<f64>,
    fm: Vec<f64>,
    fb: Vec<f64>,
    whole: Vec<f64>,
    tol: f64,
    depth: usize,
}

fn simpson(a: f64, b: f64, fa: &[f64], fm: &[f64], fb: &[f64]) -> Vec<f64> {
    let h = (b - a) / 6.0;
    fa.iter()
        .zip(fm)
        .zip(fb)
        .map(|((x, y), z)| h * (x + 4.0 * y + z))
        .collect()
}

/// Integrates `f` over `[lo, hi]`, where `f(y, out)` writes `dim` values into `out`.
///
/// The interval is first cut into panels no wider than `max_panel_width` so that
/// narrow peaks are resolved; each panel is then bisected until the Simpson
/// estimates of a segment and its halves agree to within its share of
/// `rel_tol * max_k |I_k|` (max norm over the output vector).
pub fn integrate<F>(
    mut f: F,
    dim: usize,
    lo: f64,
    hi: f64,
    max_panel_width: f64,
    rel_tol: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(f64, &mut [f64]),
{
    assert!(hi > lo, "empty integration interval");
    let width = hi - lo;
    let panels = ((width / max_panel_width).ceil() as usize).clamp(1, MAX_PANELS);
    let step = width / panels as f64;
    let mut eval = |y: f64| {
        let mut out = vec![0.0; dim];
        f(y, &mut out);
        out
    };

    // Coarse pass fixes the absolute tolerance.
    let mut nodes = Vec::with_capacity(2 * panels + 1);
    for k in 0..=2 * panels {
        let y = if k == 2 * panels {
            hi
        } else {
            lo + 0.5 * step * k as f64
        };
        nodes.push(eval(y));
    }
    let mut stack = Vec::with_capacity(panels);
    let mut coarse = vec![0.0; dim];
    for p in 0..panels {
        let a = lo + step * p as f64;
        let b = if p + 1 == panels { hi } else { a + step };
        let whole = simpson(a, b, &nodes[2 * p], &nodes[2 * p + 1], &nodes[2 * p + 2]);
        coarse.iter_mut().zip(&whole).for_each(|(c, w)| *c += w);
        stack.push(Segment {
            a,
            b,
            fa: nodes[2 * p].clone(),
            fm: nodes[2 * p + 1].clone(),
            fb: nodes[2 * p + 2].clone(),
            whole,
            tol: 0.0,
            depth: 0,
        });
    }
    let scale = coarse.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let abs_tol = rel_tol * scale.max(f64::MIN_POSITIVE);
    for seg in &mut stack {
        seg.tol = abs_tol * (seg.b - seg.a) / width;
    }

    let mut total = vec![0.0; dim];
    while let Some(seg) = stack.pop() {
        let m = 0.5 * (seg.a + seg.b);
        let lm = eval(0.5 * (seg.a + m));
        let rm = eval(0.5 * (m + seg.b));
        let left = simpson(seg.a, m, &seg.fa, &lm, &seg.fm);
        let right = simpson(m, seg.b, &seg.fm, &rm, &seg.fb);
        let err = left
            .iter()
            .zip(&right)
            .zip(&seg.whole)
            .fold(0.0_f64, |acc, ((l, r), w)| acc.max((l + r - w).abs()));
        if err <= 15.0 * seg.tol {
            for k in 0..dim {
                let refined = left[k] + right[k];
                total[k] += refined + (refined - seg.whole[k]) / 15.0;
            }
            continue;
        }
        if seg.depth + 1 > MAX_DEPTH {
            return Err(Error::QuadratureNotConverged(MAX_DEPTH));
        }
        let half_tol = 0.5 * seg.tol;
        stack.push(Segment {
            a: seg.a,
            b: m,
            fa: seg.fa,
            fm: lm,
            fb: seg.fm.clone(),
            whole: left,
            tol: half_tol,
            depth: seg.depth + 1,
        });
        stack.push(Segment {
            a: m,
            b: seg.b,
            fa: seg.fm,
            fm: rm,
            fb: seg.fb,
            whole: right,
            tol: half_tol,
            depth: seg.depth + 1,
        });
    }
    Ok(total)
}
