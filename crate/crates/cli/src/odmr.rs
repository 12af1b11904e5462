use nvlab_core::sim::SweepResult;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dip {
    pub center_mhz: f64,
    /// Drop below the off-resonance baseline, in normalized units.
    pub depth: f64,
}

/// Vertex of the least-squares parabola through the points.
fn parabola_vertex(x: &[f64], y: &[f64]) -> Option<f64> {
    let x0 = x[x.len() / 2];
    // Normal equations of y = a + b u + c u², u = x - x0.
    let mut m = [[0.0f64; 3]; 3];
    let mut r = [0.0f64; 3];
    for (&xi, &yi) in x.iter().zip(y) {
        let u = xi - x0;
        let basis = [1.0, u, u * u];
        for i in 0..3 {
            r[i] += basis[i] * yi;
            for j in 0..3 {
                m[i][j] += basis[i] * basis[j];
            }
        }
    }
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    if d == 0.0 {
        return None;
    }
    // Cramer's rule for b and c.
    let solve = |col: usize| {
        let mut mc = m;
        for (row, v) in mc.iter_mut().zip(r) {
            row[col] = v;
        }
        det(&mc) / d
    };
    let (b, c) = (solve(1), solve(2));
    (c > 0.0).then(|| x0 - 0.5 * b / c)
}

fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[((v.len() - 1) as f64 * q).round() as usize]
}

/// Resonance dips: interior local minima over a window of half a
/// linewidth that fall clearly below the median level, refined by a
/// least-squares parabola over the central ±0.3 linewidth. Minima closer than one linewidth
/// are merged.
pub fn find_dips(scan: &SweepResult, linewidth_mhz: f64) -> Vec<Dip> {
    let xs = scan.xs();
    let ys = scan.means();
    let n = xs.len();
    if n < 3 {
        return Vec::new();
    }
    let baseline = percentile(&ys, 0.5);
    let noise = percentile(&scan.points.iter().map(|p| p.stderr).collect::<Vec<_>>(), 0.5);
    let deepest = baseline - ys.iter().copied().fold(f64::INFINITY, f64::min);
    // Noise minima stay within a few standard errors; a real line is also
    // not much shallower than the deepest one.
    let threshold = (8.0 * noise).max(0.1 * deepest).max(1e-6);
    let step = (xs[n - 1] - xs[0]) / (n - 1) as f64;
    let half = ((0.5 * linewidth_mhz / step).round() as usize).max(1);
    let core = ((0.3 * linewidth_mhz / step).round() as usize).max(1);

    let mut dips: Vec<(usize, Dip)> = Vec::new();
    for i in 1..n - 1 {
        let depth = baseline - ys[i];
        if depth <= threshold || !(ys[i] < ys[i - 1] || ys[i] < ys[i + 1]) {
            continue;
        }
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        if (lo..hi).any(|j| ys[j] < ys[i]) {
            continue;
        }
        let (a, b) = (i.saturating_sub(core), (i + core + 1).min(n));
        let center = parabola_vertex(&xs[a..b], &ys[a..b])
            .filter(|c| (xs[a]..=xs[b - 1]).contains(c))
            .unwrap_or(xs[i]);
        let dip = Dip { center_mhz: center, depth };
        match dips.last_mut() {
            Some((_, last)) if center - last.center_mhz < linewidth_mhz => {
                if dip.depth > last.depth {
                    *last = dip;
                }
            }
            _ => dips.push((i, dip)),
        }
    }
    dips.into_iter().map(|(_, d)| d).collect()
}
