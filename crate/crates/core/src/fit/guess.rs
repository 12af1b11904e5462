//! Starting values for the optimizer.

use std::f64::consts::TAU;

use super::{FitError, FitModel, FitProblem};

/// Weighted least-squares line `y = a + b x`; returns `(a, b)`.
fn linear_regression(xs: &[f64], ys: &[f64], ws: &[f64]) -> Option<(f64, f64)> {
    if xs.len() < 2 {
        return None;
    }
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).zip(ws).map(|((x, y), w)| w * (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    Some((my - b * mx, b))
}

/// Fits `ln(h) = a + b u` to heights `h > 0`, weighting each point by `h²`
/// so that the noisy, near-zero tail does not dominate the logarithm.
fn log_linear_decay(us: &[f64], hs: &[f64]) -> Option<f64> {
    let ls: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ws: Vec<f64> = hs.iter().map(|h| h * h).collect();
    let (_, slope) = linear_regression(us, &ls, &ws)?;
    (slope < 0.0).then(|| -1.0 / slope)
}

fn median_spacing(xs: &[f64]) -> f64 {
    let mut d: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

fn power_at(xs: &[f64], ys: &[f64], f: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let ph = TAU * f * x;
        re += y * ph.cos();
        im -= y * ph.sin();
    }
    re * re + im * im
}

/// Dominant frequency (cycles per unit of `x`) of the mean-subtracted data,
/// searched above `1.5 / span` on an 8× oversampled grid with a parabolic
/// refinement. The spectrum is weighted by `f²` so the tail of a decaying
/// baseline does not mask the oscillation. Works on non-uniform grids.
pub(crate) fn spectral_peak(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let span = xs[xs.len() - 1] - xs[0];
    if !(span > 0.0) || xs.len() < 4 {
        return None;
    }
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let centered: Vec<f64> = ys.iter().map(|y| y - mean).collect();
    let nyquist = 0.5 / median_spacing(xs);
    let df = 1.0 / (8.0 * span);
    let k0 = (1.5 / span / df).ceil() as usize;
    let k1 = (nyquist / df).floor() as usize;
    if k1 <= k0 + 2 {
        return None;
    }
    let spec: Vec<f64> = (k0..=k1)
        .map(|k| {
            let f = k as f64 * df;
            f * f * power_at(xs, &centered, f)
        })
        .collect();
    let (i, _) = spec.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let mut f = (k0 + i) as f64 * df;
    if i > 0 && i + 1 < spec.len() {
        let (a, b, c) = (spec[i - 1], spec[i], spec[i + 1]);
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            f += 0.5 * (a - c) / denom * df;
        }
    }
    Some(f)
}

/// Indices that are maxima over a window of `half` samples either side.
fn local_maxima(ys: &[f64], half: usize) -> Vec<usize> {
    (0..ys.len())
        .filter(|&i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(ys.len());
            (lo..hi).all(|j| ys[j] <= ys[i])
        })
        .collect()
}

/// Decay constant from `ln(y - offset)` regressed on `u` over the envelope
/// maxima that stand clear of the offset.
fn envelope_decay(us: &[f64], ys: &[f64], offset: f64, amplitude: f64, half: usize) -> Option<f64> {
    let (eu, eh): (Vec<f64>, Vec<f64>) = local_maxima(ys, half)
        .into_iter()
        .filter(|&i| ys[i] - offset > 0.1 * amplitude)
        .map(|i| (us[i], ys[i] - offset))
        .unzip();
    log_linear_decay(&eu, &eh)
}

fn samples_per_period(xs: &[f64], freq: f64) -> usize {
    ((1.0 / freq / median_spacing(xs)) / 3.0).floor().max(1.0) as usize
}

/// Heuristic starting vector. Fixed parameters take their fixed values,
/// explicit initial values are honoured, and everything is clamped into the
/// bounds.
pub fn initial_guess(problem: &FitProblem) -> Result<Vec<f64>, FitError> {
    let xs = problem.xs();
    let ys = problem.ys();
    let ymin = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let ymax = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = ymax - ymin;
    if !(range > 1e-12 * ymax.abs().max(ymin.abs()).max(1e-300)) {
        return Err(FitError::FlatData);
    }
    let span = xs[xs.len() - 1] - xs[0];

    let mut guess = match problem.model {
        FitModel::T1 => {
            let (t, h): (Vec<f64>, Vec<f64>) = xs
                .iter()
                .zip(&ys)
                .filter(|(_, y)| *y - ymin > 0.3 * range)
                .map(|(x, y)| (*x, y - ymin))
                .unzip();
            let t1 = log_linear_decay(&t, &h).unwrap_or(span / 3.0);
            vec![t1, range, ymin]
        }
        FitModel::Rabi => {
            let freq = spectral_peak(&xs, &ys).unwrap_or(2.0 / span);
            let us: Vec<f64> = xs.iter().map(|x| x * 1e-3).collect();
            let t2s = envelope_decay(&us, &ys, ymin, range, samples_per_period(&xs, freq))
                .unwrap_or(0.5 * span * 1e-3);
            vec![freq * 1e3, 0.0, t2s, range, ymin]
        }
        FitModel::HahnEcho => {
            let tail = (xs.len() / 10).max(1);
            let offset = ys[ys.len() - tail..].iter().sum::<f64>() / tail as f64;
            let amplitude = (ys[0] - offset).abs().max(0.5 * range);
            let f_a = spectral_peak(&xs, &ys).unwrap_or(2.0 / span);
            // Decay of exp(-2τ/T2): regress against 2τ.
            let two_tau: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
            let t2 = envelope_decay(&two_tau, &ys, offset, amplitude, samples_per_period(&xs, f_a)).unwrap_or(span);
            let f_b = (0.25 / span).min(0.5 * f_a);
            vec![t2, 1.0, 1.0, f_a, f_b, amplitude, offset]
        }
    };

    for (g, p) in guess.iter_mut().zip(&problem.params) {
        if let Some(v) = p.fixed.or(p.initial) {
            *g = v;
        }
        *g = g.clamp(p.lower, p.upper);
    }
    Ok(guess)
}

/// Deterministic perturbations of the echo guess: the first start is the
/// guess itself, the rest vary the poorly identified (T2, k, f_b) triple.
pub(crate) fn echo_starts(problem: &FitProblem, base: &[f64], count: usize) -> Vec<Vec<f64>> {
    const PERTURB: [(f64, f64, f64); 5] = [(1.0, 1.0, 1.0), (1.0, 3.0, 1.0), (0.8, 2.0, 2.0), (1.25, 2.0, 0.5), (1.0, 0.5, 3.0)];
    (0..count)
        .map(|i| {
            let (t2s, k, fbs) = PERTURB[i % PERTURB.len()];
            let mut s = base.to_vec();
            if i > 0 {
                s[0] *= t2s;
                s[2] = k;
                s[4] *= fbs;
            }
            for (v, p) in s.iter_mut().zip(&problem.params) {
                if let Some(fixed) = p.fixed.or(if i == 0 { p.initial } else { None }) {
                    *v = fixed;
                }
                *v = v.clamp(p.lower, p.upper);
            }
            s
        })
        .collect()
}
