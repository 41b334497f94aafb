//! Piecewise-linear speed profiles: least-squares fitting and evaluation.
//!
//! Profile time `t_rel` runs from 0 (event start) to 5 s (impact); after 5 s the
//! speed is held. Event time `t` relates to it by `t_rel = t + 5`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{SpeedProfile, EVENT_SPAN};

/// Speed range below which only a constant or a single line is considered.
pub const SMALL_CHANGE: f64 = 0.5;
/// Final-segment slopes below this magnitude are treated as steady.
pub const STEADY_SLOPE: f64 = 0.05;
/// Shortest segment allowed during breakpoint search (s).
pub const MIN_SEGMENT: f64 = 0.2;

const TIE: f64 = 1e-10;

/// Segment layouts, listed in forward time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    S,
    One,
    OneS,
    TwoOne,
    TwoOneS,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::S,
        Variant::One,
        Variant::OneS,
        Variant::TwoOne,
        Variant::TwoOneS,
    ];

    /// Number of predictors used by the adjusted R-squared.
    pub fn predictors(self) -> usize {
        match self {
            Variant::S => 0,
            Variant::One => 1,
            Variant::OneS => 2,
            Variant::TwoOne => 3,
            Variant::TwoOneS => 4,
        }
    }

    fn breaks(self) -> usize {
        match self {
            Variant::S | Variant::One => 0,
            Variant::OneS | Variant::TwoOne => 1,
            Variant::TwoOneS => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub profile: SpeedProfile,
    pub n_b: usize,
    pub r2_adj: f64,
    pub a_min: f64,
    pub variant: Variant,
}

impl SpeedProfile {
    /// Knot times (profile clock) and speeds; the speed is linear between knots.
    fn knots(&self) -> [(f64, f64); 4] {
        let t0 = EVENT_SPAN - self.span();
        let v0 = self.v_l_init();
        let t1 = t0 + self.tau_2;
        let v1 = v0 + self.a_2 * self.tau_2;
        let t2 = t1 + self.tau_1;
        [(t0, v0), (t1, v1), (t2, self.v_c), (EVENT_SPAN, self.v_c)]
    }

    /// Speed at `t_rel` without validation; callers validate once up front.
    pub fn speed_at(&self, t_rel: f64) -> f64 {
        let k = self.knots();
        let v = if t_rel <= k[0].0 {
            k[0].1
        } else if t_rel >= EVENT_SPAN {
            self.v_c
        } else {
            let i = k.iter().rposition(|(t, _)| *t <= t_rel).unwrap_or(0).min(2);
            let ((ta, va), (tb, vb)) = (k[i], k[i + 1]);
            if tb > ta {
                va + (vb - va) * (t_rel - ta) / (tb - ta)
            } else {
                vb
            }
        };
        v.max(0.0)
    }

    /// Distance travelled over `[0, t_rel]` (exact for the piecewise-linear speed).
    pub fn distance_to(&self, t_rel: f64) -> f64 {
        if t_rel <= 0.0 {
            return 0.0;
        }
        let k = self.knots();
        let mut pts: Vec<(f64, f64)> = vec![(0.0, self.speed_at(0.0))];
        for (t, _) in k {
            if t > 0.0 && t < t_rel {
                pts.push((t, self.speed_at(t)));
            }
        }
        pts.push((t_rel, self.speed_at(t_rel)));
        pts.windows(2)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
            .sum()
    }
}

/// Lead speed `t_rel` seconds after event start.
pub fn evaluate_profile(p: &SpeedProfile, t_rel: f64) -> Result<f64> {
    p.validate()?;
    if !(t_rel >= 0.0) {
        return Err(Error::invalid(format!("t_rel {t_rel} must be non-negative")));
    }
    Ok(p.speed_at(t_rel))
}

/// Smallest slope among segments with positive duration; segment S counts as 0.
pub fn min_fitted_accel(p: &SpeedProfile) -> f64 {
    let mut m = f64::INFINITY;
    if p.tau_s > 0.0 {
        m = 0.0;
    }
    if p.tau_1 > 0.0 {
        m = m.min(p.a_1);
    }
    if p.tau_2 > 0.0 {
        m = m.min(p.a_2);
    }
    if m.is_finite() {
        m
    } else {
        0.0
    }
}

/// Raw least-squares candidate in centred coordinates.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    variant: Variant,
    /// Breakpoints in centred time, ascending.
    b: [f64; 2],
    /// Intercept and slopes as returned by `solve_basis`.
    beta: [f64; 3],
}

/// Basis row for `variant` at centred time `u`.
fn basis(variant: Variant, b: [f64; 2], u: f64) -> [f64; 3] {
    match variant {
        Variant::S => [1.0, 0.0, 0.0],
        Variant::One => [1.0, u, 0.0],
        Variant::OneS => [1.0, (u - b[0]).min(0.0), 0.0],
        Variant::TwoOne => [1.0, (u - b[0]).max(0.0), (u - b[0]).min(0.0)],
        Variant::TwoOneS => [1.0, u.clamp(b[0], b[1]) - b[1], (u - b[0]).min(0.0)],
    }
}

fn width(variant: Variant) -> usize {
    match variant {
        Variant::S => 1,
        Variant::One | Variant::OneS => 2,
        Variant::TwoOne | Variant::TwoOneS => 3,
    }
}

/// Solve the (at most 3x3) normal equations; `None` when singular.
fn solve_normal(m: usize, xtx: [[f64; 3]; 3], xty: [f64; 3]) -> Option<[f64; 3]> {
    let mut a = Matrix3::identity();
    let mut y = Vector3::zeros();
    for i in 0..m {
        for j in 0..m {
            a[(i, j)] = xtx[i][j];
        }
        y[i] = xty[i];
    }
    let scale = (0..m).map(|i| xtx[i][i].abs()).fold(0.0, f64::max);
    let lu = a.lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() <= 1e-13 * scale.powi(m as i32).max(1e-300) {
        return None;
    }
    let x = lu.solve(&y)?;
    Some([x[0], x[1], x[2]])
}

/// Direct least squares for fixed breakpoints.
fn solve_basis(variant: Variant, b: [f64; 2], u: &[f64], v: &[f64]) -> Option<Candidate> {
    let m = width(variant);
    let mut xtx = [[0.0; 3]; 3];
    let mut xty = [0.0; 3];
    for (&ui, &vi) in u.iter().zip(v) {
        let x = basis(variant, b, ui);
        for i in 0..m {
            xty[i] += x[i] * vi;
            for j in 0..m {
                xtx[i][j] += x[i] * x[j];
            }
        }
    }
    let beta = solve_normal(m, xtx, xty)?;
    Some(Candidate {
        variant,
        b,
        beta,
    })
}

/// Prefix sums of centred time and speed for O(1) range moments.
struct Prefix {
    n: Vec<f64>,
    u: Vec<f64>,
    uu: Vec<f64>,
    v: Vec<f64>,
    uv: Vec<f64>,
    vv: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Moments {
    n: f64,
    u: f64,
    uu: f64,
    v: f64,
    uv: f64,
    vv: f64,
}

impl Prefix {
    fn new(u: &[f64], v: &[f64]) -> Self {
        let mut p = Prefix {
            n: vec![0.0],
            u: vec![0.0],
            uu: vec![0.0],
            v: vec![0.0],
            uv: vec![0.0],
            vv: vec![0.0],
        };
        for (&a, &b) in u.iter().zip(v) {
            p.n.push(p.n.last().unwrap() + 1.0);
            p.u.push(p.u.last().unwrap() + a);
            p.uu.push(p.uu.last().unwrap() + a * a);
            p.v.push(p.v.last().unwrap() + b);
            p.uv.push(p.uv.last().unwrap() + a * b);
            p.vv.push(p.vv.last().unwrap() + b * b);
        }
        p
    }

    fn range(&self, i: usize, j: usize) -> Moments {
        Moments {
            n: self.n[j] - self.n[i],
            u: self.u[j] - self.u[i],
            uu: self.uu[j] - self.uu[i],
            v: self.v[j] - self.v[i],
            uv: self.uv[j] - self.uv[i],
            vv: self.vv[j] - self.vv[i],
        }
    }
}

/// Moments of `(u - b)` over a range: (sum, sum of squares, cross with v).
fn shifted(m: Moments, b: f64) -> (f64, f64, f64) {
    (
        m.u - m.n * b,
        m.uu - 2.0 * b * m.u + m.n * b * b,
        m.uv - b * m.v,
    )
}

/// SSE for a candidate from range moments; `svv` is the total sum of squares of v.
fn grid_sse(variant: Variant, pre: &Prefix, n: usize, i: usize, j: usize, b: [f64; 2], svv: f64) -> Option<f64> {
    let all = pre.range(0, n);
    let (xtx, xty) = match variant {
        Variant::OneS => {
            let (s, ss, sv) = shifted(pre.range(0, i), b[0]);
            ([[all.n, s, 0.0], [s, ss, 0.0], [0.0; 3]], [all.v, sv, 0.0])
        }
        Variant::TwoOne => {
            let (s2, ss2, sv2) = shifted(pre.range(0, i), b[0]);
            let (s1, ss1, sv1) = shifted(pre.range(i, n), b[0]);
            (
                [[all.n, s1, s2], [s1, ss1, 0.0], [s2, 0.0, ss2]],
                [all.v, sv1, sv2],
            )
        }
        Variant::TwoOneS => {
            let head = pre.range(0, i);
            let (s2, ss2, sv2) = shifted(head, b[0]);
            let (m1, mm1, mv1) = shifted(pre.range(i, j), b[1]);
            let c = b[0] - b[1];
            let s1 = head.n * c + m1;
            let ss1 = head.n * c * c + mm1;
            let sv1 = c * head.v + mv1;
            let s12 = c * s2;
            (
                [[all.n, s1, s2], [s1, ss1, s12], [s2, s12, ss2]],
                [all.v, sv1, sv2],
            )
        }
        Variant::S | Variant::One => unreachable!("no breakpoints"),
    };
    let m = width(variant);
    let beta = solve_normal(m, xtx, xty)?;
    let fit: f64 = (0..m).map(|k| beta[k] * xty[k]).sum();
    Some((svv - fit).max(0.0))
}

/// Ordinary least-squares line over `u[i..j]`: ((intercept, slope), sse).
fn line(pre: &Prefix, i: usize, j: usize) -> Option<((f64, f64), f64)> {
    let m = pre.range(i, j);
    let det = m.n * m.uu - m.u * m.u;
    if m.n < 2.0 || det.abs() <= 1e-12 * m.n * m.uu.max(1e-12) {
        return None;
    }
    let slope = (m.n * m.uv - m.u * m.v) / det;
    let sxy = m.uv - m.u * m.v / m.n;
    let sxx = m.uu - m.u * m.u / m.n;
    let syy = m.vv - m.v * m.v / m.n;
    Some((((m.v - slope * m.u) / m.n, slope), (syy - sxy * sxy / sxx).max(0.0)))
}

fn mean(pre: &Prefix, i: usize, j: usize) -> Option<(f64, f64)> {
    let m = pre.range(i, j);
    (m.n >= 1.0).then(|| (m.v / m.n, (m.vv - m.v * m.v / m.n).max(0.0)))
}

/// Breakpoints where independent fits of adjacent sample groups intersect, kept only
/// when each falls in the gap separating its groups. The continuous fit through such
/// breakpoints attains the independent fits' summed SSE, which is returned with them.
fn exact_breaks(variant: Variant, pre: &Prefix, u: &[f64], p: usize, q: usize) -> Option<([f64; 2], f64)> {
    let n = u.len();
    let inside = |b: f64, k: usize| {
        let lo = u[k - 1] - 1e-9;
        let hi = u[k] + 1e-9;
        (lo..=hi).contains(&b)
    };
    let cross = |(c1, a1): (f64, f64), (c2, a2): (f64, f64)| {
        let da = a1 - a2;
        (da.abs() > 1e-12).then(|| (c2 - c1) / da)
    };
    match variant {
        Variant::OneS => {
            if p < 2 || p >= n {
                return None;
            }
            let (l, e1) = line(pre, 0, p)?;
            let (m, e2) = mean(pre, p, n)?;
            let b = cross(l, (m, 0.0))?;
            inside(b, p).then_some(([b, b], e1 + e2))
        }
        Variant::TwoOne => {
            if p < 2 || p + 2 > n {
                return None;
            }
            let (l2, e2) = line(pre, 0, p)?;
            let (l1, e1) = line(pre, p, n)?;
            let b = cross(l2, l1)?;
            inside(b, p).then_some(([b, b], e1 + e2))
        }
        Variant::TwoOneS => {
            if p < 2 || q < p + 2 || q >= n {
                return None;
            }
            let (l1, e1) = line(pre, p, q)?;
            let (l2, e2) = line(pre, 0, p)?;
            let (m, es) = mean(pre, q, n)?;
            let b1 = cross(l2, l1)?;
            let b2 = cross(l1, (m, 0.0))?;
            (b1 < b2 && inside(b1, p) && inside(b2, q)).then_some(([b1, b2], e1 + e2 + es))
        }
        Variant::S | Variant::One => None,
    }
}

fn fit_variant(variant: Variant, u: &[f64], v: &[f64], pre: &Prefix, svv: f64) -> Option<Candidate> {
    let n = u.len();
    if variant.breaks() == 0 {
        return solve_basis(variant, [0.0; 2], u, v);
    }
    let ok = |d: f64| d >= MIN_SEGMENT - 1e-9;
    let (first, last) = (u[0], u[n - 1]);
    let mut best: Option<(f64, usize, usize)> = None;
    let mut consider = |sse: f64, i: usize, j: usize| {
        if best.is_none_or(|(s, _, _)| sse < s) {
            best = Some((sse, i, j));
        }
    };
    for i in 1..n - 1 {
        let b1 = u[i];
        if !ok(b1 - first) {
            continue;
        }
        if variant.breaks() == 1 {
            if ok(last - b1) {
                if let Some(s) = grid_sse(variant, pre, n, i, i, [b1, b1], svv) {
                    consider(s, i, i);
                }
            }
            continue;
        }
        for j in i + 1..n - 1 {
            let b2 = u[j];
            if !ok(b2 - b1) || !ok(last - b2) {
                continue;
            }
            if let Some(s) = grid_sse(variant, pre, n, i, j, [b1, b2], svv) {
                consider(s, i, j);
            }
        }
    }
    let (mut best_sse, i, j) = best?;
    let mut best_b = [u[i], u[j]];
    // Breakpoints between samples: scan every sample partition for exact intersections.
    for p in 2..n {
        let qs = if variant.breaks() == 2 { p + 2..n } else { p..p + 1 };
        for q in qs {
            let Some((b, sse)) = exact_breaks(variant, pre, u, p, q) else {
                continue;
            };
            if sse >= best_sse {
                continue;
            }
            let durations_ok = if variant.breaks() == 2 {
                ok(b[0] - first) && ok(b[1] - b[0]) && ok(last - b[1])
            } else {
                ok(b[0] - first) && ok(last - b[0])
            };
            if durations_ok {
                best_sse = sse;
                best_b = b;
            }
        }
    }
    solve_basis(variant, best_b, u, v)
}

/// Replace a nearly flat final slope with a steady segment at the same breakpoint.
fn snap_steady(c: Candidate, u: &[f64], v: &[f64]) -> Candidate {
    match c.variant {
        Variant::One if c.beta[1].abs() < STEADY_SLOPE => {
            solve_basis(Variant::S, c.b, u, v).unwrap_or(c)
        }
        Variant::TwoOne if c.beta[1].abs() < STEADY_SLOPE => {
            solve_basis(Variant::OneS, c.b, u, v).unwrap_or(c)
        }
        _ => c,
    }
}

/// Turn a centred-coordinate candidate into a profile ending at impact (`t = 0`).
fn to_profile(c: &Candidate, tc: f64, vm: f64, t_first: f64) -> SpeedProfile {
    let start = t_first.max(-EVENT_SPAN);
    let b0 = c.b[0] + tc;
    let b1 = c.b[1] + tc;
    // (kind, slope, segment start in event time, speed at segment start)
    let mut segs: Vec<(u8, f64, f64, f64)> = Vec::new();
    let beta = c.beta;
    match c.variant {
        Variant::S => segs.push((0, 0.0, start, beta[0] + vm)),
        Variant::One => {
            let v_at = |t: f64| beta[0] + vm + beta[1] * (t - tc);
            segs.push((1, beta[1], start, v_at(start)));
        }
        Variant::OneS => {
            let vb = beta[0] + vm;
            segs.push((1, beta[1], start, vb + beta[1] * (start - b0)));
            segs.push((0, 0.0, b0, vb));
        }
        Variant::TwoOne => {
            let vb = beta[0] + vm;
            segs.push((2, beta[2], start, vb + beta[2] * (start - b0)));
            segs.push((1, beta[1], b0, vb));
        }
        Variant::TwoOneS => {
            let vs = beta[0] + vm;
            let vb0 = vs + beta[1] * (b0 - b1);
            segs.push((2, beta[2], start, vb0 + beta[2] * (start - b0)));
            segs.push((1, beta[1], b0, vb0));
            segs.push((0, 0.0, b1, vs));
        }
    }
    // A final slope that would cross zero before impact stops there and stays at rest.
    let &(kind, slope, s, v_s) = segs.last().expect("at least one segment");
    let mut v_c = v_s + slope * (0.0 - s);
    if kind != 0 && v_c < 0.0 && slope < 0.0 {
        let tz = (s + v_s / -slope).max(s);
        segs.push((0, 0.0, tz, 0.0));
        v_c = 0.0;
    }
    let mut p = SpeedProfile {
        v_c,
        a_1: 0.0,
        a_2: 0.0,
        tau_s: 0.0,
        tau_1: 0.0,
        tau_2: 0.0,
    };
    for (k, &(kind, slope, s, _)) in segs.iter().enumerate() {
        let end = segs.get(k + 1).map_or(0.0, |n| n.2).min(0.0);
        let dur = (end - s.max(start)).max(0.0);
        match kind {
            0 => p.tau_s += dur,
            1 => {
                p.tau_1 = dur;
                p.a_1 = slope;
            }
            _ => {
                p.tau_2 = dur;
                p.a_2 = slope;
            }
        }
    }
    p
}

fn adjusted_r2(t: &[f64], v: &[f64], p: &SpeedProfile, predictors: usize) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sst: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    let sse: f64 = t
        .iter()
        .zip(v)
        .map(|(ti, vi)| (vi - p.speed_at(ti + EVENT_SPAN)).powi(2))
        .sum();
    let r2 = if sst <= 1e-24 * n.max(1.0) {
        if sse <= 1e-18 * n.max(1.0) {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - sse / sst
    };
    1.0 - (1.0 - r2) * (n - 1.0) / (n - predictors as f64 - 1.0)
}

fn n_breaks(p: &SpeedProfile) -> usize {
    [p.tau_s, p.tau_1, p.tau_2]
        .iter()
        .filter(|d| **d > 0.0)
        .count()
        .saturating_sub(1)
}

/// Fit an event-time speed series (impact at `t = 0`) to the piecewise-linear model.
pub fn fit_piecewise(t: &[f64], v: &[f64]) -> Result<FitResult> {
    let n = t.len();
    if n != v.len() {
        return Err(Error::invalid("t and v differ in length"));
    }
    if n < 4 {
        return Err(Error::InsufficientData(format!("{n} samples, need at least 4")));
    }
    if t.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("time axis is not strictly increasing"));
    }
    if t[n - 1] > 1e-9 {
        return Err(Error::invalid("samples after impact (t > 0)"));
    }
    let tc = t.iter().sum::<f64>() / n as f64;
    let vm = v.iter().sum::<f64>() / n as f64;
    let u: Vec<f64> = t.iter().map(|x| x - tc).collect();
    let w: Vec<f64> = v.iter().map(|x| x - vm).collect();
    let pre = Prefix::new(&u, &w);
    let svv: f64 = w.iter().map(|x| x * x).sum();
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let small = hi - lo < SMALL_CHANGE;

    let mut ranked: Vec<(f64, usize, FitResult)> = Vec::new();
    for variant in Variant::ALL {
        if small && !matches!(variant, Variant::S | Variant::One) {
            continue;
        }
        if n <= variant.predictors() + 1 {
            continue;
        }
        let Some(c) = fit_variant(variant, &u, &w, &pre, svv) else {
            continue;
        };
        let c = snap_steady(c, &u, &w);
        let profile = to_profile(&c, tc, vm, t[0]);
        if profile.validate().is_err() {
            continue;
        }
        let k = c.variant.predictors();
        let r2_adj = adjusted_r2(t, v, &profile, k);
        if !r2_adj.is_finite() {
            continue;
        }
        ranked.push((
            r2_adj,
            k,
            FitResult {
                profile,
                n_b: n_breaks(&profile),
                r2_adj,
                a_min: min_fitted_accel(&profile),
                variant: c.variant,
            },
        ));
    }
    let best_r2 = ranked
        .iter()
        .map(|r| r.0)
        .fold(f64::NEG_INFINITY, f64::max);
    ranked
        .into_iter()
        .filter(|r| r.0 >= best_r2 - TIE)
        .min_by_key(|r| r.1)
        .map(|r| r.2)
        .ok_or_else(|| Error::Optimizer("no admissible piecewise fit".into()))
}
