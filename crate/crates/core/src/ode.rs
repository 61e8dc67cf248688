//! Embedded Dormand–Prince 5(4) integrator with adaptive steps and dense output.
//!
//! Integration runs in either time direction. Output points (caller-supplied
//! sample times plus every accepted step end) are handed to an observer in
//! integration order; the observer may stop the run, which is how escape
//! detection is wired in.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// Largest allowed |h|.
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-9,
            atol: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 1_000_000,
        }
    }
}

/// Right-hand side `dy/dt = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Start,
    Sample,
    StepEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Quartic continuous extension on one accepted step, restricted to the
/// leading `width` components of the state.
#[derive(Debug, Clone)]
pub struct DenseSegment {
    pub t0: f64,
    pub h: f64,
    coeffs: [Vec<f64>; 5],
}

impl DenseSegment {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.h >= 0.0 {
            (self.t0, self.t1())
        } else {
            (self.t1(), self.t0)
        };
        t >= lo && t <= hi
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [r1, r2, r3, r4, r5] = &self.coeffs;
        (0..r1.len())
            .map(|i| r1[i] + th * (r2[i] + th1 * (r3[i] + th * (r4[i] + th1 * r5[i]))))
            .collect()
    }

    /// Time derivative of the continuous extension.
    pub fn eval_derivative(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let [_, r2, r3, r4, r5] = &self.coeffs;
        (0..r2.len())
            .map(|i| {
                let q = r3[i] + th * (r4[i] + th1 * r5[i]);
                let dq = r4[i] + (1.0 - 2.0 * th) * r5[i];
                let r = r2[i] + th1 * q;
                let dr = -q + th1 * dq;
                (r + th * dr) / self.h
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub t: f64,
    pub y: Vec<f64>,
    pub stopped: bool,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub segments: Vec<DenseSegment>,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn scaled_norm(v: &[f64], y0: &[f64], y1: &[f64], ctl: &StepControl) -> f64 {
    let n = v.len().max(1);
    let s: f64 = v
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| {
            let sc = ctl.atol + ctl.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n as f64).sqrt()
}

fn initial_step<S: OdeSystem>(sys: &S, t0: f64, y0: &[f64], f0: &[f64], dir: f64, ctl: &StepControl) -> Result<f64> {
    let d0 = scaled_norm(y0, y0, y0, ctl);
    let d1 = scaled_norm(f0, y0, y0, ctl);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(ctl.max_step);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + dir * h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    sys.rhs(t0 + dir * h0, &y1, &mut f1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = scaled_norm(&diff, y0, y0, ctl) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(ctl.max_step))
}

/// Integrate from `t0` to `t1`, reporting `samples` (ordered along the
/// direction of integration) and every accepted step end to `observer`.
/// Dense segments are retained for the first `dense_width` components.
#[allow(clippy::too_many_arguments)]
pub fn integrate<S, F>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t1: f64,
    ctl: &StepControl,
    samples: &[f64],
    dense_width: usize,
    mut observer: F,
) -> Result<Outcome>
where
    S: OdeSystem,
    F: FnMut(f64, &[f64], PointKind) -> Control,
{
    let dim = sys.dim();
    assert_eq!(y0.len(), dim, "initial state has wrong dimension");
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut out = Outcome {
        t,
        y: y.clone(),
        stopped: false,
        accepted_steps: 0,
        rejected_steps: 0,
        segments: Vec::new(),
    };
    if observer(t, &y, PointKind::Start) == Control::Stop {
        out.stopped = true;
        return Ok(out);
    }
    let mut next_sample = samples
        .iter()
        .position(|&s| dir * (s - t0) > 0.0)
        .unwrap_or(samples.len());
    if span == 0.0 {
        return Ok(out);
    }

    let mut k1 = vec![0.0; dim];
    sys.rhs(t, &y, &mut k1)?;
    let mut h = initial_step(sys, t, &y, &k1, dir, ctl)?.min(span);
    let (mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) = (
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
        vec![0.0; dim],
    );
    let mut ys = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];
    let mut err = vec![0.0; dim];
    let mut last_rejected = false;

    loop {
        if out.accepted_steps + out.rejected_steps >= ctl.max_steps {
            return Err(Error::TooManySteps {
                steps: ctl.max_steps,
                target: t1,
            });
        }
        let remaining = (t1 - t).abs();
        let mut last = false;
        if h >= remaining {
            h = remaining;
            last = true;
        }
        if h <= 1e-14 * t.abs().max(span) {
            return Err(Error::StepSizeUnderflow { t, h });
        }
        let hs = dir * h;

        for i in 0..dim {
            ys[i] = y[i] + hs * A21 * k1[i];
        }
        sys.rhs(t + C2 * hs, &ys, &mut k2)?;
        for i in 0..dim {
            ys[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        sys.rhs(t + C3 * hs, &ys, &mut k3)?;
        for i in 0..dim {
            ys[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.rhs(t + C4 * hs, &ys, &mut k4)?;
        for i in 0..dim {
            ys[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.rhs(t + C5 * hs, &ys, &mut k5)?;
        for i in 0..dim {
            ys[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if last { t1 } else { t + hs };
        sys.rhs(t_new, &ys, &mut k6)?;
        for i in 0..dim {
            y_new[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        sys.rhs(t_new, &y_new, &mut k7)?;
        for i in 0..dim {
            err[i] = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
        let mut enorm = scaled_norm(&err, &y, &y_new, ctl);
        if !enorm.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            enorm = f64::INFINITY;
        }

        if enorm <= 1.0 {
            let seg = dense_segment(t, hs, &y, &y_new, [&k1, &k3, &k4, &k5, &k6, &k7], dim);
            out.accepted_steps += 1;

            while next_sample < samples.len() && dir * (samples[next_sample] - t_new) < 0.0 {
                let ts = samples[next_sample];
                next_sample += 1;
                let ys_dense = seg.eval(ts);
                if observer(ts, &ys_dense, PointKind::Sample) == Control::Stop {
                    out.t = ts;
                    out.y = ys_dense;
                    out.stopped = true;
                    push_segment(&mut out.segments, &seg, dense_width);
                    return Ok(out);
                }
            }
            // a sample coinciding with the step end is reported once, as a sample
            let kind = if next_sample < samples.len() && samples[next_sample] == t_new {
                next_sample += 1;
                PointKind::Sample
            } else {
                PointKind::StepEnd
            };
            push_segment(&mut out.segments, &seg, dense_width);
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            if observer(t, &y, kind) == Control::Stop {
                out.t = t;
                out.y = y;
                out.stopped = true;
                return Ok(out);
            }
            if last {
                out.t = t;
                out.y = y;
                return Ok(out);
            }
            let mut fac = if enorm == 0.0 {
                10.0
            } else {
                (0.9 * enorm.powf(-0.2)).clamp(0.2, 10.0)
            };
            if last_rejected {
                fac = fac.min(1.0);
            }
            h = (h * fac).min(ctl.max_step);
            last_rejected = false;
        } else {
            out.rejected_steps += 1;
            let fac = if enorm.is_finite() {
                (0.9 * enorm.powf(-0.2)).clamp(0.2, 1.0)
            } else {
                0.25
            };
            h *= fac;
            last_rejected = true;
        }
    }
}

fn push_segment(segments: &mut Vec<DenseSegment>, seg: &DenseSegment, width: usize) {
    if width == 0 {
        return;
    }
    let coeffs = seg.coeffs.clone().map(|mut c| {
        c.truncate(width);
        c
    });
    segments.push(DenseSegment {
        t0: seg.t0,
        h: seg.h,
        coeffs,
    });
}

fn dense_segment(t: f64, h: f64, y0: &[f64], y1: &[f64], k: [&Vec<f64>; 6], dim: usize) -> DenseSegment {
    let [k1, k3, k4, k5, k6, k7] = k;
    let mut r1 = vec![0.0; dim];
    let mut r2 = vec![0.0; dim];
    let mut r3 = vec![0.0; dim];
    let mut r4 = vec![0.0; dim];
    let mut r5 = vec![0.0; dim];
    for i in 0..dim {
        let ydiff = y1[i] - y0[i];
        let bspl = h * k1[i] - ydiff;
        r1[i] = y0[i];
        r2[i] = ydiff;
        r3[i] = bspl;
        r4[i] = ydiff - h * k7[i] - bspl;
        r5[i] = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }
    DenseSegment {
        t0: t,
        h,
        coeffs: [r1, r2, r3, r4, r5],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Oscillator;
    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }
    }

    struct Blowup;
    impl OdeSystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[0] * y[0];
            Ok(())
        }
    }

    #[test]
    fn oscillator_forward_and_backward() {
        let ctl = StepControl::default();
        let fwd = integrate(&Oscillator, 0.0, &[1.0, 0.0], 5.0, &ctl, &[], 0, |_, _, _| {
            Control::Continue
        })
        .unwrap();
        assert_relative_eq!(fwd.y[0], 5f64.cos(), epsilon = 1e-8);
        let back = integrate(&Oscillator, 5.0, &fwd.y, 0.0, &ctl, &[], 0, |_, _, _| Control::Continue).unwrap();
        assert_relative_eq!(back.y[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(back.y[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn dense_samples_and_derivative() {
        let ctl = StepControl::default();
        let samples: Vec<f64> = (0..=50).map(|k| 3.0 - 0.06 * k as f64).collect();
        let mut seen = Vec::new();
        let out = integrate(
            &Oscillator,
            3.0,
            &[3f64.cos(), -3f64.sin()],
            0.0,
            &ctl,
            &samples,
            2,
            |t, y, kind| {
                if kind != PointKind::StepEnd {
                    seen.push((t, y[0]));
                }
                Control::Continue
            },
        )
        .unwrap();
        assert_eq!(seen.len(), 51);
        for (t, x) in &seen {
            assert_relative_eq!(*x, t.cos(), epsilon = 1e-8);
        }
        for seg in &out.segments {
            let tm = seg.t0 + 0.5 * seg.h;
            let d = seg.eval_derivative(tm);
            assert_relative_eq!(d[0], -tm.sin(), epsilon = 1e-6);
        }
    }

    #[test]
    fn observer_can_stop_before_blowup() {
        let ctl = StepControl::default();
        // y = 1/(1 - t) blows up at t = 1
        let out = integrate(&Blowup, 0.0, &[1.0], 2.0, &ctl, &[], 0, |_, y, _| {
            if y[0].abs() >= 1e3 {
                Control::Stop
            } else {
                Control::Continue
            }
        })
        .unwrap();
        assert!(out.stopped);
        assert!(out.t < 1.0 && out.t > 0.99);
    }

    #[test]
    fn blowup_without_stop_reports_underflow_or_step_cap() {
        let ctl = StepControl {
            max_steps: 100_000,
            ..Default::default()
        };
        let res = integrate(&Blowup, 0.0, &[1.0], 2.0, &ctl, &[], 0, |_, _, _| Control::Continue);
        assert!(matches!(
            res,
            Err(Error::StepSizeUnderflow { .. }) | Err(Error::TooManySteps { .. })
        ));
    }
}
