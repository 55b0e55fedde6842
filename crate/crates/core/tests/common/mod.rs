#![allow(dead_code)]

//! Test-only oracles: double-exponential quadrature and brute-force
//! single-server event simulations. Nothing here calls into the crate.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;

/// `∫_a^b f` by tanh-sinh quadrature, halving the step until two passes agree.
pub fn tanh_sinh(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = (b - a) / 2.0;
    de_rule(
        |t| {
            let s = FRAC_PI_2 * t.sinh();
            let w = FRAC_PI_2 * t.cosh() / s.cosh().powi(2);
            // distance to the nearer endpoint, 1 -|tanh s|, without cancellation
            let gap = 2.0 / ((2.0 * s.abs()).exp() + 1.0);
            let y = if s > 0.0 { b - half * gap } else { a + half * gap };
            half * w * f(y)
        },
        4.0,
    )
}

/// `∫_a^∞ f` by exp-sinh quadrature.
pub fn exp_sinh(f: impl Fn(f64) -> f64, a: f64) -> f64 {
    de_rule(
        |t| {
            let e = (FRAC_PI_2 * t.sinh()).exp();
            FRAC_PI_2 * t.cosh() * e * f(a + e)
        },
        6.5,
    )
}

fn de_rule(g: impl Fn(f64) -> f64, t_max: f64) -> f64 {
    let mut h = 0.5;
    let mut prev = f64::NAN;
    loop {
        let n = (t_max / h).ceil() as i64;
        let s: f64 = (-n..=n).map(|k| g(k as f64 * h)).filter(|v| v.is_finite()).sum::<f64>() * h;
        if (s - prev).abs() <= 1e-14 * s.abs() || h < 1.0 / 512.0 {
            return s;
        }
        prev = s;
        h /= 2.0;
    }
}

/// `∫_x^∞ P(B > y) dy` for `P(B > y) = min(1, (xm/y)^ν)`, split at the kink.
pub fn pareto_integrated_tail(nu: f64, xm: f64, x: f64) -> f64 {
    let tail = |y: f64| (xm / y).powf(nu);
    if x >= xm {
        exp_sinh(tail, x)
    } else {
        tanh_sinh(|_| 1.0, x, xm) + exp_sinh(tail, xm)
    }
}

/// `P(B_(r) > y)` for the `r`-th smallest of `n` iid copies with marginal ccdf `p`.
pub fn order_stat_ccdf(p: f64, n: u32, r: u32) -> f64 {
    // B_(r) > y iff at least n - r + 1 copies exceed y
    (n - r + 1..=n)
        .map(|j| {
            let c = (0..j).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
            c * p.powi(j as i32) * (1.0 - p).powi((n - j) as i32)
        })
        .sum()
}

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

/// Waiting times of a FCFS single server, by stepping through arrival and
/// departure events. `jobs[i] = (gap before job i, size)`.
pub fn event_fcfs_waiting(jobs: &[(f64, f64)]) -> Vec<f64> {
    let mut arrivals = Vec::with_capacity(jobs.len());
    let mut t = 0.0;
    for &(gap, _) in jobs {
        t += gap;
        arrivals.push(t);
    }
    let mut waiting = vec![f64::NAN; jobs.len()];
    let mut queue = VecDeque::new();
    let mut busy_until: Option<f64> = None;
    let mut next = 0;
    loop {
        let arrival = arrivals.get(next).copied();
        match (arrival, busy_until) {
            (None, None) => break,
            // departures win ties
            (Some(a), Some(d)) if d <= a => busy_until = serve_next(&mut queue, d, &arrivals, jobs, &mut waiting),
            (None, Some(d)) => busy_until = serve_next(&mut queue, d, &arrivals, jobs, &mut waiting),
            (Some(a), _) => {
                queue.push_back(next);
                next += 1;
                if busy_until.is_none() {
                    busy_until = serve_next(&mut queue, a, &arrivals, jobs, &mut waiting);
                }
            }
        }
    }
    waiting
}

fn serve_next(
    queue: &mut VecDeque<usize>,
    now: f64,
    arrivals: &[f64],
    jobs: &[(f64, f64)],
    waiting: &mut [f64],
) -> Option<f64> {
    let j = queue.pop_front()?;
    waiting[j] = now - arrivals[j];
    Some(now + jobs[j].1)
}

/// Response times of a preemptive-resume LCFS single server.
pub fn event_lcfs_pr_response(jobs: &[(f64, f64)]) -> Vec<f64> {
    let mut response = vec![f64::NAN; jobs.len()];
    // (job, arrival, remaining)
    let mut stack: Vec<(usize, f64, f64)> = Vec::new();
    let mut now = 0.0;
    let mut t = 0.0;
    for (i, &(gap, size)) in jobs.iter().enumerate() {
        t += gap;
        drain(&mut stack, &mut now, t, &mut response);
        stack.push((i, t, size));
    }
    drain(&mut stack, &mut now, f64::INFINITY, &mut response);
    response
}

fn drain(stack: &mut Vec<(usize, f64, f64)>, now: &mut f64, until: f64, response: &mut [f64]) {
    while let Some(top) = stack.last_mut() {
        let end = *now + top.2;
        if end <= until {
            *now = end;
            response[top.0] = end - top.1;
            stack.pop();
        } else {
            top.2 -= until - *now;
            break;
        }
    }
    *now = until;
}
