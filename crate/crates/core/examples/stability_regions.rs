//! Linear stability limits of the multirate oscillator for both fast rules,
//! from the propagation matrix and from a bisection on its trace.

use multirate::analysis::analytic_bound;
use multirate::prelude::*;

fn edge(rule: StabilityRule, p: usize) -> f64 {
    let (mut lo, mut hi) = (0.01, 40.0);
    if stability_report(1.0, hi, p, rule).stable {
        return f64::INFINITY;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if stability_report(1.0, mid, p, rule).stable {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn main() {
    println!("{:>3} {:>14} {:>14} {:>14} {:>14}", "p", "trap bound", "trap edge", "mid bound", "mid edge");
    for p in [1, 2, 3, 5, 10, 20] {
        let tb = analytic_bound(StabilityRule::Trapezoidal, p).sqrt();
        let mb = analytic_bound(StabilityRule::Midpoint, p).sqrt();
        println!(
            "{p:>3} {tb:>14.6} {:>14.6} {mb:>14.6} {:>14.6}",
            edge(StabilityRule::Trapezoidal, p),
            edge(StabilityRule::Midpoint, p)
        );
    }
}
