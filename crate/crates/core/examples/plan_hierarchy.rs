//! Optimal multilevel hierarchies from per-level statistics.
//!
//! cargo run --release --example plan_hierarchy

use mlpf::hierarchy::{
    allocate_particles, extend_stats, optimal_plan, plan_sequence, tolerance_sequence, LevelStats,
    Rates,
};

fn main() -> mlpf::Result<()> {
    // two levels with V = (1, 0.25) and W = (1, 2), target standard deviation 0.05
    println!(
        "allocation: {:?}",
        allocate_particles(&[1.0, 0.25], &[1.0, 2.0], 0.05, 1.0)?
    );

    // measured levels with variance rate 2, bias rate 1 and cost rate 1
    let measured: Vec<LevelStats> = (0..=4)
        .map(|l| {
            let mut s = LevelStats::new(
                l,
                0.3 * 4f64.powi(-(l as i32)),
                0.02 * 2f64.powi(-(l as i32)),
                1.5 * 2f64.powi(l as i32),
            );
            if l > 0 {
                s.v_base = Some(0.3);
                s.w_base = Some(2f64.powi(l as i32));
            } else {
                s.w = 1.0;
            }
            s
        })
        .collect();
    let rates = Rates {
        variance: 2.0,
        bias: 1.0,
        cost: -1.0,
    };
    let stats = extend_stats(&measured, 10, &rates);
    let single = optimal_plan(&stats, 0.01, 2.0)?;
    println!(
        "ε = 0.01: levels {}..={} N = {:?}",
        single.l0, single.l_max, single.particles
    );

    for plan in plan_sequence(&stats, &tolerance_sequence(0.03, 5)?, 2.0, false)? {
        println!(
            "ε = {:.5}  l0 = {}  L = {}  work = {:.3e}  N = {:?}",
            plan.epsilon, plan.l0, plan.l_max, plan.work, plan.particles
        );
    }
    Ok(())
}
