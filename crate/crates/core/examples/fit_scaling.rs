//! Fit data-scaling laws to two planted curves and compare token costs.

use synthlab::scaling::{self, RecordFilter, RunRecord, ScalingForm};

fn curve(id: &str, b: f64, beta: f64, e: f64) -> Vec<RunRecord> {
    scaling::log_space(1e6, 1e10, 9)
        .into_iter()
        .map(|d| d.round() as u64)
        .map(|d| RunRecord::new(id, 1_000_000_000, d, e + b / (d as f64).powf(beta)))
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = curve("natural", 60.0, 0.3, 2.0);
    let mixed = curve("mixed", 45.0, 0.3, 2.0);
    let fit_base = scaling::fit(&base, ScalingForm::Data, &RecordFilter::all(), None)?;
    let fit_mixed = scaling::fit(&mixed, ScalingForm::Data, &RecordFilter::all(), None)?;
    for f in [&fit_base, &fit_mixed] {
        println!("{:<8} B={:.3} beta={:.4} E={:.4} sse={:.1e}", f.mixture_id, f.b, f.beta, f.e, f.sse_log);
    }

    let target = scaling::predict(&fit_base, None, Some(1e10))?;
    let speedup = scaling::speedup_factor(&fit_mixed, &fit_base, target)?;
    println!("loss {target:.4}: mixed needs {speedup:.2}x fewer tokens");

    for (d, loss) in scaling::extrapolate(&fit_mixed, &scaling::log_space(1e10, 1e12, 3), false, None)? {
        println!("  D={d:.0e} predicted {loss:.4}");
    }
    for row in scaling::asymptote_table(&[fit_base, fit_mixed])? {
        println!("  asymptote {} {:.4}", row.mixture_id, row.e);
    }
    Ok(())
}
