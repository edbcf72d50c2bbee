// Temporary development probes; run explicitly with --ignored.

use sortlab::data::UnitId;
use sortlab::train::{train_module, TrainConfig};

fn probe(unit: UnitId, max_iterations: u64, max_wall_ms: u64) {
    let config = TrainConfig {
        max_len: 4,
        seed: 0,
        max_iterations,
        max_wall_ms: Some(max_wall_ms),
        ..TrainConfig::default()
    };
    let out = train_module(unit, &config);
    println!(
        "unit={} converged={} reason={:?} iters={} wall_ms={} to_criterion={:?}",
        out.unit, out.converged, out.stop_reason, out.iterations, out.wall_ms,
        out.iterations_to_criterion
    );
    for row in out.metrics.rows.iter().step_by(200) {
        println!(
            "  iter {:5}  loss {:.5}  quant_ma {:.4}  qual_ma {:.4}  |g| {:.6}",
            row.iter, row.loss, row.quant_err, row.qual_err, row.grad_mean_abs
        );
    }
    if let Some(last) = out.metrics.rows.last() {
        println!(
            "  last  iter {:5}  loss {:.6}  quant_ma {:.4}  qual_ma {:.4}",
            last.iter, last.loss, last.quant_err, last.qual_err
        );
    }
}

#[test]
#[ignore]
fn probe_mova() {
    probe(UnitId::Mova, 4000, 600_000);
}

#[test]
#[ignore]
fn probe_swap() {
    probe(UnitId::Swap, 12000, 900_000);
}

#[test]
#[ignore]
fn probe_control() {
    probe(UnitId::Control, 8000, 1_500_000);
}

#[test]
#[ignore]
fn probe_modular_assembled() {
    let config = TrainConfig {
        max_len: 4,
        seed: 11,
        max_iterations: 20_000,
        ..TrainConfig::default()
    };
    let out = sortlab::train::train_modular(&config);
    for u in &out.units {
        println!(
            "unit={} converged={} to_criterion={:?} wall_ms={} mean|g|={:.6e}",
            u.unit,
            u.converged,
            u.iterations_to_criterion,
            u.wall_ms,
            u.metrics.mean_grad_abs()
        );
    }
    println!("summed_wall_ms={}", out.summed_wall_ms);
    let acc = sortlab::evaluate_sorting(&out.agent, 4, 1000, 999);
    println!("assembled accuracy={:?}", acc);
    let sweep = sortlab::generalization_sweep(&out.agent, &[2, 3, 4, 5, 6, 7, 8], 100, 5);
    for r in &sweep.rows {
        println!("len {} acc {:.3} trunc {:.3}", r.length, r.accuracy, r.truncation_rate);
    }
    out.agent.save(std::path::Path::new("/tmp/probe_agent.params")).unwrap();
}

#[test]
#[ignore]
fn probe_monolithic() {
    let config = TrainConfig {
        max_len: 4,
        seed: 11,
        mode: sortlab::train::TrainMode::Monolithic,
        noise: false,
        max_iterations: 1200,
        ..TrainConfig::default()
    };
    let out = sortlab::train::train_monolithic(&config);
    println!(
        "monolithic converged={} reason={:?} iters={} wall_ms={} mean|g|={:.6e}",
        out.converged,
        out.stop_reason,
        out.iterations,
        out.wall_ms,
        out.metrics.mean_grad_abs()
    );
    for row in out.metrics.rows.iter().step_by(100) {
        println!(
            "  iter {:5}  loss {:.5}  quant_ma {:.4}  |g| {:.6}",
            row.iter, row.loss, row.quant_err, row.grad_mean_abs
        );
    }
    if let Some(last) = out.metrics.rows.last() {
        println!(
            "  last  iter {:5}  loss {:.6}  quant_ma {:.4}",
            last.iter, last.loss, last.quant_err
        );
    }
}
