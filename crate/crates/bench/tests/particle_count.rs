use pmhdg_bench::{run_case, BenchmarkConfig, Case};

#[test]
fn skew_inflow_keeps_particle_count_within_ten_percent() {
    let cfg = BenchmarkConfig {
        skew_angle: 15.0,
        report_times: (1..=20).map(|i| 0.1 * i as f64).collect(),
        ..BenchmarkConfig::preset(Case::SkewAdvection)
    };
    let initial = (cfg.particles_per_cell * 2 * cfg.mesh_n * cfg.mesh_n) as f64;
    let out = run_case(&cfg).unwrap();
    assert_eq!(out.report.rows.len(), 20);
    for row in &out.report.rows {
        let drift = (row.particles as f64 - initial).abs() / initial;
        assert!(drift <= 0.1, "t = {}: {} particles", row.time, row.particles);
    }
}
