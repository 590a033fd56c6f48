use nccl_cli::config::RunConfig;
use nccl_cli::pipeline::run_pipeline;

#[test]
#[ignore]
fn descent_tail_seed_42() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::reference(42);
    cfg.output_dir = dir.path().to_path_buf();
    let t = std::time::Instant::now();
    let art = run_pipeline(&cfg).unwrap();
    let hist = &art.metrics.loss_history_new;
    let tail: Vec<f64> = hist[hist.len() - 6..].iter().map(|r| r.total).collect();
    println!("run took {:?}; cross {:.4} old {:.4}", t.elapsed(), art.metrics.cross_test_new_old.map, art.metrics.self_test_old.map);
    println!("last 6 totals: {tail:?}");
    let diffs: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
    println!("consecutive diffs: {diffs:?}");
}
