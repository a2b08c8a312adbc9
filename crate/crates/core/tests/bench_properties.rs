//! Ordering properties of the benchmark harness on a local server.

use dynsgx_core::bench::{run, summarize, BenchConfig, BenchPoint, Mode, Target, Workload};

fn median_of(points: &[BenchPoint], parameter: u64, mode: Mode) -> f64 {
    points
        .iter()
        .find(|p| p.parameter == parameter && p.mode == mode)
        .and_then(BenchPoint::median)
        .unwrap_or_else(|| panic!("no median for {parameter} {mode}"))
}

#[test]
fn attestation_and_crypto_only_add_latency() {
    let cfg = BenchConfig {
        workload: Workload::RecursiveFibonacci,
        params: vec![1, 10, 20],
        runs: 15,
        modes: vec![Mode::Direct, Mode::Channel, Mode::ChannelRa],
        allow_large: false,
    };
    let points = run(&cfg, Target::Local).unwrap();
    assert!(points.iter().all(|p| p.error.is_none() && p.samples.len() == 15));
    for n in [1, 10, 20] {
        let direct = median_of(&points, n, Mode::Direct);
        let channel = median_of(&points, n, Mode::Channel);
        let with_ra = median_of(&points, n, Mode::ChannelRa);
        assert!(direct <= channel, "n={n}: direct {direct} > channel {channel}");
        assert!(channel <= with_ra, "n={n}: channel {channel} > channel+RA {with_ra}");
    }
    let csv = summarize(&points, true);
    assert_eq!(csv.lines().count(), 1 + 9);
}

#[test]
fn sum_array_latency_grows_with_size() {
    let sizes = vec![1, 4, 16];
    let cfg = BenchConfig {
        workload: Workload::SumArray,
        params: sizes.clone(),
        runs: 5,
        modes: vec![Mode::Direct, Mode::Channel],
        allow_large: false,
    };
    let points = run(&cfg, Target::Local).unwrap();
    assert!(points.iter().all(|p| p.error.is_none()));
    for mode in [Mode::Direct, Mode::Channel] {
        let medians: Vec<f64> = sizes.iter().map(|&s| median_of(&points, s, mode)).collect();
        assert!(medians.windows(2).all(|w| w[0] <= w[1]), "{mode}: {medians:?}");
    }
}
