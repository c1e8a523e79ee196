use hhhfl::ingest::DeviceKind;
use hhhfl_web::{explore_mmd, preview_event, DemoConfig, FederationRunner};

fn rbf(x: &[f64; 2], y: &[f64; 2], sigma: f64) -> f64 {
    let d = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
    (-d / (2.0 * sigma * sigma)).exp()
}

fn naive_mmd2(a: &[[f64; 2]], b: &[[f64; 2]], sigma: f64) -> f64 {
    let mean = |p: &[[f64; 2]], q: &[[f64; 2]]| {
        p.iter().flat_map(|x| q.iter().map(move |y| rbf(x, y, sigma))).sum::<f64>() / (p.len() * q.len()) as f64
    };
    mean(a, a) + mean(b, b) - 2.0 * mean(a, b)
}

#[test]
fn explorer_matches_direct_sums() {
    for (shift, bw) in [(0.0, Some(0.7)), (1.5, None), (3.0, Some(2.0))] {
        let r = explore_mmd(40, shift, 1.3, bw, 3).unwrap();
        assert_eq!((r.a.len(), r.b.len()), (40, 40));
        if let Some(s) = bw {
            assert_eq!(r.sigma, s);
        }
        assert!((r.mmd2 - naive_mmd2(&r.a, &r.b, r.sigma)).abs() < 1e-12);
        let mean = |p: &[[f64; 2]], k: usize| p.iter().map(|x| x[k]).sum::<f64>() / p.len() as f64;
        let lin = (0..2).map(|k| (mean(&r.a, k) - mean(&r.b, k)).powi(2)).sum::<f64>();
        assert!((r.linear_mmd2 - lin).abs() < 1e-12);
        assert_eq!(r.sweep.len(), 33);
    }
}

#[test]
fn explorer_grows_with_shift_and_rejects_bad_input() {
    let near = explore_mmd(200, 0.2, 1.0, Some(1.0), 5).unwrap().mmd2;
    let far = explore_mmd(200, 3.0, 1.0, Some(1.0), 5).unwrap().mmd2;
    assert!(far > 10.0 * near, "{near} {far}");
    assert!(explore_mmd(1, 0.0, 1.0, None, 0).is_err());
    assert!(explore_mmd(10, 0.0, 0.0, None, 0).is_err());
    assert!(explore_mmd(10, 0.0, 1.0, Some(-1.0), 0).is_err());
}

#[test]
fn preview_produces_projector_input() {
    for (device, channels, dim) in [("MW", 1, 1024), ("EP", 14, 440), ("MU", 4, 512)] {
        let p = preview_event(device, 4, 2).unwrap();
        assert_eq!(p.raw.len(), channels);
        assert!(p.raw.iter().all(|t| t.len() == 2 * p.sampling_rate_hz as usize));
        assert_eq!(p.features.len(), dim);
        let n = dim as f64;
        let mean = p.features.iter().sum::<f64>() / n;
        let var = p.features.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        assert_eq!(p.label, 1);
    }
    assert_eq!(preview_event("MU", -1, 2).unwrap().label, 0);
    assert_eq!(preview_event("EP", 3, 9).unwrap(), preview_event("EP", 3, 9).unwrap());
    assert!(preview_event("XX", 1, 0).is_err());
}

fn small(lambda: f64) -> DemoConfig {
    DemoConfig {
        examples_per_class: 16,
        separation: 3.0,
        rounds: 6,
        lambda,
        ..Default::default()
    }
}

#[test]
fn demo_config_json_defaults_and_typos() {
    let c: DemoConfig = serde_json::from_str("{}").unwrap();
    assert_eq!(c, DemoConfig::default());
    let c: DemoConfig = serde_json::from_str(r#"{"lambda": 0.5, "devices": ["MW", "MU"]}"#).unwrap();
    assert_eq!(c.devices, vec![DeviceKind::MW, DeviceKind::MU]);
    assert!(serde_json::from_str::<DemoConfig>(r#"{"lamda": 1}"#).is_err());
}

#[test]
fn demo_steps_to_completion_reproducibly() {
    let run = || {
        let mut r = FederationRunner::new(&small(1.0)).unwrap();
        let mut out = Vec::new();
        while !r.is_done() {
            out.push(r.step().unwrap());
        }
        assert!(r.step().is_err());
        (out, r.embeddings().unwrap())
    };
    let (a, ea) = run();
    let (b, eb) = run();
    assert_eq!(a, b);
    assert_eq!(ea, eb);
    assert_eq!(a.len(), 6);
    for (i, r) in a.iter().enumerate() {
        assert_eq!(r.round as usize, i + 1);
        assert_eq!(r.accuracy.len(), 3);
        assert!((0.0..=1.0).contains(&r.pooled_accuracy));
        assert_eq!(r.mmd2.len(), 3);
        assert!(r.mmd2.values().all(|&m| m >= 0.0));
    }
    // 32 examples per device, a quarter held out
    for pts in ea.points.values() {
        assert_eq!(pts.len(), 8);
        assert!(pts.iter().all(|p| p[0].is_finite() && p[1].is_finite() && (p[2] == 0.0 || p[2] == 1.0)));
    }
}

#[test]
fn demo_single_device_and_limits() {
    let mut c = small(1.0);
    c.devices = vec![DeviceKind::EP];
    let mut r = FederationRunner::new(&c).unwrap();
    assert!(r.step().unwrap().mmd2.is_empty());
    c.devices.clear();
    assert!(FederationRunner::new(&c).is_err());
    let mut c = small(1.0);
    c.rounds = 100_000;
    assert!(FederationRunner::new(&c).is_err());
    c.rounds = 0;
    assert!(FederationRunner::new(&c).is_err());
}

#[test]
fn default_demo_learns() {
    let mut r = FederationRunner::new(&DemoConfig::default()).unwrap();
    let mut first = None;
    let mut last = None;
    while !r.is_done() {
        let s = r.step().unwrap();
        first.get_or_insert(s.pooled_accuracy);
        last = Some(s.pooled_accuracy);
    }
    let (first, last) = (first.unwrap(), last.unwrap());
    assert!(last > 0.85 && last >= first, "{first} -> {last}");
}
