use rtmdet::archspec::{build_model_spec, count_flops, count_params, dynamic_kernel_dims, kernel_dim, HeadMode, Preset, Task};

/// Published detector sizes: (params, 640² FLOPs).
const TABLE: [(Preset, f64, f64); 5] = [
    (Preset::Tiny, 4.8e6, 8.1e9),
    (Preset::S, 8.99e6, 14.8e9),
    (Preset::M, 24.7e6, 39.27e9),
    (Preset::L, 52.3e6, 80.23e9),
    (Preset::X, 94.86e6, 141.67e9),
];

#[test]
fn kernel_dims() {
    assert_eq!(dynamic_kernel_dims(8, 2, 8), (88, 72, 9));
    assert_eq!(kernel_dim(), 169);
}

#[test]
fn detector_sizes_within_tolerance() {
    for (preset, params, flops) in TABLE {
        let spec = build_model_spec(Task::Det, preset, HeadMode::SharedSepBn);
        let p = count_params(&spec) as f64;
        let f = count_flops(&spec, 640, 640).unwrap() as f64;
        assert!((p / params - 1.0).abs() <= 0.05, "{preset} params {p}");
        assert!((f / flops - 1.0).abs() <= 0.10, "{preset} flops {f}");
    }
}

#[test]
fn head_mode_ordering() {
    for &preset in Preset::ALL {
        let sepbn = count_params(&build_model_spec(Task::Det, preset, HeadMode::SharedSepBn));
        let shared = count_params(&build_model_spec(Task::Det, preset, HeadMode::Shared));
        let separate = count_params(&build_model_spec(Task::Det, preset, HeadMode::Separate));
        assert!(shared <= sepbn && sepbn < separate);
        assert!((sepbn - shared) as f64 / (sepbn as f64) < 0.001);
    }
    let delta = count_params(&build_model_spec(Task::Det, Preset::L, HeadMode::Separate))
        - count_params(&build_model_spec(Task::Det, Preset::L, HeadMode::SharedSepBn));
    assert!((delta as f64 / 4.71e6 - 1.0).abs() <= 0.05);
}

#[test]
fn instance_overhead_band() {
    for &preset in Preset::ALL {
        let det = count_params(&build_model_spec(Task::Det, preset, HeadMode::SharedSepBn)) as f64;
        let ins = count_params(&build_model_spec(Task::Ins, preset, HeadMode::SharedSepBn)) as f64;
        let r = ins / det - 1.0;
        assert!((0.08..=0.16).contains(&r), "{preset}: {r}");
    }
}

#[test]
fn flops_reject_bad_sizes() {
    let spec = build_model_spec(Task::Det, Preset::Tiny, HeadMode::SharedSepBn);
    assert!(count_flops(&spec, 0, 640).is_err());
    assert!(count_flops(&spec, 650, 640).is_err());
}
