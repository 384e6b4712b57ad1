use proptest::prelude::*;
use pvcurtail_core::pv_array::{
    array_current, extract_params, find_mpp, ModuleDatasheet, OperatingConditions, PvArrayParams,
};
use std::sync::OnceLock;

fn array() -> &'static PvArrayParams {
    static ARRAY: OnceLock<PvArrayParams> = OnceLock::new();
    ARRAY.get_or_init(|| extract_params(&ModuleDatasheet::cs6p_250p(), 16, 153).unwrap())
}

fn conditions() -> impl Strategy<Value = OperatingConditions> {
    (20.0..1200.0f64, -20.0..75.0f64).prop_map(|(g, t)| OperatingConditions::new(g, t).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn current_never_increases_with_voltage(cond in conditions()) {
        let curve = array().at(cond);
        let voc = curve.open_circuit_voltage();
        let mut prev = f64::INFINITY;
        for k in 0..=400 {
            let i = curve.current(voc * k as f64 / 400.0).unwrap();
            prop_assert!(i <= prev + 1e-9 * prev.abs().max(1.0));
            prop_assert!(i >= -1e-6);
            prev = i;
        }
    }

    #[test]
    fn power_curve_has_single_peak(cond in conditions()) {
        let curve = array().at(cond);
        let voc = curve.open_circuit_voltage();
        let n = 1000;
        let p: Vec<f64> = (0..=n)
            .map(|k| curve.power(voc * k as f64 / n as f64).unwrap())
            .collect();
        let signs: Vec<bool> = p.windows(2).map(|w| w[1] - w[0] > 0.0).collect();
        let changes = signs.windows(2).filter(|s| s[0] != s[1]).count();
        prop_assert_eq!(changes, 1);
        prop_assert!(signs[0] && !signs[signs.len() - 1]);
    }

    #[test]
    fn array_maps_to_module_by_topology(cond in conditions(), frac in 0.0..1.0f64) {
        let module = PvArrayParams { n_series: 1, n_parallel: 1, ..*array() };
        let voc = array().at(cond).open_circuit_voltage();
        let v = frac * voc;
        let i_array = array_current(v, cond, array()).unwrap();
        let i_module = array_current(v / 16.0, cond, &module).unwrap();
        prop_assert!((i_array - 153.0 * i_module).abs() <= 1e-8 * i_array.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn mpp_matches_brute_force_sweep(cond in conditions()) {
        let (_, p_mpp) = find_mpp(cond, array()).unwrap();
        let curve = array().at(cond);
        let voc = curve.open_circuit_voltage();
        let steps = (voc / 0.01).ceil() as usize;
        let best = (0..=steps)
            .map(|k| curve.power((k as f64 * 0.01).min(voc)).unwrap())
            .fold(0.0f64, f64::max);
        prop_assert!((p_mpp - best).abs() <= 1e-4 * best, "{} vs {}", p_mpp, best);
        prop_assert!(p_mpp >= best * (1.0 - 1e-9));
    }
}
