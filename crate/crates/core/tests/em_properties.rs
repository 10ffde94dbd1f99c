use proptest::prelude::*;
use qubit_loss::em::{
    interdigital_unit_cell, refine_until_converged, solve_cross_section, CrossSection, Strip,
};
use qubit_loss::units::{EPS0, SAPPHIRE_EPS_REL};

/// Complete elliptic integral of the first kind, K(k) = π / (2·AGM(1, k')).
fn ellip_k(k: f64) -> f64 {
    let (mut a, mut b) = (1.0, (1.0 - k * k).sqrt());
    while (a - b).abs() > 1e-15 * a {
        (a, b) = (0.5 * (a + b), (a * b).sqrt());
    }
    std::f64::consts::PI / (2.0 * a)
}

/// Conformal-mapping capacitance per length of two coplanar strips of width
/// `w` separated by `s`, on a half-space of relative permittivity `eps_r`.
fn coplanar_strips_capacitance(w: f64, s: f64, eps_r: f64) -> f64 {
    let k = s / (s + 2.0 * w);
    let kp = (1.0 - k * k).sqrt();
    EPS0 * 0.5 * (1.0 + eps_r) * ellip_k(kp) / ellip_k(k)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn asymmetric_triplet() -> CrossSection {
    CrossSection::new(
        vec![
            Strip::new(0.0, 3.0, 1.0),
            Strip::new(4.5, 7.0, 0.0),
            Strip::new(13.0, 2.0, -0.5),
        ],
        SAPPHIRE_EPS_REL,
    )
    .with_discretization(64)
}

#[test]
fn oracle_elliptic_integral_sanity() {
    // K(0) = π/2 and K(1/√2) = Γ(1/4)² / (4√π).
    assert!(rel(ellip_k(0.0), std::f64::consts::FRAC_PI_2) < 1e-15);
    assert!(rel(ellip_k(0.5f64.sqrt()), 1.854_074_677_301_372) < 1e-13);
}

#[test]
fn pair_matches_conformal_mapping() {
    let oracle = coplanar_strips_capacitance(10.0, 10.0, SAPPHIRE_EPS_REL);
    let geom = CrossSection::coplanar_pair(10.0, 10.0, 1.0, SAPPHIRE_EPS_REL);
    assert_eq!(geom.discretization, 256);
    let sol = solve_cross_section(&geom).unwrap();
    assert!(
        rel(sol.capacitance_per_len, oracle) < 0.02,
        "C = {:e}, oracle {:e}",
        sol.capacitance_per_len,
        oracle
    );
}

#[test]
fn conformal_agreement_across_aspect_ratios() {
    for (w, s) in [(10.0, 2.0), (5.0, 20.0), (1.0, 1.0), (30.0, 6.0)] {
        let geom = CrossSection::coplanar_pair(w, s, 1.0, 4.0).with_discretization(128);
        let c = solve_cross_section(&geom).unwrap().capacitance_per_len;
        assert!(
            rel(c, coplanar_strips_capacitance(w, s, 4.0)) < 0.02,
            "w={w} s={s}"
        );
    }
}

#[test]
fn refinement_converges_below_one_percent() {
    let geom =
        CrossSection::coplanar_pair(10.0, 10.0, 1.0, SAPPHIRE_EPS_REL).with_discretization(16);
    let r = refine_until_converged(&geom, 0.01).unwrap();
    let n = r.history.len();
    assert!(n >= 2);
    let (e0, e1) = (r.history[n - 2].1, r.history[n - 1].1);
    assert!(rel(e1, e0) < 0.01);
    assert!(r.estimated_rel_error.unwrap() < 0.01);
}

#[test]
fn final_doubling_changes_energy_by_less_than_one_percent() {
    let base = CrossSection::coplanar_pair(10.0, 10.0, 1.0, SAPPHIRE_EPS_REL);
    let e256 = solve_cross_section(&base).unwrap().energy_per_len;
    let e512 = solve_cross_section(&base.clone().with_discretization(512))
        .unwrap()
        .energy_per_len;
    assert!(rel(e256, e512) < 0.01);
}

#[test]
fn scaling_leaves_capacitance_unchanged() {
    let geom = interdigital_unit_cell(2.0, 5, 1.0)
        .unwrap()
        .with_discretization(64);
    let c1 = solve_cross_section(&geom).unwrap().capacitance_per_len;
    for s in [0.5, 2.0, 7.3] {
        let c = solve_cross_section(&geom.scaled(s))
            .unwrap()
            .capacitance_per_len;
        assert!(rel(c, c1) < 0.01, "scale {s}");
    }
}

#[test]
fn superposition_of_charge_densities() {
    let base = asymmetric_triplet();
    let v1 = [1.0, 0.0, -0.5];
    let v2 = [0.2, 1.0, 0.0];
    let (a, b) = (0.7, -1.3);
    let combined: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| a * x + b * y).collect();
    let s1 = solve_cross_section(&base.clone().with_potentials(&v1)).unwrap();
    let s2 = solve_cross_section(&base.clone().with_potentials(&v2)).unwrap();
    let s = solve_cross_section(&base.clone().with_potentials(&combined)).unwrap();
    let scale = s.metal.iter().map(|m| m.sigma.abs()).fold(0.0, f64::max);
    for ((m, m1), m2) in s.metal.iter().zip(&s1.metal).zip(&s2.metal) {
        let expect = a * m1.sigma + b * m2.sigma;
        assert!((m.sigma - expect).abs() <= 1e-9 * scale);
    }
}

#[test]
fn swapping_drive_negates_charge_and_keeps_energy() {
    let geom =
        CrossSection::coplanar_pair(10.0, 10.0, 1.0, SAPPHIRE_EPS_REL).with_discretization(64);
    let swapped = geom.clone().with_potentials(&[-0.5, 0.5]);
    let a = solve_cross_section(&geom).unwrap();
    let b = solve_cross_section(&swapped).unwrap();
    assert!(rel(a.energy_per_len, b.energy_per_len) < 1e-12);
    for (x, y) in a.metal.iter().zip(&b.metal) {
        assert!((x.sigma + y.sigma).abs() <= 1e-12 * x.sigma.abs().max(1e-30));
    }
}

#[test]
fn antisymmetric_drive_gives_antisymmetric_charge() {
    let geom = interdigital_unit_cell(3.0, 5, 1.0)
        .unwrap()
        .with_potentials(&[1.0, 0.5, 0.0, -0.5, -1.0])
        .with_discretization(32);
    let sol = solve_cross_section(&geom).unwrap();
    let (lo, hi) = geom.span();
    let center = 0.5 * (lo + hi);
    let n = sol.metal.len();
    for i in 0..n {
        let (p, q) = (&sol.metal[i], &sol.metal[n - 1 - i]);
        assert!((p.x - center + (q.x - center)).abs() < 1e-9);
        assert!((p.sigma + q.sigma).abs() <= 1e-10 * p.sigma.abs().max(1e-30));
    }
}

#[test]
fn mirrored_geometry_gives_mirrored_solution() {
    let geom = asymmetric_triplet();
    let (lo, hi) = geom.span();
    let mirrored = CrossSection::new(
        geom.strips
            .iter()
            .rev()
            .map(|s| Strip::new(lo + hi - s.x_end(), s.width, s.potential))
            .collect(),
        geom.eps_sub_rel,
    )
    .with_discretization(geom.discretization);
    let a = solve_cross_section(&geom).unwrap();
    let b = solve_cross_section(&mirrored).unwrap();
    assert!(rel(a.energy_per_len, b.energy_per_len) < 1e-10);
    let n = a.metal.len();
    for i in 0..n {
        let (p, q) = (&a.metal[i], &b.metal[n - 1 - i]);
        assert!((p.x - (lo + hi - q.x)).abs() < 1e-9);
        assert!((p.sigma - q.sigma).abs() <= 1e-8 * p.sigma.abs().max(1e-30));
    }
}

#[test]
fn energy_matches_charge_potential_sum() {
    let geom = asymmetric_triplet();
    let sol = solve_cross_section(&geom).unwrap();
    let half_qv: f64 = 0.5
        * sol
            .strip_charge
            .iter()
            .zip(geom.potentials())
            .map(|(q, v)| q * v)
            .sum::<f64>();
    assert!(rel(sol.energy_per_len, half_qv) < 1e-9);
    assert!(sol.energy_per_len > 0.0);
}

#[test]
fn energy_from_sampled_fields_within_three_percent() {
    for geom in [
        CrossSection::coplanar_pair(10.0, 10.0, 1.0, SAPPHIRE_EPS_REL),
        interdigital_unit_cell(5.0, 7, 1.0).unwrap(),
        asymmetric_triplet().with_discretization(256),
    ] {
        let sol = solve_cross_section(&geom).unwrap();
        let e = sol.energy_from_fields();
        assert!(
            rel(e, sol.energy_per_len) < 0.03,
            "{}: {e:e} vs {:e}",
            geom.label,
            sol.energy_per_len
        );
    }
}

#[test]
fn two_terminal_drive_is_neutral() {
    let sol = solve_cross_section(&interdigital_unit_cell(1.0, 7, 1.0).unwrap()).unwrap();
    let total: f64 = sol.strip_charge.iter().sum();
    let scale: f64 = sol.strip_charge.iter().map(|q| q.abs()).sum();
    assert!(total.abs() < 1e-10 * scale);
}

#[test]
fn geometry_json_drives_solver() {
    let json = r#"{
        "strips": [
            {"x_start": 0.0, "width": 10.0, "potential": 0.5},
            {"x_start": 20.0, "width": 10.0, "potential": -0.5}
        ],
        "eps_sub_rel": 10.15,
        "edge_cutoff": 0.1,
        "discretization": 64
    }"#;
    let geom: CrossSection = serde_json::from_str(json).unwrap();
    assert_eq!(geom.eps_vac_rel, 1.0);
    let sol = solve_cross_section(&geom).unwrap();
    let direct = solve_cross_section(
        &CrossSection::coplanar_pair(10.0, 10.0, 1.0, 10.15).with_discretization(64),
    )
    .unwrap();
    assert!(rel(sol.capacitance_per_len, direct.capacitance_per_len) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn capacitance_is_scale_invariant(w in 0.5f64..20.0, s in 0.5f64..20.0, f in 0.2f64..5.0) {
        let geom = CrossSection::coplanar_pair(w, s, 1.0, SAPPHIRE_EPS_REL).with_discretization(32);
        let c1 = solve_cross_section(&geom).unwrap().capacitance_per_len;
        let c2 = solve_cross_section(&geom.scaled(f)).unwrap().capacitance_per_len;
        prop_assert!(rel(c2, c1) < 0.01);
    }

    #[test]
    fn energy_scales_with_voltage_squared(v in 0.1f64..10.0) {
        let geom = CrossSection::coplanar_pair(4.0, 2.0, 1.0, SAPPHIRE_EPS_REL).with_discretization(32);
        let e1 = solve_cross_section(&geom).unwrap().energy_per_len;
        let ev = solve_cross_section(&geom.clone().with_potentials(&[v / 2.0, -v / 2.0]))
            .unwrap()
            .energy_per_len;
        prop_assert!(rel(ev, e1 * v * v) < 1e-10);
    }
}
