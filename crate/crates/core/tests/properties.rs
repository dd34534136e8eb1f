use std::f64::consts::PI;

use proptest::prelude::*;

use blowup::domain::DomainSpec;
use blowup::energy::{self, Configuration, SingularSet};
use blowup::green::GreenEngine;
use blowup::{pt, Point};

fn star() -> DomainSpec {
    DomainSpec::star(&[vec![1.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![0.1, 0.0]], None).unwrap()
}

fn disk_point(r_max: f64) -> impl Strategy<Value = Point> {
    (0.0..1.0f64, 0.0..2.0 * PI).prop_map(move |(s, t)| pt(r_max * s.sqrt() * t.cos(), r_max * s.sqrt() * t.sin()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn reflection_is_an_involution_in_the_collar(theta in 0.0..2.0 * PI, d in 1e-6..0.15f64) {
        for dom in [DomainSpec::unit_disk(), star()] {
            let x = dom.boundary_point(theta) + d * dom.boundary_inward_normal(theta);
            let dist = dom.dist_to_boundary(x).unwrap();
            prop_assert!((dist - d).abs() < 1e-9 * (1.0 + d), "{dist} vs {d}");
            let xb = dom.reflect(x).unwrap();
            prop_assert!(!dom.contains(xb));
            let mid = 0.5 * (x + xb);
            prop_assert!(dom.level(mid).abs() < 1e-9);
        }
    }

    #[test]
    fn green_is_symmetric_and_positive(x in disk_point(0.99), y in disk_point(0.99)) {
        prop_assume!((x - y).norm() > 1e-6);
        let g = GreenEngine::closed_form_disk();
        let gxy = g.green(x, y).unwrap();
        prop_assert!((gxy - g.green(y, x).unwrap()).abs() < 1e-9);
        prop_assert!(gxy > 0.0);
        prop_assert!(g.robin_regular(x, y).unwrap() <= 2f64.ln() / (2.0 * PI) + 1e-12);
    }

    #[test]
    fn robin_function_tracks_boundary_distance(r in 0.5..0.999999f64, t in 0.0..2.0 * PI) {
        let g = GreenEngine::closed_form_disk();
        let x = pt(r * t.cos(), r * t.sin());
        let d = 1.0 - r;
        let bounded = g.robin_function(x).unwrap() - (2.0 * d).ln() / (2.0 * PI);
        prop_assert!(bounded.abs() < 0.2, "{bounded}");
    }

    #[test]
    fn pair_identity_holds(pts in prop::collection::vec(disk_point(3.0), 2..9), base in disk_point(3.0)) {
        let min_sep = pts.iter().enumerate()
            .flat_map(|(i, a)| pts[i + 1..].iter().map(move |b| (a - b).norm()))
            .fold(f64::INFINITY, f64::min);
        prop_assume!(min_sep > 1e-3 && pts.iter().all(|p| (p - base).norm() > 1e-3));
        let m = pts.len() as f64;
        let v = energy::pair_identity_check(&pts, base).unwrap();
        prop_assert!((v - m * (m - 1.0) / 2.0).abs() < 1e-9 * m * m);
    }

    #[test]
    fn psi_is_permutation_and_rotation_invariant(
        pts in prop::collection::vec(disk_point(0.8), 2..5),
        angle in 0.0..2.0 * PI,
        alpha in 0.2..2.8f64,
    ) {
        let min_sep = pts.iter().enumerate()
            .flat_map(|(i, a)| pts[i + 1..].iter().map(move |b| (a - b).norm()))
            .fold(f64::INFINITY, f64::min);
        prop_assume!(min_sep > 1e-2 && pts.iter().all(|p| p.norm() > 1e-2));
        let g = GreenEngine::closed_form_disk();
        let z = SingularSet::single(pt(0.0, 0.0), alpha);
        let xi = Configuration(pts.clone());
        let base = energy::psi(&g, &z, &xi).unwrap();
        let mut rev = pts.clone();
        rev.reverse();
        prop_assert!((energy::psi(&g, &z, &Configuration(rev)).unwrap() - base).abs() < 1e-10);
        let (s, c) = angle.sin_cos();
        let rot = Configuration(pts.iter().map(|p| pt(c * p.x - s * p.y, s * p.x + c * p.y)).collect());
        prop_assert!((energy::psi(&g, &z, &rot).unwrap() - base).abs() < 1e-9);
        // the weight form of Ψ agrees with the three-term form
        prop_assert!((energy::psi_weight_form(&g, &z, &xi).unwrap() - base).abs() < 1e-9);
    }
}
