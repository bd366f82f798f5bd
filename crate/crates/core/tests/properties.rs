use std::sync::OnceLock;

use nalgebra::DMatrix;
use pdcfilter::basis_opt::svd_effective_basis;
use pdcfilter::covariance::{assemble_covariance, symplectic_eigenvalues, CovarianceMatrix};
use pdcfilter::filtering::{
    make_gauss_filter, make_rect_filter, Filter, MeasurementBasis, Projector,
};
use pdcfilter::global_opt::qr_orthonormalize;
use pdcfilter::metrics::{epr_variances, purity_from_determinant, purity_from_symplectic};
use pdcfilter::spectral::{
    build_gaussian_jsa, r_for_squeezing_db, schmidt_decompose, squeezing_db, FrequencyGrid,
    GaussianJsaParams, JsaMatrix, SchmidtData,
};
use proptest::prelude::*;

struct Fixture {
    jsa: JsaMatrix,
    schmidt: SchmidtData,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let grid = FrequencyGrid::reference();
        let jsa = build_gaussian_jsa(&GaussianJsaParams::reference(), &grid).unwrap();
        let schmidt = schmidt_decompose(&jsa, 10).unwrap();
        Fixture { jsa, schmidt }
    })
}

fn filter(rect: bool, center: f64, width: f64) -> Filter {
    let grid = FrequencyGrid::reference();
    if rect {
        make_rect_filter(center, width, &grid).unwrap()
    } else {
        make_gauss_filter(center, width, &grid).unwrap()
    }
}

fn filtered_cov(gain: f64, fa: &Filter, fb: &Filter, n_modes: usize) -> CovarianceMatrix {
    let s = fixture().schmidt.apply_gain(gain).unwrap();
    let basis = MeasurementBasis::schmidt(&s, n_modes).unwrap();
    let p = Projector::new(&s, fa, fb).unwrap().project(&basis).unwrap();
    assemble_covariance(&p, n_modes).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn filtering_never_raises_squeezing_parameters(
        rect in any::<bool>(),
        center in -6.0..6.0f64,
        width in 0.5..30.0f64,
        gain in 0.05..1.5f64,
    ) {
        let f = filter(rect, center, width);
        let fx = fixture();
        let unfiltered = fx.schmidt.apply_gain(gain).unwrap();
        let eff = svd_effective_basis(&fx.jsa, gain, &f, &f, 10).unwrap();
        for (rp, r) in eff.r_primes().iter().zip(unfiltered.r_values().unwrap()) {
            prop_assert!(*rp <= r + 1e-12, "r' {rp} exceeds r {r}");
        }
    }

    #[test]
    fn filtered_state_is_physical(
        rect_a in any::<bool>(),
        rect_b in any::<bool>(),
        ca in -5.0..5.0f64,
        cb in -5.0..5.0f64,
        wa in 0.5..25.0f64,
        wb in 0.5..25.0f64,
        gain in 0.05..1.5f64,
    ) {
        let cov = filtered_cov(gain, &filter(rect_a, ca, wa), &filter(rect_b, cb, wb), 4);
        let nu = symplectic_eigenvalues(cov.sigma()).unwrap();
        let min = nu.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= 0.5 - 1e-9, "min symplectic eigenvalue {min}");
        let p1 = purity_from_determinant(&cov).unwrap();
        let p2 = purity_from_symplectic(&cov).unwrap();
        prop_assert!(p1 <= 1.0 + 1e-9);
        prop_assert!((p1 - p2).abs() < 1e-9);
    }

    #[test]
    fn epr_variances_respect_uncertainty(
        rect in any::<bool>(),
        center in -5.0..5.0f64,
        width in 0.5..25.0f64,
        gain in 0.05..1.5f64,
    ) {
        let f = filter(rect, center, width);
        let cov = filtered_cov(gain, &f, &f, 3);
        for k in 0..3 {
            let (minus, plus) = epr_variances(&cov, k).unwrap();
            prop_assert!(minus > 0.0 && plus > 0.0);
            prop_assert!(minus * plus >= 1.0 - 1e-9, "mode {k}: {minus} * {plus}");
            let block = cov.mode_block(k, k).unwrap();
            let da = block[(0, 0)] * block[(1, 1)] - block[(0, 1)] * block[(1, 0)];
            prop_assert!(da >= 0.25 - 1e-9);
        }
    }

    #[test]
    fn transmission_and_reflection_split_energy(
        rect in any::<bool>(),
        center in -15.0..15.0f64,
        width in 0.1..50.0f64,
    ) {
        let f = filter(rect, center, width);
        for (t, r) in f.transmission().iter().zip(f.reflection()) {
            prop_assert!(t.norm() <= 1.0 + 1e-15);
            prop_assert!((t.norm_sqr() + r * r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn qr_factor_is_orthonormal(
        rows in 3usize..30,
        cols in 1usize..4,
        seed in any::<u64>(),
    ) {
        prop_assume!(cols <= rows);
        let mut state = seed | 1;
        let a = DMatrix::<f64>::from_fn(rows, cols, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        });
        let (q, r) = qr_orthonormalize(&a).unwrap();
        let gram = q.transpose() * &q;
        prop_assert!((gram - DMatrix::<f64>::identity(cols, cols)).amax() < 1e-12);
        prop_assert!((&q * &r - &a).amax() < 1e-12);
        for j in 0..cols {
            prop_assert!(r[(j, j)] > 0.0);
            for i in j + 1..cols {
                prop_assert_eq!(r[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn covariance_csv_round_trips(
        rect in any::<bool>(),
        center in -5.0..5.0f64,
        width in 0.5..25.0f64,
        gain in 0.0..1.5f64,
    ) {
        let f = filter(rect, center, width);
        let cov = filtered_cov(gain, &f, &f, 3);
        let back = CovarianceMatrix::from_csv(&cov.to_csv()).unwrap();
        prop_assert_eq!(back.sigma(), cov.sigma());
    }

    #[test]
    fn squeezing_conversion_inverts(db in 0.0..30.0f64) {
        prop_assert!((squeezing_db(r_for_squeezing_db(db)) - db).abs() < 1e-10);
    }

    #[test]
    fn schmidt_coefficients_sorted_and_bounded(
        sigma_a in 1.0..7.0f64,
        sigma_b in 1.0..7.0f64,
        theta in -1.5..1.5f64,
    ) {
        let grid = FrequencyGrid::reference();
        let params = GaussianJsaParams { sigma_a, sigma_b, theta, gain_b: 0.0 };
        let jsa = match build_gaussian_jsa(&params, &grid) {
            Ok(jsa) => jsa,
            Err(pdcfilter::Error::Truncation { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let s = schmidt_decompose(&jsa, 10).unwrap();
        let l = s.lambdas();
        prop_assert!(l.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(l.iter().all(|&x| x >= 0.0));
        let total: f64 = l.iter().map(|x| x * x).sum::<f64>() + s.tail_weight();
        prop_assert!(total <= 1.0 + 1e-9, "Σλ² = {total}");
    }
}
