//! Bayes Hilbert space operations and the centered log-ratio transform.
//!
//! Densities are identified up to positive scaling, so every operation here
//! accepts unnormalized positive functions and returns the normalized
//! representative.

use super::{check_positive, ClrFunction, Density, GridFunction};
use crate::error::Result;

/// Centered log-ratio transform `log f − |I|⁻¹ ∫ log f`.
///
/// Invariant to positive rescaling of `f`.
pub fn clr(f: &GridFunction) -> Result<ClrFunction> {
    check_positive(f)?;
    let log_f = f.values().map(f64::ln);
    let mean = log_f.mean();
    Ok(ClrFunction::from_unchecked(GridFunction::new(
        *f.grid(),
        log_f.add_scalar(-mean),
    )?))
}

/// Inverse clr transform `exp(g) / ∫ exp(g)`.
///
/// Accepts any finite function; adding a constant to `g` leaves the result
/// unchanged, which is used to subtract `max g` before exponentiating.
pub fn clr_inverse(g: &GridFunction) -> Density {
    let max = g.values().max();
    let shifted = g.values().map(|v| (v - max).exp());
    let total = g.grid().width() * shifted.sum();
    let values = shifted / total;
    Density::from_normalized(GridFunction::new(*g.grid(), values).expect("finite by construction"))
}

/// Bayes space inner product in its double-integral form
/// `(2|I|)⁻¹ ∬ log(f₁(x)/f₁(y)) log(f₂(x)/f₂(y)) dx dy`.
///
/// Expanding the product reduces the double integral to
/// `∫ a b − |I|⁻¹ ∫a ∫b` with `a = log f₁`, `b = log f₂`.
pub fn bayes_inner_product(f1: &GridFunction, f2: &GridFunction) -> Result<f64> {
    f1.grid().ensure_same(f2.grid())?;
    check_positive(f1)?;
    check_positive(f2)?;
    let grid = f1.grid();
    let a = f1.values().map(f64::ln);
    let b = f2.values().map(f64::ln);
    let dx = grid.width();
    let int_ab = dx * a.dot(&b);
    let int_a = dx * a.sum();
    let int_b = dx * b.sum();
    Ok(int_ab - int_a * int_b / grid.length())
}

/// Perturbation `f₁ ⊕ f₂`: the normalized pointwise product.
pub fn bayes_perturb(f1: &GridFunction, f2: &GridFunction) -> Result<Density> {
    f1.grid().ensure_same(f2.grid())?;
    check_positive(f1)?;
    check_positive(f2)?;
    // through log space so extreme products do not overflow
    let log_sum = GridFunction::new(*f1.grid(), f1.values().map(f64::ln) + f2.values().map(f64::ln))?;
    Ok(clr_inverse(&log_sum))
}

/// Powering `α ⊙ f`: the normalized `f^α`.
pub fn bayes_power(alpha: f64, f: &GridFunction) -> Result<Density> {
    check_positive(f)?;
    let scaled = GridFunction::new(*f.grid(), f.values().map(|v| alpha * v.ln()))?;
    Ok(clr_inverse(&scaled))
}

impl Density {
    pub(crate) fn from_normalized(f: GridFunction) -> Self {
        Density(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_space::Grid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit(n: usize) -> Grid {
        Grid::new(0.0, 1.0, n).unwrap()
    }

    fn max_abs_diff(a: &GridFunction, b: &GridFunction) -> f64 {
        (a.values() - b.values()).amax()
    }

    fn exp2x(g: Grid) -> GridFunction {
        GridFunction::from_fn(g, |x| (2.0 * x).exp()).unwrap()
    }

    #[test]
    fn clr_of_uniform_is_zero() {
        let g = unit(50);
        let c = clr(&Density::uniform(g)).unwrap();
        assert!(c.values().amax() < 1e-15);
    }

    #[test]
    fn clr_of_exponential_is_linear() {
        let g = unit(200);
        let c = clr(&exp2x(g)).unwrap();
        let expected = GridFunction::from_fn(g, |x| 2.0 * x - 1.0).unwrap();
        assert!(max_abs_diff(&c, &expected) < 1e-12);
    }

    #[test]
    fn clr_of_gaussian_bump_integrates_to_zero() {
        let g = unit(200);
        let bump = GridFunction::from_fn(g, |x| (-(x - 0.4).powi(2) / 0.02).exp()).unwrap();
        let c = clr(&Density::normalize(bump).unwrap()).unwrap();
        assert!(c.integrate().abs() < 1e-10);
    }

    #[test]
    fn clr_rejects_nonpositive_values() {
        let g = unit(4);
        let f = GridFunction::from_vec(g, vec![1.0, 2.0, -1.0, 1.0]).unwrap();
        let err = clr(&f).unwrap_err();
        assert!(err.to_string().contains("cell 2"), "{err}");
    }

    #[test]
    fn clr_is_scale_invariant() {
        let g = unit(200);
        let f = exp2x(g);
        let base = clr(&f).unwrap();
        for alpha in [0.5, 2.0, 10.0] {
            let c = clr(&f.scale(alpha)).unwrap();
            assert!(max_abs_diff(&c, &base) < 1e-12);
        }
    }

    #[test]
    fn clr_inverse_of_zero_is_uniform() {
        let g = unit(30);
        let f = clr_inverse(&GridFunction::zeros(g));
        assert!(f.values().iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn clr_inverse_matches_analytic_exponential_density() {
        // exp(2x−1) normalized on the grid; the analytic density 2e^{2x}/(e²−1)
        // is reached up to midpoint-rule error, the grid normalization exactly.
        let g = unit(200);
        let lin = GridFunction::from_fn(g, |x| 2.0 * x - 1.0).unwrap();
        let f = clr_inverse(&lin);
        let dx = g.width();
        let grid_norm: f64 = (0..200).map(|k| (2.0 * g.midpoint(k)).exp() * dx).sum();
        let last = g.midpoint(199);
        assert_abs_diff_eq!(f.values()[199], (2.0 * last).exp() / grid_norm, epsilon = 1e-10);
        let analytic =
            2.0 * std::f64::consts::E.powi(2) / (std::f64::consts::E.powi(2) - 1.0) * (2.0 * (last - 1.0)).exp();
        assert_abs_diff_eq!(f.values()[199], analytic, epsilon = 1e-4);
        assert_abs_diff_eq!(f.integrate(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn clr_inverse_survives_huge_values() {
        let g = unit(10);
        let big = GridFunction::from_fn(g, |x| 1e4 * x).unwrap();
        let f = clr_inverse(&big);
        assert!(f.values().iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(f.integrate(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn bayes_inner_product_with_uniform_vanishes() {
        let g = unit(200);
        let u = Density::uniform(g);
        let f = exp2x(g);
        assert!(bayes_inner_product(&u, &f).unwrap().abs() < 1e-10);
    }

    #[test]
    fn bayes_norm_of_linear_clr() {
        // ∫(2x−1)² = 1/3; the midpoint error Δ²/3 needs Δ below 1.7e−3
        let g = unit(1000);
        let f = exp2x(g);
        assert_abs_diff_eq!(bayes_inner_product(&f, &f).unwrap(), 1.0 / 3.0, epsilon = 1e-6);
    }

    #[test]
    fn bayes_inner_product_matches_naive_double_sum() {
        let g = unit(60);
        let f1 = GridFunction::from_fn(g, |x| 1.0 + 0.5 * (6.0 * x).sin()).unwrap();
        let f2 = GridFunction::from_fn(g, |x| (x - 0.3).powi(2) + 0.1).unwrap();
        let dx = g.width();
        let mut naive = 0.0;
        for i in 0..60 {
            for j in 0..60 {
                let a = (f1.values()[i] / f1.values()[j]).ln();
                let b = (f2.values()[i] / f2.values()[j]).ln();
                naive += a * b * dx * dx;
            }
        }
        naive /= 2.0 * g.length();
        assert_abs_diff_eq!(bayes_inner_product(&f1, &f2).unwrap(), naive, epsilon = 1e-12);
    }

    #[test]
    fn perturbation_neutral_element_and_zero_power() {
        let g = unit(100);
        let f = Density::normalize(exp2x(g)).unwrap();
        let p = bayes_perturb(&f, &Density::uniform(g)).unwrap();
        assert!(max_abs_diff(&p, &f) < 1e-12);
        let z = bayes_power(0.0, &f).unwrap();
        assert!(max_abs_diff(&z, &Density::uniform(g)) < 1e-14);
    }

    #[test]
    fn power_doubles_clr() {
        let g = unit(200);
        let f = exp2x(g);
        let c = clr(&bayes_power(2.0, &f).unwrap()).unwrap();
        let expected = GridFunction::from_fn(g, |x| 4.0 * x - 2.0).unwrap();
        assert!(max_abs_diff(&c, &expected) < 1e-10);
    }

    fn smooth_density(g: Grid, coeffs: &[f64]) -> Density {
        let f = GridFunction::from_fn(g, |x| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * ((k + 1) as f64 * std::f64::consts::PI * x).cos())
                .sum()
        })
        .unwrap();
        clr_inverse(&f)
    }

    proptest! {
        #[test]
        fn clr_round_trips(coeffs in prop::collection::vec(-3.0f64..3.0, 1..6)) {
            let g = unit(200);
            let f = smooth_density(g, &coeffs);
            let back = clr_inverse(&clr(&f).unwrap());
            prop_assert!(max_abs_diff(&back, &f) < 1e-10);
        }

        #[test]
        fn clr_is_homomorphism(
            a in prop::collection::vec(-2.0f64..2.0, 3),
            b in prop::collection::vec(-2.0f64..2.0, 3),
            alpha in -3.0f64..3.0,
        ) {
            let g = unit(200);
            let f1 = smooth_density(g, &a);
            let f2 = smooth_density(g, &b);
            let c1 = clr(&f1).unwrap();
            let c2 = clr(&f2).unwrap();
            let sum = clr(&bayes_perturb(&f1, &f2).unwrap()).unwrap();
            prop_assert!(max_abs_diff(&sum, &c1.add(&c2).unwrap()) < 1e-10);
            let pow = clr(&bayes_power(alpha, &f1).unwrap()).unwrap();
            prop_assert!(max_abs_diff(&pow, &c1.scale(alpha)) < 1e-10);
        }

        #[test]
        fn clr_is_isometry(
            a in prop::collection::vec(-2.0f64..2.0, 4),
            b in prop::collection::vec(-2.0f64..2.0, 4),
        ) {
            let g = unit(200);
            let f1 = smooth_density(g, &a);
            let f2 = smooth_density(g, &b);
            let lhs = bayes_inner_product(&f1, &f2).unwrap();
            let rhs = clr(&f1).unwrap().inner_product(&clr(&f2).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-8);
        }
    }
}
