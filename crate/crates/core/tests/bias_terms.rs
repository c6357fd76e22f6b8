mod common;

use common::criteria::*;
use common::*;
use tripanel::*;

fn poisson_fit(seed: u64, structure: Structure, dims: (usize, usize, usize), spec: SpecId) -> Fit {
    let ds = random_panel(seed, 0, Family::Poisson, structure, dims.0, dims.1, dims.2, 2);
    let spec = FeSpec::new(spec, structure).unwrap();
    let p = validate(&ds, &spec).unwrap();
    fit(&p, &spec, Family::Poisson, &strict_options()).unwrap()
}

#[test]
fn terms_match_nested_loops() {
    bias_oracle(3, &mut FitLog::default()).assert();
}

#[test]
fn terms_match_nested_loops_on_a_larger_undirected_panel() {
    let base = poisson_fit(11, Structure::Undirected, (6, 6, 7), SpecId::S3b);
    for (f, arrays) in [comparison_case(&base), scrambled(&base, 11)] {
        let cube = Cube::new(&f, &arrays);
        for h in 0..=3 {
            let d =
                terms_diff(&bias_terms(&f, &arrays, h).unwrap(), &naive_bias_terms(&cube, Structure::Undirected, h));
            assert!(d < 1e-12, "h={h}: {d:e}");
        }
    }
}

#[test]
fn components_are_sums_of_terms_and_follow_the_spec() {
    let f = poisson_fit(3, Structure::Bipartite, (4, 4, 5), SpecId::S3b);
    let proj = project_fit(&f).unwrap();
    let arrays = residual_arrays(&proj, &f.derivatives).unwrap();
    let terms = bias_terms(&f, &arrays, 1).unwrap();
    let comps = compute_bias_components(&f, &arrays, 1).unwrap();
    assert_eq!(comps.alpha.unwrap(), terms.alpha_total());
    assert_eq!(comps.gamma.unwrap(), terms.gamma_total());
    assert_eq!(comps.rho.unwrap(), terms.rho_total());

    // one-way and non-interacted specifications trigger fewer (or no) components
    let f = poisson_fit(3, Structure::Bipartite, (4, 4, 5), SpecId::S2_3c);
    let r = bias_report(&f, BandwidthRule::Fixed(1)).unwrap();
    assert!(r.b_alpha.is_none() && r.b_gamma.is_none() && r.b_rho.is_some());
    let f = poisson_fit(3, Structure::Bipartite, (4, 4, 5), SpecId::S3a);
    let r = bias_report(&f, BandwidthRule::Auto).unwrap();
    assert!(r.b_alpha.is_none() && r.b_gamma.is_none() && r.b_rho.is_none());
    assert_eq!(r.beta_tilde, r.beta_hat);
}

#[test]
fn linear_and_poisson_curvature_terms_vanish() {
    curvature_zeros(3, &mut FitLog::default()).assert();
}

#[test]
fn logit_curvature_terms_do_not_vanish() {
    let (p, spec, _) =
        screened_case(5, Family::Logit, SpecId::S3b, Structure::Bipartite, (8, 8, 6), 2000).expect("a screened case");
    let f = fit(&p, &spec, Family::Logit, &strict_options()).unwrap();
    let proj = project_fit(&f).unwrap();
    let arrays = residual_arrays(&proj, &f.derivatives).unwrap();
    assert!(curvature_level_terms(&bias_terms(&f, &arrays, 1).unwrap()) > 1e-6);
}
