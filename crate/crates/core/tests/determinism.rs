//! Results must not depend on the size of the worker pool.

use gexpect_core::acceptance::feynman_kac_model;
use gexpect_core::gbsde::{picard_solve, PicardOptions};
use gexpect_core::montecarlo::{sample_paths, PathSource, PolicySpec, Storage};
use gexpect_core::pde::{bsb_price, BsbSpec, Side};
use gexpect_core::FieldExpr;

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn pde_and_picard_are_bitwise_stable() {
    let (model, grid) = feynman_kac_model().unwrap();
    let run = || picard_solve(&model, &grid, &PicardOptions::default()).unwrap().0.to_csv(None);
    assert_eq!(in_pool(1, run), in_pool(4, run));

    let spec = BsbSpec::new(FieldExpr::parse("max(x - 100, 0)").unwrap(), 0.01, 0.1, 0.3, Side::Bid, 100.0, 0.5);
    let price = || {
        let r = bsb_price(&spec).unwrap();
        (r.price.to_bits(), r.surface.to_csv(Some(&r.policy)))
    };
    assert_eq!(in_pool(1, price), in_pool(3, price));
}

#[test]
fn monte_carlo_paths_are_bitwise_stable() {
    let spec = BsbSpec::new(FieldExpr::x(), 0.0, 0.1, 0.3, Side::Offer, 100.0, 1.0);
    let draw = || {
        let b = sample_paths(PathSource::Bsb(&spec), &PolicySpec::Random { seed: 5 }, 500, 16, 42, Storage::Full).unwrap();
        (b.x, b.qv, b.controls)
    };
    assert_eq!(in_pool(1, draw), in_pool(4, draw));
}
