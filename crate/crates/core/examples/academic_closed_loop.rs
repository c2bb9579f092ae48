//! OAG and exact-gradient descent from 100 random starts on the two-input
//! nonlinear plant. OAG reaches one point; the exact method splits between
//! local minima. Writes an SVG of the trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_oag::numlin::Vector;
use robust_oag::plants::academic::{academic_problem, AcademicPlant};
use robust_oag::sim::{self, Scenario, SimTrace};

pub fn run_example() -> robust_oag::Result<()> {
    let spec = academic_problem();
    let w = Vector::from_vec(vec![1.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let scenarios: Vec<Scenario> = (0..100)
        .map(|_| {
            let u0 = Vector::from_fn(2, |_, _| rng.random_range(-5.0..=5.0));
            Scenario::constant(spec.clone(), w.clone(), 0.01, u0, 200_000, 1e-10)
        })
        .collect();
    let collect = |v: Vec<robust_oag::Result<SimTrace>>| v.into_iter().collect::<robust_oag::Result<Vec<_>>>();
    let oag = collect(sim::run_batch(&scenarios, |s| sim::run_oag(&AcademicPlant, s)))?;
    let gd = collect(sim::run_batch(&scenarios, |s| sim::run_gd_true(&AcademicPlant, s)))?;
    let ff = sim::feedforward_baseline(&spec, &w)?;

    let all: Vec<SimTrace> = oag.iter().chain(&gd).cloned().collect();
    let report = sim::compare(&all, Some(&ff));
    for c in &report.clusters {
        println!("{:?}: {} cluster(s), sizes {:?}, centers {:?}", c.algorithm, c.count, c.sizes, c.centers);
    }
    println!("feedforward point {:?}", ff.as_slice());

    let path = std::env::temp_dir().join("robust_oag_academic.svg");
    std::fs::write(&path, sim::svg_trajectories(&all, [(-5.0, 5.0), (-5.0, 5.0)], Some(&ff)))?;
    println!("trajectories written to {}", path.display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> robust_oag::Result<()> {
    run_example()
}
