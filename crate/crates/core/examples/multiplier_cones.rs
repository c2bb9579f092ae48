//! Sampled positivity check of every multiplier-cone recipe, and a
//! deliberately corrupted cone that the check rejects.

use robust_oag::uncertainty::{self, DeltaBlock, MultiplierCone};

pub fn run_example() -> robust_oag::Result<()> {
    let cases: Vec<(&str, Vec<DeltaBlock>, MultiplierCone)> = vec![
        (
            "unstructured norm-bounded",
            vec![DeltaBlock::UnstructuredNormBounded { gamma: 0.7, rows: 2, cols: 3 }],
            uncertainty::cone_unstructured_norm_bounded(0.7, 2, 3)?,
        ),
        (
            "repeated scalar norm-bounded",
            vec![DeltaBlock::RepeatedScalarNormBounded { gamma: 1.5, dim: 3 }],
            uncertainty::cone_repeated_scalar_norm_bounded(1.5, 3)?,
        ),
        (
            "sector unstructured",
            vec![DeltaBlock::UnstructuredSector { rho: 0.2, l: 2.0, dim: 2 }],
            uncertainty::cone_sector_unstructured(0.2, 2.0, 2)?,
        ),
        (
            "sector repeated",
            vec![DeltaBlock::RepeatedScalarSector { rho: 0.0, l: 1.0, dim: 3 }],
            uncertainty::cone_sector_repeated(0.0, 1.0, 3)?,
        ),
        (
            "OAG composite",
            uncertainty::oag_structure(3, 2, 0.4),
            uncertainty::oag_cone(3, 2, 0.4)?,
        ),
    ];
    for (name, structure, cone) in &cases {
        let r = uncertainty::iqc_validate(cone, structure, 2000, 5)?;
        println!("{name:<30} min form {:+.3e} pass {}", r.min_value, r.pass);
        assert!(r.pass);
    }

    let (_, structure, cone) = &cases[0];
    let mut flipped = cone.clone();
    for p in &mut flipped.params {
        for g in &mut p.generators {
            *g = -&*g;
        }
    }
    let r = uncertainty::iqc_validate(&flipped, structure, 2000, 5)?;
    println!("{:<30} min form {:+.3e} pass {}", "sign-corrupted", r.min_value, r.pass);
    assert!(!r.pass);
    Ok(())
}

#[allow(dead_code)]
fn main() -> robust_oag::Result<()> {
    run_example()
}
