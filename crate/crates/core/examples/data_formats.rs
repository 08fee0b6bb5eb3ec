//! Writes a synthetic scene as HSIC/HSIL files, reads them back, normalises
//! the cube, cuts a mirrored edge patch and saves a stratified split.
//!
//!     cargo run --example data_formats -- demo_data
//!
//! The files it leaves in the directory are valid inputs for the CLI.

use std::path::PathBuf;

use specpat::data::{
    extract_patch, load_cube, load_labels, normalize_minmax, save_cube_as, save_labels, stratified_split,
    CubeDtype, Fractions,
};
use specpat::synthetic::striped_scene;

fn main() -> specpat::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo_data".into()));
    std::fs::create_dir_all(&dir)?;

    let (cube, labels) = striped_scene(24, 24, 200, 3, 11)?;
    let cube_path = dir.join("scene.hsic");
    let labels_path = dir.join("scene.hsil");
    save_cube_as(&cube, &cube_path, CubeDtype::F32)?;
    save_labels(&labels, &labels_path)?;
    println!("wrote {} and {}", cube_path.display(), labels_path.display());

    let cube = load_cube(&cube_path)?;
    let labels = load_labels(&labels_path)?;
    println!(
        "cube '{}' {}x{}x{}, labels {:?} with histogram {:?}",
        cube.name,
        cube.height(),
        cube.width(),
        cube.bands(),
        labels.class_names(),
        labels.histogram()
    );

    let norm = normalize_minmax(&cube)?;
    let (lo, hi) = norm
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!("normalised range [{lo}, {hi}]");

    // Centred on the corner: rows/columns -1 and -2 mirror 1 and 2.
    let patch = extract_patch(&norm, 0, 0, 5)?;
    println!(
        "corner patch {:?}: band 0 row 0 = {:?}",
        patch.shape(),
        (0..5).map(|x| patch.get(&[0, x, 0]).unwrap()).collect::<Vec<_>>()
    );

    let split = stratified_split(&labels, Fractions::new(0.2, 0.05, 0.75)?, 1)?;
    let split_path = dir.join("split_seed1.csv");
    split.write_csv(&split_path)?;
    for (class, [tr, va, te]) in split.class_counts() {
        println!("class {class}: train {tr}, val {va}, test {te}");
    }
    println!("wrote {}", split_path.display());
    Ok(())
}
