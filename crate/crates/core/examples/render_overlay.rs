//! Render the mid-axial T2W slice of a phantom case with its lesion mask
//! as the overlay.

use anatomical_prior::cli::render_overlay;
use anatomical_prior::phantom::{generate_cohort, PhantomSpec};

fn main() -> anatomical_prior::Result<()> {
    let spec = PhantomSpec {
        n_cases: 8,
        ..Default::default()
    };
    let cases = generate_cohort(&spec)?;
    let case = cases.iter().find(|c| c.label).expect("a positive case");
    let dir = std::env::temp_dir();
    for (name, overlay) in [("plain", None), ("overlay", Some(case.lesion.volume()))] {
        let img = render_overlay(&case.image, overlay, 0.6, 8)?;
        let path = dir.join(format!("anaprior-{}-{name}.png", case.id));
        img.save(&path)?;
        println!("{} ({}x{})", path.display(), img.width(), img.height());
    }
    Ok(())
}
