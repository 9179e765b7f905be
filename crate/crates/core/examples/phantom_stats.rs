use anatomical_prior::phantom::{cohort_stats, generate_cohort, PhantomSpec};

fn main() -> anatomical_prior::Result<()> {
    let spec = PhantomSpec::default();
    let cases = generate_cohort(&spec)?;
    println!("{:#?}", cohort_stats(&cases));
    Ok(())
}
