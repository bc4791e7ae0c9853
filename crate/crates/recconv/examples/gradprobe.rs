use recconv::analysis::{nominal_erf, structural_rf};
use recconv::RecConvConfig;
fn main() {
    for k in [3usize, 5, 7] {
        for level in 0..=3 {
            let cfg = RecConvConfig::new(1, k, level);
            println!(
                "k={k} level={level}: structural {} nominal {}",
                structural_rf(&cfg).unwrap(),
                nominal_erf(k, level)
            );
        }
    }
}
