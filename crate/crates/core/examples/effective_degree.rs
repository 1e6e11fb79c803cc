//! Expands a smoothed neuron into a single rational function with integer
//! coefficients and prints its numerator and denominator degrees.

use paon::paon::symbolic::smoothed_expansion;

fn main() {
    for (a, b) in [
        (vec![1, 2], vec![3]),
        (vec![1, -1, 2], vec![2]),
        (vec![2, 1, -3], vec![1, 4]),
    ] {
        let (num, den) = smoothed_expansion(&a, &b);
        println!(
            "a = {a:?}, b = {b:?}: numerator {:?} (degree {}), denominator {:?} (degree {})",
            num.coeffs(),
            num.degree().unwrap(),
            den.coeffs(),
            den.degree().unwrap()
        );
    }
}
