//! Classical [K/L] approximants of exp from its Taylor series, next to the
//! truncated series with the same number of coefficients.

use paon::paon::PadeApproximant;

fn main() -> paon::Result<()> {
    let taylor: Vec<f64> = (0..8)
        .scan(1.0, |f, n| {
            let c = 1.0 / *f;
            *f *= (n + 1) as f64;
            Some(c)
        })
        .collect();
    println!(
        "{:>6} {:>12} {:>12} {:>12}",
        "order", "approximant", "series", "exp(1)"
    );
    for (k, l) in [(1, 1), (2, 2), (3, 3)] {
        let pade = PadeApproximant::from_taylor(&taylor, k, l)?;
        let series: f64 = taylor[..=k + l]
            .iter()
            .enumerate()
            .map(|(i, c)| c * 1f64.powi(i as i32))
            .sum();
        println!(
            "[{k}/{l}]  {:>12.6} {:>12.6} {:>12.6}",
            pade.eval(1.0),
            series,
            1f64.exp()
        );
    }
    Ok(())
}
