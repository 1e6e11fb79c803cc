//! Operation counts of a 3 -> 3, 5x5 layer on a 256x256 map for the
//! classic convolution and several Padé orders, with and without shifters.

use paon::kernels::ConvSpec;
use paon::metrics::{count_ops, format_table, OpKind, OpLayer};
use paon::paon::PaonDegree;
use paon::shifter::ShifterConfig;

fn layer(kind: OpKind, shifter: Option<ShifterConfig>) -> OpLayer {
    OpLayer {
        name: "conv".into(),
        kind,
        spec: ConvSpec::new(3, 3, 5),
        in_h: 256,
        in_w: 256,
        shifter,
    }
}

fn main() {
    let pade = |k, l| OpKind::Pala {
        degree: PaonDegree::new(k, l).unwrap(),
        smoothed: true,
    };
    let rows = vec![
        (
            "classic".to_string(),
            count_ops(&[layer(OpKind::Classic, None)]),
        ),
        ("[1/0]".to_string(), count_ops(&[layer(pade(1, 0), None)])),
        ("[1/1]".to_string(), count_ops(&[layer(pade(1, 1), None)])),
        ("[2/1]".to_string(), count_ops(&[layer(pade(2, 1), None)])),
        (
            "[1/1] + kernel-wise".to_string(),
            count_ops(&[layer(pade(1, 1), Some(ShifterConfig::kernel_wise(3, 0)))]),
        ),
        (
            "[1/1] + element-wise".to_string(),
            count_ops(&[layer(pade(1, 1), Some(ShifterConfig::element_wise(3, 3)))]),
        ),
    ];
    print!("{}", format_table(&rows));
    println!();
    print!("{}", rows[2].1.to_csv());
}
