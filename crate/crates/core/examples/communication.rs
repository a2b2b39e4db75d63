//! Communication Modules on toy support and query features: region
//! statistics, the merged two-scalar message and its broadcast channels.
//!
//! cargo run --example communication

use pemp::comm::{distribute, merge, region_stats};
use pemp_tensor::{Tape, Tensor};

fn main() -> pemp::Result<()> {
    let tape = Tape::new();
    let support = Tensor::from_fn(&[3, 4, 4], |i| (i % 7) as f64 * 0.25);
    let query = Tensor::from_fn(&[3, 4, 4], |i| ((i * 3) % 5) as f64 * 0.2);
    let s_label = Tensor::from_fn(&[1, 4, 4], |i| if i % 4 < 2 { 1.0 } else { 0.0 });
    let q_label = Tensor::from_fn(&[1, 4, 4], |i| if i < 8 { 1.0 } else { 0.0 });
    let (fs, fq) = (tape.constant(support), tape.constant(query));

    for masked_mean in [false, true] {
        let ss = region_stats(fs, &s_label, masked_mean)?;
        let sq = region_stats(fq, &q_label, masked_mean)?;
        println!("masked_mean={masked_mean}");
        println!(
            "  support mean {:?} max {:?}",
            ss.mean.value().data(),
            ss.max.value().data()
        );
        println!(
            "  query   mean {:?} max {:?}",
            sq.mean.value().data(),
            sq.max.value().data()
        );
        let weight = tape.constant(Tensor::from_fn(&[2, 6], |i| if i < 6 { 0.5 } else { -0.25 }));
        let bias = tape.constant(Tensor::new(&[2], vec![0.1, -0.1])?);
        let u = merge(&[ss], &sq, weight, bias)?;
        println!("  message u = {:?}", u.value().data());
        let out = distribute(fq, u)?;
        println!("  query features {:?} -> {:?}", fq.shape(), out.shape());
    }
    Ok(())
}
