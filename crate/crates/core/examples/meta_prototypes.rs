//! Meta-prototype matching on a hand-built feature grid: attention over the
//! bank, adaptive prototypes, and the fused prediction with its winner map.
//!
//! cargo run --example meta_prototypes

use pemp::proto::{adaptive_prototypes, baseline_predict, fused_predict, masked_average_pool, mpm_attention, Region};
use pemp_tensor::{Tape, Tensor};

fn main() -> pemp::Result<()> {
    // A 2-d feature grid of 4x4: the left half holds two FG modes
    // (rows 0-1 and rows 2-3), the right half is background.
    let (h, w) = (4, 4);
    let mut feats = Tensor::zeros(&[2, h, w]);
    let mut mask = Tensor::zeros(&[1, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (a, b) = match (x < 2, y < 2) {
                (true, true) => (1.0, 0.2),
                (true, false) => (0.2, 1.0),
                _ => (-1.0, -0.1),
            };
            feats.set(&[0, y, x], a);
            feats.set(&[1, y, x], b);
            if x < 2 {
                mask.set(&[0, y, x], 1.0);
            }
        }
    }
    let bg_mask = mask.map(|v| 1.0 - v);
    let tape = Tape::new();
    let f = tape.constant(feats.clone());
    let flat = f.reshape(&[2, h * w])?;
    let bank_fg = tape.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0])?);
    let bank_bg = tape.constant(Tensor::new(&[2, 2], vec![-1.0, 0.0, 0.0, -1.0])?);

    let alpha = mpm_attention(flat, bank_fg)?;
    println!("attention over the FG bank (rows: prototypes, cols: pixels)");
    for m in 0..2 {
        let row: Vec<String> = (0..h * w)
            .map(|i| format!("{:.2}", alpha.value().get(&[m, i])))
            .collect();
        println!("  m={m}: {}", row.join(" "));
    }
    let p_fg = adaptive_prototypes(flat, &mask, alpha, Region::Fg)?;
    let p_bg = adaptive_prototypes(flat, &bg_mask, mpm_attention(flat, bank_bg)?, Region::Bg)?;
    println!("adaptive FG prototypes {:?}", p_fg.value().data());
    println!("adaptive BG prototypes {:?}", p_bg.value().data());

    // The query flips the two FG modes' positions to show per-pixel matching.
    let query = tape.constant(feats.flip_last_axis());
    let fused = fused_predict(query, p_fg, p_bg, 20.0)?;
    let map = fused.to_map();
    println!("fused FG probability / winner prototype");
    for y in 0..h {
        let cells: Vec<String> = (0..w)
            .map(|x| {
                let i = y * w + x;
                format!("{:.2}/{:?}{}", map.fg(i), map.winner_region(i), map.winner_index[i])
            })
            .collect();
        println!("  {}", cells.join("  "));
    }

    let mean_fg = masked_average_pool(f, &mask)?;
    let mean_bg = masked_average_pool(f, &bg_mask)?;
    let base = baseline_predict(query, mean_fg, mean_bg, 20.0)?.to_map();
    let fg: Vec<String> = (0..h * w).map(|i| format!("{:.2}", base.fg(i))).collect();
    println!("single-prototype FG probability: {}", fg.join(" "));
    Ok(())
}
