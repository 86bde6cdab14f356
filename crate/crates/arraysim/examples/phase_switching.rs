//! Phase switching: each antenna modulates its phase with a four-valued
//! pattern built from a pair of Walsh functions, 4096 slots of 250 us for
//! a 1.024 s cycle. Any two antennas' patterns demodulate to exactly zero
//! against each other over one cycle, which is what lets the correlator
//! reject spurious signals that did not travel through the sky path.

use arraysim::fts::walsh::{
    build_pattern, cross_demod, walsh, PATTERN_PERIOD_NS, SLOTS_PER_PATTERN, SLOT_NS,
};

fn main() -> arraysim::Result<()> {
    println!("first sixteen points of a few Walsh functions:");
    for k in [1usize, 2, 3, 10] {
        let strip: String = walsh(k, 16)?
            .iter()
            .map(|v| if *v > 0 { '+' } else { '-' })
            .collect();
        println!("  walsh {k:>2}: {strip}");
    }

    // A pattern pairs a fast function (one step per slot) with a slow one
    // (one step per 64 slots) into quadrants 0..3, i.e. 0/90/180/270 deg.
    let p = build_pattern(3)?;
    let quads: Vec<u8> = (0..24).map(|s| p.quadrant(s)).collect();
    println!(
        "\npattern 3, quadrants of the first 24 slots: {quads:?}",
    );
    println!(
        "full cycle: {} slots x {} us = {} ms",
        SLOTS_PER_PATTERN,
        SLOT_NS / 1000,
        PATTERN_PERIOD_NS / 1_000_000
    );

    println!("\ndemodulation over one full cycle (in-phase, quadrature):");
    for (a, b) in [(1u8, 1u8), (1, 2), (2, 3), (7, 40)] {
        let (i, q) = cross_demod(&build_pattern(a)?, &build_pattern(b)?);
        let verdict = if a == b { "self" } else { "rejected" };
        println!("  {a:>2} x {b:>2}: ({i:>4}, {q}) {verdict}");
    }
    Ok(())
}
