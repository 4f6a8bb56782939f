mod common;

use nbtc_core::bc1::{decode_block, encode_block, AlphaLevel, Bc1Block, Bc1Error, Rgb565};
use rand::Rng;

fn random_four_color<R: Rng>(r: &mut R) -> [u8; 8] {
    loop {
        let bytes: [u8; 8] = r.gen();
        if Bc1Block::from_bytes(bytes).is_four_color() {
            return bytes;
        }
    }
}

#[test]
fn decoder_matches_reference_on_random_blocks() {
    let mut r = common::rng(11);
    for _ in 0..20_000 {
        let bytes = random_four_color(&mut r);
        let want = common::reference_decode(&bytes).unwrap();
        let got = decode_block(Bc1Block::from_bytes(bytes)).unwrap();
        for (t, (got, want)) in got.texels.iter().zip(want).enumerate() {
            assert_eq!(*got, want.map(|n| f64::from(n) / 765.0), "block {bytes:02x?} texel {t}");
        }
    }
}

#[test]
fn three_color_blocks_are_rejected_by_both() {
    let bytes = [0x00, 0x10, 0x00, 0x20, 0, 0, 0, 0];
    assert!(common::reference_decode(&bytes).is_none());
    assert!(matches!(decode_block(Bc1Block::from_bytes(bytes)), Err(Bc1Error::ThreeColorMode { .. })));
}

#[test]
fn encoded_blocks_decode_under_reference() {
    let mut r = common::rng(12);
    for _ in 0..5_000 {
        let e0 = Rgb565::new(r.gen_range(0..32), r.gen_range(0..64), r.gen_range(0..32));
        let e1 = if r.gen_bool(0.1) { e0 } else { Rgb565::new(r.gen_range(0..32), r.gen_range(0..64), r.gen_range(0..32)) };
        let levels: [AlphaLevel; 16] = std::array::from_fn(|_| AlphaLevel::from_steps(r.gen_range(0..4)));
        let enc = encode_block(e0, e1, &levels);
        let want = common::reference_decode(&enc.block.to_bytes()).expect("encoder emits four-color blocks");
        if !enc.degenerate {
            let (c0, c1) = (e0.expand(), e1.expand());
            for t in 0..16 {
                let k = u32::from(levels[t].steps());
                let n: [u32; 3] = [0, 1, 2].map(|c| (3 - k) * u32::from(c0[c]) + k * u32::from(c1[c]));
                assert_eq!(want[t], n);
            }
        }
    }
}

#[test]
fn golden_block() {
    // Pure red and pure blue endpoints, texel (x, y) uses index (x + y) % 4.
    let mut b = Bc1Block { e0: 0xf800, e1: 0x001f, indices: 0 };
    for y in 0..4 {
        for x in 0..4 {
            b.set_index(x, y, ((x + y) % 4) as u8);
        }
    }
    assert_eq!(b.to_bytes(), [0x00, 0xf8, 0x1f, 0x00, 0xe4, 0x39, 0x4e, 0x93]);
    let d = decode_block(b).unwrap();
    assert_eq!(d.texel(0, 0), [1.0, 0.0, 0.0]);
    assert_eq!(d.texel(1, 0), [0.0, 0.0, 1.0]);
    assert_eq!(d.texel(2, 0), [510.0 / 765.0, 0.0, 255.0 / 765.0]);
    assert_eq!(d.texel(3, 0), [255.0 / 765.0, 0.0, 510.0 / 765.0]);
}
