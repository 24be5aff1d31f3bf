use moqe::bitpack::{pack, packed_len, unpack, Bits, CodeArray};
use moqe::Error;
use proptest::prelude::*;

fn codes(bits: Bits, v: &[i8]) -> CodeArray {
    CodeArray::new(bits, v.to_vec()).unwrap()
}

#[test]
fn pack_examples() {
    assert_eq!(pack(&codes(Bits::B8, &[-128, 127])), vec![0x00, 0xFF]);
    assert_eq!(pack(&codes(Bits::B2, &[-2, -1, 0, 1])), vec![0b1110_0100]);
    assert_eq!(pack(&codes(Bits::B3, &[3; 8])), vec![0xFF, 0xFF, 0xFF]);
}

#[test]
fn unpack_examples() {
    assert_eq!(unpack(&[0x21], Bits::B4, 2).unwrap().codes(), &[-7, -6]);
    assert_eq!(unpack(&[0, 0, 0], Bits::B3, 5).unwrap().codes(), &[-4; 5]);
}

#[test]
fn errors() {
    assert!(matches!(Bits::new(5), Err(Error::UnsupportedBits(5))));
    assert!(matches!(
        CodeArray::new(Bits::B2, vec![2]),
        Err(Error::CodeOutOfRange { code: 2, bits: 2 })
    ));
    assert!(matches!(
        CodeArray::new(Bits::B3, vec![-5]),
        Err(Error::CodeOutOfRange { .. })
    ));
    assert!(matches!(
        unpack(&[0, 0], Bits::B3, 5),
        Err(Error::PackedLength {
            expected: 3,
            actual: 2,
            count: 5
        })
    ));
}

/// Expected length counted bit by bit: whole bytes for b in {2,4,8}, whole
/// 3-byte groups of 8 codes for b = 3.
fn length_oracle(bits: u8, n: usize) -> usize {
    if bits == 3 {
        let groups = (n + 7) / 8;
        groups * 3
    } else {
        let total_bits = n * bits as usize;
        (total_bits + 7) / 8
    }
}

#[test]
fn packed_size_never_exceeds_count() {
    for n in 0..10_000 {
        assert!(packed_len(Bits::B2, n) <= n);
        assert!(packed_len(Bits::B4, n) <= n);
        // A lone partial 3-bit group still takes its three bytes.
        if n >= 3 {
            assert!(packed_len(Bits::B3, n) <= n);
        }
        assert!(packed_len(Bits::B2, n) <= packed_len(Bits::B4, n));
        assert!(packed_len(Bits::B4, n) <= packed_len(Bits::B8, n));
        for bits in Bits::ALL {
            assert_eq!(packed_len(bits, n), length_oracle(bits.get(), n));
        }
    }
    assert_eq!(packed_len(Bits::B3, 1), 3);
}

fn arb_codes() -> impl Strategy<Value = CodeArray> {
    (0usize..4, 0usize..=200).prop_flat_map(|(b, n)| {
        let bits = Bits::ALL[b];
        prop::collection::vec(bits.min_code()..=bits.max_code(), n).prop_map(move |v| {
            CodeArray::new(bits, v.into_iter().map(|c| c as i8).collect()).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn round_trip(c in arb_codes()) {
        let bytes = pack(&c);
        prop_assert_eq!(bytes.len(), length_oracle(c.bits().get(), c.len()));
        prop_assert_eq!(unpack(&bytes, c.bits(), c.len()).unwrap(), c);
    }

    #[test]
    fn padding_bits_ignored(c in arb_codes(), noise in any::<u8>()) {
        let mut bytes = pack(&c);
        let used = c.len() * c.bits().get() as usize;
        let total = bytes.len() * 8;
        if total > used {
            let last = bytes.len() - 1;
            let pad_in_last = (total - used).min(8);
            let mask = !0xFFu8.checked_shr(pad_in_last as u32).unwrap_or(0);
            bytes[last] |= noise & mask;
            prop_assert_eq!(unpack(&bytes, c.bits(), c.len()).unwrap(), c);
        }
    }
}
