// Packs signed codes into bytes and back for each supported width.

use moqe::bitpack::{pack, packed_len, unpack, Bits, CodeArray};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    for bits in Bits::ALL {
        let codes: Vec<i8> = (0..20)
            .map(|i| (bits.min_code() + i % (bits.max_code() - bits.min_code() + 1)) as i8)
            .collect();
        let array = CodeArray::new(bits, codes)?;
        let bytes = pack(&array);
        assert_eq!(bytes.len(), packed_len(bits, array.len()));
        assert_eq!(unpack(&bytes, bits, array.len())?, array);
        let hex: Vec<String> = bytes.iter().take(6).map(|b| format!("{b:02x}")).collect();
        println!(
            "b={} {} codes -> {} bytes [{} ...]",
            bits.get(),
            array.len(),
            bytes.len(),
            hex.join(" ")
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
