macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/examples/",
                stringify!($name),
                ".rs"
            ));
        }

        #[test]
        fn $name() {
            $name::run_example().unwrap();
        }
    };
}

example!(quantize_matrix);
example!(bit_packing);
example!(container_roundtrip);
example!(moe_forward);
example!(moqe_size_table);
example!(sensitivity_sweep);
example!(weight_distribution);
example!(fused_matmul_bench);
