//! Each example must run to completion.

macro_rules! example {
    ($name:ident) => {
        mod $name {
            include!(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/examples/",
                stringify!($name),
                ".rs"
            ));

            #[test]
            fn runs() {
                main();
            }
        }
    };
}

example!(taxonomy);
example!(prompt_spec);
example!(classify_stub);
example!(evaluate);
example!(distribution);
example!(ingest_offline);
example!(annotation_session);
example!(sample_corpus);
