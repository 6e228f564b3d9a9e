#![no_main]

use libfuzzer_sys::fuzz_target;
use pb_core::wpm::{prefilter, registrable_name, SiteCatalog};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = registrable_name(text);
    let Ok(catalog) = SiteCatalog::parse(text) else { return };
    let urls = catalog.urls();
    let report = prefilter(&urls, &catalog);
    assert_eq!(report.counts().values().sum::<usize>(), urls.len());
});
