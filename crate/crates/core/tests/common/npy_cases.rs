//! Hand-built NPY byte strings.

use probe_inject::feature_store::StoreError;

pub fn header(dict: &str) -> Vec<u8> {
    let mut out = b"\x93NUMPY\x01\x00".to_vec();
    let h = format!("{dict}\n");
    out.extend_from_slice(&(h.len() as u16).to_le_bytes());
    out.extend_from_slice(h.as_bytes());
    out
}

pub fn with_payload(mut h: Vec<u8>, n: usize, width: usize) -> Vec<u8> {
    h.extend(std::iter::repeat_n(0u8, n * width));
    h
}

/// Ten malformed inputs and the error class each must produce.
pub fn malformed_cases() -> Vec<(&'static str, Vec<u8>, &'static str)> {
    let good = "{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }";
    let mut bad_magic = with_payload(header(good), 6, 8);
    bad_magic[1] = b'n';
    let mut v2 = with_payload(header(good), 6, 8);
    v2[6] = 2;
    let mut truncated_header = header(good);
    truncated_header.truncate(30);
    vec![
        ("bad magic", bad_magic, "MalformedHeader"),
        ("version 2.0", v2, "MalformedHeader"),
        ("header cut short", truncated_header, "MalformedHeader"),
        ("not a dict", with_payload(header("['descr', '<f8']"), 6, 8), "MalformedHeader"),
        (
            "int32 dtype",
            with_payload(header("{'descr': '<i4', 'fortran_order': False, 'shape': (2, 3), }"), 6, 4),
            "UnsupportedDtype",
        ),
        (
            "big-endian f8",
            with_payload(header("{'descr': '>f8', 'fortran_order': False, 'shape': (2, 3), }"), 6, 8),
            "UnsupportedDtype",
        ),
        (
            "1-D shape",
            with_payload(header("{'descr': '<f8', 'fortran_order': False, 'shape': (6,), }"), 6, 8),
            "ShapeMismatch",
        ),
        (
            "3-D shape",
            with_payload(header("{'descr': '<f8', 'fortran_order': False, 'shape': (1, 2, 3), }"), 6, 8),
            "ShapeMismatch",
        ),
        ("payload too short", with_payload(header(good), 5, 8), "TruncatedPayload"),
        ("payload too long", with_payload(header(good), 7, 8), "TruncatedPayload"),
    ]
}

pub fn error_class(e: &StoreError) -> &'static str {
    match e {
        StoreError::MalformedHeader(_) => "MalformedHeader",
        StoreError::UnsupportedDtype(_) => "UnsupportedDtype",
        StoreError::ShapeMismatch(_) => "ShapeMismatch",
        StoreError::TruncatedPayload { .. } => "TruncatedPayload",
        _ => "other",
    }
}
